"""Shared plumbing for the point networks: parameters, dense layers, frozen batch norm, checkpoints.

Hidden layers are ``relu(batch_norm(x @ W + b))`` with batch-norm statistics
calibrated once from the first training batch and frozen afterwards.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad

_CALIB_CHUNK = 256


class CheckpointError(ValueError):
    pass


class Network:
    """Named parameter tensors plus frozen batch-norm buffers.

    Subclasses set ``kind`` and ``config`` and call ``_dense`` / ``_linear``
    to declare layers in ``__init__``.
    """

    kind = "network"

    def __init__(self, config: dict, seed: int = 0):
        self.config = dict(config)
        self.seed = int(seed)
        self.params: dict[str, ad.Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.trained = False
        self.calibrated = False
        self.epoch = 0
        self._rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([self.seed, 17])))
        self._calibrating = False

    # ------------------------------------------------------------ declaration

    def _linear(self, name, fan_in, fan_out, scale=1.0):
        # uniform fan-in init with ReLU gain
        bound = scale * np.sqrt(6.0 / fan_in)
        self.params[f"{name}.W"] = ad.Tensor(self._rng.uniform(-bound, bound, (fan_in, fan_out)), True)
        self.params[f"{name}.b"] = ad.Tensor(np.zeros(fan_out), True)

    def _dense(self, name, fan_in, fan_out):
        self._linear(name, fan_in, fan_out)
        self.params[f"{name}.gamma"] = ad.Tensor(np.ones(fan_out), True)
        self.params[f"{name}.beta"] = ad.Tensor(np.zeros(fan_out), True)
        self.buffers[f"{name}.mean"] = np.zeros(fan_out)
        self.buffers[f"{name}.var"] = np.ones(fan_out)

    # ------------------------------------------------------------ evaluation

    def _calibrate(self, name, pre: np.ndarray):
        flat = pre.reshape(-1, pre.shape[-1])
        self.buffers[f"{name}.mean"] = flat.mean(axis=0)
        self.buffers[f"{name}.var"] = flat.var(axis=0)

    def linear(self, name, x):
        return ad.matmul(x, self.params[f"{name}.W"]) + self.params[f"{name}.b"]

    def dense(self, name, x):
        return self.norm_relu(name, self.linear(name, x))

    def norm_relu(self, name, pre):
        if self._calibrating:
            self._calibrate(name, pre.data)
        p = self.params
        return ad.bn_relu(pre, self.buffers[f"{name}.mean"], self.buffers[f"{name}.var"],
                          p[f"{name}.gamma"], p[f"{name}.beta"])

    def dense_max(self, name, x):
        """Dense layer then max over the point axis of (B, N, C)."""
        p = self.params
        W, b = p[f"{name}.W"], p[f"{name}.b"]
        if self._calibrating:
            n = 0
            s = np.zeros(W.shape[1])
            s2 = np.zeros(W.shape[1])
            flat = x.data.reshape(-1, x.shape[-1])
            for lo in range(0, len(flat), _CALIB_CHUNK):
                h = flat[lo:lo + _CALIB_CHUNK] @ W.data + b.data
                s += h.sum(axis=0)
                s2 += (h * h).sum(axis=0)
                n += len(h)
            mean = s / n
            self.buffers[f"{name}.mean"] = mean
            self.buffers[f"{name}.var"] = np.maximum(s2 / n - mean * mean, 0.0)
        return ad.dense_bn_relu_max(x, W, b, self.buffers[f"{name}.mean"], self.buffers[f"{name}.var"],
                                    p[f"{name}.gamma"], p[f"{name}.beta"])

    def calibrate(self, *batch):
        """Set every batch-norm statistic from one forward pass, then freeze."""
        self._calibrating = True
        try:
            self.calibration_forward(*batch)
        finally:
            self._calibrating = False
        self.calibrated = True

    def calibration_forward(self, *batch):
        raise NotImplementedError

    def parameter_list(self):
        return list(self.params.values())

    def n_parameters(self) -> int:
        return sum(t.size for t in self.params.values())

    # ------------------------------------------------------------ checkpoints

    def manifest(self) -> dict:
        return {"type": self.kind, "config": self.config, "seed": self.seed, "epoch": self.epoch,
                "trained": self.trained, "calibrated": self.calibrated,
                "layers": {k: list(v.shape) for k, v in self.params.items()}}

    def state_arrays(self) -> dict:
        out = {f"param/{k}": v.data for k, v in self.params.items()}
        out.update({f"buffer/{k}": v for k, v in self.buffers.items()})
        return out

    def save(self, path, extra: dict | None = None, optimizer: ad.Adam | None = None):
        """Checkpoint parameters and buffers, plus Adam moments when ``optimizer`` is given."""
        manifest = self.manifest()
        if extra:
            manifest.update(extra)
        arrays = self.state_arrays()
        if optimizer is not None and optimizer.state.m:
            names = list(self.params)
            for k, m, v in zip(names, optimizer.state.m, optimizer.state.v):
                arrays[f"adam_m/{k}"] = m
                arrays[f"adam_v/{k}"] = v
            manifest["adam_t"] = optimizer.state.t
        ad.save_checkpoint(path, arrays, manifest)

    @classmethod
    def load(cls, path):
        manifest, arrays = ad.load_checkpoint(path)
        if manifest.get("type") != cls.kind:
            raise CheckpointError(f"{path}: checkpoint holds a {manifest.get('type')!r} network, "
                                  f"expected {cls.kind!r}")
        net = cls(manifest["config"], seed=manifest["seed"])
        for k in net.params:
            net.params[k].data = arrays[f"param/{k}"].copy()
        for k in net.buffers:
            net.buffers[k] = arrays[f"buffer/{k}"].copy()
        net.epoch = int(manifest["epoch"])
        net.trained = bool(manifest["trained"])
        net.calibrated = bool(manifest["calibrated"])
        net.manifest_extra = {k: v for k, v in manifest.items() if k not in net.manifest() and k != "tensors"}
        net._adam_arrays = arrays if "adam_t" in manifest else None
        return net

    def restore_optimizer(self, optimizer: ad.Adam):
        """Copy saved Adam moments into ``optimizer`` (built over ``parameter_list()``)."""
        saved = getattr(self, "_adam_arrays", None)
        if saved is None:
            return optimizer
        names = list(self.params)
        optimizer.state = ad.AdamState([saved[f"adam_m/{k}"].copy() for k in names],
                                       [saved[f"adam_v/{k}"].copy() for k in names],
                                       int(self.manifest_extra["adam_t"]))
        return optimizer


def batches(n: int, batch_size: int, rng: np.random.Generator):
    """Shuffled index batches covering ``range(n)`` once."""
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def philox(*key) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in key])))
