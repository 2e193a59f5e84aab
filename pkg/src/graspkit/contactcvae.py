"""Conditional VAE over per-point contact maps.

The condition encoder is a PointNet over the object points giving a local
feature per point and a max-pooled global vector.  The posterior encoder sees
points with their contact score and outputs a Gaussian over the latent.  The
decoder scores each point from the latent, the local feature and the global
feature, with shared weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial.distance import squareform

from . import autodiff as ad
from . import losses
from .data import augment
from .layers import Network, batches, philox

DEFAULT_CONFIG = {
    "latent_dim": 64,
    "local_widths": [64, 64],
    "global_widths": [128, 1024],
    "posterior_widths": [64, 128, 1024],
    "decoder_widths": [512, 128],
    # a tight initial posterior lets the decoder read z from the first steps
    "logvar_bias_init": -4.0,
    "lr": 1e-4,
    "batch_size": 32,
    "epochs": 130,
    "augment_translation": 0.01,
    "augment_rotation_deg": 1.0,
    "weights": list(losses.CONTACT_WEIGHTS),
}


class UntrainedModelError(RuntimeError):
    pass


@dataclass
class ConditionFeatures:
    f_local: ad.Tensor    # (B, N, 64)
    global_vec: ad.Tensor  # (B, 1024)

    @property
    def f_global(self) -> np.ndarray:
        """The global vector duplicated once per point, (B, N, 1024)."""
        B, N = self.f_local.shape[:2]
        return np.broadcast_to(self.global_vec.data[:, None, :], (B, N, self.global_vec.shape[-1]))

    @property
    def f_lg(self) -> np.ndarray:
        return np.concatenate([self.f_local.data, self.f_global], axis=-1)


@dataclass
class LatentCode:
    mu: ad.Tensor
    log_var: ad.Tensor
    z: ad.Tensor


def _batched_points(points):
    pts = np.asarray(getattr(points, "points", points), dtype=np.float64)
    return (pts[None], True) if pts.ndim == 2 else (pts, False)


def reparameterize(mu, log_var, eps):
    """z = mu + exp(log_var / 2) * eps, differentiable in mu and log_var."""
    return ad.as_tensor(mu) + ad.exp(ad.as_tensor(log_var) * 0.5) * ad.as_tensor(eps)


class ContactCVAE(Network):
    kind = "contactcvae"

    def __init__(self, config: dict | None = None, seed: int = 0):
        cfg = dict(DEFAULT_CONFIG)
        if config:
            unknown = set(config) - set(DEFAULT_CONFIG)
            if unknown:
                raise ValueError(f"unknown config keys {sorted(unknown)}")
            cfg.update(config)
        super().__init__(cfg, seed)
        L = cfg["latent_dim"]
        w = 3
        for i, width in enumerate(cfg["local_widths"]):
            self._dense(f"cond{i}", w, width)
            w = width
        self.local_dim = w
        for i, width in enumerate(cfg["global_widths"]):
            self._dense(f"condg{i}", w, width)
            w = width
        self.global_dim = w
        w = 4
        for i, width in enumerate(cfg["posterior_widths"]):
            self._dense(f"post{i}", w, width)
            w = width
        self._linear("mu", w, L, scale=0.1)
        self._linear("logvar", w, L, scale=0.1)
        self.params["logvar.b"].data[:] = cfg["logvar_bias_init"]
        w = L + self.local_dim + self.global_dim
        self.decoder_in = w
        for i, width in enumerate(cfg["decoder_widths"]):
            self._dense(f"dec{i}", w, width)
            w = width
        self._linear("out", w, 1, scale=0.1)

    # ------------------------------------------------------------ encoders

    def _pointnet(self, prefix, x, n_layers):
        for i in range(n_layers - 1):
            x = self.dense(f"{prefix}{i}", x)
        return self.dense_max(f"{prefix}{n_layers - 1}", x)

    def condition_encode(self, points) -> ConditionFeatures:
        x, _ = _batched_points(points)
        h = ad.Tensor(x)
        for i in range(len(self.config["local_widths"])):
            h = self.dense(f"cond{i}", h)
        f_local = h
        g = self._pointnet("condg", f_local, len(self.config["global_widths"]))
        return ConditionFeatures(f_local, g)

    def posterior_encode(self, points, contact, seed: int | None = 0, eps=None) -> LatentCode:
        x, _ = _batched_points(points)
        c = np.asarray(contact, dtype=np.float64).reshape(x.shape[0], -1)
        if c.shape[1] != x.shape[1]:
            raise ValueError(f"posterior_encode: N mismatch {x.shape[1]} points vs {c.shape[1]} scores")
        h = ad.Tensor(np.concatenate([x, c[..., None]], axis=-1))
        g = self._pointnet("post", h, len(self.config["posterior_widths"]))
        mu, lv = self.linear("mu", g), self.linear("logvar", g)
        if eps is None:
            eps = philox(seed, 5).standard_normal(mu.shape) if seed is not None else np.zeros(mu.shape)
        return LatentCode(mu, lv, reparameterize(mu, lv, eps))

    # ------------------------------------------------------------ decoder

    def decode(self, z, cond: ConditionFeatures) -> ad.Tensor:
        """Per-point contact probabilities (B, N).

        ``z`` is (B, L), (L,) or an (N, L) map of identical rows.  The first
        decoder layer acting on concat(z, f_local, f_global) is evaluated as
        a sum of three row blocks, so the per-point product only involves
        the local features.
        """
        z = ad.as_tensor(z)
        L = self.config["latent_dim"]
        B, N = cond.f_local.shape[:2]
        if z.ndim == 2 and z.shape[0] == N and B == 1 and N != 1:
            if not np.all(z.data == z.data[:1]):
                raise ValueError("decode: latent map rows must be identical")
            z = z[0:1]
        if z.ndim == 1:
            z = ad.reshape(z, (1, L))
        if z.shape[0] != B:
            z = ad.broadcast_to(z, (B, L))
        W, b = self.params["dec0.W"], self.params["dec0.b"]
        ld = self.local_dim
        per_sample = ad.matmul(z, W[:L]) + ad.matmul(cond.global_vec, W[L + ld:]) + b
        pre = ad.matmul(cond.f_local, W[L:L + ld]) + ad.reshape(per_sample, (B, 1, W.shape[1]))
        h = self.norm_relu("dec0", pre)
        for i in range(1, len(self.config["decoder_widths"])):
            h = self.dense(f"dec{i}", h)
        logits = self.linear("out", h)
        return ad.sigmoid(ad.reshape(logits, (B, N)))

    def forward(self, points, contact, eps):
        cond = self.condition_encode(points)
        code = self.posterior_encode(points, contact, eps=eps)
        return self.decode(code.z, cond), code.mu, code.log_var

    def calibration_forward(self, points, contact):
        x, _ = _batched_points(points)
        self.forward(x, contact, np.zeros((x.shape[0], self.config["latent_dim"])))

    # ------------------------------------------------------------ inference

    def _require_trained(self):
        if not self.trained:
            raise UntrainedModelError("model is untrained; train it or load a checkpoint first")

    def sample_latent(self, seed: int) -> np.ndarray:
        return philox(seed, 6).standard_normal(self.config["latent_dim"])

    def generate(self, points, seed: int) -> np.ndarray:
        """Contact map for a prior latent drawn from ``seed``."""
        self._require_trained()
        x, single = _batched_points(points)
        out = self.decode(self.sample_latent(seed), self.condition_encode(x)).data
        return out[0] if single else out

    def decode_latent(self, points, z) -> np.ndarray:
        x, single = _batched_points(points)
        out = self.decode(np.asarray(z, dtype=np.float64), self.condition_encode(x)).data
        return out[0] if single else out

    def interpolate(self, points, z_a, z_b, steps: int) -> list[np.ndarray]:
        """Decoded maps along the straight latent path from ``z_a`` to ``z_b``."""
        if steps < 2:
            raise ValueError("interpolate needs steps >= 2")
        z_a, z_b = np.asarray(z_a, dtype=np.float64), np.asarray(z_b, dtype=np.float64)
        cond = self.condition_encode(points)
        out = []
        for t in np.linspace(0.0, 1.0, steps):
            # endpoints are exactly z_a and z_b; equal endpoints give one repeated latent
            z = z_a if t == 0.0 else z_b if t == 1.0 else z_a + t * (z_b - z_a)
            out.append(self.decode(z, cond).data[0])
        return out

    def reconstruct(self, points, contact) -> np.ndarray:
        """Decode at the posterior mean of (points, contact)."""
        x, single = _batched_points(points)
        code = self.posterior_encode(x, contact, seed=None)
        out = self.decode(code.mu.data, self.condition_encode(x)).data
        return out[0] if single else out


# ---------------------------------------------------------------- training


def _augmented_batch(samples, idx, seed, epoch, cfg):
    pts, con = [], []
    for i in idx:
        s = augment(samples[i], seed=int(np.random.SeedSequence([seed, epoch, int(i)]).generate_state(1)[0]),
                    translation_range=cfg["augment_translation"],
                    rotation_range_deg=cfg["augment_rotation_deg"])
        pts.append(s.cloud.points)
        con.append(s.gt_contact)
    return np.stack(pts), np.stack(con)


def train_epoch(model: ContactCVAE, samples, optimizer: ad.Adam, seed: int = 0) -> dict:
    """One pass over ``samples`` (GraspSample list) minimizing the weighted contact loss.

    Returns mean loss terms over batches plus the per-batch totals.
    """
    if len(samples) == 0:
        raise ValueError("train_epoch: empty dataset")
    cfg = model.config
    rng = philox(seed, model.epoch, 7)
    stats = {"loss": [], "bce": [], "dice": [], "kl": []}
    for idx in batches(len(samples), cfg["batch_size"], rng):
        pts, con = _augmented_batch(samples, idx, seed, model.epoch, cfg)
        if not model.calibrated:
            model.calibrate(pts, con)
        eps = rng.standard_normal((len(idx), cfg["latent_dim"]))
        pred, mu, lv = model.forward(pts, con, eps)
        g0, g1, g2 = cfg["weights"]
        bce, dice, kl = losses.bce_loss(pred, con), losses.dice_loss(pred, con), losses.kl_loss(mu, lv)
        loss = g0 * bce + g1 * dice + g2 * kl
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        for k, v in (("loss", loss), ("bce", bce), ("dice", dice), ("kl", kl)):
            stats[k].append(v.item())
    model.epoch += 1
    model.trained = True
    out = {k: float(np.mean(v)) for k, v in stats.items()}
    out["batch_losses"] = stats["loss"]
    out["epoch"] = model.epoch
    return out


def make_optimizer(model: ContactCVAE, lr: float | None = None) -> ad.Adam:
    return ad.Adam(model.parameter_list(), lr=model.config["lr"] if lr is None else lr)


def dice_score(pred, gt) -> float:
    return 1.0 - losses.dice_loss(pred, gt).item()


def dice_distance_matrix(maps) -> np.ndarray:
    maps = np.asarray(maps)
    k = len(maps)
    D = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            D[i, j] = D[j, i] = losses.dice_loss(maps[i], maps[j]).item()
    return D


def cluster_maps(maps, threshold: float = 0.2) -> np.ndarray:
    """Complete-linkage cluster labels: maps in one cluster are all within ``threshold`` dice distance."""
    maps = np.asarray(maps)
    if len(maps) < 2:
        return np.ones(len(maps), dtype=int)
    D = dice_distance_matrix(maps)
    return fcluster(linkage(squareform(D, checks=False), method="complete"), t=threshold, criterion="distance")
