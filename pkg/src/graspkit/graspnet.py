"""Regression from (object points, contact map) to a 51-D hand pose.

A PointNet encoder over (x, y, z, c) rows is max-pooled to a global vector,
and a four-hidden-layer MLP maps it to the pose.  The posed mesh comes from
the differentiable hand forward kinematics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import losses
from .data import augment
from .hand import HandMesh, HandModel, HandPose, default_model, forward, forward_vertices
from .layers import Network, batches, philox

DEFAULT_CONFIG = {
    "encoder_widths": [64, 128, 1024],
    "mlp_widths": [512, 256, 128, 64],
    "lr": 1e-4,
    "batch_size": 32,
    "epochs": 130,
    "gt_fraction": 0.5,
    "output_init_scale": 0.01,
    "translation_std_floor": 0.01,
    "rotation_std_floor": 0.05,
    "augment_translation": 0.01,
    "augment_rotation_deg": 1.0,
    "weights": dict(losses.GRASP_WEIGHTS),
}


@dataclass(frozen=True)
class GraspPrediction:
    pose: HandPose
    mesh: HandMesh
    source_contact: np.ndarray


class GraspNet(Network):
    kind = "graspnet"

    def __init__(self, config: dict | None = None, seed: int = 0):
        cfg = dict(DEFAULT_CONFIG)
        if config:
            unknown = set(config) - set(DEFAULT_CONFIG)
            if unknown:
                raise ValueError(f"unknown config keys {sorted(unknown)}")
            cfg.update(config)
        super().__init__(cfg, seed)
        w = 4
        for i, width in enumerate(cfg["encoder_widths"]):
            self._dense(f"enc{i}", w, width)
            w = width
        # the MLP runs per sample; batch statistics would degenerate for tiny batches
        for i, width in enumerate(cfg["mlp_widths"]):
            self._linear(f"mlp{i}", w, width)
            w = width
        self._linear("pose", w, 51, scale=cfg["output_init_scale"])
        # target standardization, set at calibration
        self.buffers["pose.mean"] = np.zeros(51)
        self.buffers["pose.std"] = np.ones(51)

    def forward(self, points, contact) -> ad.Tensor:
        """Pose vectors (B, 51) for points (B, N, 3) and contact (B, N)."""
        x = np.asarray(getattr(points, "points", points), dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        c = np.asarray(contact, dtype=np.float64).reshape(x.shape[0], -1)
        if c.shape[1] != x.shape[1]:
            raise ValueError(f"predict: N mismatch {x.shape[1]} points vs {c.shape[1]} scores")
        h = ad.Tensor(np.concatenate([x, c[..., None]], axis=-1))
        n_enc = len(self.config["encoder_widths"])
        for i in range(n_enc - 1):
            h = self.dense(f"enc{i}", h)
        h = self.dense_max(f"enc{n_enc - 1}", h)
        for i in range(len(self.config["mlp_widths"])):
            h = ad.relu(self.linear(f"mlp{i}", h))
        return self.linear("pose", h) * self.buffers["pose.std"] + self.buffers["pose.mean"]

    def calibration_forward(self, points, contact, theta=None):
        if theta is not None:
            theta = np.asarray(theta, dtype=np.float64).reshape(-1, 51)
            floor = np.full(51, self.config["rotation_std_floor"])
            floor[:3] = self.config["translation_std_floor"]
            self.buffers["pose.mean"] = theta.mean(axis=0)
            self.buffers["pose.std"] = np.maximum(theta.std(axis=0), floor)
        self.forward(points, contact)

    def predict(self, cloud, contact, model: HandModel | None = None) -> GraspPrediction:
        model = model or default_model()
        theta = self.forward(cloud, contact).data[0]
        pose = HandPose.from_vector(theta)
        return GraspPrediction(pose, forward(model, pose), np.asarray(contact, dtype=np.float64).reshape(-1))


def _prepare_batch(samples, idx, seed, epoch, cfg, cvae, rng):
    pts, gt_c, theta, meshes = [], [], [], []
    for i in idx:
        s = augment(samples[i], seed=int(np.random.SeedSequence([seed, epoch, int(i), 1]).generate_state(1)[0]),
                    translation_range=cfg["augment_translation"],
                    rotation_range_deg=cfg["augment_rotation_deg"])
        pts.append(s.cloud.points)
        gt_c.append(s.gt_contact)
        theta.append(s.gt_pose.vector)
        meshes.append(s.object_mesh)
    pts, gt_c, theta = np.stack(pts), np.stack(gt_c), np.stack(theta)
    contact = gt_c.copy()
    if cvae is not None:
        n_gt = int(round(cfg["gt_fraction"] * len(idx)))
        recon = rng.permutation(len(idx))[n_gt:]
        if len(recon):
            contact[recon] = cvae.reconstruct(pts[recon], gt_c[recon])
    return pts, contact, theta, meshes


def batch_loss(net: GraspNet, pts, contact, theta, meshes, model: HandModel | None = None):
    """(total, terms, predicted pose batch) for one prepared batch."""
    model = model or default_model()
    pred = net.forward(pts, contact)
    verts = forward_vertices(model, pred)
    gt_verts = forward_vertices(model, theta).data
    total, terms = losses.grasp_loss(verts, gt_verts, pts, meshes, pred, theta, contact,
                                     net.config["weights"])
    return total, terms, pred


def train_epoch(net: GraspNet, samples, optimizer: ad.Adam, seed: int = 0, cvae=None,
                model: HandModel | None = None) -> dict:
    """One pass minimizing the weighted grasp loss.

    With ``cvae`` given, a ``1 - gt_fraction`` share of each batch uses
    CVAE-reconstructed contact maps instead of the ground-truth maps.
    """
    if len(samples) == 0:
        raise ValueError("train_epoch: empty dataset")
    cfg = net.config
    rng = philox(seed, net.epoch, 8)
    names = list(losses.GRASP_WEIGHTS)
    stats = {k: [] for k in ["loss"] + names}
    for idx in batches(len(samples), cfg["batch_size"], rng):
        pts, contact, theta, meshes = _prepare_batch(samples, idx, seed, net.epoch, cfg, cvae, rng)
        if not net.calibrated:
            net.calibrate(pts, contact, theta)
        total, terms, _ = batch_loss(net, pts, contact, theta, meshes, model)
        optimizer.zero_grad()
        total.backward()
        optimizer.step()
        stats["loss"].append(total.item())
        for k in names:
            stats[k].append(terms[k].item())
    net.epoch += 1
    net.trained = True
    out = {k: float(np.mean(v)) for k, v in stats.items()}
    out["batch_losses"] = stats["loss"]
    out["epoch"] = net.epoch
    return out


def make_optimizer(net: GraspNet, lr: float | None = None) -> ad.Adam:
    return ad.Adam(net.parameter_list(), lr=net.config["lr"] if lr is None else lr)
