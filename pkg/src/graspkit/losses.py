"""Contact, grasp and refinement losses as differentiable scalars.

Every function accepts a single sample or a leading batch axis.  Per-sample
values are reduced as documented and batches are averaged.  Hands may be
given as a ``HandMesh``, a vertex array or a vertex Tensor; clouds as an
``ObjectCloud`` or a point array.  Lengths are in meters.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from . import autodiff as ad
from .geometry import TriMesh, penetration

CONTACT_WEIGHTS = (0.5, 0.5, 1e-3)
GRASP_WEIGHTS = {"vertex": 35.0, "chamfer": 20.0, "penetration": 5.0,
                 "translation": 0.1, "pose": 0.1, "consistency": 0.05}
BCE_CLAMP = 1e-7
DICE_EPS = 1e-7
SOFT_CONTACT_OFFSET = 0.005
SOFT_CONTACT_SCALE = 0.001
# keeps sqrt differentiable when a point sits exactly on a vertex
_DIST_EPS2 = 1e-18


def _as_batch(x):
    """Tensor with a leading batch axis, plus whether the input lacked one."""
    if hasattr(x, "vertices"):
        x = x.vertices
    elif hasattr(x, "points"):
        x = x.points
    elif hasattr(x, "vector"):
        x = x.vector
    t = ad.as_tensor(x)
    return t, t.ndim


def _pair(pred, gt, what, min_ndim=1):
    p, nd = _as_batch(pred)
    g, _ = _as_batch(gt)
    if p.shape != g.shape:
        raise ValueError(f"{what}: shape mismatch {p.shape} vs {g.shape}")
    if nd == min_ndim:
        p, g = ad.reshape(p, (1,) + p.shape), ad.reshape(g, (1,) + g.shape)
    return p, g


def _points(x):
    t, nd = _as_batch(x)
    return t if nd == 3 else ad.reshape(t, (1,) + t.shape)


# ---------------------------------------------------------------- contact


def bce_loss(pred, gt):
    """Binary cross-entropy summed over points; ``pred`` clamped to [1e-7, 1 - 1e-7]."""
    p, y = _pair(pred, gt, "bce_loss: N mismatch")
    p = ad.clamp(p, BCE_CLAMP, 1.0 - BCE_CLAMP)
    per = -(y * ad.log(p) + (1.0 - y) * ad.log(1.0 - p)).sum(axis=-1)
    return per.mean()


def dice_loss(pred, gt):
    p, y = _pair(pred, gt, "dice_loss: N mismatch")
    inter = (p * y).sum(axis=-1)
    per = 1.0 - 2.0 * inter / (y.sum(axis=-1) + p.sum(axis=-1) + DICE_EPS)
    return per.mean()


def kl_loss(mu, log_var):
    """KL(N(mu, exp(log_var)) || N(0, I)) summed over latent dimensions."""
    m, lv = _pair(mu, log_var, "kl_loss")
    per = -0.5 * (1.0 + lv - m * m - ad.exp(lv)).sum(axis=-1)
    return per.mean()


def contact_loss(pred, gt, mu, log_var, weights=CONTACT_WEIGHTS):
    g0, g1, g2 = weights
    return g0 * bce_loss(pred, gt) + g1 * dice_loss(pred, gt) + g2 * kl_loss(mu, log_var)


# ---------------------------------------------------------------- grasp


def vertex_loss(pred, gt):
    """Mean squared vertex distance."""
    p, g = _pair(pred, gt, "vertex_loss: topology mismatch", min_ndim=2)
    d = p - g
    return (d * d).sum(axis=-1).mean()


def _nearest(src, dst):
    """Index (B, n_src) of the nearest ``dst`` point for each ``src`` point."""
    return np.stack([cKDTree(d).query(s)[1] for s, d in zip(src, dst)])


def _gather(t, idx):
    b = np.arange(idx.shape[0])[:, None]
    return ad.getitem(t, (b, idx))


def chamfer_loss(hand, cloud):
    """Mean squared nearest distance hand->object plus object->hand."""
    h, o = _points(hand), _points(cloud)
    if h.shape[-2] == 0 or o.shape[-2] == 0:
        raise ValueError("chamfer_loss: empty point set")
    to_obj = h - _gather(o, _nearest(h.data, o.data))
    to_hand = o - _gather(h, _nearest(o.data, h.data))
    per = (to_obj * to_obj).sum(axis=-1).mean(axis=-1) + (to_hand * to_hand).sum(axis=-1).mean(axis=-1)
    return per.mean()


def penetration_loss(hand, objects):
    """Summed depth of hand vertices inside the object(s).

    ``objects`` is one watertight mesh or one per batch entry.  Depth is the
    distance to the nearest surface point, which is held fixed for the
    gradient (the gradient of a distance field).
    """
    h = _points(hand)
    meshes = [objects] * h.shape[0] if isinstance(objects, TriMesh) else list(objects)
    if len(meshes) != h.shape[0]:
        raise ValueError(f"penetration_loss: {len(meshes)} objects for batch of {h.shape[0]}")
    total = ad.Tensor(0.0)
    for b, mesh in enumerate(meshes):
        inside, _, q = penetration(mesh, h.data[b])
        if len(inside) == 0:
            continue
        diff = ad.getitem(h, (b, inside)) - q
        total = total + ad.sqrt((diff * diff).sum(axis=-1) + _DIST_EPS2).sum()
    return total * (1.0 / h.shape[0])


def translation_loss(pred, gt):
    """L1 over the three translation entries of the pose vectors."""
    p, g = _pair(pred, gt, "translation_loss")
    return ad.tabs(p[:, :3] - g[:, :3]).sum(axis=-1).mean()


def joint_geodesics(pred, gt):
    """Per-joint rotation angles (B, 16) between two pose vector batches."""
    p, g = _pair(pred, gt, "geodesic_pose_loss")
    B = p.shape[0]
    Rp = ad.axis_angle_to_rotation(ad.reshape(p[:, 3:], (B, 16, 3)))
    Rg = ad.axis_angle_to_rotation(ad.reshape(g[:, 3:], (B, 16, 3)))
    trace = (Rp * Rg).sum(axis=-1).sum(axis=-1)
    return ad.acos((trace - 1.0) * 0.5)


def geodesic_pose_loss(pred, gt):
    """Sum over the 16 joints of the relative rotation angle."""
    return joint_geodesics(pred, gt).sum(axis=-1).mean()


def contact_from_mesh(hand, cloud, t=SOFT_CONTACT_OFFSET, s=SOFT_CONTACT_SCALE):
    """Soft contact ``1 - sigmoid((d - t) / s)`` with d the nearest-hand-vertex distance."""
    if s <= 0:
        raise ValueError("contact_from_mesh: s must be positive")
    h, o = _points(hand), _points(cloud)
    diff = o - _gather(h, _nearest(o.data, h.data))
    d = ad.sqrt((diff * diff).sum(axis=-1) + _DIST_EPS2)
    c = ad.sigmoid((t - d) * (1.0 / s))
    h_nd = _as_batch(hand)[1]
    return c if h_nd == 3 else ad.reshape(c, c.shape[1:])


def consistency_loss(c_in, hand, cloud, t=SOFT_CONTACT_OFFSET, s=SOFT_CONTACT_SCALE):
    """Squared L2 norm between a given map and the one inferred from the hand."""
    c, _ = _as_batch(c_in)
    soft = contact_from_mesh(hand, cloud, t, s)
    if c.shape != soft.shape:
        raise ValueError(f"consistency_loss: shape mismatch {c.shape} vs {soft.shape}")
    d = soft - c
    if d.ndim == 1:
        return (d * d).sum()
    return (d * d).sum(axis=-1).mean()


def combine(terms: dict, weights: dict = GRASP_WEIGHTS):
    """Weighted sum of named loss terms."""
    total = ad.Tensor(0.0)
    for name, value in terms.items():
        total = total + weights[name] * value
    return total


def grasp_terms(pred_vertices, gt_vertices, cloud, objects, pred_theta, gt_theta, contact) -> dict:
    return {
        "vertex": vertex_loss(pred_vertices, gt_vertices),
        "chamfer": chamfer_loss(pred_vertices, cloud),
        "penetration": penetration_loss(pred_vertices, objects),
        "translation": translation_loss(pred_theta, gt_theta),
        "pose": geodesic_pose_loss(pred_theta, gt_theta),
        "consistency": consistency_loss(contact, pred_vertices, cloud),
    }


def grasp_loss(pred_vertices, gt_vertices, cloud, objects, pred_theta, gt_theta, contact,
               weights: dict = GRASP_WEIGHTS):
    """Weighted grasp objective; returns (total, dict of unweighted terms)."""
    terms = grasp_terms(pred_vertices, gt_vertices, cloud, objects, pred_theta, gt_theta, contact)
    return combine(terms, weights), terms

