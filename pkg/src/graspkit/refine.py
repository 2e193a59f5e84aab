"""Penetration-aware pose refinement.

Parts of the hand whose vertices sink deeper than a threshold into the
object are detected once.  A penetrating palm frees the whole pose; otherwise
only the offending fingers' rotations move.  The objective balances contact
consistency, penetration and closeness to the starting prediction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import losses
from .geometry import TriMesh, penetration
from .hand import PARTS, POSE_DIM, HandModel, HandPose, default_model, forward, forward_vertices, part_params

REFINE_WEIGHTS = (0.01, 2.0, 0.02)  # consistency, penetration, prior
REFINE_LR = 2e-4
REFINE_STEPS = 200
DEPTH_THRESHOLD = 0.001
MODES = ("none", "partial", "global")


@dataclass(frozen=True)
class RefinementReport:
    initial_pose: HandPose
    final_pose: HandPose
    adjusted_parts: tuple
    adjusted_param_indices: np.ndarray
    loss_trace: list = field(default_factory=list)
    steps: int = 0
    mode: str = "partial"
    final_loss: float | None = None

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "initial_pose": self.initial_pose.vector.tolist(),
            "final_pose": self.final_pose.vector.tolist(),
            "adjusted_parts": list(self.adjusted_parts),
            "adjusted_param_indices": [int(i) for i in self.adjusted_param_indices],
            "loss_trace": [float(x) for x in self.loss_trace],
            "final_loss": self.final_loss,
            "steps": self.steps,
        }


def detect_penetrating_parts(hand, obj: TriMesh, depth_threshold: float = DEPTH_THRESHOLD,
                             model: HandModel | None = None) -> frozenset:
    """Parts with some vertex deeper than ``depth_threshold`` inside the object."""
    labels = hand.part_labels if hasattr(hand, "part_labels") else (model or default_model()).part_label
    verts = hand.vertices if hasattr(hand, "vertices") else np.asarray(hand)
    inside, depth, _ = penetration(obj, verts)
    deep = inside[depth > depth_threshold]
    return frozenset(labels[deep].tolist())


def select_adjustable(parts, model: HandModel | None = None) -> np.ndarray:
    parts = set(parts)
    if not parts:
        return np.zeros(0, dtype=np.int64)
    return part_params(model or default_model(), parts)


def objective(theta, theta_ref, cloud_points, contact, obj: TriMesh, model: HandModel,
              weights=REFINE_WEIGHTS):
    """Refinement objective for a full pose Tensor; returns (total, terms)."""
    w_cst, w_ptr, w_h = weights
    verts = forward_vertices(model, theta)
    d = theta - theta_ref
    terms = {
        "consistency": losses.consistency_loss(contact, verts, cloud_points),
        "penetration": losses.penetration_loss(verts, obj),
        "prior": (d * d).sum(),
    }
    total = w_cst * terms["consistency"] + w_ptr * terms["penetration"] + w_h * terms["prior"]
    return total, terms


def _pose_of(pred) -> HandPose:
    return pred.pose if hasattr(pred, "pose") else pred


def _contact_of(pred, contact):
    if contact is not None:
        return np.asarray(contact, dtype=np.float64)
    if hasattr(pred, "source_contact"):
        return pred.source_contact
    raise ValueError("no contact map given and the prediction carries none")


def optimize(pred, cloud, obj: TriMesh, indices, contact=None, steps: int = REFINE_STEPS,
             lr: float = REFINE_LR, weights=REFINE_WEIGHTS, model: HandModel | None = None,
             mode: str = "partial", parts=()) -> RefinementReport:
    """Adam on the pose entries in ``indices``; every other entry is copied through untouched."""
    model = model or default_model()
    pose0 = _pose_of(pred)
    c = _contact_of(pred, contact)
    pts = np.asarray(getattr(cloud, "points", cloud), dtype=np.float64)
    theta0 = pose0.vector
    idx = np.asarray(indices, dtype=np.int64)
    if len(idx) == 0 or steps == 0:
        return RefinementReport(pose0, pose0, tuple(sorted(parts)), idx, [], 0, mode, None)
    base = theta0.copy()
    base[idx] = 0.0
    select = np.zeros((len(idx), POSE_DIM))
    select[np.arange(len(idx)), idx] = 1.0
    values = theta0[idx].copy()
    state = ad.AdamState()
    trace = []

    def evaluate(v, need_grad):
        leaf = ad.Tensor(v, requires_grad=need_grad)
        theta = ad.Tensor(base) + ad.matmul(ad.reshape(leaf, (1, len(idx))), select)[0]
        total, _ = objective(theta, theta0, pts, c, obj, model, weights)
        return leaf, total

    for _ in range(steps):
        leaf, total = evaluate(values, True)
        (g,) = ad.grad(total, [leaf])
        trace.append(total.item())
        (values,), state = ad.adam_step([values], [g], state, lr)
    _, final = evaluate(values, False)
    theta = theta0.copy()
    theta[idx] = values
    return RefinementReport(pose0, HandPose.from_vector(theta), tuple(sorted(parts)), idx, trace,
                            steps, mode, final.item())


def partial_optimize(pred, cloud, obj: TriMesh, contact=None, depth_threshold: float = DEPTH_THRESHOLD,
                     model: HandModel | None = None, **kw) -> RefinementReport:
    """Refine only the parts detected as penetrating; no-op when none are."""
    model = model or default_model()
    pose = _pose_of(pred)
    parts = detect_penetrating_parts(forward(model, pose), obj, depth_threshold)
    idx = select_adjustable(parts, model)
    return optimize(pred, cloud, obj, idx, contact, model=model, mode="partial", parts=parts, **kw)


def global_optimize(pred, cloud, obj: TriMesh, contact=None, model: HandModel | None = None,
                    **kw) -> RefinementReport:
    """Same objective and schedule over all 51 parameters, without detection."""
    return optimize(pred, cloud, obj, np.arange(POSE_DIM), contact, model=model, mode="global",
                    parts=PARTS, **kw)


def refine(pred, cloud, obj: TriMesh, mode: str = "partial", contact=None, **kw) -> RefinementReport:
    if mode not in MODES:
        raise ValueError(f"unknown refinement mode {mode!r}; expected one of {MODES}")
    if mode == "none":
        pose = _pose_of(pred)
        return RefinementReport(pose, pose, (), np.zeros(0, dtype=np.int64), [], 0, "none", None)
    if mode == "partial":
        return partial_optimize(pred, cloud, obj, contact, **kw)
    return global_optimize(pred, cloud, obj, contact, **kw)
