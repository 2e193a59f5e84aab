"""Procedural articulated hand with a 51-parameter pose.

Layout of the pose vector: ``[0:3]`` global translation, then 16 axis-angle
triples in joint order wrist, index(3), middle(3), little(3), ring(3),
thumb(3).  Each joint rotation acts in its parent's frame about the joint's
rest position.  Vertices are rigidly bound to one bone, so moving a finger's
parameters only moves that finger's vertices.

The template is a right hand with the palm facing -z and the fingers along
+y; the wrist joint sits at the origin.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import autodiff as ad
from .geometry import TriMesh, write_obj
from .shapes import box, capsule_profile, revolve

PARTS = ("palm", "thumb", "index", "middle", "ring", "little")
FINGERS = PARTS[1:]
N_JOINTS = 16
POSE_DIM = 51

# joint chains in pose order; each finger owns three consecutive joints
_CHAIN_ORDER = ("index", "middle", "little", "ring", "thumb")

# finger geometry in meters: MCP (or CMC) position, rest direction, segment lengths, radii
_FINGER_SPECS = {
    "index": ((0.0255, 0.090, 0.0), (0.0, 1.0, 0.0), (0.040, 0.025, 0.020), (0.0085, 0.0080, 0.0075)),
    "middle": ((0.0085, 0.090, 0.0), (0.0, 1.0, 0.0), (0.044, 0.028, 0.022), (0.0090, 0.0085, 0.0080)),
    "ring": ((-0.0085, 0.090, 0.0), (0.0, 1.0, 0.0), (0.041, 0.026, 0.021), (0.0085, 0.0080, 0.0075)),
    "little": ((-0.0255, 0.090, 0.0), (0.0, 1.0, 0.0), (0.033, 0.020, 0.018), (0.0075, 0.0070, 0.0065)),
    "thumb": ((0.030, 0.018, -0.004), (0.80, 0.60, 0.0), (0.035, 0.030, 0.026), (0.0105, 0.0100, 0.0095)),
}
_PALM_SIZE = (0.072, 0.090, 0.024)
_PALM_CENTER = (0.0, 0.045, 0.0)
# rotation axis that curls each digit toward the palm side (-z)
_THUMB_SWEEP = (-0.55, 0.25, -1.0)

# palm-side point the grasp oracle aims at the object center (hand frame, meters)
GRASP_POINT = np.array([0.0, 0.060, -0.012])
PALM_NORMAL = np.array([0.0, 0.0, -1.0])

_RING_SPACING = 0.01
_N_AROUND = 8


@dataclass(frozen=True)
class HandPose:
    translation: np.ndarray
    joint_rotations: np.ndarray

    def __post_init__(self):
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        r = wrap_axis_angle(np.array(self.joint_rotations, dtype=np.float64).reshape(N_JOINTS, 3))
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "joint_rotations", r)

    @classmethod
    def from_vector(cls, theta) -> "HandPose":
        theta = np.asarray(theta, dtype=np.float64).reshape(-1)
        if theta.size != POSE_DIM:
            raise ValueError(f"pose vector must have {POSE_DIM} entries, got {theta.size}")
        return cls(theta[:3], theta[3:].reshape(N_JOINTS, 3))

    @classmethod
    def zero(cls) -> "HandPose":
        return cls(np.zeros(3), np.zeros((N_JOINTS, 3)))

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.translation, self.joint_rotations.reshape(-1)])


def wrap_axis_angle(r: np.ndarray) -> np.ndarray:
    """Equivalent axis-angle vectors with norm <= pi."""
    r = np.asarray(r, dtype=np.float64)
    n = np.linalg.norm(r, axis=-1, keepdims=True)
    m = np.mod(n, 2 * np.pi)
    m = np.where(m > np.pi, m - 2 * np.pi, m)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(n > np.pi, r / np.where(n == 0, 1, n) * m, r)
    return out


@dataclass(frozen=True)
class HandMesh:
    vertices: np.ndarray
    model: "HandModel"

    @property
    def faces(self):
        return self.model.faces

    @property
    def part_labels(self):
        return self.model.part_label

    @cached_property
    def trimesh(self) -> TriMesh:
        return TriMesh(self.vertices, self.model.faces)


class HandModel:
    """Template mesh, skeleton and part tables.  Immutable once built."""

    def __init__(self):
        parents = [-1]
        joints = [np.zeros(3)]
        joint_part = ["palm"]
        flex_axes = [np.zeros(3)]
        pieces, bones = [], []

        palm = box(_PALM_SIZE, _PALM_CENTER, spacing=0.01)
        pieces.append(palm)
        bones.append(np.zeros(len(palm.vertices), dtype=np.int64))

        for name in _CHAIN_ORDER:
            base, direction, lengths, radii = _FINGER_SPECS[name]
            d = np.asarray(direction, dtype=np.float64)
            d /= np.linalg.norm(d)
            if name == "thumb":
                axis = np.cross(d, _THUMB_SWEEP)
            else:
                axis = np.array([-1.0, 0.0, 0.0])
            axis /= np.linalg.norm(axis)
            start = np.asarray(base, dtype=np.float64)
            parent = 0
            for k in range(3):
                j = len(joints)
                parents.append(parent)
                joints.append(start.copy())
                joint_part.append(name)
                flex_axes.append(axis)
                seg = _segment_mesh(start, d, lengths[k], radii[k])
                pieces.append(seg)
                bones.append(np.full(len(seg.vertices), j, dtype=np.int64))
                start = start + lengths[k] * d
                parent = j

        verts, faces, off = [], [], 0
        for m in pieces:
            verts.append(m.vertices)
            faces.append(m.faces + off)
            off += len(m.vertices)
        self.template_vertices = np.concatenate(verts)
        self.faces = np.concatenate(faces)
        self.vertex_bone = np.concatenate(bones)
        self.joint_parents = np.array(parents)
        self.joint_positions = np.array(joints)
        self.joint_part = tuple(joint_part)
        self.flex_axes = np.array(flex_axes)
        self.part_label = np.array([joint_part[b] for b in self.vertex_bone])
        spans = {"palm": (3, 6)}
        for i, name in enumerate(_CHAIN_ORDER):
            lo = 3 + 3 * (1 + 3 * i)
            spans[name] = (lo, lo + 9)
        self.param_spans = spans
        self.beta = np.zeros(10)  # mean shape; kept for interface parity only
        for a in (self.template_vertices, self.faces, self.vertex_bone, self.joint_parents,
                  self.joint_positions, self.flex_axes, self.part_label):
            a.flags.writeable = False

    @property
    def n_vertices(self) -> int:
        return len(self.template_vertices)

    @cached_property
    def template_mesh(self) -> TriMesh:
        return TriMesh(self.template_vertices, self.faces)

    def finger_joints(self, finger) -> list[int]:
        return [j for j, p in enumerate(self.joint_part) if p == finger]


def _segment_mesh(start, direction, length, radius) -> TriMesh:
    m = revolve(capsule_profile(radius, length, _RING_SPACING, cap_rings=1), _N_AROUND)
    z = np.asarray(direction)
    helper = np.array([0.0, 0.0, 1.0]) if abs(z[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    x = np.cross(helper, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    frame = np.stack([x, y, z], axis=1)
    return TriMesh(m.vertices @ frame.T + start, m.faces)


_DEFAULT_MODEL = None


def default_model() -> HandModel:
    global _DEFAULT_MODEL
    if _DEFAULT_MODEL is None:
        _DEFAULT_MODEL = HandModel()
    return _DEFAULT_MODEL


def forward_vertices(model: HandModel, theta) -> ad.Tensor:
    """Differentiable posed vertices (..., V, 3) from pose vectors (..., 51)."""
    theta = ad.as_tensor(theta)
    lead = theta.shape[:-1]
    t = theta[..., :3]
    r = ad.reshape(theta[..., 3:], lead + (N_JOINTS, 3))
    R_local = ad.axis_angle_to_rotation(r)
    eye = np.eye(3)
    p = model.joint_positions
    rot, disp = [None] * N_JOINTS, [None] * N_JOINTS
    for j, parent in enumerate(model.joint_parents):
        Rj = R_local[..., j, :, :]
        if parent < 0:
            rot[j] = Rj
            disp[j] = ad.Tensor(np.zeros(lead + (3,)))
            continue
        rot[j] = ad.matmul(rot[parent], Rj)
        arm = (p[j] - p[parent]).reshape(3, 1)
        disp[j] = disp[parent] + ad.matmul(rot[parent] - eye, arm)[..., 0]
    G = ad.stack(rot, axis=-3)
    D = ad.stack(disp, axis=-2)
    bone = model.vertex_bone
    Gv = ad.take(G, bone, axis=G.ndim - 3)
    Dv = ad.take(D, bone, axis=D.ndim - 2)
    local = (model.template_vertices - p[bone])[..., None]
    moved = ad.matmul(Gv - eye, local)[..., 0]
    return model.template_vertices + moved + Dv + ad.reshape(t, lead + (1, 3))


def forward(model: HandModel, pose) -> HandMesh:
    theta = pose.vector if isinstance(pose, HandPose) else np.asarray(pose, dtype=np.float64)
    return HandMesh(forward_vertices(model, theta).data, model)


def part_vertices(model: HandModel, part: str) -> np.ndarray:
    if part not in PARTS:
        raise ValueError(f"unknown part {part!r}")
    return np.nonzero(model.part_label == part)[0]


def part_params(model: HandModel, parts) -> np.ndarray:
    """Pose indices adjusted for a set of parts; the palm implies all 51."""
    parts = set(parts)
    unknown = parts - set(PARTS)
    if unknown:
        raise ValueError(f"unknown parts {sorted(unknown)}")
    if "palm" in parts:
        return np.arange(POSE_DIM)
    idx = [np.arange(*model.param_spans[p]) for p in sorted(parts)]
    return np.sort(np.concatenate(idx)) if idx else np.zeros(0, dtype=np.int64)


def finger_curl_pose(model: HandModel, base: HandPose, finger: str, angle: float) -> HandPose:
    """Set all three joints of ``finger`` to ``angle`` radians about its flexion axis."""
    theta = base.vector.copy()
    for j in model.finger_joints(finger):
        theta[3 + 3 * j:6 + 3 * j] = angle * model.flex_axes[j]
    return HandPose.from_vector(theta)


def export_template(model: HandModel, obj_path, csv_path):
    """Write the rest-pose mesh as OBJ and a ``vertex_index,part`` sidecar CSV."""
    write_obj(obj_path, model.template_mesh)
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["vertex_index", "part"])
        for i, part in enumerate(model.part_label):
            w.writerow([i, part])
