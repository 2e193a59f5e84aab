"""Synthetic objects and grasps, ground-truth contact, augmentation and dataset IO."""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

from . import shapes
from .geometry import GeometryError, ObjectCloud, TriMesh, contains, penetration, read_cloud, read_obj, \
    sample_surface_points, write_cloud, write_obj
from .hand import FINGERS, GRASP_POINT, PALM_NORMAL, HandModel, HandPose, default_model, \
    finger_curl_pose, forward, part_vertices

KINDS = ("sphere", "box", "cylinder", "capsule", "union-of-two")
SIZE_RANGE = (0.04, 0.12)
CONTACT_THRESHOLD = 0.005
N_POINTS = 2048
UNION_GAP = 0.001


class UnreachableError(RuntimeError):
    pass


@dataclass(frozen=True)
class GraspSample:
    object_mesh: TriMesh
    cloud: ObjectCloud
    gt_contact: np.ndarray
    gt_pose: HandPose | None
    provenance: str = "synthetic"
    sample_id: str = ""
    object_id: str = ""
    kind: str = ""


def _rng(*key) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in key])))


# ---------------------------------------------------------------- objects


def _check_size(extent):
    extent = float(extent)
    if not SIZE_RANGE[0] - 1e-12 <= extent <= SIZE_RANGE[1] + 1e-12:
        raise ValueError(f"characteristic size {extent * 100:.1f} cm outside 4-12 cm")


def default_params(kind: str, rng: np.random.Generator) -> dict:
    """Random grasp-friendly parameters for ``kind`` (a subrange of the valid sizes)."""
    u = rng.uniform
    if kind == "sphere":
        return {"radius": u(0.025, 0.04)}
    if kind == "box":
        return {"size": [u(0.04, 0.08), u(0.04, 0.08), u(0.05, 0.10)]}
    if kind == "cylinder":
        return {"radius": u(0.022, 0.035), "height": u(0.06, 0.11)}
    if kind == "capsule":
        return {"radius": u(0.022, 0.033), "length": u(0.01, 0.05)}
    if kind == "union-of-two":
        return {"size": [u(0.04, 0.06), u(0.04, 0.06), u(0.03, 0.05)], "radius": u(0.02, 0.03)}
    raise ValueError(f"unknown object kind {kind!r}")


def generate_object(kind: str, params: dict | None = None, seed: int = 0) -> TriMesh:
    """Watertight primitive centred on its bounding box.

    Parameters (meters): sphere ``radius``; box ``size`` (3 sides); cylinder
    ``radius``, ``height``; capsule ``radius``, ``length`` (cylindrical part);
    union-of-two ``size`` of a box plus ``radius`` of a sphere resting on it,
    separated by a 1 mm gap.  The largest extent must lie in 4-12 cm.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown object kind {kind!r}")
    params = default_params(kind, _rng(seed, 0)) if params is None else params
    if kind == "sphere":
        r = params["radius"]
        _check_size(2 * r)
        mesh = shapes.icosphere(r, 3)
    elif kind == "box":
        size = np.asarray(params["size"], dtype=np.float64)
        for s in size:
            _check_size(s)
        mesh = shapes.box(size, spacing=0.01)
    elif kind == "cylinder":
        r, h = params["radius"], params["height"]
        _check_size(max(2 * r, h))
        mesh = shapes.cylinder(r, h, n_around=24, cap_rings=3, ring_spacing=0.01)
    elif kind == "capsule":
        r, length = params["radius"], params["length"]
        _check_size(max(2 * r, length + 2 * r))
        mesh = shapes.capsule(r, length, n_around=16, ring_spacing=0.01, cap_rings=3)
    else:
        size = np.asarray(params["size"], dtype=np.float64)
        r = params["radius"]
        _check_size(max(size.max(), 2 * r, size[2] + UNION_GAP + 2 * r))
        base = shapes.box(size, spacing=0.01)
        top = shapes.icosphere(r, 3, center=(0.0, 0.0, size[2] / 2 + UNION_GAP + r))
        mesh = shapes.merge([base, top])
    lo, hi = mesh.bounds
    return TriMesh(mesh.vertices - (lo + hi) / 2, mesh.faces)


# ---------------------------------------------------------------- grasps


def _align(src, dst):
    """Rotation matrix taking unit vector ``src`` to unit vector ``dst``."""
    v = np.cross(src, dst)
    c = float(np.dot(src, dst))
    if np.linalg.norm(v) < 1e-12:
        if c > 0:
            return np.eye(3)
        perp = np.cross(src, [1.0, 0, 0])
        if np.linalg.norm(perp) < 1e-6:
            perp = np.cross(src, [0, 1.0, 0])
        return Rotation.from_rotvec(np.pi * perp / np.linalg.norm(perp)).as_matrix()
    axis = v / np.linalg.norm(v)
    return Rotation.from_rotvec(axis * np.arctan2(np.linalg.norm(v), c)).as_matrix()


def _touches(model, obj, pose, idx=None) -> bool:
    v = forward(model, pose).vertices
    if idx is not None:
        v = v[idx]
    lo, hi = obj.bounds
    near = np.all((v >= lo) & (v <= hi), axis=1)
    return bool(near.any() and contains(obj, v[near]).any())


def _first_contact(fn, lo, hi, n_scan, n_bisect):
    """Smallest parameter in [lo, hi] where ``fn`` turns true (scan then bisect), else None."""
    grid = np.linspace(lo, hi, n_scan + 1)
    prev = grid[0]
    if fn(prev):
        return prev
    for x in grid[1:]:
        if fn(x):
            a, b = prev, x
            for _ in range(n_bisect):
                m = 0.5 * (a + b)
                a, b = (a, m) if fn(m) else (m, b)
            return b
        prev = x
    return None


def oracle_grasp(obj: TriMesh, approach, seed: int = 0, model: HandModel | None = None,
                 clearance: float = 0.002) -> HandPose:
    """Procedural closing grasp.

    The palm normal is aligned with ``approach`` (pointing from hand to
    object) with a seeded roll, the palm is advanced until it touches and
    backed off by ``clearance``, then each digit curls until its first vertex
    touches the object or its joints reach pi/2.
    """
    model = model or default_model()
    a = np.asarray(approach, dtype=np.float64)
    a = a / np.linalg.norm(a)
    roll = _rng(seed, 1).uniform(0.0, 2 * np.pi)
    Rw = Rotation.from_rotvec(a * roll).as_matrix() @ _align(PALM_NORMAL, a)
    lo, hi = obj.bounds
    center = (lo + hi) / 2
    reach = float(np.linalg.norm(hi - lo))
    wrist = Rotation.from_matrix(Rw).as_rotvec()

    def pose_at(s):
        rot = np.zeros((16, 3))
        rot[0] = wrist
        return HandPose(center - a * s - Rw @ GRASP_POINT, rot)

    # distance s of the palm point from the object center along -approach
    s_touch = _first_contact(lambda s: _touches(model, obj, pose_at(-s)), -reach, 0.0, 200, 20)
    if s_touch is None:
        raise UnreachableError("object unreachable")
    pose = pose_at(-s_touch + clearance)
    touched = False
    for finger in FINGERS:
        idx = part_vertices(model, finger)
        ang = _first_contact(lambda t: _touches(model, obj, finger_curl_pose(model, pose, finger, t), idx),
                             0.0, np.pi / 2, 24, 14)
        if ang is None:
            pose = finger_curl_pose(model, pose, finger, np.pi / 2)
        else:
            touched = True
            pose = finger_curl_pose(model, pose, finger, ang)
    if not touched:
        raise UnreachableError("object unreachable")
    return pose


def _part_depths(model, obj, pose):
    hand = forward(model, pose)
    inside, depth, _ = penetration(obj, hand.vertices)
    out = dict.fromkeys(model.joint_part, 0.0)
    for i, d in zip(inside, depth):
        part = hand.part_labels[i]
        out[part] = max(out[part], float(d))
    return out


def penetrating_variant(obj: TriMesh, pose: HandPose, finger: str, depth: float = 0.005,
                        max_extra: float = 1.0, other_limit: float = 0.001,
                        model: HandModel | None = None) -> HandPose:
    """Curl ``finger`` further until its deepest vertex sits ``depth`` inside ``obj``.

    All three joints of the finger get the same extra flexion, found by
    bisection.  Raises UnreachableError when the depth cannot be reached
    within ``max_extra`` radians or another part would sink deeper than
    ``other_limit``.
    """
    model = model or default_model()
    joints = model.finger_joints(finger)

    def curled(extra):
        th = pose.vector.copy()
        for j in joints:
            th[3 + 3 * j:6 + 3 * j] += extra * model.flex_axes[j]
        return HandPose.from_vector(th)

    extra = _first_contact(lambda e: _part_depths(model, obj, curled(e))[finger] >= depth,
                           0.0, max_extra, 20, 20)
    if extra is None:
        raise UnreachableError(f"{finger} cannot reach {depth} m depth")
    out = curled(extra)
    others = {k: v for k, v in _part_depths(model, obj, out).items() if k != finger}
    if max(others.values()) > other_limit:
        raise UnreachableError(f"curling {finger} leaves other parts penetrating")
    return out


def derive_gt_contact(cloud: ObjectCloud, hand, threshold: float = CONTACT_THRESHOLD) -> np.ndarray:
    """1 where the nearest hand vertex is closer than ``threshold``, else 0."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    verts = hand.vertices if hasattr(hand, "vertices") else np.asarray(hand)
    d, _ = cKDTree(verts).query(cloud.points)
    return (d < threshold).astype(np.float64)


def transform_pose(pose: HandPose, rotation, translation) -> HandPose:
    """Pose of the hand after the rigid map x -> R x + t (wrist joint at the origin)."""
    R = np.asarray(rotation)
    rot = pose.joint_rotations.copy()
    rot[0] = Rotation.from_matrix(R @ Rotation.from_rotvec(rot[0]).as_matrix()).as_rotvec()
    return HandPose(R @ pose.translation + translation, rot)


def augment(sample: GraspSample, seed: int, translation_range: float = 0.01,
            rotation_range_deg: float = 1.0) -> GraspSample:
    """Random rigid jitter: uniform translation per axis and uniform XYZ Euler angles in degrees."""
    if translation_range == 0 and rotation_range_deg == 0:
        return sample
    rng = _rng(seed, 2)
    t = rng.uniform(-translation_range, translation_range, 3)
    R = Rotation.from_euler("xyz", rng.uniform(-rotation_range_deg, rotation_range_deg, 3),
                            degrees=True).as_matrix()
    pts = sample.cloud.points @ R.T + t
    pose = None if sample.gt_pose is None else transform_pose(sample.gt_pose, R, t)
    return replace(sample, object_mesh=sample.object_mesh.transformed(R, t),
                   cloud=ObjectCloud(pts, sample.cloud.contact), gt_pose=pose)


def random_direction(rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def _object_samples(i: int, seed: int, grasps_per_object: int, n_points: int, max_tries: int):
    from .metrics import penetration_volume

    model = default_model()
    kind = KINDS[i % len(KINDS)]
    obj_seed = int(np.random.SeedSequence([seed, i]).generate_state(1)[0])
    mesh = generate_object(kind, seed=obj_seed)
    cloud = sample_surface_points(mesh, n_points, seed=obj_seed)
    rng = _rng(seed, i, 3)
    out = []
    for g in range(grasps_per_object):
        for _ in range(max_tries):
            approach = random_direction(rng)
            try:
                pose = oracle_grasp(mesh, approach, seed=int(rng.integers(2 ** 31)), model=model)
            except UnreachableError:
                continue
            hand = forward(model, pose)
            contact = derive_gt_contact(cloud, hand)
            if contact.sum() >= 1 and penetration_volume(hand, mesh) < 2.0:
                break
        else:
            raise RuntimeError(f"no valid grasp for object {i} after {max_tries} tries")
        out.append(GraspSample(mesh, cloud, contact, pose, "synthetic",
                               f"s{i * grasps_per_object + g:05d}", f"o{i:04d}", kind))
    return out


def build_dataset(n_objects: int, grasps_per_object: int, seed: int = 0, n_points: int = N_POINTS,
                  test_kinds=("capsule",), max_tries: int = 30, workers: int = 1):
    """Objects cycle through ``KINDS``; all samples of ``test_kinds`` form the test split.

    Returns (samples, split) with split = {"train": ids, "test": ids, "test_kinds": kinds}.
    Every sample has at least one contact point and a hand/object overlap
    below 2 cm^3.  Each object draws from its own seed, so the result does
    not depend on ``workers``.
    """
    if n_objects < 1 or grasps_per_object < 1:
        raise ValueError("counts must be >= 1")
    unknown = set(test_kinds) - set(KINDS)
    if unknown:
        raise ValueError(f"unknown test kinds {sorted(unknown)}")
    args = [(i, seed, grasps_per_object, n_points, max_tries) for i in range(n_objects)]
    if workers > 1 and n_objects > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            groups = list(pool.map(_object_samples, *zip(*args)))
    else:
        groups = [_object_samples(*a) for a in args]
    samples = [s for g in groups for s in g]
    test_kinds = [k for k in KINDS if k in set(test_kinds)]
    split = {"train": [s.sample_id for s in samples if s.kind not in test_kinds],
             "test": [s.sample_id for s in samples if s.kind in test_kinds],
             "test_kinds": test_kinds}
    return samples, split


# ---------------------------------------------------------------- directory format


def save_dataset(root, samples, split):
    """Write ``objects/*.obj``, ``clouds/*.c2gpc``, ``poses/*.json`` and ``split.json``."""
    root = Path(root)
    for sub in ("objects", "clouds", "poses"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    written = set()
    for s in samples:
        if s.object_id not in written:
            write_obj(root / "objects" / f"{s.object_id}.obj", s.object_mesh)
            written.add(s.object_id)
        write_cloud(root / "clouds" / f"{s.sample_id}.c2gpc", s.cloud.with_contact(s.gt_contact))
        meta = {"sample_id": s.sample_id, "object_id": s.object_id, "kind": s.kind,
                "provenance": s.provenance,
                "pose": None if s.gt_pose is None else [float(x) for x in s.gt_pose.vector]}
        (root / "poses" / f"{s.sample_id}.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    (root / "split.json").write_text(json.dumps(split, indent=1, sort_keys=True))


def load_dataset(root):
    root = Path(root)
    if not (root / "split.json").exists():
        raise FileNotFoundError(f"{root}: no split.json, not a dataset directory")
    split = json.loads((root / "split.json").read_text())
    meshes, samples = {}, []
    for path in sorted((root / "poses").glob("*.json")):
        meta = json.loads(path.read_text())
        oid = meta["object_id"]
        if oid not in meshes:
            meshes[oid] = read_obj(root / "objects" / f"{oid}.obj")
        cloud = read_cloud(root / "clouds" / f"{meta['sample_id']}.c2gpc")
        if cloud.contact is None:
            raise GeometryError(f"{meta['sample_id']}: cloud carries no contact map")
        pose = None if meta.get("pose") is None else HandPose.from_vector(meta["pose"])
        samples.append(GraspSample(meshes[oid], ObjectCloud(cloud.points), cloud.contact, pose,
                                   meta.get("provenance", "external"), meta["sample_id"], oid,
                                   meta.get("kind", "")))
    return samples, split


def ingest(obj_path, cloud_path, pose=None, sample_id="ext0") -> GraspSample:
    """Wrap an external OBJ mesh and C2GPC1 cloud (with its contact column) as a sample."""
    mesh = read_obj(obj_path)
    cloud = read_cloud(cloud_path)
    contact = np.zeros(len(cloud)) if cloud.contact is None else cloud.contact
    pose = None if pose is None else (pose if isinstance(pose, HandPose) else HandPose.from_vector(pose))
    return GraspSample(mesh, ObjectCloud(cloud.points), contact, pose, "external", sample_id, sample_id, "")
