"""Grasp evaluation: penetration, drop-test displacement, contact, success and diversity.

Inputs are in meters; reported depths and displacements are in cm and
volumes in cm^3.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist
from scipy.spatial.transform import Rotation

from .geometry import TriMesh, closest_points, contains, intersection_volume, penetration, \
    shared_bounds, signed_distance, voxelize

VOXEL_SIZE = 0.005
SUCCESS_VOLUME_CM3 = 5.0
SUCCESS_DISPLACEMENT_CM = 2.0

GRAVITY = 9.81
CONTACT_STIFFNESS = 1e4
CONTACT_DAMPING = 10.0
SIM_DT = 1.0 / 250.0
SIM_DURATION = 1.0
DENSITY = 500.0


class SimulationDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class GraspEvaluation:
    depth_max: float
    depth_mean: float
    volume: float
    sim_disp: float
    in_contact: bool
    success: bool


def _mesh(x) -> TriMesh:
    if isinstance(x, TriMesh):
        return x
    return x.trimesh


def _verts(x) -> np.ndarray:
    return x.vertices if hasattr(x, "vertices") else np.asarray(x)


def penetration_depth(hand, obj: TriMesh):
    """(max, mean) depth in cm over hand vertices inside the object; (0, 0) if none."""
    _, depth, _ = penetration(obj, _verts(hand))
    if len(depth) == 0:
        return 0.0, 0.0
    return float(depth.max() * 100), float(depth.mean() * 100)


def penetration_volume(hand, obj, voxel_size: float = VOXEL_SIZE) -> float:
    """Overlap volume (cm^3) of both solids voxelized on their shared padded grid."""
    a, b = _mesh(hand), _mesh(obj)
    bounds = shared_bounds([a, b], voxel_size)
    return intersection_volume(voxelize(a, voxel_size, bounds), voxelize(b, voxel_size, bounds))


def in_contact(hand, obj: TriMesh) -> bool:
    """Some hand vertex lies on or inside the object surface."""
    return bool(np.any(signed_distance(obj, _verts(hand)) <= 0))


def _mass_properties(obj: TriMesh, density: float, voxel_size: float):
    grid = voxelize(obj, voxel_size, shared_bounds([obj], voxel_size))
    c = grid.centers()[grid.occupancy.reshape(-1)]
    if len(c) == 0:
        raise ValueError("object too thin to voxelize")
    m_voxel = density * voxel_size ** 3
    mass = m_voxel * len(c)
    com = c.mean(axis=0)
    r = c - com
    inertia = m_voxel * (np.eye(3) * np.einsum("ij,ij->", r, r) - r.T @ r)
    inertia += np.eye(3) * mass * voxel_size ** 2 / 6.0
    return mass, com, inertia


def simulate_displacement(hand, obj: TriMesh, duration: float = SIM_DURATION, dt: float = SIM_DT,
                          gravity: float = GRAVITY, stiffness: float = CONTACT_STIFFNESS,
                          damping: float = CONTACT_DAMPING, density: float = DENSITY,
                          voxel_size: float = VOXEL_SIZE, return_trajectory: bool = False):
    """Drop the object under gravity (-z) against a static hand; displacement of its center in cm.

    Object vertices inside the hand get a spring force ``k * depth`` toward
    the nearest hand surface point plus a damper ``-c * v`` on the vertex
    velocity.  Velocities are
    advanced with the contact springs and dampers treated linearly
    implicitly, then positions use the new velocities (symplectic Euler).
    ``hand=None`` is free fall.
    """
    mass, com0, inertia_body = _mass_properties(obj, density, voxel_size)
    hand_mesh = None if hand is None else _mesh(hand)
    body = obj.vertices - com0
    M = np.zeros((6, 6))
    M[:3, :3] = mass * np.eye(3)
    x, R = com0.copy(), np.eye(3)
    v, w = np.zeros(3), np.zeros(3)
    f_ext = np.array([0.0, 0.0, -mass * gravity])
    steps = int(round(duration / dt))
    traj = [x.copy()]
    for _ in range(steps):
        Iw = R @ inertia_body @ R.T
        M[3:, 3:] = Iw
        u = np.concatenate([v, w])
        rhs = M @ u + dt * np.concatenate([f_ext, -np.cross(w, Iw @ w)])
        if hand_mesh is not None:
            r = body @ R.T
            p = r + x
            inside = np.nonzero(contains(hand_mesh, p))[0] if _overlap(hand_mesh, p) else np.zeros(0, int)
            if len(inside):
                depth, q, _ = closest_points(hand_mesh, p[inside])
                n = (q - p[inside]) / np.maximum(depth, 1e-12)[:, None]
                u = _contact_solve(M, rhs, n, r[inside], depth, dt, stiffness, damping)
            else:
                u = np.linalg.solve(M, rhs)
        else:
            u = np.linalg.solve(M, rhs)
        v, w = u[:3], u[3:]
        x = x + dt * v
        R = Rotation.from_rotvec(w * dt).as_matrix() @ R
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(w))):
            raise SimulationDiverged("simulation diverged")
        traj.append(x.copy())
    disp = float(np.linalg.norm(x - com0) * 100)
    if return_trajectory:
        return disp, np.array(traj)
    return disp


def _skew(r):
    z = np.zeros(len(r))
    return np.stack([np.stack([z, -r[:, 2], r[:, 1]], 1),
                     np.stack([r[:, 2], z, -r[:, 0]], 1),
                     np.stack([-r[:, 1], r[:, 0], z], 1)], 1)


def _contact_solve(M, rhs, n, r, depth, dt, k, c):
    """Linearly implicit penalty step for contacts at body offsets ``r`` with normals ``n``.

    Springs act along the normal, dampers on the full contact-point
    velocity.  Contacts whose normal force would pull are released and the
    step is re-solved.
    """
    Jn = np.concatenate([n, np.cross(r, n)], axis=1)
    S = _skew(r)
    # point velocity = B u with B = [I, -S]
    BtB = np.zeros((len(r), 6, 6))
    BtB[:, :3, :3] = np.eye(3)
    BtB[:, :3, 3:] = -S
    BtB[:, 3:, :3] = S
    BtB[:, 3:, 3:] = np.einsum("nji,njk->nik", S, S)
    keep = np.ones(len(depth), dtype=bool)
    for _ in range(4):
        Jk = Jn[keep]
        A = M + dt * dt * k * Jk.T @ Jk + dt * c * BtB[keep].sum(axis=0)
        u = np.linalg.solve(A, rhs + dt * k * Jk.T @ depth[keep])
        vn = Jn @ u
        pulling = keep & (k * (depth - dt * vn) - c * vn < 0)
        if not pulling.any():
            return u
        keep &= ~pulling
        if not keep.any():
            return np.linalg.solve(M, rhs)
    return u


def _overlap(mesh: TriMesh, pts) -> bool:
    lo, hi = mesh.bounds
    return bool(np.any(np.all((pts >= lo) & (pts <= hi), axis=1)))


def evaluate_grasp(hand, obj: TriMesh, **sim_kwargs) -> GraspEvaluation:
    dmax, dmean = penetration_depth(hand, obj)
    vol = penetration_volume(hand, obj)
    disp = simulate_displacement(hand, obj, **sim_kwargs)
    return GraspEvaluation(dmax, dmean, vol, disp, in_contact(hand, obj), is_success(vol, disp))


def is_success(volume_cm3: float, displacement_cm: float) -> bool:
    return volume_cm3 < SUCCESS_VOLUME_CM3 and displacement_cm < SUCCESS_DISPLACEMENT_CM


def contact_rate(samples) -> float:
    if len(samples) == 0:
        raise ValueError("contact_rate needs at least one sample")
    return 100.0 * sum(bool(s.in_contact) for s in samples) / len(samples)


def success_rate(samples) -> float:
    if len(samples) == 0:
        raise ValueError("success_rate needs at least one sample")
    return 100.0 * sum(is_success(s.volume, s.sim_disp) for s in samples) / len(samples)


def diversity(meshes, representation: str = "vertices") -> float:
    """Mean pairwise L2 distance (cm) between flattened samples, over ordered pairs i != k.

    ``representation="parameters"`` compares pose vectors instead; that
    result is in pose units, not cm.
    """
    if len(meshes) < 2:
        raise ValueError("diversity needs at least two samples")
    if representation == "vertices":
        flat = [np.asarray(_verts(m)).reshape(-1) for m in meshes]
        if len({f.shape for f in flat}) != 1:
            raise ValueError("samples must share topology")
        X = np.stack(flat) * 100.0
    elif representation == "parameters":
        X = np.stack([np.asarray(getattr(m, "vector", m)).reshape(-1) for m in meshes])
    else:
        raise ValueError(f"unknown representation {representation!r}")
    # each unordered pair appears twice in the ordered double sum
    return float(pdist(X).mean())


def summarize(evaluations, meshes=None) -> dict:
    """Table-style summary: Dep (mean of per-sample max depth), Vol, Mean/Var of Sim-Disp, CR, Div, Sim-SR."""
    disp = np.array([e.sim_disp for e in evaluations])
    out = {
        "Dep": float(np.mean([e.depth_max for e in evaluations])),
        "Vol": float(np.mean([e.volume for e in evaluations])),
        "Mean": float(disp.mean()),
        "Var": float(disp.std()),
        "CR": contact_rate(evaluations),
        "Div": diversity(meshes) if meshes is not None and len(meshes) >= 2 else None,
        "Sim-SR": success_rate(evaluations),
    }
    return out
