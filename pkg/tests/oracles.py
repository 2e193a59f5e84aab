"""Slow, loop-based reference implementations used as test oracles.

Nothing here shares code with the package: distances use explicit
projection plus edge clamping, inside tests use ray parity, rotations use
quaternions.
"""

import math

import numpy as np


# ---------------------------------------------------------------- geometry


def _segment_distance(p, a, b):
    ab = b - a
    t = np.dot(p - a, ab) / np.dot(ab, ab)
    t = min(1.0, max(0.0, t))
    return np.linalg.norm(p - (a + t * ab))


def point_triangle_distance(p, a, b, c):
    """Distance from p to triangle abc: plane projection if it falls inside, else nearest edge."""
    n = np.cross(b - a, c - a)
    n = n / np.linalg.norm(n)
    q = p - np.dot(p - a, n) * n
    # barycentric test of the projection
    inside = True
    for u, v in ((a, b), (b, c), (c, a)):
        if np.dot(np.cross(v - u, q - u), n) < 0:
            inside = False
    if inside:
        return abs(np.dot(p - a, n))
    return min(_segment_distance(p, a, b), _segment_distance(p, b, c), _segment_distance(p, c, a))


def brute_unsigned_distance(mesh, points):
    out = []
    for p in np.asarray(points, dtype=float):
        out.append(min(point_triangle_distance(p, *mesh.vertices[f]) for f in mesh.faces))
    return np.array(out)


def _ray_hits(origin, direction, a, b, c, eps=1e-12):
    e1, e2 = b - a, c - a
    h = np.cross(direction, e2)
    det = np.dot(e1, h)
    if abs(det) < eps:
        return False
    inv = 1.0 / det
    s = origin - a
    u = inv * np.dot(s, h)
    if u < 0 or u > 1:
        return False
    q = np.cross(s, e1)
    v = inv * np.dot(direction, q)
    if v < 0 or u + v > 1:
        return False
    return inv * np.dot(e2, q) > eps


def ray_parity_inside(mesh, point, n_rays=3, seed=0):
    """Inside if most of ``n_rays`` random rays cross the surface an odd number of times."""
    rng = np.random.default_rng(seed)
    votes = 0
    for _ in range(n_rays):
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        hits = sum(_ray_hits(point, d, *mesh.vertices[f]) for f in mesh.faces)
        votes += hits % 2
    return votes * 2 > n_rays


# ---------------------------------------------------------------- rotations


def quaternion(r):
    r = np.asarray(r, dtype=float)
    t = np.linalg.norm(r)
    if t == 0:
        return np.array([1.0, 0, 0, 0])
    return np.concatenate([[math.cos(t / 2)], math.sin(t / 2) * r / t])


def quaternion_angle(r1, r2):
    """Rotation angle between two axis-angle rotations via unit quaternions."""
    d = abs(float(np.dot(quaternion(r1), quaternion(r2))))
    return 2 * math.acos(min(1.0, d))


def rotation_matrix(r):
    """Rodrigues via the quaternion-to-matrix formula."""
    w, x, y, z = quaternion(r)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


# ---------------------------------------------------------------- losses


def bce(pred, gt, clamp=1e-7):
    total = 0.0
    for p, y in zip(pred, gt):
        p = min(max(p, clamp), 1 - clamp)
        total -= y * math.log(p) + (1 - y) * math.log(1 - p)
    return total


def dice(pred, gt, eps=1e-7):
    inter = sum(p * y for p, y in zip(pred, gt))
    return 1 - 2 * inter / (sum(gt) + sum(pred) + eps)


def _nearest_sq(p, pts):
    return min(sum((p[k] - q[k]) ** 2 for k in range(3)) for q in pts)


def chamfer(hand, obj):
    a = sum(_nearest_sq(p, obj) for p in hand) / len(hand)
    b = sum(_nearest_sq(q, hand) for q in obj) / len(obj)
    return a + b


def penetration(hand, mesh):
    """Sum over inside vertices (ray parity) of the brute-force surface distance."""
    total = 0.0
    for v in hand:
        if ray_parity_inside(mesh, v):
            total += min(point_triangle_distance(v, *mesh.vertices[f]) for f in mesh.faces)
    return total


def geodesic(theta_a, theta_b):
    total = 0.0
    for j in range(16):
        total += quaternion_angle(theta_a[3 + 3 * j:6 + 3 * j], theta_b[3 + 3 * j:6 + 3 * j])
    return total


def consistency(c_in, hand, cloud, t=0.005, s=0.001):
    total = 0.0
    for c, q in zip(c_in, cloud):
        d = math.sqrt(_nearest_sq(q, hand))
        soft = 1.0 / (1.0 + math.exp(-(t - d) / s))
        total += (soft - c) ** 2
    return total
