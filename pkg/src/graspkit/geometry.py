"""Mesh and point-cloud kernels.

All lengths are meters.  Inside/outside uses the generalized winding number
thresholded at 0.5, so a mesh made of several closed pieces (the hand) is
treated as their union.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from numba import njit


class GeometryError(ValueError):
    pass


class TriMesh:
    """Immutable triangle mesh; ``watertight`` means every edge has exactly two faces."""

    def __init__(self, vertices, faces):
        v = np.array(vertices, dtype=np.float64).reshape(-1, 3)
        f = np.array(faces, dtype=np.int64).reshape(-1, 3)
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise GeometryError("face index out of range")
        v.flags.writeable = False
        f.flags.writeable = False
        self.vertices = v
        self.faces = f

    def __repr__(self):
        return f"TriMesh(V={len(self.vertices)}, F={len(self.faces)}, watertight={self.watertight})"

    @cached_property
    def watertight(self) -> bool:
        if len(self.faces) == 0:
            return False
        _, counts = np.unique(self._edge_keys, return_counts=True)
        return bool(np.all(counts == 2))

    @cached_property
    def _edge_keys(self):
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        e.sort(axis=1)
        return e[:, 0] * (len(self.vertices) + 1) + e[:, 1]

    @cached_property
    def triangles(self) -> np.ndarray:
        return self.vertices[self.faces]

    @cached_property
    def face_areas(self) -> np.ndarray:
        t = self.triangles
        return 0.5 * np.linalg.norm(np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]), axis=1)

    @cached_property
    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    @cached_property
    def volume(self) -> float:
        """Signed enclosed volume by the divergence theorem (m^3)."""
        t = self.triangles
        return float(np.einsum("ij,ij->i", t[:, 0], np.cross(t[:, 1], t[:, 2])).sum() / 6.0)

    @cached_property
    def components(self):
        """List of (face indices, lo, hi, closed) per connected piece."""
        nv, nf = len(self.vertices), len(self.faces)
        rows = np.repeat(np.arange(nf), 3)
        adj = coo_matrix((np.ones(3 * nf), (rows, self.faces.reshape(-1) + nf)), shape=(nf + nv,) * 2)
        _, labels = connected_components(adj, directed=False)
        face_labels = labels[:nf]
        out = []
        for lab in np.unique(face_labels):
            idx = np.nonzero(face_labels == lab)[0]
            pts = self.vertices[self.faces[idx].reshape(-1)]
            keys = self._edge_keys.reshape(3, nf)[:, idx].reshape(-1)
            _, counts = np.unique(keys, return_counts=True)
            out.append((idx, pts.min(axis=0), pts.max(axis=0), bool(np.all(counts == 2))))
        return out

    def transformed(self, rotation=None, translation=None) -> "TriMesh":
        v = self.vertices
        if rotation is not None:
            v = v @ np.asarray(rotation).T
        if translation is not None:
            v = v + np.asarray(translation)
        return TriMesh(v, self.faces)


@dataclass(frozen=True)
class ObjectCloud:
    points: np.ndarray
    contact: np.ndarray | None = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64).reshape(-1, 3)
        object.__setattr__(self, "points", pts)
        if self.contact is not None:
            c = np.array(self.contact, dtype=np.float64).reshape(-1)
            if len(c) != len(pts):
                raise GeometryError(f"contact length {len(c)} != point count {len(pts)}")
            if np.any(c < 0) or np.any(c > 1):
                raise GeometryError("contact scores must lie in [0, 1]")
            object.__setattr__(self, "contact", c)

    def __len__(self):
        return len(self.points)

    def with_contact(self, contact) -> "ObjectCloud":
        return ObjectCloud(self.points, contact)


@dataclass(frozen=True)
class VoxelGrid:
    origin: np.ndarray
    voxel_size: float
    dims: tuple
    occupancy: np.ndarray

    @property
    def volume_cm3(self) -> float:
        return float(self.occupancy.sum()) * (self.voxel_size * 100.0) ** 3

    def centers(self) -> np.ndarray:
        return _voxel_centers(self.origin, self.voxel_size, self.dims)


# ---------------------------------------------------------------- sampling


def sample_surface_points(mesh: TriMesh, n: int, seed: int = 0) -> ObjectCloud:
    """Area-weighted uniform samples on the surface (Philox counter-based RNG)."""
    if len(mesh.faces) == 0 or mesh.face_areas.sum() <= 0:
        raise GeometryError("degenerate mesh")
    if n < 1:
        raise GeometryError("n must be >= 1")
    rng = np.random.Generator(np.random.Philox(seed))
    areas = mesh.face_areas
    face = rng.choice(len(areas), size=n, p=areas / areas.sum())
    u, v = rng.random(n), rng.random(n)
    flip = u + v > 1
    u[flip], v[flip] = 1 - u[flip], 1 - v[flip]
    t = mesh.triangles[face]
    pts = t[:, 0] + u[:, None] * (t[:, 1] - t[:, 0]) + v[:, None] * (t[:, 2] - t[:, 0])
    return ObjectCloud(pts)


# ---------------------------------------------------------------- distances


@njit(cache=True)
def _closest_point_kernel(pts, tri, dist, best, face):
    """Brute-force nearest point over all triangles (region tests after Ericson)."""
    for i in range(pts.shape[0]):
        px, py, pz = pts[i, 0], pts[i, 1], pts[i, 2]
        dmin = np.inf
        for f in range(tri.shape[0]):
            ax, ay, az = tri[f, 0, 0], tri[f, 0, 1], tri[f, 0, 2]
            abx, aby, abz = tri[f, 1, 0] - ax, tri[f, 1, 1] - ay, tri[f, 1, 2] - az
            acx, acy, acz = tri[f, 2, 0] - ax, tri[f, 2, 1] - ay, tri[f, 2, 2] - az
            apx, apy, apz = px - ax, py - ay, pz - az
            d1 = abx * apx + aby * apy + abz * apz
            d2 = acx * apx + acy * apy + acz * apz
            d3 = d1 - (abx * abx + aby * aby + abz * abz)
            d4 = d2 - (acx * abx + acy * aby + acz * abz)
            d5 = d1 - (abx * acx + aby * acy + abz * acz)
            d6 = d2 - (acx * acx + acy * acy + acz * acz)
            if d1 <= 0.0 and d2 <= 0.0:
                s, t = 0.0, 0.0
            elif d3 >= 0.0 and d4 <= d3:
                s, t = 1.0, 0.0
            elif d1 * d4 - d3 * d2 <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
                s, t = d1 / (d1 - d3), 0.0
            elif d6 >= 0.0 and d5 <= d6:
                s, t = 0.0, 1.0
            elif d5 * d2 - d1 * d6 <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
                s, t = 0.0, d2 / (d2 - d6)
            elif d3 * d6 - d5 * d4 <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
                w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
                s, t = 1.0 - w, w
            else:
                va = d3 * d6 - d5 * d4
                vb = d5 * d2 - d1 * d6
                vc = d1 * d4 - d3 * d2
                denom = 1.0 / (va + vb + vc)
                s, t = vb * denom, vc * denom
            qx = ax + s * abx + t * acx
            qy = ay + s * aby + t * acy
            qz = az + s * abz + t * acz
            d = (qx - px) ** 2 + (qy - py) ** 2 + (qz - pz) ** 2
            if d < dmin:
                dmin = d
                best[i, 0], best[i, 1], best[i, 2] = qx, qy, qz
                face[i] = f
        dist[i] = np.sqrt(dmin)


def closest_points(mesh: TriMesh, points):
    """Exact nearest surface points.  Returns (distance, closest point, face index)."""
    pts = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    dist = np.empty(len(pts))
    best = np.empty((len(pts), 3))
    face = np.empty(len(pts), dtype=np.int64)
    _closest_point_kernel(pts, np.ascontiguousarray(mesh.triangles), dist, best, face)
    return dist, best, face


def unsigned_distance(mesh: TriMesh, points) -> np.ndarray:
    return closest_points(mesh, points)[0]


@njit(cache=True)
def _solid_angle_kernel(pts, idx, tri, out):
    """Add the summed signed solid angle of ``tri`` at pts[idx] into out[idx]."""
    for n in range(idx.shape[0]):
        i = idx[n]
        px, py, pz = pts[i, 0], pts[i, 1], pts[i, 2]
        acc = 0.0
        for f in range(tri.shape[0]):
            ax, ay, az = tri[f, 0, 0] - px, tri[f, 0, 1] - py, tri[f, 0, 2] - pz
            bx, by, bz = tri[f, 1, 0] - px, tri[f, 1, 1] - py, tri[f, 1, 2] - pz
            cx, cy, cz = tri[f, 2, 0] - px, tri[f, 2, 1] - py, tri[f, 2, 2] - pz
            la = np.sqrt(ax * ax + ay * ay + az * az)
            lb = np.sqrt(bx * bx + by * by + bz * bz)
            lc = np.sqrt(cx * cx + cy * cy + cz * cz)
            num = ax * (by * cz - bz * cy) + ay * (bz * cx - bx * cz) + az * (bx * cy - by * cx)
            den = (la * lb * lc + (ax * bx + ay * by + az * bz) * lc
                   + (ax * cx + ay * cy + az * cz) * lb + (bx * cx + by * cy + bz * cz) * la)
            acc += 2.0 * np.arctan2(num, den)
        out[i] += acc


def winding_number(mesh: TriMesh, points) -> np.ndarray:
    """Generalized winding number.  Closed pieces are skipped for points outside their box."""
    pts = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    total = np.zeros(len(pts))
    for faces, lo, hi, closed in mesh.components:
        if closed:
            pad = 1e-9
            sel = np.nonzero(np.all((pts >= lo - pad) & (pts <= hi + pad), axis=1))[0]
        else:
            sel = np.arange(len(pts))
        if len(sel):
            _solid_angle_kernel(pts, sel, np.ascontiguousarray(mesh.triangles[faces]), total)
    return total / (4.0 * np.pi)


def contains(mesh: TriMesh, points) -> np.ndarray:
    return winding_number(mesh, points) >= 0.5


def _require_watertight(mesh, what="sign undefined"):
    if not mesh.watertight:
        raise GeometryError(f"{what}: mesh is not watertight")


def signed_distance(mesh: TriMesh, points) -> np.ndarray:
    """Negative inside, positive outside; magnitude is the unsigned distance."""
    _require_watertight(mesh)
    d = unsigned_distance(mesh, points)
    return np.where(contains(mesh, points), -d, d)


def penetration(mesh: TriMesh, points):
    """Depths of points inside a watertight mesh.

    Returns (inside index array, depths, nearest surface points); distance
    queries run only for the inside points.
    """
    _require_watertight(mesh)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    inside = np.nonzero(contains(mesh, pts))[0]
    if len(inside) == 0:
        return inside, np.zeros(0), np.zeros((0, 3))
    d, q, _ = closest_points(mesh, pts[inside])
    return inside, d, q


# ---------------------------------------------------------------- voxels


def _voxel_centers(origin, voxel_size, dims):
    axes = [origin[i] + (np.arange(dims[i]) + 0.5) * voxel_size for i in range(3)]
    g = np.meshgrid(*axes, indexing="ij")
    return np.stack([x.reshape(-1) for x in g], axis=1)


def shared_bounds(meshes, voxel_size: float, pad_voxels: int = 2):
    """Joint axis-aligned box of all meshes, padded by ``pad_voxels`` voxels."""
    lo = np.min([m.bounds[0] for m in meshes], axis=0) - pad_voxels * voxel_size
    hi = np.max([m.bounds[1] for m in meshes], axis=0) + pad_voxels * voxel_size
    return lo, hi


def voxelize(mesh: TriMesh, voxel_size: float, bounds) -> VoxelGrid:
    """Occupancy of voxel centers inside ``mesh`` over the box ``bounds=(lo, hi)``."""
    if voxel_size <= 0:
        raise GeometryError("voxel_size must be positive")
    _require_watertight(mesh, "cannot voxelize")
    lo, hi = (np.asarray(b, dtype=np.float64) for b in bounds)
    dims = tuple(int(max(0, np.ceil((hi[i] - lo[i]) / voxel_size - 1e-9))) for i in range(3))
    centers = _voxel_centers(lo, voxel_size, dims)
    occ = np.zeros(len(centers), dtype=bool)
    mlo, mhi = mesh.bounds
    cand = np.nonzero(np.all((centers >= mlo) & (centers <= mhi), axis=1))[0]
    if len(cand):
        occ[cand] = contains(mesh, centers[cand])
    return VoxelGrid(lo, float(voxel_size), dims, occ.reshape(dims))


def intersection_volume(a: VoxelGrid, b: VoxelGrid) -> float:
    """Volume in cm^3 of voxels occupied in both grids."""
    if (a.dims != b.dims or a.voxel_size != b.voxel_size
            or not np.array_equal(a.origin, b.origin)):
        raise GeometryError("voxel grids do not share origin, voxel size and dims")
    return float(np.logical_and(a.occupancy, b.occupancy).sum()) * (a.voxel_size * 100.0) ** 3


# ---------------------------------------------------------------- io


def write_obj(path, mesh: TriMesh):
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj(path) -> TriMesh:
    verts, faces = [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            idx = [int(p.split("/")[0]) for p in parts[1:]]
            idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
            faces += [[idx[0], idx[k], idx[k + 1]] for k in range(1, len(idx) - 1)]
    return TriMesh(verts, faces)


_PLY_TYPES = {
    "char": "i1", "uchar": "u1", "short": "<i2", "ushort": "<u2", "int": "<i4", "uint": "<u4",
    "float": "<f4", "double": "<f8", "int8": "i1", "uint8": "u1", "int32": "<i4",
    "uint32": "<u4", "float32": "<f4", "float64": "<f8",
}


def write_ply(path, vertices, faces=None, colors=None, scalars=None):
    """Binary little-endian PLY with optional uchar RGB colors and float scalar properties."""
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    scalars = dict(scalars or {})
    fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    if colors is not None:
        fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    fields += [(name, "<f4") for name in scalars]
    rec = np.zeros(len(vertices), dtype=fields)
    rec["x"], rec["y"], rec["z"] = vertices.T
    if colors is not None:
        colors = np.asarray(colors, dtype=np.uint8).reshape(-1, 3)
        rec["red"], rec["green"], rec["blue"] = colors.T
    for name, vals in scalars.items():
        rec[name] = np.asarray(vals).reshape(-1)
    inv = {"<f4": "float", "u1": "uchar"}
    head = ["ply", "format binary_little_endian 1.0", f"element vertex {len(vertices)}"]
    head += [f"property {inv[t]} {n}" for n, t in fields]
    nf = 0 if faces is None else len(faces)
    if nf:
        head += [f"element face {nf}", "property list uchar int vertex_indices"]
    head.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(head) + "\n").encode("ascii"))
        fh.write(rec.tobytes())
        if nf:
            frec = np.zeros(nf, dtype=[("n", "u1"), ("idx", "<i4", (3,))])
            frec["n"] = 3
            frec["idx"] = np.asarray(faces)
            fh.write(frec.tobytes())


def read_ply(path) -> dict:
    """Read a binary little-endian PLY: ``vertices``, ``faces``, ``colors``, ``scalars``."""
    raw = Path(path).read_bytes()
    end = raw.index(b"end_header\n") + len(b"end_header\n")
    header = raw[:end].decode("ascii").splitlines()
    if "format binary_little_endian 1.0" not in header:
        raise GeometryError("only binary_little_endian PLY is supported")
    elements, cur = [], None
    for line in header:
        parts = line.split()
        if parts[0] == "element":
            cur = {"name": parts[1], "count": int(parts[2]), "props": []}
            elements.append(cur)
        elif parts[0] == "property":
            cur["props"].append(parts[1:])
    off = end
    out = {"vertices": None, "faces": None, "colors": None, "scalars": {}}
    for el in elements:
        if el["props"] and el["props"][0][0] == "list":
            _, ctype, itype, _ = el["props"][0]
            ct, it = np.dtype(_PLY_TYPES[ctype]), np.dtype(_PLY_TYPES[itype])
            faces = []
            for _ in range(el["count"]):
                n = int(np.frombuffer(raw, ct, 1, off)[0])
                off += ct.itemsize
                faces.append(np.frombuffer(raw, it, n, off))
                off += n * it.itemsize
            out["faces"] = np.array(faces, dtype=np.int64).reshape(-1, 3)
            continue
        dt = np.dtype([(p[1], _PLY_TYPES[p[0]]) for p in el["props"]])
        rec = np.frombuffer(raw, dt, el["count"], off)
        off += dt.itemsize * el["count"]
        if el["name"] != "vertex":
            continue
        names = dt.names
        out["vertices"] = np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(np.float64)
        if "red" in names:
            out["colors"] = np.stack([rec["red"], rec["green"], rec["blue"]], axis=1)
        for n in names:
            if n not in ("x", "y", "z", "red", "green", "blue"):
                out["scalars"][n] = rec[n].astype(np.float64)
    return out


CLOUD_MAGIC = b"C2GPC1"


def write_cloud(path, cloud: ObjectCloud):
    """``C2GPC1 | u32 N | N x (x, y, z, contact) float32``; a missing map is stored as NaN."""
    rec = np.empty((len(cloud), 4), dtype="<f4")
    rec[:, :3] = cloud.points
    rec[:, 3] = np.nan if cloud.contact is None else cloud.contact
    with open(path, "wb") as fh:
        fh.write(CLOUD_MAGIC)
        fh.write(struct.pack("<I", len(cloud)))
        fh.write(rec.tobytes())


def read_cloud(path) -> ObjectCloud:
    raw = Path(path).read_bytes()
    if raw[:6] != CLOUD_MAGIC:
        raise GeometryError(f"{path}: bad cloud magic")
    (n,) = struct.unpack("<I", raw[6:10])
    rec = np.frombuffer(raw, "<f4", n * 4, 10).reshape(n, 4).astype(np.float64)
    contact = None if np.all(np.isnan(rec[:, 3])) else rec[:, 3]
    return ObjectCloud(rec[:, :3], contact)
