"""Closed primitive meshes with outward-facing triangles."""

from __future__ import annotations

import numpy as np

from .geometry import TriMesh


def _orient_outward(vertices, faces, center):
    """Flip triangles of a star-shaped solid so normals point away from ``center``."""
    t = vertices[faces]
    n = np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])
    out = t.mean(axis=1) - center
    flip = np.einsum("ij,ij->i", n, out) < 0
    faces = faces.copy()
    faces[flip] = faces[flip][:, [0, 2, 1]]
    return faces


def icosphere(radius=1.0, subdivisions=3, center=(0.0, 0.0, 0.0)) -> TriMesh:
    phi = (1 + 5 ** 0.5) / 2
    v = [[-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
         [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
         [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1]]
    f = [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
         [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
         [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
         [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]]
    verts = [np.array(p, dtype=np.float64) / np.linalg.norm(p) for p in v]
    faces = f
    for _ in range(subdivisions):
        cache, new = {}, []

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = new
    vertices = np.array(verts) * radius
    faces = _orient_outward(vertices, np.array(faces), np.zeros(3))
    return TriMesh(vertices + np.asarray(center), faces)


def box(size=(1.0, 1.0, 1.0), center=(0.0, 0.0, 0.0), spacing=None) -> TriMesh:
    """Axis-aligned box whose faces are gridded at roughly ``spacing`` (corners always present)."""
    size = np.asarray(size, dtype=np.float64)
    counts = np.ones(3, dtype=int) if spacing is None else np.maximum(1, np.ceil(size / spacing - 1e-9).astype(int))
    lo = -size / 2
    index, verts, faces = {}, [], []

    def vid(ijk):
        if ijk not in index:
            index[ijk] = len(verts)
            verts.append(lo + size * np.array(ijk) / counts)
        return index[ijk]

    for axis in range(3):
        u, w = [a for a in range(3) if a != axis]
        for side in (0, counts[axis]):
            for i in range(counts[u]):
                for j in range(counts[w]):
                    corners = []
                    for di, dj in ((0, 0), (1, 0), (1, 1), (0, 1)):
                        ijk = [0, 0, 0]
                        ijk[axis], ijk[u], ijk[w] = side, i + di, j + dj
                        corners.append(vid(tuple(ijk)))
                    faces += [[corners[0], corners[1], corners[2]], [corners[0], corners[2], corners[3]]]
    vertices = np.array(verts)
    faces = _orient_outward(vertices, np.array(faces), np.zeros(3))
    return TriMesh(vertices + np.asarray(center), faces)


def revolve(profile, n_around=16) -> TriMesh:
    """Surface of revolution about +z from ``(z, r)`` pairs; first and last must have r = 0."""
    profile = [(float(z), float(r)) for z, r in profile]
    if profile[0][1] != 0 or profile[-1][1] != 0:
        raise ValueError("profile must start and end on the axis")
    ang = 2 * np.pi * np.arange(n_around) / n_around
    verts = [[0.0, 0.0, profile[0][0]]]
    rings = []
    for z, r in profile[1:-1]:
        start = len(verts)
        verts += [[r * np.cos(a), r * np.sin(a), z] for a in ang]
        rings.append(start)
    verts.append([0.0, 0.0, profile[-1][0]])
    bottom, top = 0, len(verts) - 1
    faces = []
    k = np.arange(n_around)
    kn = (k + 1) % n_around
    first, last = rings[0], rings[-1]
    faces += [[bottom, first + b, first + a] for a, b in zip(k, kn)]
    for r0, r1 in zip(rings[:-1], rings[1:]):
        for a, b in zip(k, kn):
            faces += [[r0 + a, r0 + b, r1 + b], [r0 + a, r1 + b, r1 + a]]
    faces += [[top, last + a, last + b] for a, b in zip(k, kn)]
    vertices = np.array(verts)
    zc = 0.5 * (profile[0][0] + profile[-1][0])
    faces = _orient_outward(vertices, np.array(faces), np.array([0.0, 0.0, zc]))
    return TriMesh(vertices, faces)


def capsule_profile(radius, length, ring_spacing=None, cap_rings=1):
    """Profile of a z-axis capsule from 0 to ``length`` with hemispherical end caps."""
    n_side = 2 if ring_spacing is None else max(2, int(np.ceil(length / ring_spacing - 1e-9)) + 1)
    prof = [(-radius, 0.0)]
    for i in range(cap_rings, 0, -1):
        a = 0.5 * np.pi * i / (cap_rings + 1)
        prof.append((-radius * np.sin(a), radius * np.cos(a)))
    prof += [(z, radius) for z in np.linspace(0, length, n_side)]
    for i in range(1, cap_rings + 1):
        a = 0.5 * np.pi * i / (cap_rings + 1)
        prof.append((length + radius * np.sin(a), radius * np.cos(a)))
    prof.append((length + radius, 0.0))
    return prof


def capsule(radius, length, n_around=16, ring_spacing=None, cap_rings=3) -> TriMesh:
    """Capsule centred at the origin along z; ``length`` is the cylindrical part."""
    m = revolve(capsule_profile(radius, length, ring_spacing, cap_rings), n_around)
    return TriMesh(m.vertices - [0.0, 0.0, length / 2], m.faces)


def cylinder(radius, height, n_around=24, cap_rings=3, ring_spacing=None) -> TriMesh:
    """Closed cylinder centred at the origin along z."""
    h = height / 2
    n_side = 2 if ring_spacing is None else max(2, int(np.ceil(height / ring_spacing - 1e-9)) + 1)
    prof = [(-h, 0.0)]
    prof += [(-h, radius * i / cap_rings) for i in range(1, cap_rings)]
    prof += [(z, radius) for z in np.linspace(-h, h, n_side)]
    prof += [(h, radius * i / cap_rings) for i in range(cap_rings - 1, 0, -1)]
    prof.append((h, 0.0))
    return revolve(prof, n_around)


def merge(meshes) -> TriMesh:
    verts, faces, off = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + off)
        off += len(m.vertices)
    return TriMesh(np.concatenate(verts), np.concatenate(faces))
