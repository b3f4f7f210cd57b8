"""Small generators for closed test meshes (icospheres, genus-g slabs)."""

import numpy as np


def icosphere(subdivisions=2):
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [np.array(v, dtype=float) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return np.array(verts), np.array(faces, dtype=np.int64)


def genus_slab(genus=2, refine=2, smooth_iters=10):
    """Boundary of a one-voxel-thick slab with ``genus`` square holes.

    Each unit voxel face is split into ``refine`` x ``refine`` quads; a few
    Taubin smoothing passes round off the corners without changing the
    topology. Euler characteristic is ``2 - 2 * genus``.
    """
    nx, ny = 2 * genus + 1, 3
    filled = np.ones((nx, ny, 1), dtype=bool)
    for i in range(genus):
        filled[2 * i + 1, 1, 0] = False

    def is_filled(i, j, k):
        return 0 <= i < nx and 0 <= j < ny and 0 <= k < 1 and filled[i, j, k]

    index = {}
    verts = []
    faces = []

    def vid(p):
        key = tuple(int(c) for c in p)
        if key not in index:
            index[key] = len(verts)
            verts.append(key)
        return index[key]

    n = refine
    axes = np.eye(3, dtype=int)
    for i, j, k in zip(*np.nonzero(filled)):
        cell = np.array([i, j, k])
        for ax in range(3):
            for sgn in (-1, 1):
                nb = cell + sgn * axes[ax]
                if is_filled(*nb):
                    continue
                u_ax, v_ax = [a for a in range(3) if a != ax]
                origin = cell * n + (n if sgn > 0 else 0) * axes[ax]
                u, v = axes[u_ax] * 1, axes[v_ax] * 1
                normal = sgn * axes[ax]
                flip = np.dot(np.cross(u, v), normal) < 0
                for a in range(n):
                    for b in range(n):
                        p00 = vid(origin + a * u + b * v)
                        p10 = vid(origin + (a + 1) * u + b * v)
                        p11 = vid(origin + (a + 1) * u + (b + 1) * v)
                        p01 = vid(origin + a * u + (b + 1) * v)
                        tris = [(p00, p10, p11), (p00, p11, p01)]
                        if flip:
                            tris = [(x, z, y) for x, y, z in tris]
                        faces += tris
    V = np.array(verts, dtype=float) / n
    F = np.array(faces, dtype=np.int64)
    return _taubin(V, F, smooth_iters), F


def _taubin(V, F, iters, lam=0.5, mu=-0.53):
    if iters <= 0:
        return V
    n = len(V)
    e = np.concatenate([F[:, [0, 1]], F[:, [1, 2]], F[:, [2, 0]]])
    e = np.unique(np.sort(e, axis=1), axis=0)
    deg = np.bincount(e.ravel(), minlength=n).astype(float)
    V = V.copy()
    for _ in range(iters):
        for step in (lam, mu):
            avg = np.zeros_like(V)
            np.add.at(avg, e[:, 0], V[e[:, 1]])
            np.add.at(avg, e[:, 1], V[e[:, 0]])
            V = V + step * (avg / deg[:, None] - V)
    return V
