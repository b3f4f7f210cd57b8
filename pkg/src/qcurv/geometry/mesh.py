"""Triangle meshes: OFF I/O, manifold checks and cotangent FEM matrices."""

from collections import Counter
from pathlib import Path

import numpy as np
from scipy import sparse

from ..errors import MeshIngestionError


def read_off(path):
    """Read an ASCII OFF file and return ``(vertices, faces)``.

    Polygonal faces with more than three vertices are fan-triangulated.
    """
    path = Path(path)
    try:
        tokens = []
        with path.open("r", encoding="ascii") as fh:
            for line in fh:
                line = line.split("#", 1)[0].strip()
                if line:
                    tokens.append(line)
    except (OSError, UnicodeDecodeError) as exc:
        raise MeshIngestionError(f"cannot read mesh {path}: {exc}") from exc
    if not tokens or not tokens[0].startswith("OFF"):
        raise MeshIngestionError(f"{path}: missing OFF header")
    head = tokens[0][3:].split()
    body = tokens[1:]
    if not head:
        head, body = body[0].split(), body[1:]
    try:
        nv, nf = int(head[0]), int(head[1])
        verts = np.array([[float(t) for t in body[i].split()[:3]] for i in range(nv)])
        faces = []
        for i in range(nv, nv + nf):
            row = [int(t) for t in body[i].split()]
            k, idx = row[0], row[1 : 1 + row[0]]
            if k < 3 or len(idx) != k:
                raise MeshIngestionError(f"{path}: bad face record {i - nv}")
            for j in range(1, k - 1):
                faces.append((idx[0], idx[j], idx[j + 1]))
    except (IndexError, ValueError) as exc:
        raise MeshIngestionError(f"{path}: truncated or malformed OFF body") from exc
    faces = np.array(faces, dtype=np.int64)
    if verts.shape != (nv, 3) or faces.min() < 0 or faces.max() >= nv:
        raise MeshIngestionError(f"{path}: face index out of range")
    return verts, faces


def write_off(path, vertices, faces):
    with Path(path).open("w", encoding="ascii") as fh:
        fh.write("OFF\n")
        fh.write(f"{len(vertices)} {len(faces)} 0\n")
        for v in vertices:
            fh.write(f"{v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for f in faces:
            fh.write(f"3 {f[0]} {f[1]} {f[2]}\n")


def check_closed_manifold(vertices, faces):
    """Raise ``MeshIngestionError`` unless the mesh is a closed oriented 2-manifold.

    Returns the Euler characteristic.
    """
    directed = Counter()
    for f in faces:
        if len(set(f)) < 3:
            raise MeshIngestionError("degenerate face with repeated vertex")
        for a, b in ((f[0], f[1]), (f[1], f[2]), (f[2], f[0])):
            directed[(a, b)] += 1
    for (a, b), c in directed.items():
        if c != 1:
            raise MeshIngestionError(f"edge ({a},{b}) used {c} times with one orientation")
        if directed.get((b, a), 0) != 1:
            raise MeshIngestionError(f"edge ({a},{b}) is a boundary or inconsistently oriented")
    used = np.unique(faces)
    if len(used) != len(vertices):
        raise MeshIngestionError("mesh has isolated vertices")
    # vertex links must be single cycles
    nxt = {}
    for f in faces:
        for i in range(3):
            v, a, b = f[i], f[(i + 1) % 3], f[(i + 2) % 3]
            nxt.setdefault(v, {})[a] = b
    for v, ring in nxt.items():
        start = next(iter(ring))
        cur, steps = ring[start], 1
        while cur != start and steps <= len(ring):
            cur = ring.get(cur)
            steps += 1
            if cur is None:
                raise MeshIngestionError(f"vertex {v} has an open link")
        if steps != len(ring):
            raise MeshIngestionError(f"vertex {v} is non-manifold (pinched link)")
    n_edges = len(directed) // 2
    return len(vertices) - n_edges + len(faces)


def _corner_angles(vertices, faces):
    P = vertices[faces]
    ang = np.empty(faces.shape)
    for i in range(3):
        u = P[:, (i + 1) % 3] - P[:, i]
        v = P[:, (i + 2) % 3] - P[:, i]
        cr = np.linalg.norm(np.cross(u, v), axis=1)
        ang[:, i] = np.arctan2(cr, np.sum(u * v, axis=1))
    return ang


def face_areas(vertices, faces):
    P = vertices[faces]
    return 0.5 * np.linalg.norm(np.cross(P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]), axis=1)


def cotan_stiffness(vertices, faces, face_weight=None):
    """Assemble the cotangent stiffness ``L`` with ``u^T L u = int |grad u|^2``.

    ``face_weight`` multiplies each triangle's contribution, giving
    ``int w |grad u|^2`` for a piecewise-constant weight.
    """
    n = len(vertices)
    ang = _corner_angles(vertices, faces)
    cot = 1.0 / np.tan(ang)
    w = np.ones(len(faces)) if face_weight is None else np.asarray(face_weight, dtype=float)
    rows, cols, vals = [], [], []
    for i in range(3):
        a = faces[:, (i + 1) % 3]
        b = faces[:, (i + 2) % 3]
        c = 0.5 * cot[:, i] * w
        rows += [a, b, a, b]
        cols += [b, a, a, b]
        vals += [-c, -c, c, c]
    L = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    L.sum_duplicates()
    return L


def lumped_mass(vertices, faces):
    """Barycentric lumped vertex masses; they sum to the total area exactly."""
    A = face_areas(vertices, faces)
    m = np.zeros(len(vertices))
    for i in range(3):
        np.add.at(m, faces[:, i], A / 3.0)
    return m


def angle_defects(vertices, faces):
    ang = _corner_angles(vertices, faces)
    total = np.zeros(len(vertices))
    for i in range(3):
        np.add.at(total, faces[:, i], ang[:, i])
    return 2 * np.pi - total


def edge_graph(vertices, faces):
    n = len(vertices)
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e = np.unique(np.sort(e, axis=1), axis=0)
    length = np.linalg.norm(vertices[e[:, 0]] - vertices[e[:, 1]], axis=1)
    G = sparse.coo_matrix((length, (e[:, 0], e[:, 1])), shape=(n, n))
    return (G + G.T).tocsr()
