"""Fixed 156-vertex template: subdivided icosahedron simplified by edge collapse.

The template's combinatorics are shared by every prototype and fitted mesh, so
the same vertex index refers to the same anatomical locus across cases. The
construction is fully deterministic: shortest-edge collapses with index-order
tie-breaking, from the 642-vertex icosphere down to 156 vertices.
"""

from __future__ import annotations

import functools

import numpy as np

from .mesh import VERTEX_COUNT, MeshError, edges_from_faces

__all__ = ["icosphere", "collapse_to", "template_mesh_arrays"]


def icosphere(subdivisions: int) -> tuple[np.ndarray, np.ndarray]:
    """Unit icosphere: (vertices, faces). 0 subdivisions = icosahedron."""
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=np.float64,
    )
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ],
        dtype=np.int64,
    )
    for _ in range(subdivisions):
        vlist = list(verts)
        midpoint: dict[tuple[int, int], int] = {}

        def mid(a: int, b: int) -> int:
            key = (a, b) if a < b else (b, a)
            if key not in midpoint:
                p = (vlist[a] + vlist[b]) / 2.0
                vlist.append(p / np.linalg.norm(p))
                midpoint[key] = len(vlist) - 1
            return midpoint[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        verts = np.array(vlist)
        faces = np.array(new_faces, dtype=np.int64)
    return verts, faces


def _neighbor_sets(faces: list[tuple[int, int, int]], n: int) -> list[set[int]]:
    nbrs: list[set[int]] = [set() for _ in range(n)]
    for a, b, c in faces:
        nbrs[a].update((b, c))
        nbrs[b].update((a, c))
        nbrs[c].update((a, b))
    return nbrs


def collapse_to(
    verts: np.ndarray, faces: np.ndarray, target: int
) -> tuple[np.ndarray, np.ndarray]:
    """Simplify a closed manifold mesh to ``target`` vertices.

    Repeatedly collapses the shortest edge passing the link condition (the
    two endpoints share exactly the two face-opposite neighbors), placing the
    merged vertex at the edge midpoint. Deterministic: ties go to the
    lexicographically smallest edge.
    """
    pos = {i: v.copy() for i, v in enumerate(verts)}
    face_list = [tuple(f) for f in faces]
    alive = set(pos)
    while len(alive) > target:
        nbrs = _neighbor_sets(face_list, len(verts))
        best = None
        for u in sorted(alive):
            for v in sorted(nbrs[u]):
                if v <= u:
                    continue
                common = nbrs[u] & nbrs[v]
                if len(common) != 2:
                    continue
                d = float(np.linalg.norm(pos[u] - pos[v]))
                key = (d, u, v)
                if best is None or key < best:
                    best = key
        if best is None:
            raise MeshError("no collapsible edge found before reaching target size")
        _, u, v = best
        pos[u] = (pos[u] + pos[v]) / 2.0
        new_faces = []
        for f in face_list:
            g = tuple(u if i == v else i for i in f)
            if len(set(g)) == 3:
                new_faces.append(g)
        face_list = new_faces
        alive.discard(v)
        del pos[v]
    remap = {old: new for new, old in enumerate(sorted(alive))}
    out_verts = np.array([pos[old] for old in sorted(alive)])
    out_faces = np.array([[remap[i] for i in f] for f in face_list], dtype=np.int64)
    return out_verts, out_faces


@functools.cache
def template_mesh_arrays() -> tuple[np.ndarray, np.ndarray]:
    """The fixed unit-sphere template: 156 vertices, projected to the sphere."""
    verts, faces = icosphere(3)  # 642 vertices
    verts, faces = collapse_to(verts, faces, VERTEX_COUNT)
    verts = verts / np.linalg.norm(verts, axis=1, keepdims=True)
    verts.setflags(write=False)
    faces.setflags(write=False)
    edges = edges_from_faces(faces)
    assert len(verts) == VERTEX_COUNT and len(edges) == 3 * VERTEX_COUNT - 6
    return verts, faces
