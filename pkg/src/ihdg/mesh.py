"""Conforming triangular meshes of 2D domains.

Meshes are immutable after construction: vertices, counterclockwise
elements, and face/element adjacency with boundary flags. A face stores
its vertices in the order traversed by its first adjacent element, so
the stored orientation's right-hand normal is outward for that element.
"""

from __future__ import annotations

import importlib.resources

import numpy as np


class MeshError(ValueError):
    """Base class for mesh construction errors."""


class MeshFormatError(MeshError):
    """Malformed mesh text (bad counts, non-numeric tokens, bad indices)."""


class DuplicateElementError(MeshError):
    """Two elements share the same vertex triple."""


class InvertedElementError(MeshError):
    """An element has non-positive signed area (clockwise or degenerate)."""


class NonManifoldError(MeshError):
    """A face is shared by more than two elements."""


class Mesh:
    """Triangulation with face adjacency.

    Attributes:
        vertices: (nv, 2) float array.
        elements: (ne, 3) int array, counterclockwise vertex triples.
        faces: (nf, 2) int array of vertex pairs; order follows the first
            adjacent element's traversal.
        face_elements: (nf, 2) int array of adjacent element indices,
            second entry -1 on the boundary.
        face_boundary: (nf,) bool.
        element_faces: (ne, 3) face index of local edge (v[i], v[i+1]).
        h_elem: (ne,) element diameters; h = max.
    """

    def __init__(self, vertices, elements):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.elements = np.ascontiguousarray(elements, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise MeshFormatError("vertices must be an (nv, 2) array")
        if self.elements.ndim != 2 or self.elements.shape[1] != 3:
            raise MeshFormatError("elements must be an (ne, 3) array")
        nv = len(self.vertices)
        if self.elements.size and (self.elements.min() < 0 or self.elements.max() >= nv):
            raise MeshFormatError("element vertex index out of range")

        seen = set()
        for e, tri in enumerate(self.elements):
            key = tuple(sorted(tri))
            if len(set(key)) != 3:
                raise MeshFormatError(f"element {e} has repeated vertices")
            if key in seen:
                raise DuplicateElementError(f"element {e} duplicates an earlier element")
            seen.add(key)

        areas = self.signed_areas()
        if np.any(areas <= 0.0):
            bad = int(np.argmin(areas))
            raise InvertedElementError(
                f"element {bad} has non-positive signed area {areas[bad]:.3e}"
            )
        self.areas = areas

        self._build_faces()

        pts = self.vertices[self.elements]  # (ne, 3, 2)
        d01 = np.linalg.norm(pts[:, 0] - pts[:, 1], axis=1)
        d12 = np.linalg.norm(pts[:, 1] - pts[:, 2], axis=1)
        d20 = np.linalg.norm(pts[:, 2] - pts[:, 0], axis=1)
        self.edge_lengths = np.stack([d01, d12, d20], axis=1)
        self.h_elem = np.max(np.stack([d01, d12, d20]), axis=0)
        self.h = float(self.h_elem.max()) if len(self.h_elem) else 0.0

        self.vertices.setflags(write=False)
        self.elements.setflags(write=False)

    def _build_faces(self):
        face_index: dict[tuple[int, int], int] = {}
        faces: list[tuple[int, int]] = []
        adj: list[list[int]] = []
        elem_faces = np.empty((len(self.elements), 3), dtype=np.int64)
        for e, tri in enumerate(self.elements):
            for le in range(3):
                a, b = int(tri[le]), int(tri[(le + 1) % 3])
                key = (a, b) if a < b else (b, a)
                f = face_index.get(key)
                if f is None:
                    f = len(faces)
                    face_index[key] = f
                    faces.append((a, b))  # oriented as first element traverses it
                    adj.append([e])
                else:
                    adj[f].append(e)
                    if len(adj[f]) > 2:
                        raise NonManifoldError(
                            f"face {faces[f]} adjacent to more than two elements"
                        )
                elem_faces[e, le] = f
        self.faces = np.array(faces, dtype=np.int64).reshape(-1, 2)
        self.face_elements = np.full((len(faces), 2), -1, dtype=np.int64)
        for f, es in enumerate(adj):
            self.face_elements[f, : len(es)] = es
        self.face_boundary = self.face_elements[:, 1] < 0
        self.element_faces = elem_faces

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_elements(self) -> int:
        return len(self.elements)

    @property
    def num_faces(self) -> int:
        return len(self.faces)

    def signed_areas(self):
        p = self.vertices[self.elements]
        return 0.5 * (
            (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
            - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1])
        )

    def element_maps(self):
        """Affine maps x = B @ xi + x0 per element.

        Returns (B, x0, detB) with shapes (ne, 2, 2), (ne, 2), (ne,).
        """
        p = self.vertices[self.elements]
        B = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
        detB = B[:, 0, 0] * B[:, 1, 1] - B[:, 0, 1] * B[:, 1, 0]
        return B, p[:, 0], detB


def generate_structured_square(n: int) -> Mesh:
    """n x n structured mesh of [0,1]^2, each cell split along its
    bottom-left-to-top-right diagonal so all elements are congruent."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(ix, iy):
        return iy * (n + 1) + ix

    elements = []
    for iy in range(n):
        for ix in range(n):
            v00 = vid(ix, iy)
            v10 = vid(ix + 1, iy)
            v01 = vid(ix, iy + 1)
            v11 = vid(ix + 1, iy + 1)
            elements.append((v00, v10, v11))
            elements.append((v00, v11, v01))
    return Mesh(vertices, np.array(elements))


def load_mesh(text: str) -> Mesh:
    """Parse the plain-text format: line 1 `V E`, then V lines `x y`,
    then E lines `i j k` (0-based). `#` starts a comment."""
    tokens: list[str] = []
    for line in text.splitlines():
        body = line.split("#", 1)[0]
        tokens.extend(body.split())
    if len(tokens) < 2:
        raise MeshFormatError("missing header counts")
    try:
        nv, ne = int(tokens[0]), int(tokens[1])
    except ValueError as exc:
        raise MeshFormatError(f"bad header counts: {tokens[:2]}") from exc
    need = 2 + 2 * nv + 3 * ne
    if len(tokens) != need:
        raise MeshFormatError(f"expected {need} tokens, got {len(tokens)}")
    try:
        coords = np.array([float(t) for t in tokens[2 : 2 + 2 * nv]]).reshape(nv, 2)
        conn = np.array([int(t) for t in tokens[2 + 2 * nv :]]).reshape(ne, 3)
    except ValueError as exc:
        raise MeshFormatError(f"non-numeric token: {exc}") from exc
    return Mesh(coords, conn)


def load_mesh_file(path) -> Mesh:
    with open(path, "r", encoding="ascii") as fh:
        return load_mesh(fh.read())


def export_mesh(mesh: Mesh) -> str:
    """Render a mesh in the load_mesh text format."""
    lines = [f"{mesh.num_vertices} {mesh.num_elements}"]
    for x, y in mesh.vertices:
        lines.append(f"{float(x)!r} {float(y)!r}")
    for i, j, k in mesh.elements:
        lines.append(f"{int(i)} {int(j)} {int(k)}")
    return "\n".join(lines) + "\n"


def mesh_metrics(mesh: Mesh) -> dict:
    """Mesh quality report: h_max, h_min, and the worst diameter/inradius
    ratio over all elements."""
    inradius = 2.0 * mesh.areas / mesh.edge_lengths.sum(axis=1)
    return {
        "h_max": float(mesh.h_elem.max()),
        "h_min": float(mesh.h_elem.min()),
        "shape_regularity": float((mesh.h_elem / inradius).max()),
        "num_vertices": mesh.num_vertices,
        "num_elements": mesh.num_elements,
        "num_faces": mesh.num_faces,
    }


def circle_mesh() -> Mesh:
    """Pre-generated triangulation of the disk centered at (0.5, 0.5)
    with radius 0.5 (7350 elements)."""
    data = importlib.resources.files("ihdg.data").joinpath("circle_r35.txt")
    return load_mesh(data.read_text(encoding="ascii"))
