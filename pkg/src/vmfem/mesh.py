"""Conforming 2-D simplex meshes with oriented face connectivity."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MESH_FORMAT_HEADER = "vmfem-mesh 1"


@dataclass
class Face:
    """Edge of a triangulation, oriented from its minus to its plus element.

    The normal points from the minus element into the plus element; on
    boundary faces (plus_element is None) it points out of the domain.
    """

    vertices: tuple[int, int]
    minus_element: int
    plus_element: int | None
    normal: np.ndarray
    length: float

    @property
    def is_boundary(self) -> bool:
        return self.plus_element is None


@dataclass
class Mesh:
    """Triangle mesh with vertices, CCW elements and full face connectivity."""

    vertices: np.ndarray              # (n_vertices, 2)
    elements: np.ndarray              # (n_elements, 3) vertex indices, CCW
    faces: list[Face] = field(default_factory=list)
    element_faces: np.ndarray | None = None   # (n_elements, 3) face indices
    boundary_tags: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.elements = np.asarray(self.elements, dtype=np.intp)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise ValueError("vertices must be an (n, 2) array")
        if self.elements.ndim != 2 or self.elements.shape[1] != 3:
            raise ValueError("elements must be an (n, 3) array")
        areas = self.signed_areas()
        if np.any(areas <= 0.0):
            bad = int(np.argmin(areas))
            raise ValueError(f"element {bad} is degenerate or not counterclockwise")
        if not self.faces:
            self._build_faces()
        self.vertices.flags.writeable = False
        self.elements.flags.writeable = False

    # -- construction -------------------------------------------------------

    def _build_faces(self):
        edge_map: dict[tuple[int, int], list[int]] = {}
        local_edges = ((0, 1), (1, 2), (2, 0))
        for e, tri in enumerate(self.elements):
            for a, b in local_edges:
                key = (min(tri[a], tri[b]), max(tri[a], tri[b]))
                edge_map.setdefault(key, []).append(e)

        centroids = self.centroids()
        self.faces = []
        face_index: dict[tuple[int, int], int] = {}
        for key in sorted(edge_map):
            elems = sorted(edge_map[key])
            if len(elems) > 2:
                raise ValueError(f"face {key} shared by more than two elements")
            minus = elems[0]
            plus = elems[1] if len(elems) == 2 else None
            pa, pb = self.vertices[key[0]], self.vertices[key[1]]
            tangent = pb - pa
            length = float(np.hypot(*tangent))
            if length <= 0.0:
                raise ValueError(f"face {key} has zero length")
            normal = np.array([tangent[1], -tangent[0]]) / length
            if plus is not None:
                if normal @ (centroids[plus] - centroids[minus]) < 0.0:
                    normal = -normal
            else:
                midpoint = 0.5 * (pa + pb)
                if normal @ (midpoint - centroids[minus]) < 0.0:
                    normal = -normal
            normal.flags.writeable = False
            face_index[key] = len(self.faces)
            self.faces.append(Face(key, minus, plus, normal, length))

        ef = np.empty((len(self.elements), 3), dtype=np.intp)
        for e, tri in enumerate(self.elements):
            for l, (a, b) in enumerate(local_edges):
                key = (min(tri[a], tri[b]), max(tri[a], tri[b]))
                ef[e, l] = face_index[key]
        ef.flags.writeable = False
        self.element_faces = ef

    # -- queries -------------------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.elements]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def centroids(self) -> np.ndarray:
        return self.vertices[self.elements].mean(axis=1)

    def interior_faces(self) -> list[int]:
        return [i for i, f in enumerate(self.faces) if not f.is_boundary]

    def boundary_faces(self) -> list[int]:
        return [i for i, f in enumerate(self.faces) if f.is_boundary]

    def outward_normal(self, element: int, face_index: int) -> np.ndarray:
        """Outward unit normal of `element` on one of its faces."""
        face = self.faces[face_index]
        if face.minus_element == element:
            return face.normal
        if face.plus_element == element:
            return -face.normal
        raise ValueError(f"face {face_index} is not adjacent to element {element}")


def generate_structured(nx: int, ny: int,
                        bounds: tuple[float, float, float, float] = (0.0, 1.0, 0.0, 1.0),
                        ) -> Mesh:
    """Triangulate an axis-aligned rectangle with a regular diagonal split.

    Each of the nx*ny quadrilateral cells is split along its lower-left to
    upper-right diagonal, giving 2*nx*ny triangles.
    """
    if nx < 1 or ny < 1:
        raise ValueError("nx and ny must be at least 1")
    x0, x1, y0, y1 = map(float, bounds)
    if not (x1 > x0 and y1 > y0):
        raise ValueError("rectangle is degenerate")

    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    xx, yy = np.meshgrid(xs, ys)
    vertices = np.column_stack([xx.ravel(), yy.ravel()])

    def vid(i, j):
        return j * (nx + 1) + i

    elements = []
    for j in range(ny):
        for i in range(nx):
            a, b = vid(i, j), vid(i + 1, j)
            c, d = vid(i + 1, j + 1), vid(i, j + 1)
            elements.append((a, b, c))
            elements.append((a, c, d))
    mesh = Mesh(vertices, np.array(elements, dtype=np.intp))

    tol = 1e-12 * max(x1 - x0, y1 - y0)
    for fi in mesh.boundary_faces():
        pa, pb = mesh.vertices[list(mesh.faces[fi].vertices)]
        mid = 0.5 * (pa + pb)
        if abs(mid[0] - x0) < tol:
            mesh.boundary_tags[fi] = "left"
        elif abs(mid[0] - x1) < tol:
            mesh.boundary_tags[fi] = "right"
        elif abs(mid[1] - y0) < tol:
            mesh.boundary_tags[fi] = "bottom"
        else:
            mesh.boundary_tags[fi] = "top"
    return mesh


def mesh_h(mesh: Mesh) -> float:
    """Maximum element diameter (longest edge over all elements)."""
    if mesh.n_elements == 0:
        raise ValueError("mesh has no elements")
    p = mesh.vertices[mesh.elements]
    edges = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]])
    return float(np.sqrt((edges ** 2).sum(axis=-1)).max())


def face_points(mesh: Mesh, face_index: int, params: np.ndarray) -> np.ndarray:
    """Physical points on a face for parameters in [0, 1] along it."""
    face = mesh.faces[face_index]
    pa, pb = mesh.vertices[list(face.vertices)]
    params = np.atleast_1d(np.asarray(params, dtype=float))
    return pa[None, :] + params[:, None] * (pb - pa)[None, :]


def face_sides(mesh: Mesh, face_index: int, evaluator, params=None):
    """Evaluate a per-element field on both sides of a face.

    Parameters
    ----------
    evaluator : callable(element_index, points (m, 2)) -> array
        Field evaluation restricted to one element.
    params : array or None
        Positions along the face in [0, 1]; defaults to the midpoint.

    Returns the (minus, plus) traces at matched physical points; the plus
    trace is None on boundary faces.
    """
    face = mesh.faces[face_index]
    if params is None:
        params = np.array([0.5])
    pts = face_points(mesh, face_index, params)
    minus = np.asarray(evaluator(face.minus_element, pts))
    if face.plus_element is None:
        return minus, None
    plus = np.asarray(evaluator(face.plus_element, pts))
    if plus.shape != minus.shape:
        raise RuntimeError("trace layouts of the two sides do not match")
    return minus, plus


def write_mesh(mesh: Mesh) -> str:
    """Serialize a mesh in the vmfem text format."""
    lines = [MESH_FORMAT_HEADER, str(mesh.n_vertices)]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices]
    lines.append(str(mesh.n_elements))
    lines += [f"{a} {b} {c}" for a, b, c in mesh.elements]
    for fi in sorted(mesh.boundary_tags):
        a, b = mesh.faces[fi].vertices
        lines.append(f"{a} {b} {mesh.boundary_tags[fi]}")
    return "\n".join(lines) + "\n"


def read_mesh(text: str) -> Mesh:
    """Parse the vmfem text format (see write_mesh)."""
    tokens = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not tokens or tokens[0] != MESH_FORMAT_HEADER:
        raise ValueError(f"expected header {MESH_FORMAT_HEADER!r}")
    pos = 1
    nv = int(tokens[pos]); pos += 1
    vertices = np.array([[float(v) for v in tokens[pos + i].split()] for i in range(nv)])
    pos += nv
    ne = int(tokens[pos]); pos += 1
    elements = np.array([[int(v) for v in tokens[pos + i].split()] for i in range(ne)],
                        dtype=np.intp)
    pos += ne
    mesh = Mesh(vertices, elements)

    pair_to_face = {f.vertices: i for i, f in enumerate(mesh.faces)}
    for line in tokens[pos:]:
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"malformed boundary tag line: {line!r}")
        a, b, tag = int(parts[0]), int(parts[1]), parts[2]
        key = (min(a, b), max(a, b))
        if key not in pair_to_face:
            raise ValueError(f"boundary tag references unknown face {key}")
        fi = pair_to_face[key]
        if not mesh.faces[fi].is_boundary:
            raise ValueError(f"face {key} is not a boundary face")
        mesh.boundary_tags[fi] = tag
    return mesh
