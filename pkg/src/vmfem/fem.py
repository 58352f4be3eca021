"""Reference-element machinery: Lagrange bases, quadrature, dof maps, norms.

Scalar fields live in continuous Lagrange spaces of degree k, the velocity in
the vector-valued space of degree k+1 (Taylor-Hood pairing).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

from .mesh import Mesh


# -- quadrature ---------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureRule:
    """Positive-weight rule on the reference triangle {x, y >= 0, x+y <= 1}."""

    points: np.ndarray    # (n, 2) reference coordinates
    weights: np.ndarray   # (n,), summing to 1/2
    degree: int           # polynomials up to this total degree are exact

    @property
    def barycentric(self) -> np.ndarray:
        lam0 = 1.0 - self.points.sum(axis=1)
        return np.column_stack([lam0, self.points])

    def __len__(self) -> int:
        return len(self.weights)


@dataclass(frozen=True)
class EdgeRule:
    """Gauss rule on the reference edge [0, 1]."""

    params: np.ndarray
    weights: np.ndarray
    degree: int

    def __len__(self) -> int:
        return len(self.weights)


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> QuadratureRule:
    """Collapsed Gauss rule exact for polynomials up to `degree`."""
    if degree < 0:
        raise ValueError("degree must be nonnegative")
    n = max(1, (degree + 2) // 2)
    xg, wg = roots_legendre(n)          # [-1, 1], weight 1
    xj, wj = roots_jacobi(n, 1.0, 0.0)  # [-1, 1], weight (1 - x)
    a = 0.5 * (xj + 1.0)
    wa = 0.25 * wj
    b = 0.5 * (xg + 1.0)
    wb = 0.5 * wg
    A, B = np.meshgrid(a, b, indexing="ij")
    WA, WB = np.meshgrid(wa, wb, indexing="ij")
    pts = np.column_stack([A.ravel(), (B * (1.0 - A)).ravel()])
    w = (WA * WB).ravel()
    return QuadratureRule(pts, w, 2 * n - 1)


@lru_cache(maxsize=None)
def edge_rule(degree: int) -> EdgeRule:
    if degree < 0:
        raise ValueError("degree must be nonnegative")
    n = max(1, (degree + 2) // 2)
    xg, wg = roots_legendre(n)
    return EdgeRule(0.5 * (xg + 1.0), 0.5 * wg, 2 * n - 1)


# -- Lagrange basis -----------------------------------------------------------

def _lattice_nodes(degree: int):
    """Equispaced lattice on the reference triangle: vertices, edges, interior."""
    n = degree
    verts = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]
    kinds = [("vertex", 0), ("vertex", 1), ("vertex", 2)]
    nodes = list(verts)
    if n >= 2:
        for ledge, (a, b) in enumerate(((0, 1), (1, 2), (2, 0))):
            pa, pb = np.array(verts[a]), np.array(verts[b])
            for s in range(1, n):
                nodes.append(tuple(pa + (s / n) * (pb - pa)))
                kinds.append(("edge", ledge, s - 1))
    if n >= 3:
        idx = 0
        for i in range(1, n):
            for j in range(1, n - i):
                nodes.append((i / n, j / n))
                kinds.append(("interior", idx))
                idx += 1
    return np.array(nodes), kinds


class LagrangeBasis:
    """Nodal Lagrange basis of total degree k on the reference triangle."""

    def __init__(self, degree: int):
        if degree < 1:
            raise ValueError("degree must be at least 1")
        self.degree = degree
        self.nodes, self.node_kinds = _lattice_nodes(degree)
        self.exponents = [(a, b) for a in range(degree + 1)
                          for b in range(degree + 1 - a)]
        V = self._monomials(self.nodes)
        self.coeffs = np.linalg.inv(V)   # basis_j = sum_m coeffs[m, j] * mono_m

    @property
    def n_basis(self) -> int:
        return len(self.nodes)

    def _monomials(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        out = np.empty(pts.shape[:-1] + (len(self.exponents),))
        for m, (a, b) in enumerate(self.exponents):
            out[..., m] = pts[..., 0] ** a * pts[..., 1] ** b
        return out

    def _monomial_grads(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        out = np.zeros(pts.shape[:-1] + (len(self.exponents), 2))
        x, y = pts[..., 0], pts[..., 1]
        for m, (a, b) in enumerate(self.exponents):
            if a > 0:
                out[..., m, 0] = a * x ** (a - 1) * y ** b
            if b > 0:
                out[..., m, 1] = b * x ** a * y ** (b - 1)
        return out

    def eval(self, pts: np.ndarray) -> np.ndarray:
        """Basis values, shape pts.shape[:-1] + (n_basis,)."""
        return self._monomials(pts) @ self.coeffs

    def grad(self, pts: np.ndarray) -> np.ndarray:
        """Reference gradients, shape pts.shape[:-1] + (n_basis, 2)."""
        g = self._monomial_grads(pts)
        return np.einsum("...md,mj->...jd", g, self.coeffs)


# -- geometry -----------------------------------------------------------------

@dataclass(frozen=True)
class AffineMaps:
    """Per-element affine maps x = origin + J @ (xi, eta)."""

    origin: np.ndarray   # (E, 2)
    jac: np.ndarray      # (E, 2, 2)
    inv_jac_t: np.ndarray
    det: np.ndarray      # (E,), twice the element area


def affine_maps(mesh: Mesh) -> AffineMaps:
    p = mesh.vertices[mesh.elements]
    origin = p[:, 0]
    jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)
    det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    inv = np.empty_like(jac)
    inv[:, 0, 0] = jac[:, 1, 1]
    inv[:, 0, 1] = -jac[:, 0, 1]
    inv[:, 1, 0] = -jac[:, 1, 0]
    inv[:, 1, 1] = jac[:, 0, 0]
    inv /= det[:, None, None]
    inv_jac_t = inv.transpose(0, 2, 1).copy()
    return AffineMaps(origin, jac, inv_jac_t, det)


def map_to_physical(maps: AffineMaps, ref_pts: np.ndarray) -> np.ndarray:
    """Map reference points (m, 2) into every element, giving (E, m, 2)."""
    return maps.origin[:, None, :] + np.einsum("eij,mj->emi", maps.jac, ref_pts)


def map_to_reference(maps: AffineMaps, element: int, pts: np.ndarray) -> np.ndarray:
    d = np.asarray(pts, dtype=float) - maps.origin[element]
    J = maps.jac[element]
    det = maps.det[element]
    xi = (J[1, 1] * d[..., 0] - J[0, 1] * d[..., 1]) / det
    eta = (-J[1, 0] * d[..., 0] + J[0, 0] * d[..., 1]) / det
    return np.stack([xi, eta], axis=-1)


# -- function spaces ----------------------------------------------------------

class FunctionSpace:
    """Continuous scalar Lagrange space with a global dof numbering.

    Dofs are numbered vertices first, then (degree-1) per mesh face ordered
    from the face's lower-indexed vertex, then element-interior dofs.
    """

    n_components = 1

    def __init__(self, mesh: Mesh, degree: int):
        self.mesh = mesh
        self.degree = degree
        self.basis = LagrangeBasis(degree)
        self._build_dofmap()

    def _build_dofmap(self):
        mesh, n = self.mesh, self.degree
        n_edge = n - 1
        n_int = (n - 1) * (n - 2) // 2
        self.ndof = mesh.n_vertices + mesh.n_faces * n_edge + mesh.n_elements * n_int
        edge_base = mesh.n_vertices
        int_base = edge_base + mesh.n_faces * n_edge

        dofs = np.empty((mesh.n_elements, self.basis.n_basis), dtype=np.intp)
        for e, tri in enumerate(mesh.elements):
            for l, kind in enumerate(self.basis.node_kinds):
                if kind[0] == "vertex":
                    dofs[e, l] = tri[kind[1]]
                elif kind[0] == "edge":
                    ledge, slot = kind[1], kind[2]
                    la, lb = ((0, 1), (1, 2), (2, 0))[ledge]
                    ga, gb = tri[la], tri[lb]
                    fi = mesh.element_faces[e, ledge]
                    canon = slot if ga < gb else n_edge - 1 - slot
                    dofs[e, l] = edge_base + fi * n_edge + canon
                else:
                    dofs[e, l] = int_base + e * n_int + kind[1]
        self.element_dofs = dofs

        maps = affine_maps(mesh)
        phys = map_to_physical(maps, self.basis.nodes)
        coords = np.empty((self.ndof, 2))
        coords[dofs.ravel()] = phys.reshape(-1, 2)
        self.node_coords = coords

        kind = np.empty(self.ndof, dtype="U8")
        kind[:mesh.n_vertices] = "vertex"
        kind[edge_base:int_base] = "edge"
        kind[int_base:] = "interior"
        self.dof_kind = kind

    def boundary_dofs(self, tags=None) -> np.ndarray:
        """Dofs lying on boundary faces, optionally restricted to tag names."""
        mesh, n_edge = self.mesh, self.degree - 1
        out = set()
        for fi in mesh.boundary_faces():
            tag = mesh.boundary_tags.get(fi)
            if tags is not None and tag not in tags:
                continue
            a, b = mesh.faces[fi].vertices
            out.add(a)
            out.add(b)
            base = mesh.n_vertices + fi * n_edge
            out.update(range(base, base + n_edge))
        return np.array(sorted(out), dtype=np.intp)

    def interpolate(self, fn) -> np.ndarray:
        """Nodal interpolation of fn(x, y) (vectorized over coordinates)."""
        return np.asarray(fn(self.node_coords[:, 0], self.node_coords[:, 1]),
                          dtype=float)

    def evaluate(self, coeffs: np.ndarray, ref_pts: np.ndarray) -> np.ndarray:
        """Field values at reference points in every element, shape (E, m)."""
        vals = self.basis.eval(ref_pts)
        return np.einsum("mj,ej->em", vals, coeffs[self.element_dofs])


class VectorSpace:
    """Two-component product of a scalar Lagrange space.

    Coefficients are stacked per component: [all x-components, all y-components].
    """

    n_components = 2

    def __init__(self, mesh: Mesh, degree: int):
        self.component = FunctionSpace(mesh, degree)
        self.mesh = mesh
        self.degree = degree

    @property
    def ndof(self) -> int:
        return 2 * self.component.ndof

    @property
    def element_dofs(self) -> np.ndarray:
        return self.component.element_dofs

    def boundary_dofs(self, tags=None) -> np.ndarray:
        base = self.component.boundary_dofs(tags)
        return np.concatenate([base, base + self.component.ndof])

    def interpolate(self, fn) -> np.ndarray:
        x = self.component.node_coords[:, 0]
        y = self.component.node_coords[:, 1]
        u, v = fn(x, y)
        out = np.empty(self.ndof)
        out[:self.component.ndof] = u
        out[self.component.ndof:] = v
        return out

    def split(self, coeffs: np.ndarray):
        ns = self.component.ndof
        return coeffs[:ns], coeffs[ns:]


def build_taylor_hood(mesh: Mesh, k: int):
    """Scalar degree-k spaces for density and temperature, degree-(k+1)
    vector space for velocity."""
    if k < 1:
        raise ValueError("polynomial degree k must be at least 1")
    scalar = FunctionSpace(mesh, k)
    vector = VectorSpace(mesh, k + 1)
    return scalar, scalar, vector


def taylor_hood_ndof(mesh: Mesh, k: int) -> int:
    rho_s, _, vel = build_taylor_hood(mesh, k)
    return 2 * rho_s.ndof + vel.ndof


# -- norms and rates ------------------------------------------------------------

def l2_error(space, coeffs: np.ndarray, exact, quadrature: QuadratureRule | None = None,
             ) -> float:
    """L2 norm of (discrete field - exact) over the mesh.

    For a VectorSpace, `exact` must return a (u, v) pair and the norm is taken
    over both components jointly.
    """
    if isinstance(space, VectorSpace):
        comp = space.component
    else:
        comp = space
    rule = quadrature or triangle_rule(2 * comp.degree + 2)
    maps = affine_maps(comp.mesh)
    pts = map_to_physical(maps, rule.points)
    x, y = pts[..., 0], pts[..., 1]
    w = rule.weights[None, :] * maps.det[:, None]

    if isinstance(space, VectorSpace):
        cu, cv = space.split(coeffs)
        eu, ev = exact(x, y)
        du = comp.evaluate(cu, rule.points) - eu
        dv = comp.evaluate(cv, rule.points) - ev
        return float(np.sqrt((w * (du ** 2 + dv ** 2)).sum()))
    diff = comp.evaluate(coeffs, rule.points) - exact(x, y)
    return float(np.sqrt((w * diff ** 2).sum()))


def convergence_order(errors, hs) -> list[float]:
    """Observed orders log(e_{i-1}/e_i) / log(h_{i-1}/h_i)."""
    errors = [float(e) for e in errors]
    hs = [float(h) for h in hs]
    if len(errors) != len(hs) or len(errors) < 2:
        raise ValueError("need matching error/h lists of length >= 2")
    if any(h2 >= h1 for h1, h2 in zip(hs, hs[1:])):
        raise ValueError("h must be strictly decreasing")
    if any(e == 0.0 for e in errors):
        raise ValueError("zero error entry: observed order is undefined")
    return [np.log(e1 / e2) / np.log(h1 / h2)
            for (e1, e2), (h1, h2) in zip(zip(errors, errors[1:]), zip(hs, hs[1:]))]
