from math import factorial

import numpy as np
import pytest

from vmfem.fem import (FunctionSpace, LagrangeBasis, VectorSpace,
                       build_taylor_hood, convergence_order, edge_rule,
                       l2_error, triangle_rule)
from vmfem.mesh import face_sides, generate_structured, mesh_h


def exact_triangle_monomial(a, b):
    return factorial(a) * factorial(b) / factorial(a + b + 2)


@pytest.mark.parametrize("degree", [1, 2, 3, 6, 9, 12])
def test_triangle_rule_exactness(degree):
    rule = triangle_rule(degree)
    assert np.all(rule.weights > 0)
    assert rule.weights.sum() == pytest.approx(0.5, rel=1e-13)
    assert rule.degree >= degree
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            got = (rule.weights * rule.points[:, 0] ** a * rule.points[:, 1] ** b).sum()
            assert got == pytest.approx(exact_triangle_monomial(a, b), rel=1e-13)


@pytest.mark.parametrize("degree", [1, 3, 6, 9])
def test_edge_rule_exactness(degree):
    rule = edge_rule(degree)
    assert np.all(rule.weights > 0)
    assert rule.weights.sum() == pytest.approx(1.0, rel=1e-14)
    for p in range(degree + 1):
        got = (rule.weights * rule.params ** p).sum()
        assert got == pytest.approx(1.0 / (p + 1), rel=1e-13)


def test_barycentric_points():
    rule = triangle_rule(4)
    bary = rule.barycentric
    assert bary.shape == (len(rule), 3)
    assert np.allclose(bary.sum(axis=1), 1.0, atol=1e-14)
    assert np.all(bary > 0)


@pytest.mark.parametrize("degree", [1, 2, 3])
def test_lagrange_basis_nodal(degree):
    basis = LagrangeBasis(degree)
    vals = basis.eval(basis.nodes)
    assert np.abs(vals - np.eye(basis.n_basis)).max() < 1e-12


@pytest.mark.parametrize("degree", [1, 2, 3])
def test_partition_of_unity(degree):
    basis = LagrangeBasis(degree)
    rng = np.random.default_rng(3)
    pts = rng.random((50, 2)) * 0.5
    assert np.abs(basis.eval(pts).sum(axis=1) - 1.0).max() < 1e-13


@pytest.mark.parametrize("degree", [1, 2, 3])
def test_basis_gradient_matches_finite_differences(degree):
    basis = LagrangeBasis(degree)
    rng = np.random.default_rng(7)
    pts = rng.random((20, 2)) * 0.4 + 0.05
    grads = basis.grad(pts)
    h = 1e-7
    for d, e in ((0, np.array([h, 0.0])), (1, np.array([0.0, h]))):
        fd = (basis.eval(pts + e) - basis.eval(pts - e)) / (2 * h)
        assert np.abs(fd - grads[..., d]).max() < 1e-6


def test_degree_validation():
    with pytest.raises(ValueError):
        LagrangeBasis(0)
    with pytest.raises(ValueError):
        build_taylor_hood(generate_structured(2, 2), 0)


@pytest.mark.parametrize("nx,k,expected", [
    (4, 1, 212), (8, 1, 740), (16, 1, 2756), (32, 1, 10628),
    (4, 2, 500), (8, 2, 1828), (16, 2, 6980),
])
def test_taylor_hood_dof_counts(nx, k, expected):
    mesh = generate_structured(nx, nx, (0, 1.25, 0, 1.25))
    rho_space, T_space, vel_space = build_taylor_hood(mesh, k)
    assert rho_space.ndof + T_space.ndof + vel_space.ndof == expected


def test_scalar_dof_count_formula():
    mesh = generate_structured(5, 3)
    V, E, F = mesh.n_vertices, mesh.n_faces, mesh.n_elements
    assert FunctionSpace(mesh, 1).ndof == V
    assert FunctionSpace(mesh, 2).ndof == V + E
    assert FunctionSpace(mesh, 3).ndof == V + 2 * E + F


@pytest.mark.parametrize("degree", [1, 2, 3])
def test_global_continuity_across_faces(degree):
    mesh = generate_structured(3, 4, (0, 1.1, 0, 0.9))
    space = FunctionSpace(mesh, degree)
    rng = np.random.default_rng(11)
    coeffs = rng.standard_normal(space.ndof)

    from vmfem.fem import affine_maps, map_to_reference
    maps = affine_maps(mesh)

    def evaluator(elem, pts):
        ref = map_to_reference(maps, elem, pts)
        return space.basis.eval(ref) @ coeffs[space.element_dofs[elem]]

    params = np.linspace(0.05, 0.95, 7)
    for fi in mesh.interior_faces():
        minus, plus = face_sides(mesh, fi, evaluator, params)
        assert np.abs(minus - plus).max() < 1e-12


@pytest.mark.parametrize("degree", [1, 2, 3])
def test_interpolation_reproduces_polynomials(degree):
    mesh = generate_structured(3, 3, (0, 1.3, 0, 0.8))
    space = FunctionSpace(mesh, degree)

    def poly(x, y):
        out = np.zeros_like(x)
        for a in range(degree + 1):
            for b in range(degree + 1 - a):
                out = out + (0.3 + a - 0.5 * b) * x ** a * y ** b
        return out

    coeffs = space.interpolate(poly)
    rng = np.random.default_rng(5)
    pts = rng.random((40, 2)) * np.array([1.3, 0.8])
    from vmfem.fem import affine_maps, map_to_reference
    maps = affine_maps(mesh)
    for x, y in pts:
        cell = None
        for e in range(mesh.n_elements):
            r = map_to_reference(maps, e, np.array([x, y]))
            if r[0] >= -1e-12 and r[1] >= -1e-12 and r.sum() <= 1 + 1e-12:
                cell = e
                ref = r
                break
        val = space.basis.eval(ref) @ coeffs[space.element_dofs[cell]]
        assert val == pytest.approx(poly(np.array(x), np.array(y)), abs=1e-12)


def test_interpolation_constant():
    space = FunctionSpace(generate_structured(2, 2), 2)
    coeffs = space.interpolate(lambda x, y: np.ones_like(x))
    assert np.allclose(coeffs, 1.0, atol=1e-15)


@pytest.mark.parametrize("k", [1, 2])
def test_interpolation_error_order(k):
    exact = lambda x, y: np.sin(x) * np.sin(y)
    errs, hs = [], []
    for nx in (4, 8, 16):
        mesh = generate_structured(nx, nx, (0, 1.25, 0, 1.25))
        space = FunctionSpace(mesh, k)
        errs.append(l2_error(space, space.interpolate(exact), exact))
        hs.append(mesh_h(mesh))
    orders = convergence_order(errs, hs)
    assert orders[-1] == pytest.approx(k + 1, abs=0.1)


def test_l2_error_self_is_zero():
    mesh = generate_structured(3, 3)
    space = FunctionSpace(mesh, 2)
    coeffs = space.interpolate(lambda x, y: x + 2 * y)
    assert l2_error(space, coeffs, lambda x, y: x + 2 * y) < 1e-14


def test_l2_error_measure_of_domain():
    mesh = generate_structured(3, 3)
    space = FunctionSpace(mesh, 1)
    err = l2_error(space, np.zeros(space.ndof), lambda x, y: np.ones_like(x))
    assert err == pytest.approx(1.0, rel=1e-13)


def composite_strang_fix_integral(mesh, fn, splits=24):
    """Independent integration oracle: composite degree-5 seven-point rule
    on a uniform refinement of each element."""
    s15 = np.sqrt(15.0)
    a, b = (6.0 - s15) / 21.0, (6.0 + s15) / 21.0
    pts = np.array([[1 / 3, 1 / 3], [a, a], [1 - 2 * a, a], [a, 1 - 2 * a],
                    [b, b], [1 - 2 * b, b], [b, 1 - 2 * b]])
    wts = np.array([9 / 40, (155 - s15) / 1200, (155 - s15) / 1200,
                    (155 - s15) / 1200, (155 + s15) / 1200, (155 + s15) / 1200,
                    (155 + s15) / 1200])
    n = splits
    sub_v = []
    for i in range(n):
        for j in range(n - i):
            p00 = np.array([i, j]) / n
            p10 = np.array([i + 1, j]) / n
            p01 = np.array([i, j + 1]) / n
            sub_v.append((p00, p10, p01))
            if i + j < n - 1:
                p11 = np.array([i + 1, j + 1]) / n
                sub_v.append((p10, p11, p01))
    total = 0.0
    corners = mesh.vertices[mesh.elements]
    for v0, v1, v2 in sub_v:
        for p, w in zip(pts, wts):
            ref = v0 + p[0] * (v1 - v0) + p[1] * (v2 - v0)
            phys = (corners[:, 0]
                    + ref[0] * (corners[:, 1] - corners[:, 0])
                    + ref[1] * (corners[:, 2] - corners[:, 0]))
            area2 = np.abs(np.cross(corners[:, 1] - corners[:, 0],
                                    corners[:, 2] - corners[:, 0])) / n ** 2
            total += (w * area2 * fn(phys[:, 0], phys[:, 1], ref)).sum()
    return total


def test_l2_error_against_dense_sampling_oracle():
    mesh = generate_structured(4, 4, (0, 1.0, 0, 1.0))
    space = FunctionSpace(mesh, 1)
    exact = lambda x, y: np.sin(x) * np.sin(y)
    coeffs = space.interpolate(exact)

    def sq_diff(x, y, ref):
        vals = space.basis.eval(ref) @ coeffs[space.element_dofs].T
        return (vals - exact(x, y)) ** 2

    oracle = np.sqrt(composite_strang_fix_integral(mesh, sq_diff))
    assert l2_error(space, coeffs, exact) == pytest.approx(oracle, abs=1e-10)


def test_vector_space_layout():
    mesh = generate_structured(2, 2)
    vec = VectorSpace(mesh, 2)
    assert vec.ndof == 2 * vec.component.ndof
    coeffs = vec.interpolate(lambda x, y: (x, -y))
    u1, u2 = vec.split(coeffs)
    assert np.allclose(u1, vec.component.node_coords[:, 0])
    assert np.allclose(u2, -vec.component.node_coords[:, 1])


def test_boundary_dofs_by_tag():
    mesh = generate_structured(2, 2)
    space = FunctionSpace(mesh, 2)
    left = space.boundary_dofs(tags=["left"])
    coords = space.node_coords[left]
    assert np.allclose(coords[:, 0], 0.0)
    assert len(space.boundary_dofs()) == 16


def test_convergence_order_basic():
    assert convergence_order([4.0, 1.0], [2.0, 1.0]) == [pytest.approx(2.0)]
    assert convergence_order([1.0, 1.0], [2.0, 1.0]) == [pytest.approx(0.0)]


def test_convergence_order_velocity_pair():
    order = convergence_order([8.292e-5, 1.047e-5], [0.44194, 0.22097])[0]
    assert order == pytest.approx(2.985, abs=2e-3)


def test_convergence_order_errors():
    with pytest.raises(ValueError):
        convergence_order([1.0], [1.0])
    with pytest.raises(ValueError):
        convergence_order([1.0, 0.0], [2.0, 1.0])
    with pytest.raises(ValueError):
        convergence_order([1.0, 0.5], [1.0, 2.0])
