import numpy as np
import pytest

from vmfem.autodiff import Dual, value, variables


def fd_derivative(fn, args, index, h=1e-7):
    up = [a.copy() for a in args]
    dn = [a.copy() for a in args]
    up[index] = up[index] + h
    dn[index] = dn[index] - h
    return (fn(*up) - fn(*dn)) / (2 * h)


@pytest.mark.parametrize("expr", [
    lambda a, b: a * b + 2.0 * a - b / (a + 3.0),
    lambda a, b: (a * a + b) ** 1.5 / (1.0 + abs(b)),
    lambda a, b: 3.0 - a + b * b * a - 1.0 / (b + 4.0),
    lambda a, b: abs(a * b) * (a + 0.5),
])
def test_matches_finite_differences(expr):
    rng = np.random.default_rng(0)
    a = rng.random((4, 5)) + 0.5
    b = rng.random((4, 5)) + 0.5
    da, db = variables(a, b)
    out = expr(da, db)
    assert np.allclose(value(out), expr(a, b))
    for i, plain in enumerate((a, b)):
        fd = fd_derivative(expr, [a, b], i)
        assert np.abs(out.der[..., i] - fd).max() < 1e-6


def test_numpy_left_operand_dispatch():
    a, = variables(np.array([1.0, 2.0]))
    w = np.array([3.0, 4.0])
    left = w * a
    right = a * w
    assert np.allclose(left.val, right.val)
    assert np.allclose(left.der, right.der)
    diff = w - a
    assert np.allclose(diff.val, [2.0, 2.0])
    assert np.allclose(diff.der[..., 0], [-1.0, -1.0])
    quot = w / a
    assert np.allclose(quot.der[..., 0], -w / np.array([1.0, 4.0]))


def test_constant_propagation():
    a, b = variables(np.ones(3), 2.0 * np.ones(3))
    out = 5.0 + 0.0 * a + b
    assert isinstance(out, Dual)
    assert np.allclose(out.val, 7.0)
    assert np.allclose(out.der[..., 0], 0.0)
    assert np.allclose(out.der[..., 1], 1.0)


def test_abs_sign():
    a, = variables(np.array([-2.0, 3.0]))
    out = abs(a)
    assert np.allclose(out.val, [2.0, 3.0])
    assert np.allclose(out.der[..., 0], [-1.0, 1.0])
