"""Minimal vectorized forward-mode differentiation.

A Dual carries an ndarray value together with derivatives along a fixed
number of seed directions (trailing axis). Arithmetic is overloaded so the
assembly kernels can be evaluated once for values and once for exact
derivatives without duplicating any formulas.
"""

from __future__ import annotations

import numpy as np


class Dual:
    __slots__ = ("val", "der")

    # force ndarray (op) Dual to dispatch to the reflected methods below
    __array_ufunc__ = None

    def __init__(self, val, der):
        self.val = np.asarray(val, dtype=float)
        self.der = np.asarray(der, dtype=float)

    @property
    def ndir(self) -> int:
        return self.der.shape[-1]

    def __repr__(self):
        return f"Dual(shape={self.val.shape}, ndir={self.ndir})"

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val + other.val, self.der + other.der)
        return Dual(self.val + other, self.der)

    __radd__ = __add__

    def __neg__(self):
        return Dual(-self.val, -self.der)

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val - other.val, self.der - other.der)
        return Dual(self.val - other, self.der)

    def __rsub__(self, other):
        return Dual(other - self.val, -self.der)

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val * other.val,
                        self.der * other.val[..., None] + other.der * self.val[..., None])
        other = np.asarray(other, dtype=float)
        return Dual(self.val * other, self.der * other[..., None])

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            inv = 1.0 / other.val
            val = self.val * inv
            return Dual(val, (self.der - other.der * val[..., None]) * inv[..., None])
        other = np.asarray(other, dtype=float)
        return Dual(self.val / other, self.der / other[..., None])

    def __rtruediv__(self, other):
        inv = 1.0 / self.val
        val = other * inv
        return Dual(val, -self.der * (val * inv)[..., None])

    def __pow__(self, exponent):
        val = self.val ** exponent
        return Dual(val, self.der * (exponent * self.val ** (exponent - 1.0))[..., None])

    def __abs__(self):
        return Dual(np.abs(self.val), self.der * np.sign(self.val)[..., None])


def variables(*arrays):
    """Seed each array as an independent direction; returns matching Duals."""
    arrays = [np.asarray(a, dtype=float) for a in arrays]
    n = len(arrays)
    out = []
    for i, a in enumerate(arrays):
        der = np.zeros(a.shape + (n,))
        der[..., i] = 1.0
        out.append(Dual(a, der))
    return out


def value(x):
    return x.val if isinstance(x, Dual) else x


def derivative(x, shape, ndir):
    """Derivative array of x, materializing zeros for constants."""
    if isinstance(x, Dual):
        return x.der
    return np.zeros(shape + (ndir,))
