"""Implicit BDF time marching with Newton iterations and a sparse direct solve."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class LinearSolveError(RuntimeError):
    """Factorization failed or the solve did not meet its residual bound."""


class NewtonError(RuntimeError):
    """Newton did not converge; carries the last iterate and the report."""

    def __init__(self, message, last_iterate=None, report=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.report = report


def bdf_coefficients(order: int) -> np.ndarray:
    """Coefficients (alpha_0 .. alpha_p) of the order-p backward formula.

    The derivative at t_{n+1} is approximated by (1/dt) sum_i alpha_i y^{n+1-i};
    coefficients come from differentiating the Lagrange interpolant on the
    equally spaced nodes t_{n+1-i}.
    """
    if not 1 <= order <= 5:
        raise ValueError("BDF order must be between 1 and 5")
    p = order
    coeffs = []
    for i in range(p + 1):
        # derivative of the i-th Lagrange basis (node at -i) evaluated at 0
        nodes = [Fraction(-j) for j in range(p + 1)]
        xi = nodes[i]
        total = Fraction(0)
        for m, xm in enumerate(nodes):
            if m == i:
                continue
            term = Fraction(1, 1) / (xi - xm)
            for l, xl in enumerate(nodes):
                if l in (i, m):
                    continue
                term *= (0 - xl) / (xi - xl)
            total += term
        coeffs.append(float(total))
    return np.array(coeffs)


@dataclass(frozen=True)
class BDFScheme:
    order: int
    coeffs: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.coeffs is None:
            object.__setattr__(self, "coeffs", bdf_coefficients(self.order))


@dataclass(frozen=True)
class NewtonConfig:
    rtol: float = 1e-10
    atol: float = 1e-12
    max_iter: int = 25
    divergence_guard: float = 1e4

    def __post_init__(self):
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclass
class NewtonReport:
    residual_norms: list
    converged: bool

    @property
    def n_iterations(self) -> int:
        return len(self.residual_norms) - 1


def sparse_lu_solve(matrix, rhs: np.ndarray, check_tol: float = 1e-10) -> np.ndarray:
    """Direct solve via sparse LU, verifying ||Ax-b|| / ||b|| <= check_tol."""
    A = sp.csc_matrix(matrix)
    try:
        lu = spla.splu(A)
    except RuntimeError as exc:
        raise LinearSolveError(f"sparse factorization failed: {exc}") from exc
    x = lu.solve(rhs)
    if not np.isfinite(x).all():
        raise LinearSolveError("sparse solve produced non-finite entries")
    bnorm = np.linalg.norm(rhs)
    if bnorm > 0.0:
        rel = np.linalg.norm(A @ x - rhs) / bnorm
        if rel > check_tol:
            raise LinearSolveError(f"linear solve residual {rel:.3e} exceeds {check_tol:.1e}")
    return x


def newton_solve(fun, x0: np.ndarray, config: NewtonConfig = NewtonConfig()):
    """Solve fun(x) = 0 where fun returns (residual, jacobian).

    Returns (x, NewtonReport); raises NewtonError on stagnation, divergence or
    iteration overrun, attaching the last iterate so callers can react.
    """
    x = np.asarray(x0, dtype=float).copy()
    res, jac = fun(x)
    norm0 = float(np.linalg.norm(res))
    norms = [norm0]
    target = max(config.rtol * norm0, config.atol)
    best = norm0
    for _ in range(config.max_iter):
        if norms[-1] <= target:
            return x, NewtonReport(norms, True)
        dx = sparse_lu_solve(jac, -res)
        x = x + dx
        res, jac = fun(x)
        norm = float(np.linalg.norm(res))
        norms.append(norm)
        if not np.isfinite(norm) or norm > config.divergence_guard * best:
            raise NewtonError(f"Newton diverged (residual {norm:.3e})",
                              last_iterate=x, report=NewtonReport(norms, False))
        best = min(best, norm)
    if norms[-1] <= target:
        return x, NewtonReport(norms, True)
    raise NewtonError(
        f"Newton did not converge in {config.max_iter} iterations "
        f"(residual {norms[-1]:.3e}, target {target:.3e})",
        last_iterate=x, report=NewtonReport(norms, False))


def advance(problem, history, dt: float, t_new: float, scheme: BDFScheme,
            config: NewtonConfig = NewtonConfig()):
    """One implicit step to t_new given history [y^n, y^{n-1}, ...].

    Returns (y^{n+1}, NewtonReport). The initial guess is the previous level.
    """
    if len(history) < scheme.order:
        raise ValueError(f"BDF{scheme.order} needs {scheme.order} history levels, "
                         f"got {len(history)}")
    fun = problem.make_step(list(history)[:scheme.order], scheme.coeffs, dt, t_new)
    return newton_solve(fun, history[0], config)


class TimeStepper:
    """Fixed-step BDF marching with the 1,2,...,p startup ramp."""

    def __init__(self, problem, dt: float, target_order: int = 5,
                 newton: NewtonConfig = NewtonConfig()):
        if dt <= 0.0:
            raise ValueError("dt must be positive")
        self.problem = problem
        self.dt = dt
        self.target_order = target_order
        self.newton = newton
        self.schemes = {p: BDFScheme(p) for p in range(1, target_order + 1)}

    def run(self, x0: np.ndarray, n_steps: int, t0: float = 0.0,
            history=None, callback=None):
        """March n_steps; returns (final state vector, list of NewtonReports)."""
        hist = deque(maxlen=self.target_order)
        if history is not None:
            for h in history:
                hist.append(np.asarray(h, dtype=float))
        else:
            hist.append(np.asarray(x0, dtype=float))
        reports = []
        for step in range(1, n_steps + 1):
            order = min(self.target_order, len(hist))
            t_new = t0 + step * self.dt
            x, rep = advance(self.problem, hist, self.dt, t_new,
                             self.schemes[order], self.newton)
            reports.append(rep)
            hist.appendleft(x)
            if callback is not None:
                callback(step, t_new, x)
        return hist[0], reports
