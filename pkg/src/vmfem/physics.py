"""Constitutive relations: gas law, viscosity models, stress and dissipation."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np


class InvalidStateError(RuntimeError):
    """Raised when field values leave the physically admissible set."""


@dataclass(frozen=True)
class FluidProperties:
    """Gas constants plus the viscosity/conductivity closure.

    mode selects how the dynamic viscosity is evaluated:
      * "sutherland":   mu = c_ref T^{3/2} / (T + s_ref)
      * "constant-mu":  mu = mu_const
      * "constant-nu":  mu = nu_const * rho (kinematic viscosity held fixed)
    kappa_const overrides the Prandtl-number closure kappa = c_p mu / Pr.
    """

    c_v: float = 717.8
    r: float = 287.0
    gamma: float = 1.4
    prandtl: float = 0.72
    c_ref: float = 1.458e-6
    s_ref: float = 110.4
    mode: str = "sutherland"
    mu_const: float | None = None
    nu_const: float | None = None
    kappa_const: float | None = None

    def __post_init__(self):
        for name in ("c_v", "r", "gamma", "prandtl", "c_ref", "s_ref"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if self.gamma <= 1.0:
            raise ValueError("gamma must exceed 1")
        if self.mode not in ("sutherland", "constant-mu", "constant-nu"):
            raise ValueError(f"unknown viscosity mode {self.mode!r}")
        if self.mode == "constant-mu" and self.mu_const is None:
            raise ValueError("constant-mu mode requires mu_const")
        if self.mode == "constant-nu" and self.nu_const is None:
            raise ValueError("constant-nu mode requires nu_const")
        if abs(self.gamma - (1.0 + self.r / self.c_v)) > 1e-10:
            warnings.warn(
                f"gamma={self.gamma} is inconsistent with 1 + R/C_v="
                f"{1.0 + self.r / self.c_v}", stacklevel=2)

    @property
    def c_p(self) -> float:
        return self.c_v + self.r

    def viscosity(self, T, rho):
        """Dynamic viscosity for the active mode; accepts arrays or dual numbers."""
        if self.mode == "constant-mu":
            return self.mu_const
        if self.mode == "constant-nu":
            return self.nu_const * rho
        return self.c_ref * T * T ** 0.5 / (T + self.s_ref)

    def heat_conductivity(self, mu):
        if self.kappa_const is not None:
            return self.kappa_const
        return self.c_p * mu / self.prandtl


def sutherland_mu(T, props: FluidProperties):
    """Sutherland's law mu(T) = c_ref T^{3/2} / (T + s_ref)."""
    if props.mode != "sutherland":
        raise InvalidStateError("viscosity mode is not sutherland")
    T = np.asarray(T, dtype=float)
    if np.any(T < 0.0):
        raise InvalidStateError("negative temperature in Sutherland's law")
    return props.c_ref * T ** 1.5 / (T + props.s_ref)


def conductivity(mu, props: FluidProperties):
    """Heat conductivity kappa = c_p mu / Pr."""
    return props.c_p * np.asarray(mu, dtype=float) / props.prandtl


def eos_pressure(rho, T, props: FluidProperties):
    """Ideal-gas pressure P = rho R T."""
    rho = np.asarray(rho, dtype=float)
    T = np.asarray(T, dtype=float)
    if np.any(rho <= 0.0) or np.any(T <= 0.0):
        raise InvalidStateError("nonpositive density or temperature in equation of state")
    return rho * props.r * T


def stress_tensor(nu, grad_u) -> np.ndarray:
    """Viscous stress nu (grad u + grad u^T - 2/3 (div u) I).

    grad_u uses the convention grad_u[i, j] = d u_i / d x_j.
    """
    g = np.asarray(grad_u, dtype=float)
    div = np.trace(g, axis1=-2, axis2=-1)
    tau = nu * (g + np.swapaxes(g, -2, -1))
    idx = np.arange(g.shape[-1])
    tau[..., idx, idx] -= nu * (2.0 / 3.0) * div[..., None]
    return tau


def viscous_dissipation(rho, tau, grad_u):
    """Dissipation density rho (tau : grad u)."""
    tau = np.asarray(tau, dtype=float)
    g = np.asarray(grad_u, dtype=float)
    return rho * np.einsum("...ij,...ij->...", tau, g)
