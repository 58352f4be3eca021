"""Residual and Jacobian assembly for the mixed compressible scheme.

The unknown vector is packed as [rho, T, u1, u2] (compressible) or
[p, T, u1, u2, lambda] (constant-density mode, with one scalar multiplier
pinning the pressure mean). Jacobians are exact: the same kernel code is
evaluated on forward-mode duals seeded with the pointwise field values and
gradients, then chained through the basis structure tensors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .autodiff import Dual, value, variables
from .fem import (affine_maps, build_taylor_hood, edge_rule, map_to_physical,
                  map_to_reference, triangle_rule)
from .mesh import Mesh
from .physics import FluidProperties, InvalidStateError


@dataclass(frozen=True)
class FluxParams:
    """Dissipation constants of the numerical fluxes."""

    zeta: float = 0.5
    delta: float = 0.5
    eta: float = 12.0
    eps: float = 12.0
    c_mod: float = 0.0

    def __post_init__(self):
        for name in ("zeta", "delta", "eta", "eps", "c_mod"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be nonnegative")

    @classmethod
    def for_degree(cls, k: int, zeta: float = 0.5, delta: float = 0.5,
                   c_mod: float = 0.0) -> "FluxParams":
        """Defaults with the degree-scaled viscous penalty 3(k+1)(k+2)."""
        pen = 3.0 * (k + 1) * (k + 2)
        return cls(zeta=zeta, delta=delta, eta=pen, eps=pen, c_mod=c_mod)


# -- jump / average operators ---------------------------------------------------

def jump_avg(minus, plus, normal):
    """Scalar face operators (jump, normal-weighted jump, average).

    On interior faces (plus is not None): [[phi]] = phi_+ - phi_-,
    [[phi n]] = phi_+ n_+ + phi_- n_- = (phi_- - phi_+) n_F, {{phi}} = mean.
    On boundary faces all three reduce to the single-sided trace (times n_F
    for the normal-weighted jump).
    """
    n1, n2 = normal
    if plus is None:
        return minus, (minus * n1, minus * n2), minus
    diff = minus - plus
    return plus - minus, (diff * n1, diff * n2), 0.5 * (minus + plus)


def jump_avg_vector(minus, plus, normal):
    """Vector analogue: (jump, [[v (x) n]] as a 2x2 nest, average)."""
    n1, n2 = normal
    if plus is None:
        tens = ((minus[0] * n1, minus[0] * n2), (minus[1] * n1, minus[1] * n2))
        return minus, tens, minus
    d1, d2 = minus[0] - plus[0], minus[1] - plus[1]
    jump = (plus[0] - minus[0], plus[1] - minus[1])
    tens = ((d1 * n1, d1 * n2), (d2 * n1, d2 * n2))
    avg = (0.5 * (minus[0] + plus[0]), 0.5 * (minus[1] + plus[1]))
    return jump, tens, avg


def _avg(minus, plus):
    return minus if plus is None else 0.5 * (minus + plus)


# -- numerical fluxes -----------------------------------------------------------

def flux_sigma_inv(rho_m, T_m, u_m, rho_p, T_p, u_p, normal, params, r_gas):
    """Convective momentum flux {{rho u}} (x) {{u}} + R {{rho T}} I
    + zeta {{rho}} |u.n| [[u (x) n]]; the face velocity in |u.n| is the
    two-sided average."""
    ru_m = (rho_m * u_m[0], rho_m * u_m[1])
    ru_p = None if rho_p is None else (rho_p * u_p[0], rho_p * u_p[1])
    _, _, avg_ru = jump_avg_vector(ru_m, ru_p, normal)
    _, jun, avg_u = jump_avg_vector(u_m, u_p, normal)
    avg_rt = _avg(rho_m * T_m, None if rho_p is None else rho_p * T_p)
    avg_rho = _avg(rho_m, rho_p)
    un = avg_u[0] * normal[0] + avg_u[1] * normal[1]
    a = (params.zeta * avg_rho) * abs(un)
    press = r_gas * avg_rt
    return ((avg_ru[0] * avg_u[0] + press + a * jun[0][0],
             avg_ru[0] * avg_u[1] + a * jun[0][1]),
            (avg_ru[1] * avg_u[0] + a * jun[1][0],
             avg_ru[1] * avg_u[1] + press + a * jun[1][1]))


def flux_sigma_vis(rho_tau_m, rho_tau_p, mu_m, mu_p, u_m, u_p, normal, h_f, params):
    """Viscous momentum flux {{rho tau}} - (eta/h_F) {{mu}} [[u (x) n]]."""
    _, jun, _ = jump_avg_vector(u_m, u_p, normal)
    pen = (params.eta / h_f) * _avg(mu_m, mu_p)
    out = []
    for i in range(2):
        row = []
        for j in range(2):
            a = _avg(rho_tau_m[i][j], None if rho_tau_p is None else rho_tau_p[i][j])
            row.append(a - pen * jun[i][j])
        out.append(tuple(row))
    return tuple(out)


def flux_phi_inv(rho_m, T_m, u_m, rho_p, T_p, u_p, normal, params):
    """Convective heat flux {{rho T}} u + delta {{rho}} |u.n| [[T n]]."""
    avg_rt = _avg(rho_m * T_m, None if rho_p is None else rho_p * T_p)
    _, _, avg_u = jump_avg_vector(u_m, u_p, normal)
    _, jtn, _ = jump_avg(T_m, T_p, normal)
    avg_rho = _avg(rho_m, rho_p)
    un = avg_u[0] * normal[0] + avg_u[1] * normal[1]
    b = (params.delta * avg_rho) * abs(un)
    return (avg_rt * avg_u[0] + b * jtn[0], avg_rt * avg_u[1] + b * jtn[1])


def flux_phi_vis(kappa_m, kappa_p, grad_T_m, grad_T_p, T_m, T_p, normal, h_f,
                 params, c_v):
    """Diffusive heat flux ( {{kappa grad T}} - (eps/h_F) {{kappa}} [[T n]] ) / C_v."""
    _, jtn, _ = jump_avg(T_m, T_p, normal)
    pen = (params.eps / h_f) * _avg(kappa_m, kappa_p)
    out = []
    for i in range(2):
        a = _avg(kappa_m * grad_T_m[i],
                 None if kappa_p is None else kappa_p * grad_T_p[i])
        out.append((a - pen * jtn[i]) * (1.0 / c_v))
    return tuple(out)


def flux_varphi_lambda(mu_m, mu_p, u_m, u_p, kappa_m, kappa_p, T_m, T_p, c_v):
    """Auxiliary lifting fluxes ({{mu u}}, {{kappa T}} / C_v)."""
    varphi = (_avg(mu_m * u_m[0], None if mu_p is None else mu_p * u_p[0]),
              _avg(mu_m * u_m[1], None if mu_p is None else mu_p * u_p[1]))
    lam = _avg(kappa_m * T_m, None if kappa_p is None else kappa_p * T_p) * (1.0 / c_v)
    return varphi, lam


# -- state and residual containers ---------------------------------------------

@dataclass
class State:
    """Coefficient vectors of the discrete fields plus the BDF history ring."""

    rho: np.ndarray
    T: np.ndarray
    u: np.ndarray            # stacked (u1, u2)
    time: float = 0.0
    history: list = field(default_factory=list)   # packed previous vectors, newest first

    def vector(self) -> np.ndarray:
        return np.concatenate([self.rho, self.T, self.u])

    @classmethod
    def from_vector(cls, disc: "Discretization", x: np.ndarray, time: float = 0.0,
                    history=None) -> "State":
        ns, nv = disc.ns, disc.nv
        return cls(x[:ns].copy(), x[ns:2 * ns].copy(), x[2 * ns:2 * ns + 2 * nv].copy(),
                   time, list(history or []))


class Residual:
    """Assembled residual vector with named block views."""

    def __init__(self, vector: np.ndarray, ns: int, nv: int, multiplier: bool = False):
        self.vector = vector
        self._ns, self._nv = ns, nv
        self._multiplier = multiplier

    @property
    def mass(self) -> np.ndarray:
        return self.vector[:self._ns]

    @property
    def temperature(self) -> np.ndarray:
        return self.vector[self._ns:2 * self._ns]

    @property
    def momentum(self) -> np.ndarray:
        return self.vector[2 * self._ns:2 * self._ns + 2 * self._nv]

    @property
    def constraint(self) -> float:
        if not self._multiplier:
            raise AttributeError("residual has no multiplier row")
        return float(self.vector[-1])

    def norm(self) -> float:
        return float(np.linalg.norm(self.vector))


# -- discretization context ------------------------------------------------------

_Y_NAMES = ("rho", "rho_x", "rho_y", "T", "T_x", "T_y",
            "u1", "u1_x", "u1_y", "u2", "u2_x", "u2_y")
_FIELD_SLICES = {"rho": slice(0, 3), "T": slice(3, 6),
                 "u1": slice(6, 9), "u2": slice(9, 12)}


class Discretization:
    """Precomputed mesh/space/quadrature data shared by all assemblies."""

    def __init__(self, mesh: Mesh, k: int, quad_degree: int | None = None):
        self.mesh = mesh
        self.k = k
        self.scalar, _, self.vector = build_taylor_hood(mesh, k)
        self.velocity = self.vector.component
        self.ns = self.scalar.ndof
        self.nv = self.velocity.ndof
        self.n_unknowns = 2 * self.ns + 2 * self.nv
        self.offsets = {"rho": 0, "T": self.ns,
                        "u1": 2 * self.ns, "u2": 2 * self.ns + self.nv}

        q = quad_degree if quad_degree is not None else 3 * (k + 1)
        self.vol_rule = triangle_rule(q)
        self.face_rule = edge_rule(q)
        self.maps = affine_maps(mesh)
        self._build_volume()
        self._build_faces()
        self._build_scatter()

    # volume quadrature, basis structure tensors (value, d/dx, d/dy)
    def _build_volume(self):
        rule, maps, mesh = self.vol_rule, self.maps, self.mesh
        self.qpoints = map_to_physical(maps, rule.points)
        self.wdet = rule.weights[None, :] * maps.det[:, None]
        self.theta = {}
        for key, space in (("s", self.scalar), ("v", self.velocity)):
            V = space.basis.eval(rule.points)
            G = space.basis.grad(rule.points)
            Gp = np.einsum("eij,qnj->eqni", maps.inv_jac_t, G)
            th = np.empty((mesh.n_elements, len(rule), V.shape[1], 3))
            th[..., 0] = V[None, :, :]
            th[..., 1:] = Gp
            self.theta[key] = th
        mvec = np.zeros(self.ns)
        local = np.einsum("eq,qn->en", self.wdet, self.scalar.basis.eval(rule.points))
        np.add.at(mvec, self.scalar.element_dofs.ravel(), local.ravel())
        self.scalar_integrals = mvec    # integral of each scalar basis function

    # face quadrature and two-sided trace structure tensors
    def _build_faces(self):
        mesh, fr, maps = self.mesh, self.face_rule, self.maps
        F, Fq = mesh.n_faces, len(fr)
        self.face_normal = np.array([f.normal for f in mesh.faces])
        self.face_h = np.array([f.length for f in mesh.faces])
        self.face_minus = np.array([f.minus_element for f in mesh.faces], dtype=np.intp)
        self.face_plus = np.array([-1 if f.plus_element is None else f.plus_element
                                   for f in mesh.faces], dtype=np.intp)
        self.bnd_faces = np.array(mesh.boundary_faces(), dtype=np.intp)
        self.int_faces = np.array(mesh.interior_faces(), dtype=np.intp)
        verts = np.array([f.vertices for f in mesh.faces], dtype=np.intp)
        pa, pb = mesh.vertices[verts[:, 0]], mesh.vertices[verts[:, 1]]
        self.face_qp = pa[:, None, :] + fr.params[None, :, None] * (pb - pa)[:, None, :]
        self.wface = fr.weights[None, :] * self.face_h[:, None]

        spaces = {"s": self.scalar, "v": self.velocity}
        self.ftheta = {side: {key: np.zeros((F, Fq, spaces[key].basis.n_basis, 3))
                              for key in spaces} for side in ("minus", "plus")}
        for fi in range(F):
            sides = [("minus", self.face_minus[fi])]
            if self.face_plus[fi] >= 0:
                sides.append(("plus", self.face_plus[fi]))
            for side, elem in sides:
                ref = map_to_reference(maps, elem, self.face_qp[fi])
                for key, space in spaces.items():
                    th = self.ftheta[side][key]
                    th[fi, :, :, 0] = space.basis.eval(ref)
                    th[fi, :, :, 1:] = np.einsum("ij,qnj->qni",
                                                 maps.inv_jac_t[elem],
                                                 space.basis.grad(ref))

    # fixed COO index layout: volume blocks, then boundary-face blocks
    def _build_scatter(self):
        sd, vd = self.scalar.element_dofs, self.velocity.element_dofs
        off = self.offsets
        self.eq_blocks = [("mass", "s", off["rho"]), ("temp", "s", off["T"]),
                          ("mom1", "v", off["u1"]), ("mom2", "v", off["u2"])]
        self.trial_fields = [("rho", "s", off["rho"]), ("T", "s", off["T"]),
                             ("u1", "v", off["u1"]), ("u2", "v", off["u2"])]
        dofs = {"s": sd, "v": vd}

        rows, cols = [], []
        for _, tkey, roff in self.eq_blocks:
            rdof = dofs[tkey] + roff
            for _, zkey, coff in self.trial_fields:
                cdof = dofs[zkey] + coff
                nt, nb = rdof.shape[1], cdof.shape[1]
                rows.append(np.broadcast_to(rdof[:, :, None],
                                            (rdof.shape[0], nt, nb)).ravel())
                cols.append(np.broadcast_to(cdof[:, None, :],
                                            (cdof.shape[0], nt, nb)).ravel())
        self.vol_rows = np.concatenate(rows)
        self.vol_cols = np.concatenate(cols)

        rows, cols = [], []
        belems = self.face_minus[self.bnd_faces]
        for name, tkey, roff in self.eq_blocks:
            if name == "mass":
                continue
            rdof = dofs[tkey][belems] + roff
            for _, zkey, coff in self.trial_fields:
                cdof = dofs[zkey][belems] + coff
                nt, nb = rdof.shape[1], cdof.shape[1]
                rows.append(np.broadcast_to(rdof[:, :, None],
                                            (rdof.shape[0], nt, nb)).ravel())
                cols.append(np.broadcast_to(cdof[:, None, :],
                                            (cdof.shape[0], nt, nb)).ravel())
        self.bface_rows = np.concatenate(rows) if rows else np.empty(0, dtype=np.intp)
        self.bface_cols = np.concatenate(cols) if cols else np.empty(0, dtype=np.intp)

    # -- helpers -----------------------------------------------------------------

    def unpack(self, x: np.ndarray):
        ns, nv = self.ns, self.nv
        return x[:ns], x[ns:2 * ns], x[2 * ns:2 * ns + nv], x[2 * ns + nv:2 * ns + 2 * nv]

    def pack(self, rho, T, u1, u2) -> np.ndarray:
        return np.concatenate([rho, T, u1, u2])

    def volume_values(self, coeffs: np.ndarray, key: str) -> np.ndarray:
        """(value, d/dx, d/dy) of a field at all volume points, shape (E, Q, 3)."""
        space = self.scalar if key == "s" else self.velocity
        return np.einsum("eqni,en->eqi", self.theta[key], coeffs[space.element_dofs])

    def face_values(self, coeffs: np.ndarray, key: str, faces: np.ndarray,
                    side: str) -> np.ndarray:
        space = self.scalar if key == "s" else self.velocity
        elems = (self.face_minus if side == "minus" else self.face_plus)[faces]
        return np.einsum("fqni,fn->fqi", self.ftheta[side][key][faces],
                         coeffs[space.element_dofs[elems]])

    def total_dofs(self) -> int:
        return self.n_unknowns


# -- pointwise kernels -----------------------------------------------------------

def _rho_tau(mu, u1_x, u1_y, u2_x, u2_y):
    """rho tau = mu (grad u + grad u^T - 2/3 div u I), as a 2x2 nest."""
    div = u1_x + u2_y
    rt11 = mu * (2.0 * u1_x - (2.0 / 3.0) * div)
    rt22 = mu * (2.0 * u2_y - (2.0 / 3.0) * div)
    rt12 = mu * (u1_y + u2_x)
    return ((rt11, rt12), (rt12, rt22)), div


def _compressible_volume(Y, hist, srcs, props, params, a0_dt, viscous_heating):
    rho, rho_x, rho_y, T, T_x, T_y, u1, u1_x, u1_y, u2, u2_x, u2_y = Y
    h_rho, h_ru1, h_ru2, h_rt = hist
    s_rho, s_u1, s_u2, s_t = srcs
    cv, r_gas, gam = props.c_v, props.r, props.gamma

    mu = props.viscosity(T, rho)
    kappa = props.heat_conductivity(mu)
    rtau, divu = _rho_tau(mu, u1_x, u1_y, u2_x, u2_y)

    dt_rho = a0_dt * rho + h_rho
    mass_res = dt_rho + rho_x * u1 + rho_y * u2 + rho * divu - s_rho

    ru1, ru2, rT = rho * u1, rho * u2, rho * T
    press = r_gas * rT

    A1 = (a0_dt * ru1 + h_ru1) - 0.5 * mass_res * u1 - s_u1
    B11 = -(ru1 * u1) - press + rtau[0][0]
    B12 = -(ru1 * u2) + rtau[0][1]
    A2 = (a0_dt * ru2 + h_ru2) - 0.5 * mass_res * u2 - s_u2
    B21 = -(ru2 * u1) + rtau[1][0]
    B22 = -(ru2 * u2) - press + rtau[1][1]

    C = (a0_dt * rT + h_rt) - 0.5 * mass_res * T + (gam - 1.0) * (rT * divu) - s_t
    if viscous_heating:
        diss = rtau[0][0] * u1_x + rtau[0][1] * (u1_y + u2_x) + rtau[1][1] * u2_y
        C = C - (1.0 / cv) * diss
    kc = kappa * (1.0 / cv)
    E1 = -(rT * u1) + kc * T_x
    E2 = -(rT * u2) + kc * T_y
    if params.c_mod > 0.0:
        stab = (params.c_mod * (gam - 1.0)) * abs(rho * divu)
        E1 = E1 + stab * T_x
        E2 = E2 + stab * T_y

    return {"mass": (mass_res, None, None),
            "temp": (C, E1, E2),
            "mom1": (A1, B11, B12),
            "mom2": (A2, B21, B22)}


def _incompressible_volume(Y, hist, srcs, props, params, a0_dt, rho0):
    p, _, _, T, T_x, T_y, u1, u1_x, u1_y, u2, u2_x, u2_y = Y
    h_u1, h_u2, h_t = hist
    f_u1, f_u2, f_t = srcs
    gam = props.gamma
    mu0 = props.mu_const
    nu = mu0 / rho0
    alpha = props.heat_conductivity(mu0) / (props.c_p * rho0)

    tau, divu = _rho_tau(nu, u1_x, u1_y, u2_x, u2_y)

    A1 = (a0_dt * u1 + h_u1) - 0.5 * divu * u1 - f_u1
    B11 = -(u1 * u1) - p + tau[0][0]
    B12 = -(u1 * u2) + tau[0][1]
    A2 = (a0_dt * u2 + h_u2) - 0.5 * divu * u2 - f_u2
    B21 = -(u2 * u1) + tau[1][0]
    B22 = -(u2 * u2) - p + tau[1][1]

    C = (a0_dt * T + h_t) - 0.5 * divu * T + (gam - 1.0) * (T * divu) - f_t
    ga = gam * alpha
    E1 = ga * T_x
    E2 = ga * T_y
    E1 = E1 - T * u1
    E2 = E2 - T * u2
    if params.c_mod > 0.0:
        stab = (params.c_mod * (gam - 1.0)) * abs(divu)
        E1 = E1 + stab * T_x
        E2 = E2 + stab * T_y

    return {"mass": (divu, None, None),
            "temp": (C, E1, E2),
            "mom1": (A1, B11, B12),
            "mom2": (A2, B21, B22)}


def _compressible_face_fluxes(Ym, Yp, normal, h_f, props, params):
    """All numerical fluxes on a batch of faces; Yp is None on the boundary."""

    def side(Y):
        rho, _, _, T, T_x, T_y, u1, u1_x, u1_y, u2, u2_x, u2_y = Y
        mu = props.viscosity(T, rho)
        kappa = props.heat_conductivity(mu)
        rtau, _ = _rho_tau(mu, u1_x, u1_y, u2_x, u2_y)
        return dict(rho=rho, T=T, u=(u1, u2), gT=(T_x, T_y), mu=mu,
                    kappa=kappa, rtau=rtau)

    m = side(Ym)
    p = side(Yp) if Yp is not None else None
    g = lambda name: None if p is None else p[name]
    cv = props.c_v

    sigma_inv = flux_sigma_inv(m["rho"], m["T"], m["u"], g("rho"), g("T"), g("u"),
                               normal, params, props.r)
    sigma_vis = flux_sigma_vis(m["rtau"], g("rtau"), m["mu"], g("mu"),
                               m["u"], g("u"), normal, h_f, params)
    phi_inv = flux_phi_inv(m["rho"], m["T"], m["u"], g("rho"), g("T"), g("u"),
                           normal, params)
    phi_vis = flux_phi_vis(m["kappa"], g("kappa"), m["gT"], g("gT"),
                           m["T"], g("T"), normal, h_f, params, cv)
    varphi, lam = flux_varphi_lambda(m["mu"], g("mu"), m["u"], g("u"),
                                     m["kappa"], g("kappa"), m["T"], g("T"), cv)
    return dict(sigma_inv=sigma_inv, sigma_vis=sigma_vis, phi_inv=phi_inv,
                phi_vis=phi_vis, varphi=varphi, lam=lam), m, p


def _incompressible_face_fluxes(Ym, Yp, normal, h_f, props, params, rho0):
    mu0 = props.mu_const
    nu = mu0 / rho0
    alpha = props.heat_conductivity(mu0) / (props.c_p * rho0)
    ga = props.gamma * alpha

    def side(Y):
        p_, _, _, T, T_x, T_y, u1, u1_x, u1_y, u2, u2_x, u2_y = Y
        tau, _ = _rho_tau(nu, u1_x, u1_y, u2_x, u2_y)
        return dict(p=p_, T=T, u=(u1, u2), gT=(T_x, T_y), tau=tau)

    m = side(Ym)
    p = side(Yp) if Yp is not None else None
    g = lambda name: None if p is None else p[name]

    _, jun, avg_u = jump_avg_vector(m["u"], g("u"), normal)
    _, jtn, avg_T = jump_avg(m["T"], g("T"), normal)
    avg_p = _avg(m["p"], g("p"))
    un = avg_u[0] * normal[0] + avg_u[1] * normal[1]
    a = params.zeta * abs(un)
    sigma_inv = ((avg_u[0] * avg_u[0] + avg_p + a * jun[0][0],
                  avg_u[0] * avg_u[1] + a * jun[0][1]),
                 (avg_u[1] * avg_u[0] + a * jun[1][0],
                  avg_u[1] * avg_u[1] + avg_p + a * jun[1][1]))
    pen = (params.eta * nu / h_f)
    sigma_vis = tuple(tuple(_avg(m["tau"][i][j], None if p is None else p["tau"][i][j])
                            - pen * jun[i][j] for j in range(2)) for i in range(2))
    b = params.delta * abs(un)
    phi_inv = (avg_T * avg_u[0] + b * jtn[0], avg_T * avg_u[1] + b * jtn[1])
    avg_gT = (_avg(m["gT"][0], None if p is None else p["gT"][0]),
              _avg(m["gT"][1], None if p is None else p["gT"][1]))
    phi_vis = (ga * (avg_gT[0] - (params.eps / h_f) * jtn[0]),
               ga * (avg_gT[1] - (params.eps / h_f) * jtn[1]))
    varphi = (nu * avg_u[0], nu * avg_u[1])
    lam = ga * avg_T
    return dict(sigma_inv=sigma_inv, sigma_vis=sigma_vis, phi_inv=phi_inv,
                phi_vis=phi_vis, varphi=varphi, lam=lam,
                mu_like=nu, lam_like=ga), m, p


def _face_side_coeffs(fluxes, side_fields, normal_signed, mu_side, lam_coef_side):
    """Per-side contraction coefficients for the momentum/temperature face terms.

    mu_side multiplies u in the momentum lifting difference; lam_coef_side
    multiplies T in the temperature lifting difference.
    """
    m1, m2 = normal_signed
    si, sv = fluxes["sigma_inv"], fluxes["sigma_vis"]
    s11 = si[0][0] - sv[0][0]
    s12 = si[0][1] - sv[0][1]
    s21 = si[1][0] - sv[1][0]
    s22 = si[1][1] - sv[1][1]
    u = side_fields["u"]
    d1 = fluxes["varphi"][0] - mu_side * u[0]
    d2 = fluxes["varphi"][1] - mu_side * u[1]
    lam_diff = fluxes["lam"] - lam_coef_side * side_fields["T"]
    pi, pv = fluxes["phi_inv"], fluxes["phi_vis"]

    mom1 = (s11 * m1 + s12 * m2,
            (4.0 / 3.0) * (d1 * m1) - (2.0 / 3.0) * (d2 * m2),
            d1 * m2 + d2 * m1)
    mom2 = (s21 * m1 + s22 * m2,
            d1 * m2 + d2 * m1,
            -(2.0 / 3.0) * (d1 * m1) + (4.0 / 3.0) * (d2 * m2))
    temp = ((pi[0] - pv[0]) * m1 + (pi[1] - pv[1]) * m2,
            lam_diff * m1,
            lam_diff * m2)
    return {"temp": temp, "mom1": mom1, "mom2": mom2}


# -- contraction helpers ----------------------------------------------------------

def _coeff_arrays(triple, shape, want_der, ndir=12):
    kval = np.zeros(shape + (3,))
    kder = np.zeros(shape + (3, ndir)) if want_der else None
    for i, c in enumerate(triple):
        if c is None:
            continue
        kval[..., i] = value(c)
        if want_der and isinstance(c, Dual):
            kder[..., i, :] = c.der
    return kval, kder


def _scatter_residual(out, dofs, local):
    np.add.at(out, dofs.ravel(), local.ravel())


def _block_jacobian(theta_test, kder_block, theta_trial, weights):
    """sum_q w * theta_test^T K theta_trial, batched over cells/faces."""
    E, Q, nt, _ = theta_test.shape
    nb = theta_trial.shape[2]
    A = theta_test.reshape(E * Q, nt, 3)
    K = (kder_block * weights[..., None, None]).reshape(E * Q, 3, 3)
    B = theta_trial.reshape(E * Q, nb, 3)
    J = A @ K @ B.transpose(0, 2, 1)
    return J.reshape(E, Q, nt, nb).sum(axis=1)


# -- assembly ---------------------------------------------------------------------

def _check_finite(arr, disc, what):
    vals = value(arr)
    if not np.isfinite(vals).all():
        bad = np.argwhere(~np.isfinite(vals))
        elem = int(bad[0, 0])
        raise InvalidStateError(f"non-finite {what} during assembly in element {elem}")


def history_products_compressible(disc, history, alphas, dt):
    """(1/dt) sum_{i>=1} alpha_i of (rho, rho u1, rho u2, rho T) at volume points."""
    E, Q = disc.wdet.shape
    h_rho = np.zeros((E, Q))
    h_ru1 = np.zeros((E, Q))
    h_ru2 = np.zeros((E, Q))
    h_rt = np.zeros((E, Q))
    for i, a in enumerate(alphas[1:]):
        rho_c, T_c, u1_c, u2_c = disc.unpack(np.asarray(history[i]))
        rho = disc.volume_values(rho_c, "s")[..., 0]
        T = disc.volume_values(T_c, "s")[..., 0]
        u1 = disc.volume_values(u1_c, "v")[..., 0]
        u2 = disc.volume_values(u2_c, "v")[..., 0]
        h_rho += a * rho
        h_ru1 += a * rho * u1
        h_ru2 += a * rho * u2
        h_rt += a * rho * T
    return h_rho / dt, h_ru1 / dt, h_ru2 / dt, h_rt / dt


def history_values_incompressible(disc, history, alphas, dt):
    E, Q = disc.wdet.shape
    h_u1 = np.zeros((E, Q))
    h_u2 = np.zeros((E, Q))
    h_t = np.zeros((E, Q))
    for i, a in enumerate(alphas[1:]):
        _, T_c, u1_c, u2_c = disc.unpack(np.asarray(history[i])[:disc.n_unknowns])
        h_u1 += a * disc.volume_values(u1_c, "v")[..., 0]
        h_u2 += a * disc.volume_values(u2_c, "v")[..., 0]
        h_t += a * disc.volume_values(T_c, "s")[..., 0]
    return h_u1 / dt, h_u2 / dt, h_t / dt


def _volume_sources(disc, sources, t, n_components):
    E, Q = disc.wdet.shape
    if sources is None:
        return (0.0,) * n_components
    if isinstance(sources, tuple):
        return sources
    x, y = disc.qpoints[..., 0], disc.qpoints[..., 1]
    out = sources(x, y, t)
    if len(out) != n_components:
        raise ValueError(f"source callable must return {n_components} components")
    return tuple(np.broadcast_to(np.asarray(c, dtype=float), (E, Q)) for c in out)


def _face_Y(disc, coeff_fields, faces, side):
    rho_c, T_c, u1_c, u2_c = coeff_fields
    r3 = disc.face_values(rho_c, "s", faces, side)
    t3 = disc.face_values(T_c, "s", faces, side)
    a3 = disc.face_values(u1_c, "v", faces, side)
    b3 = disc.face_values(u2_c, "v", faces, side)
    return [r3[..., 0], r3[..., 1], r3[..., 2], t3[..., 0], t3[..., 1], t3[..., 2],
            a3[..., 0], a3[..., 1], a3[..., 2], b3[..., 0], b3[..., 1], b3[..., 2]]


def _assemble(disc, props, params, x, history, alphas, dt, t, sources,
              need_jacobian, mode, rho0=1.0, viscous_heating=True,
              hist_cache=None):
    alphas = np.asarray(alphas, dtype=float)
    if len(history) < len(alphas) - 1:
        raise ValueError("history is shorter than the BDF order requires")
    incompressible = mode == "incompressible"
    n_total = disc.n_unknowns + (1 if incompressible else 0)
    a0_dt = alphas[0] / dt

    coeff_fields = disc.unpack(x[:disc.n_unknowns])
    lam_mult = x[-1] if incompressible else None

    # volume fields
    r3 = disc.volume_values(coeff_fields[0], "s")
    t3 = disc.volume_values(coeff_fields[1], "s")
    a3 = disc.volume_values(coeff_fields[2], "v")
    b3 = disc.volume_values(coeff_fields[3], "v")
    _check_finite(r3, disc, "field values")
    _check_finite(t3, disc, "field values")
    _check_finite(a3, disc, "field values")
    _check_finite(b3, disc, "field values")
    Yv = [r3[..., 0], r3[..., 1], r3[..., 2], t3[..., 0], t3[..., 1], t3[..., 2],
          a3[..., 0], a3[..., 1], a3[..., 2], b3[..., 0], b3[..., 1], b3[..., 2]]
    if need_jacobian:
        Yv = variables(*Yv)

    if incompressible:
        hist = hist_cache or history_values_incompressible(disc, history, alphas, dt)
        srcs = _volume_sources(disc, sources, t, 3)
        coeffs = _incompressible_volume(Yv, hist, srcs, props, params, a0_dt, rho0)
    else:
        hist = hist_cache or history_products_compressible(disc, history, alphas, dt)
        srcs = _volume_sources(disc, sources, t, 4)
        coeffs = _compressible_volume(Yv, hist, srcs, props, params, a0_dt,
                                      viscous_heating)

    res = np.zeros(n_total)
    jac_data = [] if need_jacobian else None
    EQ = disc.wdet.shape

    for name, tkey, roff in disc.eq_blocks:
        kval, kder = _coeff_arrays(coeffs[name], EQ, need_jacobian)
        theta_t = disc.theta[tkey]
        local = np.einsum("eq,eqi,eqni->en", disc.wdet, kval, theta_t)
        space = disc.scalar if tkey == "s" else disc.velocity
        _scatter_residual(res, space.element_dofs + roff, local)
        if need_jacobian:
            for fname, zkey, _ in disc.trial_fields:
                kz = kder[..., _FIELD_SLICES[fname]]
                jac_data.append(_block_jacobian(theta_t, kz, disc.theta[zkey],
                                                disc.wdet).ravel())

    # interior faces: residual only; for C0 spaces the two sides of every face
    # cancel identically, so these terms contribute nothing to the jacobian
    if len(disc.int_faces):
        ifc = disc.int_faces
        Ym = _face_Y(disc, coeff_fields, ifc, "minus")
        Yp = _face_Y(disc, coeff_fields, ifc, "plus")
        nrm = (disc.face_normal[ifc, 0][:, None], disc.face_normal[ifc, 1][:, None])
        h_f = disc.face_h[ifc][:, None]
        if incompressible:
            fluxes, m_f, p_f = _incompressible_face_fluxes(Ym, Yp, nrm, h_f,
                                                           props, params, rho0)
            mu_m = mu_p = fluxes["mu_like"]
            lamc_m = lamc_p = fluxes["lam_like"]
        else:
            fluxes, m_f, p_f = _compressible_face_fluxes(Ym, Yp, nrm, h_f,
                                                         props, params)
            mu_m, mu_p = m_f["mu"], p_f["mu"]
            lamc_m = m_f["kappa"] * (1.0 / props.c_v)
            lamc_p = p_f["kappa"] * (1.0 / props.c_v)
        wf = disc.wface[ifc]
        for side, sgn, flds, mu_s, lamc_s in (("minus", 1.0, m_f, mu_m, lamc_m),
                                              ("plus", -1.0, p_f, mu_p, lamc_p)):
            cfs = _face_side_coeffs(fluxes, flds, (sgn * nrm[0], sgn * nrm[1]),
                                    mu_s, lamc_s)
            elems = (disc.face_minus if side == "minus" else disc.face_plus)[ifc]
            for name, tkey, roff in disc.eq_blocks:
                if name == "mass":
                    continue
                kval, _ = _coeff_arrays(cfs[name], wf.shape, False)
                theta_t = disc.ftheta[side][tkey][ifc]
                local = np.einsum("fq,fqi,fqni->fn", wf, kval, theta_t)
                space = disc.scalar if tkey == "s" else disc.velocity
                _scatter_residual(res, space.element_dofs[elems] + roff, local)

    # boundary faces: residual and jacobian
    if len(disc.bnd_faces):
        bf = disc.bnd_faces
        Ym = _face_Y(disc, coeff_fields, bf, "minus")
        if need_jacobian:
            Ym = variables(*Ym)
        nrm = (disc.face_normal[bf, 0][:, None], disc.face_normal[bf, 1][:, None])
        h_f = disc.face_h[bf][:, None]
        if incompressible:
            fluxes, m_f, _ = _incompressible_face_fluxes(Ym, None, nrm, h_f,
                                                         props, params, rho0)
            mu_s, lamc_s = fluxes["mu_like"], fluxes["lam_like"]
        else:
            fluxes, m_f, _ = _compressible_face_fluxes(Ym, None, nrm, h_f,
                                                       props, params)
            mu_s = m_f["mu"]
            lamc_s = m_f["kappa"] * (1.0 / props.c_v)
        cfs = _face_side_coeffs(fluxes, m_f, nrm, mu_s, lamc_s)
        wf = disc.wface[bf]
        belems = disc.face_minus[bf]
        for name, tkey, roff in disc.eq_blocks:
            if name == "mass":
                continue
            kval, kder = _coeff_arrays(cfs[name], wf.shape, need_jacobian)
            theta_t = disc.ftheta["minus"][tkey][bf]
            local = np.einsum("fq,fqi,fqni->fn", wf, kval, theta_t)
            space = disc.scalar if tkey == "s" else disc.velocity
            _scatter_residual(res, space.element_dofs[belems] + roff, local)
            if need_jacobian:
                for fname, zkey, _ in disc.trial_fields:
                    kz = kder[..., _FIELD_SLICES[fname]]
                    jac_data.append(_block_jacobian(
                        theta_t, kz, disc.ftheta["minus"][zkey][bf], wf).ravel())

    jac = None
    if need_jacobian:
        rows = np.concatenate([disc.vol_rows, disc.bface_rows])
        cols = np.concatenate([disc.vol_cols, disc.bface_cols])
        data = np.concatenate(jac_data)
        if incompressible:
            mrow = np.arange(disc.ns)
            rows = np.concatenate([rows, mrow, np.full(disc.ns, disc.n_unknowns)])
            cols = np.concatenate([cols, np.full(disc.ns, disc.n_unknowns), mrow])
            data = np.concatenate([data, disc.scalar_integrals, disc.scalar_integrals])
        jac = sp.coo_matrix((data, (rows, cols)), shape=(n_total, n_total)).tocsc()

    if incompressible:
        res[:disc.ns] += lam_mult * disc.scalar_integrals
        res[disc.n_unknowns] = disc.scalar_integrals @ coeff_fields[0]

    if not np.isfinite(res).all():
        raise InvalidStateError("non-finite residual entries after assembly")
    return Residual(res, disc.ns, disc.nv, multiplier=incompressible), jac


def assemble_compressible(disc, props, params, x, history, alphas, dt, t=0.0,
                          sources=None, need_jacobian=False, viscous_heating=True,
                          hist_cache=None):
    return _assemble(disc, props, params, x, history, alphas, dt, t, sources,
                     need_jacobian, "compressible", viscous_heating=viscous_heating,
                     hist_cache=hist_cache)


def assemble_incompressible(disc, props, params, x, history, alphas, dt, t=0.0,
                            sources=None, need_jacobian=False, rho0=1.0,
                            hist_cache=None):
    return _assemble(disc, props, params, x, history, alphas, dt, t, sources,
                     need_jacobian, "incompressible", rho0=rho0,
                     hist_cache=hist_cache)


def residual_compressible(disc, props, params, x, history, alphas, dt, t=0.0,
                          sources=None, viscous_heating=True) -> Residual:
    res, _ = assemble_compressible(disc, props, params, x, history, alphas, dt, t,
                                   sources, need_jacobian=False,
                                   viscous_heating=viscous_heating)
    return res


def residual_incompressible(disc, props, params, x, history, alphas, dt, t=0.0,
                            sources=None, rho0=1.0) -> Residual:
    res, _ = assemble_incompressible(disc, props, params, x, history, alphas, dt,
                                     t, sources, need_jacobian=False, rho0=rho0)
    return res


def assemble_jacobian(disc, props, params, x, history, alphas, dt, t=0.0,
                      sources=None, viscous_heating=True, mode="compressible",
                      rho0=1.0):
    _, jac = _assemble(disc, props, params, x, history, alphas, dt, t, sources,
                       True, mode, rho0=rho0, viscous_heating=viscous_heating)
    return jac


# -- boundary conditions and step problems ----------------------------------------

@dataclass
class DirichletBC:
    """Strong condition on a set of packed-vector dofs.

    value may be a constant, an array matching dofs, or a callable t -> array.
    """

    dofs: np.ndarray
    value: object = 0.0

    def values(self, t: float) -> np.ndarray:
        v = self.value(t) if callable(self.value) else self.value
        return np.broadcast_to(np.asarray(v, dtype=float), self.dofs.shape)


def collect_bcs(bcs, t):
    if not bcs:
        return np.empty(0, dtype=np.intp), np.empty(0)
    dofs = np.concatenate([np.asarray(bc.dofs, dtype=np.intp) for bc in bcs])
    vals = np.concatenate([bc.values(t) for bc in bcs])
    return dofs, vals


def apply_dirichlet(res_vec, jac, x, dofs, vals):
    """Row replacement: constrained rows become x_i - g_i with identity rows."""
    r = res_vec.copy()
    r[dofs] = x[dofs] - vals
    if jac is None:
        return r, None
    n = jac.shape[0]
    keep = np.ones(n)
    keep[dofs] = 0.0
    jac = sp.diags(keep) @ jac + sp.coo_matrix(
        (np.ones(len(dofs)), (dofs, dofs)), shape=(n, n))
    return r, jac.tocsc()


class CompressibleProblem:
    """Time-step system factory for the compressible scheme."""

    def __init__(self, disc, props, params, bcs=(), sources=None,
                 viscous_heating=True):
        self.disc = disc
        self.props = props
        self.params = params
        self.bcs = list(bcs)
        self.sources = sources
        self.viscous_heating = viscous_heating

    @property
    def n_unknowns(self) -> int:
        return self.disc.n_unknowns

    def make_step(self, history, alphas, dt, t_new):
        disc = self.disc
        hist_cache = history_products_compressible(disc, history, alphas, dt)
        srcs = _volume_sources(disc, self.sources, t_new, 4)
        bc_dofs, bc_vals = collect_bcs(self.bcs, t_new)

        def fun(x, need_jacobian=True):
            res, jac = assemble_compressible(
                disc, self.props, self.params, x, history, alphas, dt, t_new,
                sources=srcs, need_jacobian=need_jacobian,
                viscous_heating=self.viscous_heating, hist_cache=hist_cache)
            return apply_dirichlet(res.vector, jac, x, bc_dofs, bc_vals)

        return fun


class IncompressibleProblem:
    """Time-step system factory for the constant-density mode."""

    def __init__(self, disc, props, params, rho0=1.0, bcs=(), sources=None):
        self.disc = disc
        self.props = props
        self.params = params
        self.rho0 = rho0
        self.bcs = list(bcs)
        self.sources = sources

    @property
    def n_unknowns(self) -> int:
        return self.disc.n_unknowns + 1

    def make_step(self, history, alphas, dt, t_new):
        disc = self.disc
        hist_cache = history_values_incompressible(disc, history, alphas, dt)
        srcs = _volume_sources(disc, self.sources, t_new, 3)
        bc_dofs, bc_vals = collect_bcs(self.bcs, t_new)

        def fun(x, need_jacobian=True):
            res, jac = assemble_incompressible(
                disc, self.props, self.params, x, history, alphas, dt, t_new,
                sources=srcs, need_jacobian=need_jacobian, rho0=self.rho0,
                hist_cache=hist_cache)
            return apply_dirichlet(res.vector, jac, x, bc_dofs, bc_vals)

        return fun
