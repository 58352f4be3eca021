"""Batch front end: config parsing, study subcommands, field output."""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fem import triangle_rule
from .forms import (CompressibleProblem, DirichletBC, Discretization, FluxParams)
from .mesh import Mesh, generate_structured, read_mesh
from .physics import FluidProperties
from .solver import NewtonConfig, TimeStepper
from .verification import (APCase, MMSCase, discrepancy_report_text,
                           forcing_discrepancy_report, run_ap, run_mms)


class ConfigError(ValueError):
    """Configuration parse failure; carries the offending line number."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


def _parse_bool(s):
    if s.lower() in ("true", "yes", "1", "on"):
        return True
    if s.lower() in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_float_or_auto(s):
    return "auto" if s == "auto" else float(s)


def _parse_int_list(s):
    return tuple(int(v) for v in s.split(",") if v.strip())


def _parse_float_list(s):
    return tuple(float(v) for v in s.split(",") if v.strip())


def _fmt(v):
    if isinstance(v, tuple):
        return ",".join(repr(x) if isinstance(x, float) else str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


# section -> key -> (parser, default)
_SCHEMA = {
    "case": {"name": (str, "mms")},
    "mesh": {"nx": (int, 4), "ny": (int, 4),
             "xmin": (float, 0.0), "xmax": (float, 1.0),
             "ymin": (float, 0.0), "ymax": (float, 1.0),
             "file": (str, "")},
    "fem": {"k": (int, 1)},
    "flux": {"zeta": (float, 0.5), "delta": (float, 0.5),
             "eta": (_parse_float_or_auto, "auto"),
             "eps": (_parse_float_or_auto, "auto"),
             "c_mod": (float, 0.0)},
    "fluid": {"mode": (str, "constant-mu"), "c_v": (float, 1.0),
              "r": (float, 1.0), "gamma": (float, 2.0),
              "prandtl": (float, 0.72), "c_ref": (float, 1.458e-6),
              "s_ref": (float, 110.4), "mu": (float, 3.0),
              "nu": (float, 3.0), "kappa": (float, 0.47)},
    "time": {"dt": (float, 5e-4), "t_final": (float, 0.25),
             "bdf_order": (int, 5)},
    "newton": {"rtol": (float, 1e-10), "atol": (float, 1e-12),
               "max_iter": (int, 15)},
    "output": {"dir": (str, "out"), "snapshot_every": (int, 0),
               "subdivide": (int, 0)},
    "mms": {"levels": (_parse_int_list, (4, 8, 16)),
            "viscosity_mode": (str, "constant-mu")},
    "ap": {"nx": (int, 16), "ma": (_parse_float_list, (0.1, 0.05, 0.025))},
    "solve": {"rho0": (float, 1.0), "t0": (float, 1.0)},
}


@dataclass
class RunConfig:
    """Typed view of the key=value configuration, fully populated."""

    values: dict = field(default_factory=dict)

    def __post_init__(self):
        full = {(s, k): spec[1] for s, sec in _SCHEMA.items()
                for k, spec in sec.items()}
        full.update(self.values)
        self.values = full

    def __getitem__(self, key):
        return self.values[key]

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.values == other.values

    def dump(self) -> str:
        lines = []
        for section in _SCHEMA:
            lines.append(f"[{section}]")
            for key in _SCHEMA[section]:
                lines.append(f"{key} = {_fmt(self.values[(section, key)])}")
            lines.append("")
        return "\n".join(lines)

    def flux_params(self, k: int) -> FluxParams:
        eta, eps = self[("flux", "eta")], self[("flux", "eps")]
        pen = 3.0 * (k + 1) * (k + 2)
        return FluxParams(zeta=self[("flux", "zeta")], delta=self[("flux", "delta")],
                          eta=pen if eta == "auto" else eta,
                          eps=pen if eps == "auto" else eps,
                          c_mod=self[("flux", "c_mod")])

    def fluid_properties(self) -> FluidProperties:
        mode = self[("fluid", "mode")]
        kw = dict(c_v=self[("fluid", "c_v")], r=self[("fluid", "r")],
                  gamma=self[("fluid", "gamma")], prandtl=self[("fluid", "prandtl")],
                  c_ref=self[("fluid", "c_ref")], s_ref=self[("fluid", "s_ref")],
                  mode=mode, kappa_const=self[("fluid", "kappa")])
        if mode == "constant-mu":
            kw["mu_const"] = self[("fluid", "mu")]
        elif mode == "constant-nu":
            kw["nu_const"] = self[("fluid", "nu")]
        return FluidProperties(**kw)

    def newton(self) -> NewtonConfig:
        return NewtonConfig(rtol=self[("newton", "rtol")],
                            atol=self[("newton", "atol")],
                            max_iter=self[("newton", "max_iter")])

    def build_mesh(self) -> Mesh:
        path = self[("mesh", "file")]
        if path:
            return read_mesh(Path(path).read_text())
        nx, ny = self[("mesh", "nx")], self[("mesh", "ny")]
        bounds = (self[("mesh", "xmin")], self[("mesh", "xmax")],
                  self[("mesh", "ymin")], self[("mesh", "ymax")])
        return generate_structured(nx, ny, bounds)


def parse_config(text: str) -> RunConfig:
    """Strict key=value parser: unknown sections/keys and bad values are
    rejected with the offending line number."""
    values = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].split(";", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in _SCHEMA:
                raise ConfigError(f"unknown section [{section}]", lineno)
            continue
        if "=" not in line:
            raise ConfigError(f"expected key = value, got {line!r}", lineno)
        if section is None:
            raise ConfigError("key outside of any [section]", lineno)
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _SCHEMA[section]:
            raise ConfigError(f"unknown key {key!r} in [{section}]", lineno)
        parser = _SCHEMA[section][key][0]
        try:
            parsed = parser(val)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", lineno) from None
        values[(section, key)] = parsed
    cfg = RunConfig(values)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig):
    if cfg[("fem", "k")] < 1:
        raise ConfigError("fem.k must be at least 1")
    if cfg[("time", "dt")] <= 0.0:
        raise ConfigError("time.dt must be positive")
    if cfg[("time", "t_final")] < cfg[("time", "dt")]:
        raise ConfigError("time.t_final must be at least one step")
    if not 1 <= cfg[("time", "bdf_order")] <= 5:
        raise ConfigError("time.bdf_order must be in 1..5")
    if cfg[("case", "name")] not in ("mms", "ap", "custom"):
        raise ConfigError(f"unknown case name {cfg[('case', 'name')]!r}")
    path = cfg[("mesh", "file")]
    if path and not Path(path).exists():
        raise ConfigError(f"mesh file not found: {path}")


# -- field output -------------------------------------------------------------

def write_fields(disc: Discretization, x: np.ndarray, path, subdivide: int = 0):
    """Write rho, T and velocity magnitude as a legacy VTK unstructured grid.

    Fields are sampled at mesh vertices; subdivide > 1 refines each triangle
    uniformly to expose the high-order variation.
    """
    mesh = disc.mesh
    rho_c, T_c, u1_c, u2_c = disc.unpack(x)
    if subdivide and subdivide > 1:
        from .fem import LagrangeBasis, affine_maps, map_to_physical
        lattice = LagrangeBasis(subdivide)
        pts_ref = lattice.nodes
        maps = affine_maps(mesh)
        phys = map_to_physical(maps, pts_ref)           # (E, m, 2)
        points = phys.reshape(-1, 2)
        m = len(pts_ref)
        sub_tris = _lattice_triangles(subdivide)
        cells = (np.arange(mesh.n_elements)[:, None, None] * m
                 + sub_tris[None, :, :]).reshape(-1, 3)
        rho = disc.scalar.evaluate(rho_c, pts_ref).ravel()
        T = disc.scalar.evaluate(T_c, pts_ref).ravel()
        u1 = disc.velocity.evaluate(u1_c, pts_ref).ravel()
        u2 = disc.velocity.evaluate(u2_c, pts_ref).ravel()
    else:
        points = mesh.vertices
        cells = mesh.elements
        nv = mesh.n_vertices
        rho, T = rho_c[:nv], T_c[:nv]
        u1, u2 = u1_c[:nv], u2_c[:nv]
    umag = np.sqrt(u1 ** 2 + u2 ** 2)

    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write("vmfem fields\n")
        fh.write("ASCII\n")
        fh.write("DATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {len(points)} double\n")
        for px, py in points:
            fh.write(f"{px!r} {py!r} 0.0\n")
        fh.write(f"CELLS {len(cells)} {4 * len(cells)}\n")
        for a, b, c in cells:
            fh.write(f"3 {a} {b} {c}\n")
        fh.write(f"CELL_TYPES {len(cells)}\n")
        fh.write("5\n" * len(cells))
        fh.write(f"POINT_DATA {len(points)}\n")
        for name, arr in (("rho", rho), ("T", T), ("u_mag", umag)):
            fh.write(f"SCALARS {name} double\nLOOKUP_TABLE default\n")
            for val in arr:
                fh.write(f"{val!r}\n")


def _lattice_triangles(n: int) -> np.ndarray:
    """Triangulation of the degree-n reference lattice (matching LagrangeBasis
    node ordering)."""
    from .fem import _lattice_nodes
    nodes, _ = _lattice_nodes(n)
    index = {}
    for li, (xx, yy) in enumerate(nodes):
        index[(round(xx * n), round(yy * n))] = li
    tris = []
    for i in range(n):
        for j in range(n - i):
            a, b, c = index[(i, j)], index[(i + 1, j)], index[(i, j + 1)]
            tris.append((a, b, c))
            if i + j < n - 1:
                d = index[(i + 1, j + 1)]
                tris.append((b, d, c))
    return np.array(tris, dtype=np.intp)


# -- subcommands ----------------------------------------------------------------

def _load_config(path) -> RunConfig:
    if path:
        return parse_config(Path(path).read_text())
    return RunConfig()


def _thread_count(args) -> int:
    if args.threads:
        return args.threads
    return int(os.environ.get("VMFEM_THREADS", "1"))


def cmd_mms(args) -> int:
    cfg = _load_config(args.config)
    k = args.k if args.k else cfg[("fem", "k")]
    levels = cfg[("mms", "levels")]
    if args.levels:
        levels = tuple(4 * 2 ** i for i in range(args.levels))
    case = MMSCase(c_v=cfg[("fluid", "c_v")], r_gas=cfg[("fluid", "r")],
                   nu=cfg[("fluid", "nu")], kappa=cfg[("fluid", "kappa")],
                   dt=cfg[("time", "dt")], t_final=cfg[("time", "t_final")],
                   viscosity_mode=cfg[("mms", "viscosity_mode")])
    out = Path(args.out or cfg[("output", "dir")])
    out.mkdir(parents=True, exist_ok=True)

    threads = _thread_count(args)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            partials = list(pool.map(
                lambda nx: run_mms(k, [nx], case=case, newton=cfg.newton(),
                                   bdf_order=cfg[("time", "bdf_order")]), levels))
        report = partials[0]
        for part in partials[1:]:
            report.hs += part.hs
            report.dofs += part.dofs
            report.err_u += part.err_u
            report.err_rho += part.err_rho
            report.err_T += part.err_T
    else:
        report = run_mms(k, levels, case=case, newton=cfg.newton(),
                         bdf_order=cfg[("time", "bdf_order")])
    (out / "convergence.csv").write_text(report.to_csv())
    (out / "forcing_discrepancies.csv").write_text(
        discrepancy_report_text(forcing_discrepancy_report(case)))
    (out / "config_effective.txt").write_text(cfg.dump())
    print(report.to_csv(), end="")
    return 0


def cmd_ap(args) -> int:
    cfg = _load_config(args.config)
    if args.reduced or not args.config:
        case = APCase()
    else:
        case = APCase(nx=cfg[("ap", "nx")], k=cfg[("fem", "k")],
                      ma_values=cfg[("ap", "ma")], t_final=cfg[("time", "t_final")],
                      dt=cfg[("time", "dt")], mu=cfg[("fluid", "mu")],
                      c_v=cfg[("fluid", "c_v")], r_gas=cfg[("fluid", "r")],
                      gamma=cfg[("fluid", "gamma")],
                      prandtl=cfg[("fluid", "prandtl")])
    out = Path(args.out or cfg[("output", "dir")])
    out.mkdir(parents=True, exist_ok=True)
    report = run_ap(case, newton=cfg.newton())
    (out / "ap.csv").write_text(report.to_csv())
    (out / "config_effective.txt").write_text(cfg.dump())
    print(report.to_csv(), end="")
    return 0


def cmd_solve(args) -> int:
    cfg = _load_config(args.config)
    mesh = cfg.build_mesh()
    k = cfg[("fem", "k")]
    disc = Discretization(mesh, k)
    props = cfg.fluid_properties()
    params = cfg.flux_params(k)

    rho0 = cfg[("solve", "rho0")]
    T0 = cfg[("solve", "t0")]
    sb = disc.scalar.boundary_dofs()
    vb = disc.vector.boundary_dofs()
    bcs = [DirichletBC(vb + disc.offsets["u1"], 0.0),
           DirichletBC(sb + disc.offsets["T"], T0)]
    problem = CompressibleProblem(disc, props, params, bcs=bcs)
    x0 = disc.pack(np.full(disc.ns, rho0), np.full(disc.ns, T0),
                   np.zeros(disc.nv), np.zeros(disc.nv))

    out = Path(args.out or cfg[("output", "dir")])
    out.mkdir(parents=True, exist_ok=True)
    dt = cfg[("time", "dt")]
    n_steps = int(round(cfg[("time", "t_final")] / dt))
    every = cfg[("output", "snapshot_every")]
    subdiv = cfg[("output", "subdivide")]

    write_fields(disc, x0, out / "fields_000000.vtk", subdiv)

    def snapshot(step, t, x):
        if every and step % every == 0:
            write_fields(disc, x, out / f"fields_{step:06d}.vtk", subdiv)

    stepper = TimeStepper(problem, dt, target_order=cfg[("time", "bdf_order")],
                          newton=cfg.newton())
    try:
        xT, _ = stepper.run(x0, n_steps, callback=snapshot)
    except Exception as exc:
        print(f"solve failed: {exc}", file=sys.stderr)
        return 1
    write_fields(disc, xT, out / f"fields_{n_steps:06d}.vtk", subdiv)
    (out / "config_effective.txt").write_text(cfg.dump())
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="vmfem",
                                     description="mixed FEM compressible flow studies")
    parser.add_argument("--config", help="path to a key=value config file")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--threads", type=int, default=0,
                        help="worker threads for independent runs "
                             "(default: VMFEM_THREADS or 1)")
    sub = parser.add_subparsers(dest="command", required=True)

    p_mms = sub.add_parser("mms", help="manufactured-solution convergence study")
    p_mms.add_argument("--k", type=int, default=0, help="polynomial degree")
    p_mms.add_argument("--levels", type=int, default=0,
                       help="number of refinement levels starting at 4x4")
    p_mms.set_defaults(func=cmd_mms)

    p_ap = sub.add_parser("ap", help="low-Mach agreement study")
    p_ap.add_argument("--reduced", action="store_true",
                      help="desk-scale defaults (16x16, Ma 0.1/0.05/0.025)")
    p_ap.set_defaults(func=cmd_ap)

    p_solve = sub.add_parser("solve", help="general run writing field snapshots")
    p_solve.set_defaults(func=cmd_solve)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
