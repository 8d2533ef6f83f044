"""Run configuration, field export, and the command-line interface.

Config files are flat `key=value` pairs, one per line, `#` comments.
Exit codes: 0 success, 2 configuration error, 3 solver non-convergence,
4 I/O error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import analysis, felib, mesh as meshmod, problems, projections, solver


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    problem: str
    mesh: str  # integer n for the structured square, else a file path
    k: int
    dt: float = 0.0  # required unless dt_rule is h/h2
    T: float = 1.0
    scheme: str = "backward_euler"
    tau: float = 1.0
    newton_tol: float = 1e-10
    newton_max: int = 25
    snapshots: tuple = ()
    output_dir: str = "."
    levels: tuple = ()  # converge only
    dt_rule: str = "fixed"  # converge only: fixed | h | h2


_REQUIRED = ("problem", "mesh", "k")

_PARSERS = {
    "problem": str,
    "mesh": str,
    "k": int,
    "dt": float,
    "T": float,
    "scheme": str,
    "tau": float,
    "newton_tol": float,
    "newton_max": int,
    "snapshots": lambda s: tuple(float(v) for v in s.split(",") if v.strip()),
    "output_dir": str,
    "levels": lambda s: tuple(int(v) for v in s.split(",") if v.strip()),
    "dt_rule": str,
}

_SCHEMES = {
    "backward_euler": "backward_euler",
    "be": "backward_euler",
    "crank_nicolson": "crank_nicolson",
    "cn": "crank_nicolson",
}


def parse_config(text: str) -> RunConfig:
    """Parse and fully validate a key=value config; unknown keys and
    malformed values are errors naming the offending line."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _PARSERS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            values[key] = _PARSERS[key](val)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from exc
    for key in _REQUIRED:
        if key not in values:
            raise ConfigError(f"missing required key {key!r}")
    cfg = RunConfig(**values)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig):
    if cfg.problem not in problems.available():
        raise ConfigError(
            f"unknown problem {cfg.problem!r}; available: {problems.available()}"
        )
    if not 0 <= cfg.k <= 3:
        raise ConfigError(f"k must be in 0..3, got {cfg.k}")
    if cfg.scheme not in _SCHEMES:
        raise ConfigError(f"unknown scheme {cfg.scheme!r}")
    if cfg.dt_rule not in ("fixed", "h", "h2"):
        raise ConfigError(f"unknown dt_rule {cfg.dt_rule!r}")
    if cfg.dt_rule == "fixed" and not cfg.levels and cfg.dt <= 0:
        raise ConfigError(f"dt must be positive, got {cfg.dt}")
    if not np.isfinite(cfg.T) or cfg.T <= 0:
        raise ConfigError(f"T must be positive and finite, got {cfg.T}")
    if cfg.tau <= 0 or not np.isfinite(cfg.tau):
        raise ConfigError(f"tau must be positive, got {cfg.tau}")
    if cfg.newton_tol <= 0:
        raise ConfigError(f"newton_tol must be positive, got {cfg.newton_tol}")
    if cfg.newton_max < 1:
        raise ConfigError(f"newton_max must be at least 1, got {cfg.newton_max}")
    if any(t < 0 or t > cfg.T for t in cfg.snapshots):
        raise ConfigError("snapshot times must lie in [0, T]")
    mesh_err = _check_mesh_source(cfg.mesh)
    if mesh_err:
        raise ConfigError(mesh_err)


def _check_mesh_source(src: str):
    if src.isdigit():
        if int(src) < 1:
            return f"structured mesh size must be >= 1, got {src}"
        return None
    if src == "circle":
        return None
    if not Path(src).exists():
        return f"mesh file {src!r} not found"
    return None


def render_config(cfg: RunConfig) -> str:
    """Inverse of parse_config for valid configs."""
    lines = []
    for f in fields(RunConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(repr(x) if isinstance(x, float) else str(x) for x in v)
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{f.name}={v}")
    return "\n".join(lines) + "\n"


def load_mesh_source(src: str):
    if src.isdigit():
        return meshmod.generate_structured_square(int(src))
    if src == "circle":
        return meshmod.circle_mesh()
    return meshmod.load_mesh_file(src)


def export_field(state, space: str, mesh, k: int, path, field: int = 0):
    """CSV point cloud `x,y,value` sampling each element at its lattice
    nodes: P^{k+1} nodes for scalar spaces, P^k nodes for flux components
    (which get two files, suffixed _x/_y). Row order is element index,
    then node index."""
    path = Path(path)
    if space == "V":
        nodes = projections.element_nodes(mesh, k)
        ref = felib.build_reference(k)
        nk = ref.num_nodes
        c = state.alpha[field].reshape(mesh.num_elements, 2 * nk)
        for ci, suffix in ((0, "_x"), (1, "_y")):
            target = path.with_name(path.stem + suffix + path.suffix)
            _write_cloud(target, nodes, c[:, ci * nk : (ci + 1) * nk])
        return
    if space == "W":
        deg, coeffs = k, state.beta[field]
    elif space == "Z":
        deg, coeffs = k + 1, state.gamma[field]
    else:
        raise ValueError(f"unknown space {space!r}")
    ref = felib.build_reference(deg)
    # scalar fields are sampled on the P^{k+1} lattice; for W evaluate
    # the degree-k polynomial there
    refz = felib.build_reference(k + 1)
    nodes = projections.element_nodes(mesh, k + 1)
    vals = np.einsum(
        "en,qn->eq", coeffs.reshape(mesh.num_elements, ref.num_nodes), ref.eval(refz.nodes)
    )
    _write_cloud(path, nodes, vals)


def _write_cloud(path, nodes, vals):
    with open(path, "w", encoding="ascii") as fh:
        fh.write("x,y,value\n")
        for e in range(nodes.shape[0]):
            for i in range(nodes.shape[1]):
                fh.write(
                    f"{float(nodes[e, i, 0])!r},{float(nodes[e, i, 1])!r},"
                    f"{float(vals[e, i])!r}\n"
                )


def _solver_config(cfg: RunConfig, dt=None) -> solver.SolverConfig:
    return solver.SolverConfig(
        dt=dt if dt is not None else cfg.dt,
        t_final=cfg.T,
        scheme=_SCHEMES[cfg.scheme],
        newton_tol=cfg.newton_tol,
        newton_max=cfg.newton_max,
    )


def _cmd_run(cfg: RunConfig, out=print) -> int:
    problem = problems.by_name(cfg.problem)
    mesh = load_mesh_source(cfg.mesh)
    scfg = _solver_config(cfg)
    state, snaps, dsys = solver.run(
        problem, mesh, cfg.k, scfg, tau=cfg.tau, snapshot_times=cfg.snapshots, log=out
    )
    outdir = Path(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    for f in range(problem.nfields):
        tag = f"field{f}" if problem.nfields > 1 else "u"
        export_field(state, "Z", mesh, cfg.k, outdir / f"final_{tag}.csv", field=f)
        for ts, snap in snaps.items():
            export_field(
                state=snap,
                space="Z",
                mesh=mesh,
                k=cfg.k,
                path=outdir / f"snapshot_{tag}_t{ts:g}.csv",
                field=f,
            )
    out(f"final time {state.t:.6g}; outputs in {outdir}")
    return 0


def _cmd_converge(cfg: RunConfig, csv_path=None, out=print) -> int:
    problem = problems.by_name(cfg.problem)
    levels = cfg.levels or (2, 4, 8, 16)
    table = analysis.run_convergence(
        problem,
        cfg.k,
        levels,
        _SCHEMES[cfg.scheme],
        cfg.dt_rule,
        t_final=cfg.T,
        tau=cfg.tau,
        dt=cfg.dt if cfg.dt > 0 else None,
    )
    out(table.format_text())
    if csv_path:
        Path(csv_path).write_text(table.to_csv(), encoding="ascii")
    return 0


def _cmd_mesh_info(src: str, out=print) -> int:
    mesh = load_mesh_source(src)
    for key, val in meshmod.mesh_metrics(mesh).items():
        out(f"{key} = {val}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="ihdg",
        description="Interpolatory HDG solver for reaction-diffusion problems",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="single simulation with snapshot export")
    p_run.add_argument("config", help="path to a key=value config file")
    p_conv = sub.add_parser("converge", help="convergence study on structured meshes")
    p_conv.add_argument("config", help="path to a key=value config file")
    p_conv.add_argument("--csv", help="also write the table as CSV", default=None)
    p_info = sub.add_parser("mesh-info", help="print mesh metrics")
    p_info.add_argument("mesh", help="structured size n, 'circle', or a file path")
    args = parser.parse_args(argv)

    try:
        if args.command == "mesh-info":
            return _cmd_mesh_info(args.mesh)
        try:
            text = Path(args.config).read_text(encoding="ascii")
        except OSError as exc:
            print(f"error: cannot read config: {exc}", file=sys.stderr)
            return 4
        cfg = parse_config(text)
        if args.command == "run":
            return _cmd_run(cfg)
        return _cmd_converge(cfg, csv_path=args.csv)
    except (ConfigError, meshmod.MeshError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except solver.NewtonError as exc:
        print(f"error: solver did not converge: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
