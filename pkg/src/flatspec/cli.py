"""Command line entry point: ``flatspec <subcommand> ...``.

Every run writes CSV tables whose first line is a ``#`` comment with the
tool version and a hash of the inputs (no timestamps, so reruns are
byte-identical), plus a JSON summary sidecar.

Exit codes: 0 success, 2 validation failure, 3 solver non-convergence, 4 I/O.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__

log = logging.getLogger("flatspec")

EXIT_OK, EXIT_VALIDATION, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4

PRESETS = {
    "torus": {"torus": {"u": [1.0, 0.0], "v": [0.0, 1.0]}},
    "equilateral": {"double_triangle": {"angles_over_pi": ["1/3", "1/3", "1/3"], "scale": 1.0}},
    "irrational": {"double_triangle": {"angles_over_pi": [1 / math.sqrt(5), 1 / math.sqrt(7),
                                                          1 - 1 / math.sqrt(5) - 1 / math.sqrt(7)],
                                       "scale": 1.0}},
}


class ValidationFailure(Exception):
    pass


@dataclass
class ExperimentConfig:
    command: str
    params: dict[str, Any]
    out_dir: Path
    seed: int | None = None
    threads: int | None = None
    json_summary: Path | None = None
    surface_hash: str | None = None
    artifacts: list[str] = field(default_factory=list)

    def manifest_hash(self) -> str:
        payload = json.dumps({"command": self.command, "params": self.params, "seed": self.seed,
                              "surface": self.surface_hash}, sort_keys=True, default=str)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


# -- helpers -----------------------------------------------------------------------

def _load_surface(arg: str, cfg: ExperimentConfig):
    from .surface import SurfaceError, build_from_spec
    spec: Any = PRESETS.get(arg, arg)
    try:
        surf = build_from_spec(spec)
    except (OSError, json.JSONDecodeError) as exc:
        if isinstance(exc, json.JSONDecodeError):
            raise ValidationFailure(f"surface spec {arg}: line {exc.lineno} col {exc.colno}: {exc.msg}")
        raise
    except (SurfaceError, KeyError, TypeError) as exc:
        raise ValidationFailure(f"surface spec {arg}: {exc}")
    cfg.surface_hash = surf.content_hash()
    return surf


def _out_path(cfg: ExperimentConfig, name: str | None, default: str) -> Path:
    p = Path(name or default)
    if not p.is_absolute():
        p = cfg.out_dir / p
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(cfg: ExperimentConfig, path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# flatspec {__version__} command={cfg.command} input={cfg.manifest_hash()}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])
    cfg.artifacts.append(str(path))


def write_summary(cfg: ExperimentConfig, summary: dict, path: Path | None = None) -> Path:
    path = path or cfg.json_summary or (cfg.out_dir / f"{cfg.command}.summary.json")
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"flatspec_version": __version__, "command": cfg.command, "input_hash": cfg.manifest_hash(),
           "params": cfg.params, "seed": cfg.seed, "surface_hash": cfg.surface_hash,
           "artifacts": cfg.artifacts, "summary": summary}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, complex):
        return [o.real, o.imag]
    return str(o)


def _parse_bins(s: str) -> tuple[int, int, int]:
    parts = s.lower().split("x")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("bins must look like 8x8x64")
    vals = tuple(int(p) for p in parts)
    if min(vals) < 1:
        raise argparse.ArgumentTypeError("bin counts must be positive")
    return vals  # type: ignore[return-value]


_FUNCS = {"sqrt": math.sqrt}
_CONSTS = {"pi": math.pi, "e": math.e}


def _eval_angle(text: str) -> float:
    """Evaluate a numeric expression such as ``(sqrt(5)-1)/2`` or ``1/3``."""
    import ast
    import operator as op
    ops = {ast.Add: op.add, ast.Sub: op.sub, ast.Mult: op.mul, ast.Div: op.truediv, ast.Pow: op.pow,
           ast.USub: op.neg, ast.UAdd: op.pos}

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id in _CONSTS:
            return _CONSTS[node.id]
        if isinstance(node, ast.BinOp) and type(node.op) in ops:
            return ops[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in ops:
            return ops[type(node.op)](ev(node.operand))
        if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS
                and len(node.args) == 1 and not node.keywords):
            return _FUNCS[node.func.id](ev(node.args[0]))
        raise ValueError(f"unsupported expression {text!r}")

    return ev(ast.parse(text.strip(), mode="eval"))


def _parse_floatlist(s: str) -> list[float]:
    try:
        return [_eval_angle(x) for x in s.split(",") if x.strip()]
    except (ValueError, SyntaxError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(str(exc))


def _int_like(s: str) -> int:
    v = float(s)
    if v != int(v):
        raise argparse.ArgumentTypeError(f"{s} is not an integer")
    return int(v)


def _need_seed(cfg: ExperimentConfig):
    if cfg.seed is None:
        raise ValidationFailure(f"{cfg.command} is stochastic: --seed is required")


# -- subcommands ---------------------------------------------------------------------

def cmd_surface(args, cfg: ExperimentConfig) -> dict:
    from .surface import cone_data, holonomy_generators
    surf = _load_surface(args.surface, cfg)
    cones = cone_data(surf)
    hol = holonomy_generators(surf)
    rows = [(c.vertex_class, c.total_angle, c.alpha, c.is_singular) for c in cones]
    write_csv(cfg, _out_path(cfg, args.out, "cones.csv"), ["vertex", "total_angle", "alpha", "singular"], rows)
    return {"genus": surf.genus, "triangles": surf.num_triangles, "vertices": surf.num_vertices,
            "area": surf.area, "sum_alpha": sum(c.alpha for c in cones),
            "holonomy": [{"kind": k, "angle": a, "loop": [list(e) for e in g]}
                         for g, a, k in zip(hol.generators, hol.angles, hol.kinds)]}


def _default_state(surf):
    from .geodesic import UnitTangentState
    c = surf.triangles[0].mean(axis=0)
    return UnitTangentState(0, float(c[0]), float(c[1]), 0.3)


def cmd_ergodicity(args, cfg: ExperimentConfig) -> dict:
    from .geodesic import leaf_walk, return_angle_discrepancy
    _need_seed(cfg)
    surf = _load_surface(args.surface, cfg)
    if args.steps < 1:
        raise ValidationFailure("--steps must be >= 1")
    state = _default_state(surf)
    rec = leaf_walk(surf, state, args.steps, seed=cfg.seed, bins=args.bins, mean_length=args.mean_length)
    dens = rec.density()
    rows = []
    for idx in zip(*np.nonzero(rec.cell_area[..., None] * np.ones(rec.bins[2]) > 0)):
        rows.append((*idx, rec.counts[idx], dens[idx]))
    write_csv(cfg, _out_path(cfg, args.out, "hist.csv"), ["tri", "ix", "iy", "itheta", "count", "density"], rows)
    summary = {"steps": rec.steps, "rejected": rec.rejected, "theta_discrepancy": rec.theta_discrepancy()}
    if args.returns:
        rep = return_angle_discrepancy(surf, state, args.radius, args.returns, seed=cfg.seed)
        summary.update({"returns": rep.num_returns, "return_discrepancy": rep.discrepancy,
                        "complete": rep.complete, "notes": rep.notes})
    return summary


def cmd_diophantine(args, cfg: ExperimentConfig) -> dict:
    from .diophantine import diophantine_report, liminf_estimate, verify_condition
    if args.N < 2:
        raise ValidationFailure("--N must be >= 2")
    if args.gamma <= 0:
        raise ValidationFailure("--gamma must be positive")
    angles = args.angles
    rep = diophantine_report(angles, args.N)
    env = rep.envelope(args.gamma)
    rec = np.zeros(args.N, dtype=bool)
    rec[rep.records - 1] = True
    write_csv(cfg, _out_path(cfg, args.out, "dioph.csv"), ["n", "q_n", "n^gamma*q_n", "record"],
              ((n + 1, rep.q[n], env[n], rec[n]) for n in range(args.N)))
    vc = verify_condition(angles, args.gamma, args.N)
    lim, arg = liminf_estimate(angles, args.N, args.gamma)
    return {"holds_on_scan": vc.holds_on_scan, "C_effective": vc.C_effective, "argmin": vc.argmin,
            "liminf_estimate": lim, "liminf_argmin": arg, "gamma_hat": rep.gamma_hat, "C_hat": rep.C_hat,
            "scan": [1, args.N], "notes": rep.notes}


def cmd_spectrum(args, cfg: ExperimentConfig) -> dict:
    from .spectral import cheeger_report, lambda_profile
    from .diophantine import simultaneous_distance
    from .surface import holonomy_generators
    surf = _load_surface(args.surface, cfg)
    if args.nmax < 0 or args.refine < 1 or args.m0 < 1:
        raise ValidationFailure("--nmax >= 0, --refine >= 1 and --m0 >= 1 required")
    refs = [args.m0 * 2 ** i for i in range(args.refine)]
    prof = lambda_profile(surf, range(-args.nmax, args.nmax + 1), refs, k=args.k, tol=args.tol)
    angles = list(holonomy_generators(surf).angles)
    rows = []
    for n in prof.modes:
        q = simultaneous_distance(angles, abs(n)) if angles and n else 0.0
        for i, m in enumerate(refs):
            spec = list(prof.spectra[n][i]) + [math.nan] * (args.k + 1 - len(prof.spectra[n][i]))
            lam = prof.levels[n][i]
            ratio = lam / q ** 2 if q > 1e-12 else math.inf
            rows.append((n, i, prof.unknowns[n][i], *spec[:args.k + (1 if n == 0 else 0)][-args.k:], q, ratio))
    header = ["n", "level", "unknowns"] + [f"lambda_{j + 1}" for j in range(args.k)] + ["q_n", "ratio"]
    write_csv(cfg, _out_path(cfg, args.out, "lambda.csv"), header, rows)
    summary = {"refinements": refs, "h": prof.h, "values": {str(n): v for n, v in prof.values.items()},
               "unstable": [n for n, u in prof.unstable.items() if u], "failures": prof.failures}
    if angles and any(n for n in prof.modes):
        ch = cheeger_report(prof, angles, modes=[n for n in prof.modes if n > 0])
        summary.update({"c_eff": ch.c_eff, "c_eff_argmin": ch.argmin, "flags": ch.flags})
    if prof.failures:
        raise _SolverFailure(summary, "; ".join(prof.failures.values()))
    return summary


class _SolverFailure(Exception):
    def __init__(self, summary: dict, message: str):
        super().__init__(message)
        self.summary = summary


def _load_rhs(args, surf):
    from .harmonic import load_field
    try:
        return load_field(args.rhs, surf)
    except ValueError as exc:
        raise ValidationFailure(f"right-hand side {args.rhs}: {exc}")


def cmd_solve_h(args, cfg: ExperimentConfig) -> dict:
    from .harmonic import save_field
    from .spectral import solve_H
    surf = _load_surface(args.surface, cfg)
    f = _load_rhs(args, surf)
    res = solve_H(f, K=args.K, tol=args.tol)
    manifest = save_field(res.u, _out_path(cfg, args.out, "u_h"), surf.description)
    cfg.artifacts.append(str(manifest))
    summary = {"residual": res.residual, "per_mode": {str(k): v for k, v in res.per_mode.items()},
               "notes": res.notes}
    if args.report:
        write_summary(cfg, summary, _out_path(cfg, args.report, "residual.json"))
    return summary


def cmd_solve_x(args, cfg: ExperimentConfig) -> dict:
    from .cohomology import solve_X
    from .harmonic import save_field
    surf = _load_surface(args.surface, cfg)
    f = _load_rhs(args, surf)
    res = solve_X(f, closure=args.closure, tol=args.tol, N=args.nmax, raise_on_residual=False)
    manifest = save_field(res.u, _out_path(cfg, args.out, "u_x"), surf.description)
    cfg.artifacts.append(str(manifest))
    summary = {"residual": res.residual, "closure": args.closure, "N": args.nmax,
               "unknowns": res.system.shape[1], "notes": res.notes}
    if args.report:
        write_summary(cfg, summary, _out_path(cfg, args.report, "residual.json"))
    if res.residual > args.tol:
        raise _SolverFailure(summary, res.notes[-1])
    return summary


def cmd_apriori(args, cfg: ExperimentConfig) -> dict:
    from .cohomology import apriori_report
    _need_seed(cfg)
    surf = _load_surface(args.surface, cfg)
    rep = apriori_report(surf, args.samples, (args.r, args.s), (args.r2, args.s2), seed=cfg.seed, m=args.m,
                         contents=tuple(args.contents))
    write_csv(cfg, _out_path(cfg, args.out, "apriori.csv"), ["sample", "ratio"], enumerate(rep.ratios))
    return {"max_ratio": rep.max_ratio, "by_content": {str(k): v for k, v in rep.by_content.items()},
            "gamma": rep.gamma, "gap_condition": rep.gap_condition, "growth_flag": rep.growth_flag,
            "notes": rep.notes}


def cmd_distributions(args, cfg: ExperimentConfig) -> dict:
    from .differentials import DifferentialSpaceQuery, dimension, find_nonzero_modes
    alphas = [a.strip() for a in args.alphas.split(",") if a.strip()] if args.alphas else []
    try:
        scan = find_nonzero_modes(args.genus, alphas, args.r, args.nmax, args.sign)
    except ValueError as exc:
        raise ValidationFailure(str(exc))
    rows = []
    for n in range(-args.nmax, args.nmax + 1):
        d = dimension(DifferentialSpaceQuery(args.genus, alphas, n, args.r, args.sign))
        rows.append((n, d.value, d.kind, " ".join(map(str, d.orders.orders)), int(any(d.orders.boundary))))
    write_csv(cfg, _out_path(cfg, args.out, "dims.csv"), ["n", "dim", "kind", "k_min", "boundary"], rows)
    return {"nonzero_modes": scan.modes, "density": scan.density, "kind": scan.kind,
            "boundary_modes": scan.boundary_modes}


# -- parser -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="flatspec", description="Flat cone surfaces: dynamics and spectra.")
    p.add_argument("--version", action="version", version=f"flatspec {__version__}")
    p.add_argument("--out-dir", type=Path, default=Path("."), help="directory for relative output paths")
    p.add_argument("--seed", type=int, default=None, help="random seed (required for stochastic commands)")
    p.add_argument("--threads", type=int, default=None, help="BLAS thread cap for this process")
    p.add_argument("--json-summary", type=Path, default=None, help="path of the JSON summary sidecar")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add_surface(sp_):
        sp_.add_argument("--surface", required=True,
                         help="surface JSON file, inline JSON, or a preset: " + ", ".join(PRESETS))

    s = sub.add_parser("surface", help="validate a surface and report cone points and holonomy")
    add_surface(s)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_surface)

    s = sub.add_parser("ergodicity", help="leaf-walk histogram and return-angle discrepancy")
    add_surface(s)
    s.add_argument("--steps", type=_int_like, default=100_000)
    s.add_argument("--bins", type=_parse_bins, default=(8, 8, 64))
    s.add_argument("--mean-length", type=float, default=1.0)
    s.add_argument("--returns", type=_int_like, default=0, help="also measure this many disk returns")
    s.add_argument("--radius", type=float, default=0.05)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_ergodicity)

    s = sub.add_parser("diophantine", help="scan the simultaneous Diophantine condition")
    s.add_argument("--angles", type=_parse_floatlist, required=True, help="comma separated fractions of a turn; expressions like (sqrt(5)-1)/2 allowed")
    s.add_argument("--gamma", type=float, default=1.0)
    s.add_argument("--N", type=_int_like, default=100_000)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_diophantine)

    s = sub.add_parser("spectrum", help="least eigenvalues of H per mode over refinements")
    add_surface(s)
    s.add_argument("--nmax", type=int, default=8)
    s.add_argument("--refine", type=int, default=2, help="number of refinement levels")
    s.add_argument("--m0", type=int, default=8, help="subdivisions per triangle edge at level 0")
    s.add_argument("--k", type=int, default=1, help="eigenvalues reported per mode")
    s.add_argument("--tol", type=float, default=1e-9)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_spectrum)

    s = sub.add_parser("solve-h", help="solve Hu = f for a stored field")
    add_surface(s)
    s.add_argument("--rhs", required=True, help="field manifest.json")
    s.add_argument("--K", type=int, default=8)
    s.add_argument("--tol", type=float, default=1e-10)
    s.add_argument("--out", default=None)
    s.add_argument("--report", default=None)
    s.set_defaults(func=cmd_solve_h)

    s = sub.add_parser("solve-x", help="solve Xu = f for a stored field")
    add_surface(s)
    s.add_argument("--rhs", required=True, help="field manifest.json")
    s.add_argument("--nmax", type=int, required=True)
    s.add_argument("--closure", choices=("closed", "square", "open"), default="closed")
    s.add_argument("--tol", type=float, default=1e-8)
    s.add_argument("--out", default=None)
    s.add_argument("--report", default=None)
    s.set_defaults(func=cmd_solve_x)

    s = sub.add_parser("apriori", help="ratios |v|_{r',s'} / |Xv|_{r,s} over random smooth v")
    add_surface(s)
    s.add_argument("--samples", type=int, default=12)
    s.add_argument("--r", type=int, default=2)
    s.add_argument("--s", type=float, default=4)
    s.add_argument("--r2", type=int, default=0)
    s.add_argument("--s2", type=float, default=0)
    s.add_argument("--m", type=int, default=6)
    s.add_argument("--contents", type=lambda x: [int(v) for v in x.split(",")], default=[1, 2, 4])
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_apriori)

    s = sub.add_parser("distributions", help="dimensions of the meromorphic obstruction spaces")
    s.add_argument("--genus", type=int, required=True)
    s.add_argument("--alphas", default="", help="comma separated cone parameters, p/q allowed")
    s.add_argument("--r", type=int, default=0)
    s.add_argument("--nmax", type=int, default=50)
    s.add_argument("--sign", choices=("+", "-"), default="+")
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_distributions)
    return p


def _limit_threads(n: int | None):
    # BLAS pools read these at load time; they take full effect for child
    # processes and for backends that are loaded lazily
    if not n:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    _limit_threads(args.threads)
    params = {k: v for k, v in vars(args).items()
              if k not in ("func", "out_dir", "json_summary", "verbose", "seed", "threads")}
    cfg = ExperimentConfig(args.command, params, args.out_dir, args.seed, args.threads, args.json_summary)
    from .cohomology import SolveXError
    from .spectral import EigenSolverError, SolvabilityError
    from .surface import SurfaceError
    try:
        cfg.out_dir.mkdir(parents=True, exist_ok=True)
        summary = args.func(args, cfg)
    except ValidationFailure as exc:
        print(f"flatspec: validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (SurfaceError, SolvabilityError, ValueError) as exc:
        print(f"flatspec: validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except _SolverFailure as exc:
        try:
            write_summary(cfg, {**exc.summary, "error": str(exc)})
        except OSError:
            pass
        print(f"flatspec: solver did not converge: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (EigenSolverError, SolveXError) as exc:
        print(f"flatspec: solver did not converge: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"flatspec: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        path = write_summary(cfg, summary)
    except OSError as exc:
        print(f"flatspec: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(json.dumps({"command": cfg.command, "summary": str(path), "artifacts": cfg.artifacts}))
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
