"""Command-line front end: ``gcb-lab {list,verify,simulate,bounds,estimate}``.

Exit codes: 0 PASS/ok, 1 FAIL, 2 INCONCLUSIVE, 3 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__, bounds, kernels
from .config import ConfigError, load_config, load_params
from .engine import BlowUpError, TimeGrid, simulate_ensemble, simulate_nonmarkov
from .ensemble_io import EnsembleFormatError, read_ensemble, write_binary, write_csv
from .estimators import (EstimatorError, chernoff_check, empirical_gcb_constant,
                         empirical_log_mgf, exp_square_moment, odd_moment_check,
                         symmetrized_differences, tail_probability)
from .experiments import (EXIT_CODES, ExperimentError, _clean, emit_report, list_experiments,
                          run_experiment, write_report)
from .laws import LawError, build_law
from .observables import coordinate, default_family
from .processes import ModelError, build_model, descente_h

EXIT_OK, EXIT_FAIL, EXIT_INCONCLUSIVE, EXIT_USAGE = 0, 1, 2, 3
log = logging.getLogger("gcb_lab")


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; here that code means INCONCLUSIVE."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="config file or shipped experiment id")
    p.add_argument("--seed", type=int, help="override run.seed")
    p.add_argument("--paths", type=int, help="override run.n_paths")
    p.add_argument("--dt", type=float, help="override grid.dt")
    p.add_argument("--workers", type=int, help="override run.workers")


def _load(args):
    cfg = load_config(args.config)
    return cfg.with_overrides(seed=args.seed, n_paths=args.paths, dt=args.dt,
                              workers=args.workers)


# -- list ------------------------------------------------------------------------


def cmd_list(args) -> int:
    rows = list_experiments()
    if args.format == "json":
        print(json.dumps(rows, indent=2))
        return EXIT_OK
    cols = ("id", "theorem", "topic", "runtime")
    width = {c: max(len(c), *(len(str(r[c])) for r in rows)) for c in cols}
    print("  ".join(c.ljust(width[c]) for c in cols))
    for r in rows:
        print("  ".join(str(r[c]).ljust(width[c]) for c in cols))
    return EXIT_OK


# -- verify ----------------------------------------------------------------------


def cmd_verify(args) -> int:
    cfg = _load(args)
    formats = tuple(args.format) if args.format else cfg.formats
    report = run_experiment(cfg, out_dir=None)
    out = args.out if args.out is not None else cfg.output_dir
    if out is not None:
        for p in write_report(report, out, formats):
            log.info("wrote %s", p)
    elif args.format:
        for fmt in formats:
            sys.stdout.write(emit_report(report, fmt))
    for r in report.rows:
        d = "n/a" if r["D_theory"] is None else f"{r['D_theory']:.6g}"
        dh = "n/a" if r["D_hat"] is None else f"{r['D_hat']:.6g} +- {r['se']:.2g}"
        print(f"t={r['t']:<8g} D_theory={d:<14} D_hat={dh:<24} {r['verdict']}",
              file=sys.stderr)
    print(f"{cfg.id}: {report.verdict}", file=sys.stderr)
    return EXIT_CODES[report.verdict]


# -- simulate --------------------------------------------------------------------


def _ensemble_path(out: Path, t: float, many: bool, fmt: str) -> Path:
    suffix = ".csv" if fmt == "csv" else ".bin"
    base = out if out.suffix else out.with_suffix(suffix)
    if not many:
        return base
    return base.with_name(f"{base.stem}_t{t:g}{base.suffix}")


def cmd_simulate(args) -> int:
    cfg = _load(args)
    spec = build_model(cfg.model_id, cfg.model_params)
    law = build_law(cfg.init, spec.dim)
    grid = TimeGrid(cfg.t0, cfg.t1, cfg.dt)
    if spec.name == "nonmarkov":
        ens = simulate_nonmarkov(spec, law, grid, cfg.n_paths, cfg.seed, cfg.checkpoints).ensembles
    else:
        ens = simulate_ensemble(spec, law, grid, cfg.n_paths, cfg.seed, cfg.checkpoints,
                                workers=cfg.workers)
    fmt = args.format or ("csv" if str(args.out).endswith(".csv") else "bin")
    out = Path(args.out)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True)
    for e in ens:
        p = _ensemble_path(out, e.time, len(ens) > 1, fmt)
        (write_csv if fmt == "csv" else write_binary)(e, p)
        print(f"t={e.time:g}: {e.n_paths} paths ({e.blown} blown) -> {p}", file=sys.stderr)
    return EXIT_OK


# -- bounds ----------------------------------------------------------------------


def _parse_grid(text: str) -> np.ndarray:
    parts = text.split(":")
    if len(parts) != 3:
        raise UsageError(f"--t-grid must look like a:b:n, got {text!r}")
    try:
        a, b, n = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise UsageError(f"--t-grid must look like a:b:n, got {text!r}") from None
    if n < 1 or b < a or a < 0:
        raise UsageError("--t-grid needs 0 <= a <= b and n >= 1")
    return np.linspace(a, b, n)


def _parse_params(items: Optional[Sequence[str]]) -> dict:
    """``--params`` is a TOML/JSON file or inline ``key=value`` pairs."""
    out = {}
    for item in items or ():
        if "=" not in item and Path(item).is_file():
            out.update(load_params(item))
            continue
        for pair in item.split(","):
            if "=" not in pair:
                raise UsageError(f"cannot read parameter {pair!r}; use key=value or a file")
            k, v = pair.split("=", 1)
            try:
                out[k.strip()] = float(v)
            except ValueError:
                raise UsageError(f"parameter {k.strip()} must be numeric") from None
    return out


def _take(p: dict, name: str, default=None):
    if name in p:
        return float(p.pop(name))
    if default is None:
        raise UsageError(f"theorem needs parameter {name!r}")
    return default


def curve_from_params(theorem: str, params: dict) -> bounds.BoundCurve:
    p = dict(params)
    if theorem == "ou":
        c = bounds.ou_gcb_curve(_take(p, "d0"), _take(p, "kappa"), _take(p, "sigma"))
    elif theorem == "brownian":
        c = bounds.brownian_curve(_take(p, "d0"), _take(p, "c2sq"))
    elif theorem == "gradient":
        c = bounds.gradient_bound_curve(_take(p, "d0"), _take(p, "c1"), _take(p, "c2"),
                                        _take(p, "rho"))
    elif theorem == "coupling":
        kappa = _take(p, "kappa")
        c = bounds.coupling_curve(_take(p, "d0"), _take(p, "c2sq"),
                                  lambda t: math.exp(-kappa * t), label=f"exp(-{kappa:g} t)")
    elif theorem == "convex":
        c = bounds.convex_drift_curve(_take(p, "d0"), _take(p, "kappa"), _take(p, "a_norm"))
    elif theorem == "descente":
        sched = bounds.descente_schedule(descente_h, _take(p, "alpha_exp", 0.25),
                                         _take(p, "y_star", 2.0), _take(p, "C", 1.0))
        c = bounds.descente_curve(sched)
    elif theorem == "faible_descente":
        c = bounds.faible_curve(_take(p, "alpha"), _take(p, "beta"), _take(p, "theta"),
                                int(_take(p, "dim")), _take(p, "d0"), _take(p, "mu_d"))
    elif theorem == "nonmarkov":
        c = bounds.nonmarkov_curve(_take(p, "M"), _take(p, "kappa"), _take(p, "a0_init"),
                                   _take(p, "init_mean", 0.0), _take(p, "init_var"),
                                   _take(p, "fraction", 0.5))
    else:
        raise UsageError(f"unknown theorem {theorem!r}")
    if p:
        raise UsageError(f"unknown parameters for {theorem}: {sorted(p)}")
    return c


def cmd_bounds(args) -> int:
    if args.config:
        from .experiments import build_curve

        cfg = _load(args)
        spec = build_model(cfg.model_id, cfg.model_params)
        curve = build_curve(cfg, spec, build_law(cfg.init, spec.dim))
    elif args.theorem:
        curve = curve_from_params(args.theorem, _parse_params(args.params))
    else:
        raise UsageError("bounds needs --theorem or --config")
    ts = _parse_grid(args.t_grid)
    rows = []
    for t in ts:
        try:
            rows.append((float(t), curve(float(t)), curve.log_value(float(t))))
        except (bounds.BoundError, ValueError):
            rows.append((float(t), None, None))
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        fh = open(out, "w", newline="")
    else:
        fh = sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "D", "log_D"])
        for t, d, ld in rows:
            w.writerow([repr(t), "" if d is None else repr(d), "" if ld is None else repr(ld)])
    finally:
        if fh is not sys.stdout:
            fh.close()
    if args.out:
        side = out.with_suffix(".json")
        side.write_text(json.dumps(_clean({"version": __version__, **curve.provenance(),
                                           "t_grid": args.t_grid}), indent=2, sort_keys=True)
                        + "\n")
    return EXIT_OK


# -- estimate --------------------------------------------------------------------


def _vec(text: Optional[str], dim: int) -> np.ndarray:
    if text is None:
        return np.zeros(dim)
    vals = [float(v) for v in text.split(",")]
    if len(vals) == 1:
        vals = vals * dim
    if len(vals) != dim:
        raise UsageError(f"expected {dim} coordinates, got {len(vals)}")
    return np.asarray(vals)


def cmd_estimate(args) -> int:
    ens = read_ensemble(args.ensemble)
    x = ens.states
    x0 = _vec(args.x0, ens.dim)
    name = args.estimator
    out: dict = {"estimator": name, "ensemble": str(args.ensemble), "n_paths": ens.n_paths,
                 "time": ens.time}
    if name == "gcb":
        e = empirical_gcb_constant(x, default_family(ens.dim, seed=args.seed or 0))
        out.update(e.to_dict(), argmax=e.info["argmax"])
    elif name == "log_mgf":
        e = empirical_log_mgf(x, coordinate(args.coord, ens.dim, 1.0, args.scale))
        out.update(e.to_dict())
    elif name == "exp_square":
        if args.a is None:
            raise UsageError("exp_square needs --a")
        e = exp_square_moment(x, args.a, x0)
        out.update(e.to_dict(), **e.info)
    elif name == "tail":
        e = tail_probability(x, x0, args.r)
        out.update(e.to_dict(), **e.info)
    elif name == "chernoff":
        if args.D is None:
            raise UsageError("chernoff needs --D")
        out.update(chernoff_check(x, x0, args.D).to_dict())
    elif name == "odd_moments":
        out.update(odd_moment_check(symmetrized_differences(x[:, args.coord])).to_dict())
    text = json.dumps(_clean(out), indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    passed = out.get("passed", out.get("valid", True))
    return EXIT_OK if passed else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    ap = Parser(prog="gcb-lab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=Parser)

    p = sub.add_parser("list", help="shipped experiments")
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.set_defaults(func=cmd_list)

    p = sub.add_parser("verify", help="run an experiment and compare D_hat with D_t")
    _run_flags(p)
    p.add_argument("--out", help="directory for the report files")
    p.add_argument("--format", action="append", choices=("json", "csv", "md"),
                   help="report format (repeatable)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("simulate", help="simulate an ensemble and write it to disk")
    _run_flags(p)
    p.add_argument("--out", required=True, help="output file (one per checkpoint if several)")
    p.add_argument("--format", choices=("csv", "bin"))
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bounds", help="tabulate a theoretical D_t curve")
    p.add_argument("--theorem", choices=("ou", "brownian", "gradient", "coupling", "convex",
                                         "descente", "faible_descente", "nonmarkov"))
    p.add_argument("--params", action="append", help="parameter file or key=value[,key=value]")
    p.add_argument("--config", help="derive the curve from an experiment config instead")
    p.add_argument("--seed", type=int)
    p.add_argument("--paths", type=int)
    p.add_argument("--dt", type=float)
    p.add_argument("--workers", type=int)
    p.add_argument("--t-grid", default="0:10:101", help="a:b:n (default 0:10:101)")
    p.add_argument("--out", help="CSV path; a JSON sidecar with provenance is written beside it")
    p.add_argument("--format", choices=("csv",), default="csv")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("estimate", help="run one estimator on a stored ensemble")
    p.add_argument("--ensemble", required=True)
    p.add_argument("--estimator", required=True,
                   choices=("gcb", "log_mgf", "exp_square", "tail", "chernoff", "odd_moments"))
    p.add_argument("--a", type=float, help="exponent for exp_square")
    p.add_argument("--r", type=float, default=1.0, help="deviation for tail")
    p.add_argument("--D", type=float, help="GCB constant for chernoff")
    p.add_argument("--x0", help="reference point, comma separated")
    p.add_argument("--coord", type=int, default=0, help="coordinate index for log_mgf")
    p.add_argument("--scale", type=float, default=1.0, help="scale for log_mgf")
    p.add_argument("--seed", type=int, help="seed of the random test directions")
    p.add_argument("--out")
    p.add_argument("--format", choices=("json",), default="json")
    p.set_defaults(func=cmd_estimate)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    log.debug("backend %s", kernels.BACKEND)
    try:
        return args.func(args)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {exc.source}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, ExperimentError, ModelError, LawError, EnsembleFormatError,
            EstimatorError, bounds.BoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BlowUpError as exc:
        print(f"blow-up: {exc}", file=sys.stderr)
        return EXIT_INCONCLUSIVE


if __name__ == "__main__":
    sys.exit(main())
