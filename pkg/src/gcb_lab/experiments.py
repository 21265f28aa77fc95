"""Verification pipeline: simulate, estimate D_t, compare with the theoretical curve.

A checkpoint FAILs when ``D_hat - 3 SE > D_theory``; it is INCONCLUSIVE when
the theoretical constant is undefined there, an estimator flags itself
invalid, or paths blew up.  The report is a plain dict tree so that the
JSON, CSV and Markdown renderings are deterministic.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__, bounds, kernels
from .bounds import BoundCurve, BoundError
from .config import ConfigError, ExperimentConfig, load_config, shipped_ids
from .engine import (BlowUpError, TimeGrid, simulate_coupled_pair, simulate_ensemble,
                     simulate_nonmarkov)
from .estimators import (burkholder_moment_check, chernoff_check, coupling_rate_estimate,
                         empirical_gcb_constant, exp_square_moment, odd_moment_check,
                         symmetrized_differences)
from .laws import PointMass, ProductGaussian, build_law
from .observables import default_centers, default_family
from .processes import ProcessSpec, build_model

log = logging.getLogger(__name__)

PASS, FAIL, INCONCLUSIVE = "PASS", "FAIL", "INCONCLUSIVE"
EXIT_CODES = {PASS: 0, FAIL: 1, INCONCLUSIVE: 2}
SE_FACTOR = 3.0


class ExperimentError(ValueError):
    pass


@dataclass
class VerificationReport:
    experiment: dict
    bound: dict
    rows: list
    verdict: str
    extras: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)
    diagnostics: list = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        return EXIT_CODES[self.verdict]

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "bound": self.bound,
            "verdict": self.verdict,
            "rows": self.rows,
            "extras": self.extras,
            "diagnostics": self.diagnostics,
            "metadata": self.metadata,
        }


# -- inputs of the theoretical curve -------------------------------------------


def metric_law(spec: ProcessSpec, law):
    """The initial law pushed into the model's metric coordinates, when tractable."""
    w = spec.metric_weights
    if w is None:
        return law
    w = np.asarray(w, dtype=float)
    if isinstance(law, PointMass):
        return PointMass(tuple(np.asarray(law.x0) * np.sqrt(w)))
    if isinstance(law, ProductGaussian):
        return ProductGaussian(tuple(np.asarray(law.mean) * np.sqrt(w)),
                               tuple(np.asarray(law.var) * w))
    raise ExperimentError(f"cannot transport {type(law).__name__} to metric coordinates")


def _need(value, name: str, theorem: str):
    if value is None:
        raise ExperimentError(f"bound.params.{name}: required by theorem {theorem!r} "
                              "and not derivable from the model")
    return float(value)


def build_curve(cfg: ExperimentConfig, spec: ProcessSpec, law) -> BoundCurve:
    """Theoretical D_t for the configured theorem, filling inputs from the model."""
    p = dict(cfg.bound_params)
    c = spec.constants
    th = cfg.theorem
    mlaw = metric_law(spec, law) if th != "nonmarkov" else law

    def d0():
        if "d0" in p:
            return float(p["d0"])
        v = mlaw.gcb_constant()
        if not math.isfinite(v):
            raise ExperimentError("bound.params.d0: initial law has no finite GCB constant")
        return v

    if th == "ou":
        if spec.name != "ou1d" and not {"kappa", "sigma"} <= set(p):
            raise ExperimentError("theorem 'ou' needs model ou1d or explicit kappa and sigma")
        kappa = float(p.get("kappa", spec.params.get("kappa")))
        sigma = float(p.get("sigma", spec.params.get("sigma")))
        return bounds.ou_gcb_curve(d0(), kappa, sigma)
    if th == "brownian":
        return bounds.brownian_curve(d0(), _need(p.get("c2sq", c.a_norm), "c2sq", th))
    if th == "gradient":
        return bounds.gradient_bound_curve(d0(), _need(p.get("c1", c.c1), "c1", th),
                                           _need(p.get("c2", c.c2), "c2", th),
                                           _need(p.get("rho", c.rho), "rho", th))
    if th == "coupling":
        if c.gamma_rate is None:
            raise ExperimentError("theorem 'coupling' needs a model with a known coupling rate")
        return bounds.coupling_curve(d0(), _need(p.get("c2sq", c.a_norm), "c2sq", th),
                                     c.gamma_rate, label=f"{spec.name} flow norm")
    if th == "convex":
        return bounds.convex_drift_curve(d0(), _need(p.get("kappa", c.kappa), "kappa", th),
                                         _need(p.get("a_norm", c.a_norm), "a_norm", th))
    if th == "descente":
        if c.h_fn is None:
            raise ExperimentError("theorem 'descente' needs a model with an h function")
        sched = bounds.descente_schedule(c.h_fn, float(p.get("alpha_exp", 0.25)),
                                         float(p.get("y_star", 2.0)), float(p.get("C", 1.0)))
        return bounds.descente_curve(sched)
    if th == "faible_descente":
        mu = float(p["mu_d"]) if "mu_d" in p else mlaw.mean_distance()
        return bounds.faible_curve(_need(p.get("alpha", c.alpha_confine), "alpha", th),
                                   _need(p.get("beta", c.beta_confine), "beta", th),
                                   _need(p.get("theta", c.theta_noise), "theta", th),
                                   spec.dim, d0(), mu)
    if th == "nonmarkov":
        if not isinstance(law, ProductGaussian):
            raise ExperimentError("theorem 'nonmarkov' needs a Gaussian initial law")
        mean, var = float(law.mean[1]), float(law.var[1])
        a0 = p.get("a0_init")
        if a0 is None:
            if var <= 0:
                raise ExperimentError("bound.params.a0_init: required for a degenerate X_0")
            a0 = 1.0 / (16.0 * var / 2.0)
        return bounds.nonmarkov_curve(_need(p.get("M", c.sigma_bound_M), "M", th),
                                      _need(p.get("kappa", c.kappa), "kappa", th), float(a0),
                                      mean, var, float(p.get("fraction", 0.5)))
    raise ExperimentError(f"unknown theorem {th!r}")


def _exp_square_exponent(cfg: ExperimentConfig, curve: BoundCurve, t: float) -> Optional[float]:
    opts = cfg.estimators.get("exp_square")
    if opts is None:
        return None
    a = opts.get("a", "admissible")
    if a != "admissible":
        return float(a)
    inp = curve.inputs
    if cfg.theorem == "descente":
        return float(inp["alpha_exp"])
    if cfg.theorem == "nonmarkov":
        if t <= 0:
            return None
        frac = float(opts.get("fraction", inp["fraction"]))
        return frac * bounds.nonmarkov_admissible_a(inp["M"], inp["kappa"], inp["a0_init"], t)
    if cfg.theorem == "faible_descente":
        return bounds.faible_descente_constants(inp["alpha"], inp["beta"], inp["theta"],
                                                inp["dim"], inp["d0"], inp["mu_d"], t).a0
    D = curve(t)
    return 1.0 / (16.0 * D) if D > 0 and math.isfinite(D) else None


# -- per-checkpoint evaluation ---------------------------------------------------


def _bound_at(curve: BoundCurve, t: float):
    try:
        lv = curve.log_value(t)
        v = curve(t)
    except (BoundError, ValueError) as exc:
        return None, None, str(exc)
    return v, lv, None


def _verdict(d_theory, d_hat, se, valid: bool) -> str:
    if d_theory is None or not valid:
        return INCONCLUSIVE
    return FAIL if d_hat - SE_FACTOR * se > d_theory else PASS


def _family(cfg: ExperimentConfig, dim: int):
    opts = cfg.estimators.get("family", {})
    return default_family(
        dim,
        seed=int(opts.get("seed", 0)),
        n_random=int(opts.get("n_random", 50)),
        centers=default_centers(dim),
        scales=tuple(opts.get("scales", (0.5, 1.0, 2.0))),
        truncations=tuple(opts.get("truncations", (1.0, 5.0))),
    )


def evaluate_checkpoint(cfg: ExperimentConfig, curve: BoundCurve, states, t: float, family,
                        blown: int = 0, known_invalid: Optional[str] = None) -> dict:
    """D_hat against D_t at one checkpoint, with the validity diagnostics."""
    d_theory, log_d, why = _bound_at(curve, t)
    est = empirical_gcb_constant(states, family)
    valid = est.valid and blown == 0 and known_invalid is None
    diag = {"family_size": est.info["family_size"], "argmax": est.info["argmax"],
            "blown_paths": blown}
    if why:
        diag["bound_undefined"] = why
    if known_invalid:
        diag["invalid"] = known_invalid
    a = _exp_square_exponent(cfg, curve, t)
    if a is not None:
        m = exp_square_moment(states, a)
        diag["exp_square"] = {"a": a, "log_value": m.info["log_value"], "valid": m.valid,
                              "max_exponent": m.info["max_exponent"],
                              "doubling_log_ratio": m.info.get("doubling_log_ratio")}
        valid = valid and m.valid
        if not m.valid and "invalid" not in diag:
            diag["invalid"] = "exponential-square moment dominated by extreme paths"
    if cfg.estimators.get("chernoff") and d_theory is not None and d_theory > 0:
        ch = chernoff_check(states, np.zeros(states.shape[1]), d_theory)
        diag["chernoff"] = {"passed": ch.passed, "mu_d": ch.mu_d,
                            "violations": sum(r["violation"] for r in ch.rows)}
    return {
        "t": float(t),
        "D_theory": d_theory,
        "log_D_theory": log_d,
        "D_hat": est.value,
        "se": est.std_error,
        "valid": bool(valid),
        "verdict": _verdict(d_theory, est.value, est.std_error, valid),
        "diagnostics": diag,
    }


def _profile(cfg, spec, ens) -> dict:
    info = spec.info
    a1, aN = info.get("alpha1"), info.get("alphaN")
    x = ens.alive()
    n = x.shape[0]
    var = x.var(axis=0, ddof=1)
    fourth = ((x - x.mean(axis=0)) ** 4).mean(axis=0)
    se = np.sqrt(np.maximum(fourth - var**2, 0.0) / n)
    rows = []
    for i in range(spec.dim):
        target = bounds.gl_stationary_variance(a1, aN, spec.dim, i + 1) if a1 and aN else None
        rows.append({"site": i + 1, "variance": float(var[i]), "se": float(se[i]),
                     "linear_profile": target})
    total = x.sum(axis=1)
    return {"t": ens.time, "sites": rows, "mean_energy": float(total.mean())}


def _coupling_extra(cfg, spec, grid, times) -> list:
    opts = cfg.estimators["coupling"]
    x = np.broadcast_to(np.asarray(opts["x"], dtype=float), (spec.dim,))
    y = np.broadcast_to(np.asarray(opts["y"], dtype=float), (spec.dim,))
    pairs = simulate_coupled_pair(spec, x, y, grid, cfg.n_paths, cfg.seed, times,
                                  workers=cfg.workers)
    g = spec.constants.gamma_rate
    out = []
    for cp in pairs:
        est = coupling_rate_estimate(cp)
        bound = float(g(cp.time)) if g is not None else None
        ok = None if bound is None else bool(est.value <= bound * (1 + 1e-9) + 1e-12)
        out.append({"t": cp.time, "max_ratio": est.value, "mean_ratio": est.info["mean"],
                    "gamma": bound, "passed": ok})
    return out


def _combine(rows: list) -> str:
    verdicts = [r["verdict"] for r in rows]
    if FAIL in verdicts:
        return FAIL
    if INCONCLUSIVE in verdicts:
        return INCONCLUSIVE
    return PASS


def git_version() -> str:
    """Package version with the short commit hash when run from a checkout."""
    import subprocess

    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(["git", "rev-parse", "--short", "HEAD"], cwd=here,
                             capture_output=True, text=True, timeout=5)
    except (OSError, subprocess.SubprocessError):
        return __version__
    h = out.stdout.strip()
    return f"{__version__}+g{h}" if out.returncode == 0 and h else __version__


def _header(cfg: ExperimentConfig, curve: Optional[BoundCurve]) -> tuple[dict, dict]:
    exp = {"id": cfg.id, "title": cfg.title, "topic": cfg.topic, "theorem": cfg.theorem,
           "model": {"id": cfg.model_id, "params": cfg.model_params}, "init": cfg.init,
           "grid": {"t0": cfg.t0, "t1": cfg.t1, "dt": cfg.dt,
                    "checkpoints": list(cfg.checkpoints)},
           "n_paths": cfg.n_paths, "seed": cfg.seed}
    bnd = curve.provenance() if curve is not None else {"theorem": cfg.theorem}
    return exp, bnd


def _metadata() -> dict:
    return {"version": git_version(), "backend": kernels.BACKEND,
            "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds")}


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> VerificationReport:
    """Run one configured verification; writes the report when ``out_dir`` is set."""
    started = time.perf_counter()
    spec = build_model(cfg.model_id, cfg.model_params)
    law = build_law(cfg.init, spec.dim)
    curve = build_curve(cfg, spec, law)
    grid = TimeGrid(cfg.t0, cfg.t1, cfg.dt)
    times = list(cfg.checkpoints)
    exp, bnd = _header(cfg, curve)
    report = VerificationReport(exp, bnd, [], INCONCLUSIVE, metadata=_metadata())
    try:
        if spec.name == "nonmarkov":
            res = simulate_nonmarkov(spec, law, grid, cfg.n_paths, cfg.seed, times)
            ensembles = res.ensembles
        else:
            res = None
            ensembles = simulate_ensemble(spec, law, grid, cfg.n_paths, cfg.seed, times,
                                          workers=cfg.workers)
    except BlowUpError as exc:
        report.diagnostics.append({"blowup": str(exc), "path_id": exc.path_id,
                                   "time": exc.time, "count": exc.count,
                                   "n_paths": exc.n_paths})
        report.rows = [{"t": float(t), "D_theory": _bound_at(curve, t)[0], "log_D_theory": None,
                        "D_hat": None, "se": None, "valid": False, "verdict": INCONCLUSIVE,
                        "diagnostics": {"blowup": True}} for t in times]
        _finish(report, cfg, out_dir, started)
        return report

    family = _family(cfg, spec.dim if res is None else 1)
    heavy = law.gcb_constant() == math.inf
    for ens in ensembles:
        states = spec.to_metric(ens.alive()) if res is None else ens.states
        note = None
        if heavy and ens.time == cfg.t0:
            note = "initial law has no finite exponential-square moment"
        report.rows.append(evaluate_checkpoint(cfg, curve, states, ens.time, family, ens.blown,
                                               note))
    report.verdict = _combine(report.rows)
    est = cfg.estimators
    if est.get("profile"):
        report.extras["profile"] = [_profile(cfg, spec, e) for e in ensembles]
    if "coupling" in est:
        report.extras["coupling"] = _coupling_extra(cfg, spec, grid, times)
    if res is not None and est.get("odd_moments"):
        report.extras["odd_moments"] = [
            {"t": t, "z": odd_moment_check(z).to_dict(),
             "symmetrized_x": odd_moment_check(symmetrized_differences(e.states)).to_dict()}
            for t, z, e in zip(res.times, res.z, res.ensembles) if t > 0]
    if res is not None and est.get("burkholder"):
        report.extras["burkholder"] = [
            {"t": t, "checks": [burkholder_moment_check(z, q, n).to_dict()
                                for n in est["burkholder"]]}
            for t, z, q in zip(res.times, res.z, res.qv) if t > 0]
    _finish(report, cfg, out_dir, started)
    return report


def _finish(report: VerificationReport, cfg: ExperimentConfig, out_dir, started: float):
    log.info("experiment %s: %s in %.1f s", cfg.id, report.verdict,
             time.perf_counter() - started)
    target = out_dir if out_dir is not None else cfg.output_dir
    if target is not None:
        write_report(report, target, cfg.formats)


# -- rendering -------------------------------------------------------------------


def _clean(obj):
    """Make a report tree JSON-safe: non-finite floats become strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def _num(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def render_json(report: VerificationReport) -> str:
    return json.dumps(_clean(report.to_dict()), indent=2, sort_keys=True) + "\n"


def render_csv(report: VerificationReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "D_theory", "D_hat", "se", "verdict"])
    for r in report.rows:
        w.writerow([_num(r["t"]), _num(r["D_theory"]), _num(r["D_hat"]), _num(r["se"]),
                    r["verdict"]])
    return buf.getvalue()


def _fmt(v) -> str:
    if v is None:
        return "n/a"
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def render_markdown(report: VerificationReport) -> str:
    e = report.experiment
    lines = [f"# {e['id']}: {e.get('title') or e['theorem']}", "",
             f"Verdict: **{report.verdict}**", "",
             f"Theorem `{e['theorem']}`, model `{e['model']['id']}`, "
             f"{e['n_paths']} paths, seed {e['seed']}, dt {e['grid']['dt']:g}.", "",
             "| t | D_theory | D_hat | SE | verdict |", "|---|---|---|---|---|"]
    notes = []
    for r in report.rows:
        mark = ""
        d = r.get("diagnostics", {})
        reason = d.get("bound_undefined") or d.get("invalid") or (
            "blow-up" if d.get("blowup") or d.get("blown_paths") else None)
        if reason:
            notes.append(reason)
            mark = f" [^{len(notes)}]"
        lines.append(f"| {_fmt(r['t'])} | {_fmt(r['D_theory'])} | {_fmt(r['D_hat'])} | "
                     f"{_fmt(r['se'])} | {r['verdict']}{mark} |")
    for n in report.bound.get("notes", []):
        notes.append(f"bound: {n}")
    for d in report.diagnostics:
        notes.append(json.dumps(_clean(d), sort_keys=True))
    if notes:
        lines.append("")
        lines.extend(f"[^{i}]: {n}" for i, n in enumerate(notes, 1))
    lines.extend(["", f"Generated by gcb-lab {report.metadata.get('version', '')} "
                  f"({report.metadata.get('backend', '')} backend) at "
                  f"{report.metadata.get('timestamp', '')}.", ""])
    return "\n".join(lines)


RENDERERS = {"json": render_json, "csv": render_csv, "md": render_markdown}
EXTENSIONS = {"json": ".json", "csv": ".csv", "md": ".md"}


def emit_report(report: VerificationReport, fmt: str) -> str:
    try:
        return RENDERERS[fmt](report)
    except KeyError:
        raise ExperimentError(f"unknown report format {fmt!r}") from None


def write_report(report: VerificationReport, out_dir, formats=("json", "csv")) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for fmt in formats:
        p = out / f"{report.experiment['id']}{EXTENSIONS[fmt]}"
        p.write_text(emit_report(report, fmt))
        written.append(p)
    return written


def list_experiments() -> list[dict]:
    rows = []
    for name in shipped_ids():
        try:
            cfg = load_config(name)
        except ConfigError as exc:
            rows.append({"id": name, "theorem": "?", "topic": f"invalid: {exc}", "runtime": ""})
            continue
        rows.append({"id": cfg.id, "theorem": cfg.theorem, "topic": cfg.topic,
                     "runtime": cfg.runtime, "expect": cfg.expect or ""})
    return rows
