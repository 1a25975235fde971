"""Config-driven experiments with CSV reports and a pass/fail index.

A config is a YAML mapping with a ``kind`` and the blocks that kind needs.
Each run writes ``<name>.csv`` (data) and ``<name>.checks.csv`` (assertions),
both starting with a ``#`` metadata line. Runtimes are kept out of the files
so that reruns are byte-identical.
"""
from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import yaml

from . import __version__
from .barriers import (BarrierParams, choose_barrier_params, neghopf_time_step,
                       normalize_payoff, sharpness_residuals, verify_barrier_degenhopf,
                       verify_supersolution_neghopf)
from .boundary import (InsufficientResolution, boundary_delta, build_patched_counterexample,
                       check_gprime_match, delta_on_nodes, hopf_sweep)
from .models import ParameterError, make_cev, model_from_config, payoff_from_config
from .montecarlo import PathConfig, crosscheck, simulate_cev_euler_absorbed, simulate_euler_absorbed
from .oracles import ORACLES
from .pde import Problem1D, SolverError, build_grid, build_time_grid, refine_study, solve_1d, solve_2d_with_faces
from .properties import property_matrix

log = logging.getLogger(__name__)

OK, ASSERTION_FAILED, CONFIG_ERROR, NUMERICAL_FAILURE = 0, 1, 2, 3
ENV_OUT = "HOPFLAB_OUT"


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configs


REQUIRED = {
    "price": ("model", "grid", "time", "cases"),
    "delta": ("model", "payoff", "grid", "time"),
    "sweep": ("payoff", "grid", "time", "betas", "sigma"),
    "gprime-check": ("model", "payoff", "grid", "time", "times"),
    "margrabe": ("grid", "time", "cases"),
    "counterexample": (),
    "barrier": ("betas", "sigma"),
    "sharpness": (),
    "mc-crosscheck": ("cases",),
    "refine": ("model", "payoff", "grid", "time", "x_probe"),
    "properties": (),
}
KINDS = tuple(REQUIRED)


@dataclass
class ExperimentConfig:
    kind: str
    name: str
    body: dict
    seed: int = 0
    tolerances: dict = field(default_factory=dict)
    digest: str = ""

    def block(self, key: str, default=None):
        return self.body.get(key, default)

    def tol(self, key: str, default=None):
        return self.tolerances.get(key, default)


def _digest(data) -> str:
    text = yaml.safe_dump(data, sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()


def parse_config(data, name: str = "experiment") -> ExperimentConfig:
    """Validate a config mapping; raises ``ConfigError`` with a readable message."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    kind = data.get("kind")
    if kind not in REQUIRED:
        raise ConfigError(f"unknown or missing kind {kind!r}; expected one of {', '.join(KINDS)}")
    missing = [k for k in REQUIRED[kind] if k not in data]
    if missing:
        raise ConfigError(f"kind {kind!r} needs block(s): {', '.join(missing)}")
    tolerances = data.get("tolerances", {}) or {}
    if not isinstance(tolerances, dict):
        raise ConfigError("tolerances must be a mapping")
    for key, value in tolerances.items():
        if isinstance(value, bool):
            continue
        if not isinstance(value, (int, float)) or not value > 0:
            raise ConfigError(f"tolerance {key!r} must be a positive number, got {value!r}")
    seed = data.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")
    cfg = ExperimentConfig(kind, str(data.get("output", data.get("name", name))), data, seed,
                           tolerances, _digest(data))
    _prevalidate(cfg)
    return cfg


def _prevalidate(cfg: ExperimentConfig) -> None:
    """Build every model and payoff block once so bad parameters fail before any work."""
    try:
        if "model" in cfg.body:
            model_from_config(cfg.body["model"])
        if "payoff" in cfg.body:
            payoff_from_config(cfg.body["payoff"])
        for case in cfg.body.get("cases", []) or []:
            if not isinstance(case, dict):
                raise ConfigError("each case must be a mapping")
            if "model" in case:
                model_from_config(case["model"])
            if "payoff" in case:
                payoff_from_config(case["payoff"])
        for key in ("grid", "time"):
            if key in cfg.body and not isinstance(cfg.body[key], dict):
                raise ConfigError(f"{key} must be a mapping")
    except (ParameterError, KeyError, TypeError) as exc:
        raise ConfigError(f"invalid block: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path} is not valid YAML: {exc}") from exc
    return parse_config(data, path.stem)


# ---------------------------------------------------------------------------
# reports


@dataclass
class Check:
    name: str
    passed: bool
    value: Optional[float] = None
    limit: str = ""
    recorded: bool = True  # runtimes are shown but never written


@dataclass
class Report:
    name: str
    kind: str
    columns: list
    rows: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name: str, passed: bool, value=None, limit: str = "") -> bool:
        self.checks.append(Check(name, bool(passed), None if value is None else float(value), limit))
        return bool(passed)

    def failures(self) -> list:
        return [c for c in self.checks if not c.passed]


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _metadata(cfg: ExperimentConfig) -> str:
    return f"# hopflab {__version__} kind={cfg.kind} seed={cfg.seed} config_sha256={cfg.digest}\n"


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    return buf.getvalue()


def write_report(report: Report, cfg: ExperimentConfig, out_dir) -> tuple:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data_path = out / f"{report.name}.csv"
    checks_path = out / f"{report.name}.checks.csv"
    data_path.write_text(_metadata(cfg) + _csv_text(report.columns, report.rows))
    rows = [(c.name, c.passed, c.value if c.recorded else None, c.limit) for c in report.checks]
    checks_path.write_text(_metadata(cfg) + _csv_text(["check", "passed", "value", "limit"], rows))
    return data_path, checks_path


SUMMARY_COLUMNS = ["experiment", "kind", "status", "checks", "failures"]


def _summary_row(name, kind, checks) -> tuple:
    failed = [c for c in checks if not c[1]]
    detail = "; ".join(f"{c[0]}={c[2]} ({c[3]})" if c[2] not in (None, "") else f"{c[0]} ({c[3]})"
                       for c in failed)
    return name, kind, "FAIL" if failed else "PASS", len(checks), detail


def _read_checks(path: Path) -> tuple:
    lines = path.read_text().splitlines()
    kind = ""
    if lines and lines[0].startswith("#"):
        for token in lines[0].split():
            if token.startswith("kind="):
                kind = token[5:]
        lines = lines[1:]
    rows = list(csv.reader(lines))[1:]
    checks = [(r[0], r[1] == "true", r[2], r[3]) for r in rows]
    return kind, checks


def emit_summary(source, path=None) -> str:
    """CSV index with one PASS/FAIL line per experiment.

    ``source`` is a directory of ``*.checks.csv`` files or a list of reports.
    """
    if isinstance(source, (str, os.PathLike)):
        rows = []
        for f in sorted(Path(source).glob("*.checks.csv")):
            kind, checks = _read_checks(f)
            rows.append(_summary_row(f.name[: -len(".checks.csv")], kind, checks))
    else:
        rows = [_summary_row(r.name, r.kind, [(c.name, c.passed, _cell(c.value) if c.recorded else "",
                                               c.limit) for c in r.checks]) for r in source]
    text = _csv_text(SUMMARY_COLUMNS, rows)
    if path is not None:
        Path(path).write_text(text)
    return text


# ---------------------------------------------------------------------------
# helpers shared by the handlers


def _grid(block: dict, snap=()):
    return build_grid(float(block["xmax"]), int(block["m"]), float(block.get("p", 2.0)), snap=snap)


def _tgrid(block: dict, include=(), T=None):
    return build_time_grid(float(block["T"] if T is None else T), int(block["steps"]),
                           block.get("policy", "uniform"), include=include)


def _oracle(spec: dict) -> Callable:
    name = spec.get("oracle")
    if name not in ORACLES:
        raise ConfigError(f"unknown oracle {name!r}")
    fn, names = ORACLES[name]
    params = dict(spec.get("params", {}))

    def call(**free):
        args = {**params, **free}
        return fn(**{k: args[k] for k in names})

    return call


def _far_field(name, oracle=None):
    if name in (None, "linear", "payoff"):
        return name or "linear"
    if name == "oracle":
        if oracle is None:
            raise ConfigError("far_field 'oracle' needs an oracle")
        return lambda x, t: oracle(x=x, t=t)
    raise ConfigError(f"unknown far field {name!r}")


def _within(value, lo=None, hi=None) -> bool:
    return (lo is None or value >= lo) and (hi is None or value <= hi)


# ---------------------------------------------------------------------------
# handlers


def run_delta(cfg: ExperimentConfig, jobs: int = 1) -> Report:
    model = model_from_config(cfg.block("model"))
    payoff = payoff_from_config(cfg.block("payoff"))
    gb, tb = cfg.block("grid"), cfg.block("time")
    times = [float(t) for t in cfg.block("times", [tb["T"]])]
    levels = int(cfg.block("levels", 1))
    ref = _oracle(cfg.block("reference")) if cfg.block("reference") else None
    rep = Report(cfg.name, cfg.kind, ["level", "m", "steps", "t", "delta", "residual", "verdict",
                                      "reference", "error"])
    finest = {}
    history = {t: [] for t in times}
    for lvl in range(levels):
        m = (int(gb["m"]) - 1) * 2**lvl + 1
        steps = int(tb["steps"]) * 2**lvl
        grid = build_grid(float(gb["xmax"]), m, float(gb.get("p", 2.0)), snap=payoff.kinks)
        tgrid = build_time_grid(max(times), steps, tb.get("policy", "graded"), include=times)
        sol = solve_1d(model, payoff, grid, tgrid, float(tb.get("theta", 1.0)))
        for t in times:
            est = boundary_delta(sol, t)
            r = float(ref(t=t)) if ref else None
            err = abs(est.value - r) if (r is not None and est.finite) else None
            rep.rows.append((lvl, m, steps, t, est.value, est.residual, est.verdict, r, err))
            history[t].append(est)
            finest[t] = (est, r, err)
    for t, (est, r, err) in finest.items():
        if cfg.tol("rel") is not None and r is not None:
            rel = err / abs(r) if err is not None else math.inf
            rep.check(f"relative error at t={t:g}", rel <= cfg.tol("rel"), rel, f"<= {cfg.tol('rel')}")
        if cfg.tol("abs") is not None and r is not None:
            rep.check(f"absolute error at t={t:g}", err is not None and err <= cfg.tol("abs"), err,
                      f"<= {cfg.tol('abs')}")
        if cfg.tol("abs_max") is not None:
            v = abs(est.value) if est.finite else math.inf
            rep.check(f"|delta| at t={t:g}", v <= cfg.tol("abs_max"), v, f"<= {cfg.tol('abs_max')}")
        if cfg.tol("decreasing"):
            mags = [abs(e.value) if e.finite else math.inf for e in history[t]]
            ok = len(mags) >= 3 and all(b < a for a, b in zip(mags, mags[1:]))
            rep.check(f"|delta| decreasing under refinement at t={t:g}", ok, mags[-1],
                      f"{len(mags) - 1} refinements")
    return rep


def run_price(cfg: ExperimentConfig, jobs: int = 1) -> Report:
    model = model_from_config(cfg.block("model"))
    gb, tb = cfg.block("grid"), cfg.block("time")
    T = float(tb["T"])
    rep = Report(cfg.name, cfg.kind, ["case", "quantity", "t", "value", "reference", "error"])
    for case in cfg.block("cases"):
        label = case.get("name", case["payoff"].get("kind"))
        payoff = payoff_from_config(case["payoff"])
        ref = _oracle(case) if "oracle" in case else None
        grid = _grid(gb, payoff.kinks)
        tgrid = _tgrid(tb)
        sol = solve_1d(model, payoff, grid, tgrid, float(tb.get("theta", 1.0)),
                       _far_field(case.get("far_field"), ref))
        t = float(case.get("t", T))
        if ref is not None:
            x = grid.nodes[1:-1]
            exact = np.asarray(ref(x=x, t=t), dtype=float)
            rel = np.abs(sol.at(t)[1:-1] - exact) / np.abs(exact)
            worst = float(np.max(rel))
            k = int(np.argmax(rel))
            rep.rows.append((label, "max relative error (interior)", t, float(sol.at(t)[1:-1][k]),
                             float(exact[k]), worst))
            if "rel_tol" in case:
                rep.check(f"{label}: max relative error", worst <= float(case["rel_tol"]), worst,
                          f"<= {case['rel_tol']}")
        if "expect_verdict" in case:
            est = boundary_delta(sol, t)
            rep.rows.append((label, "boundary delta verdict", t, est.value, None, est.verdict))
            rep.check(f"{label}: verdict", est.verdict == case["expect_verdict"], None,
                      f"== {case['expect_verdict']} (got {est.verdict})")
    return rep


def run_sweep(cfg: ExperimentConfig, jobs: int = 1) -> Report:
    payoff = payoff_from_config(cfg.block("payoff"))
    gb, tb = cfg.block("grid"), cfg.block("time")
    betas = [float(b) for b in cfg.block("betas")]
    rows = hopf_sweep(betas, float(cfg.block("sigma")), payoff, float(tb["T"]),
                      xmax=float(gb["xmax"]), m=int(gb["m"]), p=float(gb.get("p", 2.0)),
                      steps=int(tb["steps"]), theta=float(tb.get("theta", 1.0)), jobs=jobs)
    margin = float(cfg.tol("margin", 10.0))
    zero = float(cfg.tol("zero", 1e-3))
    rep = Report(cfg.name, cfg.kind, ["beta", "delta", "residual", "verdict"])
    for r in rows:
        e = r.estimate
        rep.rows.append((r.beta, e.value, e.residual, e.verdict))
        if r.beta < 2.0:
            ok = e.finite and e.value > 0 and e.value >= margin * e.residual
            rep.check(f"beta={r.beta:g}: delta > {margin:g} x residual", ok,
                      e.value if e.finite else None, f"> {margin:g} x {e.residual:.3g}")
        else:
            ok = e.finite and abs(e.value) <= zero
            rep.check(f"beta={r.beta:g}: |delta| small", ok, e.value if e.finite else None,
                      f"<= {zero:g}")
    return rep


def run_gprime(cfg: ExperimentConfig, jobs: int = 1) -> Report:
    model = model_from_config(cfg.block("model"))
    payoff = payoff_from_config(cfg.block("payoff"))
    gb, tb = cfg.block("grid"), cfg.block("time")
    tol = float(cfg.tol("abs", 1e-3))
    rows = check_gprime_match(model, payoff, [float(t) for t in cfg.block("times")],
                              C=cfg.block("C"), tol=tol, xmax=float(gb["xmax"]), m=int(gb["m"]),
                              p=float(gb.get("p", 2.0)), steps=int(tb["steps"]))
    rep = Report(cfg.name, cfg.kind, ["t", "delta", "gprime0", "error"])
    for r in rows:
        rep.rows.append((r.t, r.delta, r.gprime0, r.error))
        rep.check(f"|delta - g'(0)| at t={r.t:g}", r.passed, r.error, f"<= {tol:g}")
    return rep


def run_margrabe(cfg: ExperimentConfig, jobs: int = 1) -> Report:
    gb, tb = cfg.block("grid"), cfg.block("time")
    rep = Report(cfg.name, cfg.kind, ["case", "quantity", "x1", "x2", "t", "value", "lower",
                                      "upper", "reference"])
    for case in cfg.block("cases"):
        label = case.get("name", "case")
        model = model_from_config(case["model"])
        if model.n != 2:
            raise ConfigError(f"{label}: the margrabe experiment needs a 2D model")
        payoff = payoff_from_config(case.get("payoff", {"kind": "exchange"}))
        checks = case.get("checks", [])
        snaps = sorted({float(v) for c in checks for v in c["at"] if v > 0})
        grid = _grid(gb, snaps)
        tgrid = _tgrid(tb, include=[float(c.get("t", tb["T"])) for c in checks])
        sol = solve_2d_with_faces(model, payoff, grid, grid, tgrid, float(tb.get("theta", 1.0)))
        for c in checks:
            x1, x2 = (float(v) for v in c["at"])
            t = float(c.get("t", tb["T"]))
            q = c["quantity"]
            reference = None
            if q == "delta_x1":
                nodes, vals = sol.line(t, 0, x2)
                value = delta_on_nodes(nodes, vals).value
            elif q == "delta_x2":
                nodes, vals = sol.line(t, 1, x1)
                value = delta_on_nodes(nodes, vals).value
            elif q == "price":
                value = float(sol.at(t)[grid.index_of(x1), grid.index_of(x2)])
                if "oracle" in c:
                    reference = float(_oracle(c)(x1=x1, x2=x2, t=t))
            else:
                raise ConfigError(f"unknown margrabe quantity {q!r}")
            lo, hi = c.get("min"), c.get("max")
            if reference is not None and "rel_tol" in c:
                lo = reference * (1 - float(c["rel_tol"]))
                hi = reference * (1 + float(c["rel_tol"]))
            rep.rows.append((label, q, x1, x2, t, value, lo, hi, reference))
            ok = value is not None and _within(value, lo, hi)
            rep.check(f"{label}: {q} at ({x1:g}, {x2:g}, {t:g})", ok, value,
                      f"in [{_cell(lo)}, {_cell(hi)}]")
    return rep


def run_counterexample(cfg: ExperimentConfig, jobs: int = 1) -> Report:
    t0 = float(cfg.block("t0", 1.0))
    gb = cfg.block("grid", {"xmax": 4.0, "m": 801, "p": 2.0})
    tb = cfg.block("time", {"steps": 400})
    after_dt = float(cfg.block("after_offset", 0.05))
    before = np.linspace(0.5 * t0, 0.95 * t0, 10)
    after = t0 + np.array([0.0, after_dt, 0.25 * t0, 0.5 * t0, 0.75 * t0, t0])
    ex = build_patched_counterexample(t0, float(cfg.block("y0", 1.0)), 2.0 * t0,
                                      float(gb["xmax"]), int(gb["m"]), float(gb.get("p", 2.0)),
                                      int(tb["steps"]), np.unique(np.concatenate([before, after])),
                                      cfg.block("coefficient", "consistent"))
    rep = Report(cfg.name, cfg.kind, ["t", "delta", "residual"])
    for t, d, r in zip(ex.curve.times, ex.curve.deltas, ex.curve.residuals):
        rep.rows.append((t, d, r))
    small = float(cfg.tol("before_abs", 1e-3))
    worst = float(np.max(np.abs(ex.curve.deltas[ex.curve.times < t0])))
    rep.check("max |delta| on [t0/2, t0)", worst <= small, worst, f"<= {small:g}")
    jump_at = float(ex.delta(t0 + after_dt).value)
    big = float(cfg.tol("after_min", 0.9))
    rep.check(f"delta at t0 + {after_dt:g}", jump_at >= big, jump_at, f">= {big:g}")

    rng = np.random.default_rng(cfg.seed)
    n = int(cfg.block("samples", 100))
    xs = rng.uniform(0.0, float(gb["xmax"]), n)
    ts = rng.uniform(0.0, t0, n)
    res = float(max(abs(float(ex.residual(np.array([x]), t)[0])) for x, t in zip(xs, ts)))
    rtol = float(cfg.tol("residual", 1e-8))
    rep.check(f"max |v_t - a v_xx| over {n} points", res <= rtol, res, f"<= {rtol:g}")
    for lo, hi, size in ex.curve.jumps:
        rep.rows.append((hi, None, size))
    rep.check("jump located at t0", any(lo <= t0 <= hi for lo, hi, _ in ex.curve.jumps), None,
              f"bracket contains {t0:g}")
    return rep


def run_barrier(cfg: ExperimentConfig, jobs: int = 1) -> Report:
    sigma = float(cfg.block("sigma"))
    density = int(cfg.block("density", 200))
    rep = Report(cfg.name, cfg.kind, ["section", "beta", "epsilon", "N", "eta", "min_residual",
                                      "samples", "passed"])
    for beta in (float(b) for b in cfg.block("betas")):
        model = make_cev(sigma, beta)
        eps, N = choose_barrier_params(beta)
        eps = float(cfg.block("epsilon", eps))
        N = int(cfg.block("N", N))
        params = BarrierParams(beta, model.cev[0].lower_bound_constant, eps, N,
                               float(cfg.block("eta", 0.5)), float(cfg.block("t0", 1.0)))
        r = verify_barrier_degenhopf(model, params, density, int(cfg.block("max_halvings", 8)))
        rep.rows.append(("degenerate-hopf", beta, eps, N, r.params.eta, r.min_residual, r.count,
                         r.passed))
        rep.check(f"barrier beta={beta:g}", r.passed, r.min_residual,
                  f">= -1e-12 (eta={r.params.eta:g})" if r.passed else f">= -1e-12 at {r.offending}")

    sup = cfg.block("supersolution")
    if sup:
        C = float(sup["C"])
        N = float(sup.get("N", 2))
        payoff = normalize_payoff(payoff_from_config(sup["payoff"]))
        s = verify_supersolution_neghopf(C, payoff, float(sup.get("epsilon", 0.01)), N,
                                         xmax=float(sup.get("xmax", 10.0)))
        exact = neghopf_time_step(C, N)
        rep.rows.append(("supersolution", None, float(sup.get("epsilon", 0.01)), N, s.t0,
                         s.min_residual, None, s.passed))
        rep.check("supersolution", s.passed, s.min_residual, "residual >= 0 and v >= g")
        rep.check("t0 = 1/(2C(N^2-N))", s.t0 == exact, s.t0, f"== {exact!r}")
    sharp = cfg.block("sharpness")
    if sharp is not None and sharp is not False:
        _sharpness_into(rep, dict(sharp) if isinstance(sharp, dict) else {}, cfg.seed)
    return rep


def _sharpness_into(rep: Report, opts: dict, seed: int) -> None:
    s = sharpness_residuals(seed=seed, **opts)
    rep.rows.append(("sharpness-drift", None, None, None, None, s.max_residual_drift, None,
                     s.max_residual_drift <= 1e-12))
    rep.rows.append(("sharpness-potential", None, None, None, None, s.max_residual_potential,
                     None, s.max_residual_potential <= 1e-12))
    rep.check("drift system residual", s.max_residual_drift <= 1e-12, s.max_residual_drift, "<= 1e-12")
    rep.check("potential system residual", s.max_residual_potential <= 1e-12,
              s.max_residual_potential, "<= 1e-12")
    rep.check("boundary delta of x^2/2", abs(s.boundary_delta) <= 1e-12, s.boundary_delta, "== 0")
    rep.check("coefficient bounds fail for delta > 0", s.drift_bound_fails and s.potential_bound_fails,
              None, "both violated")


def run_sharpness(cfg: ExperimentConfig, jobs: int = 1) -> Report:
    rep = Report(cfg.name, cfg.kind, ["section", "beta", "epsilon", "N", "eta", "min_residual",
                                      "samples", "passed"])
    opts = {k: cfg.block(k) for k in ("betas", "samples") if cfg.block(k) is not None}
    _sharpness_into(rep, opts, cfg.seed)
    return rep


def run_mc(cfg: ExperimentConfig, jobs: int = 1) -> Report:
    rep = Report(cfg.name, cfg.kind, ["case", "reference", "mean", "stderr", "allowance",
                                      "absorbed_fraction", "error"])
    n_se = float(cfg.tol("n_se", 3.0))
    for case in cfg.block("cases"):
        label = case.get("name", "case")
        model = model_from_config(case["model"])
        payoff = payoff_from_config(case["payoff"])
        x0, T = float(case.get("x0", 1.0)), float(case.get("T", 1.0))
        scheme = case.get("scheme", "euler-absorbed")
        pc = PathConfig(int(case.get("paths", 10**6)), int(case.get("steps", 2048)), cfg.seed,
                        scheme, T, jobs=jobs)
        coupled = bool(case.get("coupled", scheme == "euler-absorbed"))
        if scheme == "exact-gbm":
            if model.kind != "gbm" or model.n != 1:
                raise ConfigError(f"{label}: exact sampling needs a GBM model")
            samples = simulate_cev_euler_absorbed(x0, model.sigmas[0], 2.0, T, pc)
        else:
            samples = simulate_euler_absorbed(model, x0, T, pc, coupled)
        ref_spec = case.get("reference", {"pde": {}})
        if "oracle" in ref_spec:
            reference = float(_oracle(ref_spec)(x=x0, t=T))
        else:
            g = ref_spec.get("pde") or {}
            grid = build_grid(float(g.get("xmax", 40.0)), int(g.get("m", 1601)),
                              float(g.get("p", 2.0)), snap=tuple(payoff.kinks) + (x0,))
            tgrid = build_time_grid(T, int(g.get("steps", 800)), "graded")
            reference = float(solve_1d(model, payoff, grid, tgrid).value(x0, T))
        cc = crosscheck(reference, payoff, samples, n_se)
        rep.rows.append((label, reference, cc.estimate.mean, cc.estimate.stderr, cc.allowance,
                         cc.estimate.absorbed_fraction, cc.error))
        rep.check(f"{label}: |PDE - MC|", cc.passed, cc.error,
                  f"<= {n_se:g} x {cc.estimate.stderr:.3g} + {cc.allowance:.3g}")
    return rep


def run_refine(cfg: ExperimentConfig, jobs: int = 1) -> Report:
    model = model_from_config(cfg.block("model"))
    payoff = payoff_from_config(cfg.block("payoff"))
    gb, tb = cfg.block("grid"), cfg.block("time")
    oracle = _oracle(cfg.block("reference")) if cfg.block("reference") else None
    far = _far_field(cfg.block("far_field"), oracle)
    prob = Problem1D(model, payoff, float(gb["xmax"]), int(gb["m"]), float(tb["T"]),
                     int(tb["steps"]), float(cfg.block("x_probe")), float(gb.get("p", 2.0)),
                     float(tb.get("theta", 1.0)), far, tb.get("policy", "uniform"),
                     (lambda x, t: float(oracle(x=x, t=t))) if oracle else None)
    rows = refine_study(prob, int(cfg.block("levels", 3)))
    rep = Report(cfg.name, cfg.kind, ["level", "m", "steps", "value", "error", "diff_to_finer",
                                      "order"])
    for r in rows:
        rep.rows.append((r.level, r.m, r.steps, r.value, r.error, r.diff_to_finer, r.order))
    if cfg.tol("min_order") is not None:
        orders = [r.order for r in rows if r.order is not None]
        worst = min(orders) if orders else None
        rep.check("observed order", worst is not None and worst >= cfg.tol("min_order"), worst,
                  f">= {cfg.tol('min_order')}")
    if cfg.tol("monotone"):
        errs = [r.error if r.error is not None else r.diff_to_finer for r in rows]
        errs = [e for e in errs if e is not None]
        rep.check("errors decrease", all(b < a for a, b in zip(errs, errs[1:])), errs[-1],
                  "strictly decreasing")
    if cfg.tol("abs") is not None:
        worst = max(r.error for r in rows if r.error is not None)
        rep.check("max error", worst <= cfg.tol("abs"), worst, f"<= {cfg.tol('abs')}")
    return rep


def run_properties(cfg: ExperimentConfig, jobs: int = 1) -> Report:
    gb = cfg.block("grid", {"xmax": 8.0, "m": 201, "p": 2.0})
    tb = cfg.block("time", {"T": 1.0, "steps": 100})
    models = None
    if cfg.block("models"):
        models = [(m.get("name", m["kind"]), model_from_config(m)) for m in cfg.block("models")]
    payoffs = [payoff_from_config(p) for p in cfg.block("payoffs")] if cfg.block("payoffs") else None
    rep = Report(cfg.name, cfg.kind, ["model", "payoff", "far_field", "comparison", "convexity",
                                      "time_monotonicity", "affine", "byte_stable", "passed"])
    fars = cfg.block("far_fields", ["linear"])
    count = 0
    for far in fars:
        rows = property_matrix(models, payoffs, float(gb["xmax"]), int(gb["m"]),
                               float(gb.get("p", 2.0)), float(tb["T"]), int(tb["steps"]), far)
        for r in rows:
            count += 1
            rep.rows.append((r.model, r.payoff, far, r.comparison, r.convexity,
                             r.time_monotonicity, r.affine, r.byte_stable, r.passed))
            if not r.passed:
                rep.check(f"{r.model} x {r.payoff} ({far})", False, None, "all properties")
    n_min = int(cfg.block("min_combinations", 12))
    pairs = len({(row[0], row[1]) for row in rep.rows})
    rep.check("model/payoff combinations", pairs >= n_min, pairs, f">= {n_min}")
    rep.check("all properties hold", all(row[-1] for row in rep.rows), count, "rows checked")
    return rep


HANDLERS = {
    "price": run_price,
    "delta": run_delta,
    "sweep": run_sweep,
    "gprime-check": run_gprime,
    "margrabe": run_margrabe,
    "counterexample": run_counterexample,
    "barrier": run_barrier,
    "sharpness": run_sharpness,
    "mc-crosscheck": run_mc,
    "refine": run_refine,
    "properties": run_properties,
}


@dataclass
class RunResult:
    status: int
    report: Optional[Report]
    paths: tuple = ()
    message: str = ""


def execute(cfg: ExperimentConfig, out_dir=None, jobs: int = 1) -> RunResult:
    """Run one experiment and write its files; exceptions become exit statuses."""
    out_dir = out_dir or os.environ.get(ENV_OUT, "results")
    start = time.perf_counter()
    try:
        report = HANDLERS[cfg.kind](cfg, jobs)
    except ConfigError as exc:
        return RunResult(CONFIG_ERROR, None, message=f"config error: {exc}")
    except InsufficientResolution as exc:
        return RunResult(NUMERICAL_FAILURE, None, message=f"numerical failure: {exc}")
    except ParameterError as exc:
        return RunResult(CONFIG_ERROR, None, message=f"config error: {exc}")
    except (KeyError, TypeError) as exc:
        return RunResult(CONFIG_ERROR, None, message=f"config error: missing or malformed key {exc}")
    except (SolverError, ArithmeticError, np.linalg.LinAlgError) as exc:
        return RunResult(NUMERICAL_FAILURE, None, message=f"numerical failure: {exc}")
    report.seconds = time.perf_counter() - start
    limit = cfg.tol("max_seconds")
    if limit is not None:
        report.checks.append(Check("runtime", report.seconds <= limit, report.seconds,
                                   f"<= {limit:g} s", recorded=False))
    paths = write_report(report, cfg, out_dir)
    status = OK if report.passed else ASSERTION_FAILED
    return RunResult(status, report, paths)


def run(path, out_dir=None, jobs: int = 1) -> RunResult:
    try:
        cfg = load_config(path)
    except ConfigError as exc:
        return RunResult(CONFIG_ERROR, None, message=str(exc))
    return execute(cfg, out_dir, jobs)


def describe(result: RunResult) -> str:
    """Human-readable lines for a run."""
    if result.report is None:
        return result.message
    r = result.report
    lines = [f"{r.name} [{r.kind}] {'PASS' if r.passed else 'FAIL'} ({r.seconds:.1f} s)"]
    for c in r.checks:
        value = "" if c.value is None else f" = {c.value:.6g}"
        lines.append(f"  {'ok  ' if c.passed else 'FAIL'} {c.name}{value}  [{c.limit}]")
    return "\n".join(lines)
