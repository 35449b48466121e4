"""Replicated simulation study: selection quality and effect estimates per method."""

from __future__ import annotations

import csv
import io
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import graph as G
from .cmio import BIC, NEAR_FULL, cmio_select, cmio_select_latent, evaluate_selection
from .sem import LinearSem, case_effect, case_model, child_seed, read_model, sample, true_total_effect
from .stats import DEFAULT_ALPHA, RankDeficientError, adjusted_effect
from .subset import SolverConfig, SubsetProblem, solve_k_sparse

METHODS = ("cmio", "cmio_latent", "target_oracle", "full_z", "t_xy_unconstrained")
# comparison methods from the literature that this package does not implement
PLACEHOLDERS = ("bcee", "ola")


@dataclass
class BenchSpec:
    case: int | None = 1
    n: int = 200
    replicates: int = 100
    methods: tuple[str, ...] = ("cmio",)
    alpha: float = DEFAULT_ALPHA
    seed: int = 0
    model_path: str | None = None
    restarts: int = 50
    subset_k: int | None = None
    workers: int = 1
    family: str = NEAR_FULL
    selection_adjust: bool = False
    schedule: str = BIC

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if not self.methods:
            raise ValueError("at least one method required")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}; choose from {METHODS}")
        if (self.case is None) == (self.model_path is None):
            raise ValueError("give exactly one of case or model_path")
        if self.case is not None and self.case not in (1, 2, 3):
            raise ValueError(f"unknown case {self.case}")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        self.methods = tuple(self.methods)

    def model(self) -> LinearSem:
        if self.case is not None:
            return case_model(self.case)
        m = read_model(self.model_path)
        if m.treatment is None or m.outcome is None:
            raise ValueError("model file must declare @treatment and @outcome")
        return m

    def label(self) -> str:
        return f"case{self.case}" if self.case is not None else str(self.model_path)


def _cmio_options(spec: BenchSpec) -> dict:
    return dict(family=spec.family, schedule=spec.schedule, selection_adjust=spec.selection_adjust)


@dataclass
class MethodSummary:
    method: str
    estimates: list[float]
    set_differences: list[int]
    contains: list[bool]
    valid: list[bool]
    runtimes: list[float]
    selections: list[list[str]] = field(default_factory=list)
    failures: int = 0

    def _finite(self) -> np.ndarray:
        a = np.asarray(self.estimates, dtype=float)
        return a[np.isfinite(a)]

    @property
    def mean(self) -> float:
        a = self._finite()
        return float(a.mean()) if a.size else math.nan

    @property
    def std(self) -> float:
        a = self._finite()
        return float(a.std(ddof=1)) if a.size > 1 else math.nan

    @property
    def set_difference_mean(self) -> float:
        return float(np.mean(self.set_differences)) if self.set_differences else math.nan

    @property
    def set_difference_std(self) -> float:
        return float(np.std(self.set_differences)) if self.set_differences else math.nan

    @property
    def containment_pct(self) -> float:
        return 100.0 * float(np.mean(self.contains)) if self.contains else math.nan

    @property
    def validity_pct(self) -> float:
        return 100.0 * float(np.mean(self.valid)) if self.valid else math.nan


@dataclass
class BenchReport:
    spec: BenchSpec
    true_effect: float
    methods: dict[str, MethodSummary]

    @property
    def failures(self) -> int:
        return sum(m.failures for m in self.methods.values())


def _best_subset_bic(d, cfg: SolverConfig, k: int | None) -> list[str]:
    """Plain best-subset support; k fixed or chosen by BIC over the k-path."""
    base = SubsetProblem.from_dataset(d, 0)
    if k is not None:
        return sorted(solve_k_sparse(base.with_k(k), cfg).support_names, key=G.node_key)
    best, best_bic = [], math.inf
    prev: list[int] = []
    kmax = min(base.p, d.n - 3)
    for kk in range(0, kmax + 1):
        sol = solve_k_sparse(base.with_k(kk), cfg, init_supports=[prev] if kk else ())
        prev = list(sol.support)
        rss = max(2.0 * sol.objective, 1e-300)
        bic = d.n * math.log(rss / d.n) + (kk + 2) * math.log(d.n)
        if bic < best_bic:
            best, best_bic = sorted(sol.support_names, key=G.node_key), bic
    return best


def _one_replicate(spec: BenchSpec, model: LinearSem, rep: int):
    data_seed = child_seed(spec.seed, rep, 0)
    d = sample(model, spec.n, data_seed)
    x, y = model.treatment, model.outcome
    cfg = SolverConfig(restarts=spec.restarts, seed=child_seed(spec.seed, rep, 1))
    out = {}
    for method in spec.methods:
        t0 = time.perf_counter()
        try:
            if method == "cmio":
                sel = cmio_select(d, alpha=spec.alpha, cfg=cfg, **_cmio_options(spec)).selected
            elif method == "cmio_latent":
                sel = cmio_select_latent(d, alpha=spec.alpha, cfg=cfg, **_cmio_options(spec)).selected
            elif method == "target_oracle":
                sel = sorted(G.optimal_adjustment(model.graph, x, y) - model.latent, key=G.node_key)
            elif method == "full_z":
                sel = list(d.covariates)
            else:
                sel = _best_subset_bic(d, cfg, spec.subset_k)
            try:
                est = adjusted_effect(d, x, y, sel)
            except RankDeficientError:
                est = math.nan
            ev = evaluate_selection(model.graph, x, y, sel)
            out[method] = (est, ev, list(sel), time.perf_counter() - t0, None)
        except Exception as exc:  # recorded per replicate, never fatal
            out[method] = (math.nan, None, [], time.perf_counter() - t0, f"{type(exc).__name__}: {exc}")
    return rep, out


def _run_chunk(args):
    spec, reps = args
    model = spec.model()
    return [_one_replicate(spec, model, r) for r in reps]


def run_bench(spec: BenchSpec) -> BenchReport:
    """Run every method on ``spec.replicates`` independently seeded datasets.

    Replicate ``r`` draws its data with seed ``child_seed(seed, r, 0)`` and
    its solver restarts with ``child_seed(seed, r, 1)``, so results do not
    depend on ``workers`` or on execution order.
    """
    model = spec.model()
    if spec.case is not None:
        truth = case_effect(spec.case)
    else:
        try:
            truth = true_total_effect(model, model.treatment, model.outcome)
        except ValueError:
            truth = math.nan
    reps = list(range(spec.replicates))
    if spec.workers > 1:
        chunks = [(spec, reps[i:: spec.workers]) for i in range(spec.workers)]
        with ProcessPoolExecutor(spec.workers) as pool:
            results = [r for chunk in pool.map(_run_chunk, chunks) for r in chunk]
    else:
        results = [_one_replicate(spec, model, r) for r in reps]
    results.sort(key=lambda t: t[0])

    summaries = {}
    for method in spec.methods:
        s = MethodSummary(method, [], [], [], [], [])
        for _, out in results:
            est, ev, sel, dt, err = out[method]
            s.estimates.append(est)
            s.runtimes.append(dt)
            s.selections.append(sel)
            if err is not None or ev is None:
                s.failures += 1
                s.set_differences.append(0)
                s.contains.append(False)
                s.valid.append(False)
                continue
            s.set_differences.append(ev.set_difference)
            s.contains.append(ev.contains_target)
            s.valid.append(ev.valid)
        summaries[method] = s
    return BenchReport(spec, truth, summaries)


def boxplot_data(report: BenchReport) -> list[dict]:
    """Five-number summary plus mean of each method's effect estimates."""
    rows = []
    for name, s in report.methods.items():
        a = np.sort(s._finite())
        if a.size == 0:
            q = [math.nan] * 5
        else:
            q = np.quantile(a, [0.0, 0.25, 0.5, 0.75, 1.0]).tolist()
        rows.append(
            {
                "method": name,
                "min": q[0],
                "q1": q[1],
                "median": q[2],
                "q3": q[3],
                "max": q[4],
                "mean": float(a.mean()) if a.size else math.nan,
                "true_effect": report.true_effect,
            }
        )
    return rows


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(round(v, 10))
    return str(v)


def report_rows(report: BenchReport, timing: bool = False) -> list[tuple[str, str, str]]:
    """(method, metric, value) rows; runtimes only when ``timing`` is set."""
    rows = []
    for name, s in report.methods.items():
        metrics = [
            ("replicates", len(s.estimates)),
            ("failures", s.failures),
            ("effect_mean", s.mean),
            ("effect_std", s.std),
            ("effect_bias", s.mean - report.true_effect),
            ("set_difference_mean", s.set_difference_mean),
            ("set_difference_std", s.set_difference_std),
            ("containment_pct", s.containment_pct),
            ("validity_pct", s.validity_pct),
        ]
        if timing:
            metrics.append(("runtime_mean_s", float(np.mean(s.runtimes))))
        rows.extend((name, m, _fmt(v)) for m, v in metrics)
    for name in PLACEHOLDERS:
        rows.append((name, "status", "not_implemented"))
    return rows


def report_csv(report: BenchReport, timing: bool = False) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "metric", "value"])
    w.writerows(report_rows(report, timing))
    return buf.getvalue()


def estimates_csv(report: BenchReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    names = list(report.methods)
    w.writerow(["replicate", *names])
    for i in range(report.spec.replicates):
        w.writerow([i, *[_fmt(report.methods[m].estimates[i]) for m in names]])
    return buf.getvalue()


def format_table(report: BenchReport) -> str:
    """Plain-text table with the set-difference and containment columns."""
    spec = report.spec
    head = f"{spec.label()}, n={spec.n}, replicates={spec.replicates}, alpha={spec.alpha}, true effect={report.true_effect:g}"
    lines = [head, ""]
    lines.append(f"{'method':<20} {'set difference':>18} {'% target in set':>16} {'% valid':>8} {'effect mean (sd)':>20}")
    for name, s in report.methods.items():
        sd = f"{s.set_difference_mean:.2f} ± {s.set_difference_std:.2f}"
        eff = f"{s.mean:.3f} ({s.std:.3f})"
        lines.append(f"{name:<20} {sd:>18} {s.containment_pct:>16.0f} {s.validity_pct:>8.0f} {eff:>20}")
    for name in PLACEHOLDERS:
        lines.append(f"{name:<20} {'not implemented':>18}")
    if report.failures:
        lines.append(f"\n{report.failures} method-replicate failures recorded")
    return "\n".join(lines) + "\n"
