"""Covariate selection by causally constrained best-subset search.

:func:`cmio_select` grows a k-sparse least-squares support one size at a
time. Whenever the size-k support extends the size-(k-1) support, the new
covariate must stay dependent on the outcome under every tested
conditioning set drawn from the previous support (plus the treatment);
the first independence stops the search and keeps the previous support.

:func:`cmio_select_latent` post-processes that output for settings with
hidden variables: it adds back covariates still associated with the
outcome, then prunes the additions backwards.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import graph as G
from .graph import Dag, sorted_nodes
from .sem import Dataset, child_seed
from .stats import DEFAULT_ALPHA, CiTest, FisherZ, RankDeficientError, adjusted_effect
from .subset import SolverConfig, SolverError, SubsetProblem, solve_k_sparse

ALG1 = "alg1"
ALG2 = "alg2"
SUBSET_CAP = 12
# conditioning-set families for the nested-step test
ALL_SUBSETS = "all"
NEAR_FULL = "near-full"
FAMILIES = (ALL_SUBSETS, NEAR_FULL)

FIXED = "fixed"
BIC = "bic"
SCHEDULES = (FIXED, BIC)


class CmioError(RuntimeError):
    def __init__(self, msg: str, trace: list):
        super().__init__(msg)
        self.trace = trace


@dataclass
class KStep:
    k: int
    support: list[str]
    nested: bool
    new_variable: str | None = None
    ci_decisions: list[tuple[list[str], float]] = field(default_factory=list)
    accepted: bool = True


@dataclass
class SelectionReport:
    selected: list[str]
    per_k_trace: list[KStep]
    stopped_at_k: int
    algorithm: str
    effect_estimate: float
    alpha_level: float
    treatment: str = ""
    outcome: str = ""
    condition_on_treatment: bool = True
    bonferroni: bool = False
    family: str = NEAR_FULL
    selection_adjust: bool = False
    schedule: str = BIC
    latent_steps: list[dict] = field(default_factory=list)
    ci_tests: int = 0

    def to_dict(self) -> dict:
        out = asdict(self)
        if not math.isfinite(self.effect_estimate):
            out["effect_estimate"] = None
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"


class SelectionMetrics(NamedTuple):
    valid: bool
    set_difference: int
    contains_target: bool


def conditioning_sets(prev: Sequence[str], cap: int = SUBSET_CAP, family: str = ALL_SUBSETS) -> list[tuple[str, ...]]:
    """Subsets of ``prev`` to test against, full set first.

    ``all``: every subset while ``len(prev) <= cap``, otherwise the empty
    set, the full set and each leave-one-out set. ``near-full``: the full
    set and each leave-one-out set.
    """
    prev = tuple(prev)
    if family not in FAMILIES:
        raise ValueError(f"unknown conditioning family {family!r}")
    if family == NEAR_FULL:
        loo = [prev[:i] + prev[i + 1:] for i in range(len(prev))]
        return [prev] + [a for a in loo if a != prev]
    if len(prev) <= cap:
        sets = [prev]
        for r in range(len(prev)):
            sets.extend(itertools.combinations(prev, r))
        return sets
    return [prev, ()] + [prev[:i] + prev[i + 1:] for i in range(len(prev))]


def selection_level(alpha: float, candidates: int) -> float:
    """Per-test level keeping the max over ``candidates`` null statistics at ``alpha``."""
    return -math.expm1(math.log1p(-alpha) / max(candidates, 1))


def bic_level(n: int) -> float:
    """Two-sided level of the test ``|z| > sqrt(log n)``."""
    return math.erfc(math.sqrt(math.log(max(n, 2)) / 2))


def scheduled_level(alpha: float, n: int, schedule: str) -> float:
    if schedule not in SCHEDULES:
        raise ValueError(f"unknown level schedule {schedule!r}")
    return min(alpha, bic_level(n)) if schedule == BIC else alpha


def _resolve(d: Dataset, x: str | None, y: str | None) -> Dataset:
    x = x or d.treatment
    y = y or d.outcome
    if (x, y) != (d.treatment, d.outcome):
        d = d.with_roles(x, y)
    if not d.covariates:
        raise ValueError("dataset has no covariates to select from")
    return d


def _estimate(d: Dataset, selected: Sequence[str]) -> float:
    try:
        return adjusted_effect(d, d.treatment, d.outcome, list(selected))
    except RankDeficientError:
        return math.nan


def cmio_select(
    d: Dataset,
    x: str | None = None,
    y: str | None = None,
    alpha: float = DEFAULT_ALPHA,
    cfg: SolverConfig | None = None,
    *,
    ci_test: CiTest | None = None,
    condition_on_treatment: bool = True,
    bonferroni: bool = False,
    subset_cap: int = SUBSET_CAP,
    family: str = NEAR_FULL,
    selection_adjust: bool = False,
    schedule: str = BIC,
    max_k: int | None = None,
) -> SelectionReport:
    """Select an adjustment set for ``x -> y`` from the dataset's covariates.

    ``ci_test`` defaults to a Fisher-Z test at level ``alpha``; any callable
    ``(a, b, cond) -> CiResult`` can be plugged in, its ``p_value`` is what
    gets compared against ``alpha`` (Bonferroni-divided when requested).

    With ``selection_adjust`` the level is Sidak-corrected for the number of
    candidates the new variable was picked from: it is the best of them, so
    its statistic is a maximum and an uncorrected test passes noise too often.
    ``schedule="bic"`` caps the level at the BIC-equivalent ``|z| > sqrt(log n)``
    so the false-inclusion rate vanishes as n grows.
    """
    d = _resolve(d, x, y)
    x, y = d.treatment, d.outcome
    cfg = cfg or SolverConfig()
    test = ci_test or FisherZ(d, alpha)
    alpha_k = scheduled_level(alpha, d.n, schedule)
    covs = d.covariates
    p = len(covs)
    kmax = min(p, d.n - 4) if max_k is None else min(max_k, p)
    base = SubsetProblem.from_dataset(d, 0, covs)
    pos = {c: i for i, c in enumerate(covs)}
    head = [x] if condition_on_treatment else []

    trace: list[KStep] = []
    prev: tuple[str, ...] = ()
    selected: tuple[str, ...] = ()
    stopped = kmax
    n_tests = 0
    for k in range(1, kmax + 1):
        kcfg = SolverConfig(**{**asdict(cfg), "seed": child_seed(cfg.seed, k), "trace": False})
        try:
            sol = solve_k_sparse(base.with_k(k), kcfg, init_supports=[[pos[c] for c in prev]])
        except (SolverError, np.linalg.LinAlgError, ValueError) as exc:
            raise CmioError(f"k-sparse solve failed at k={k}: {exc}", trace) from exc
        support = tuple(sorted_nodes(sol.support_names))
        if set(prev) <= set(support):
            new = [c for c in support if c not in prev]
            # k-sparse supports of size k may carry zero coefficients; nested means one genuinely new member
            step = KStep(k, list(support), True, new[0] if len(new) == 1 else None)
            sets = conditioning_sets(prev, subset_cap, family)
            level = alpha_k / len(sets) if bonferroni else alpha_k
            if selection_adjust:
                level = selection_level(level, p - len(prev))
            ok = True
            for cond in sets:
                res = test(new[0], y, [*head, *cond]) if len(new) == 1 else None
                n_tests += 1
                pval = res.p_value if res is not None else 0.0
                step.ci_decisions.append((list(cond), pval))
                if pval > level:
                    ok = False
                    break
            step.accepted = ok
            trace.append(step)
            if ok:
                selected = prev = support
            else:
                selected = prev
                stopped = k
                break
        else:
            trace.append(KStep(k, list(support), False))
            selected = prev = support

    return SelectionReport(
        selected=list(selected),
        per_k_trace=trace,
        stopped_at_k=stopped,
        algorithm=ALG1,
        effect_estimate=_estimate(d, selected),
        alpha_level=alpha,
        treatment=x,
        outcome=y,
        condition_on_treatment=condition_on_treatment,
        bonferroni=bonferroni,
        family=family,
        selection_adjust=selection_adjust,
        schedule=schedule,
        ci_tests=n_tests,
    )


def cmio_select_latent(
    d: Dataset,
    x: str | None = None,
    y: str | None = None,
    alpha: float = DEFAULT_ALPHA,
    cfg: SolverConfig | None = None,
    *,
    ci_test: CiTest | None = None,
    **kw,
) -> SelectionReport:
    """Hidden-variable variant: the base selection plus covariates it cannot drop.

    Pass 1 keeps each remaining covariate T still dependent on the outcome
    given ``{x} | O``; pass 2 walks the survivors and removes T when it is
    independent of the outcome given ``{x} | O | (survivors - T)``. Both
    passes test at the same scheduled level as the base selection.
    """
    d = _resolve(d, x, y)
    x, y = d.treatment, d.outcome
    test = ci_test or FisherZ(d, alpha)
    rep = cmio_select(d, alpha=alpha, cfg=cfg, ci_test=test, **kw)
    level = scheduled_level(alpha, d.n, rep.schedule)
    base = list(rep.selected)
    steps: list[dict] = []
    rest = [c for c in d.covariates if c not in base]
    for t in list(rest):
        res = test(t, y, [x, *base])
        removed = res.p_value > level
        steps.append({"pass": 1, "variable": t, "cond_size": res.cond_size, "p_value": res.p_value, "removed": removed})
        if removed:
            rest.remove(t)
    for t in list(rest):
        cond = [x, *base, *[c for c in rest if c != t]]
        res = test(t, y, cond)
        removed = res.p_value > level
        steps.append({"pass": 2, "variable": t, "cond_size": res.cond_size, "p_value": res.p_value, "removed": removed})
        if removed:
            rest.remove(t)
    selected = sorted_nodes([*base, *rest])
    rep.selected = selected
    rep.algorithm = ALG2
    rep.latent_steps = steps
    rep.ci_tests += len(steps)
    rep.effect_estimate = _estimate(d, selected)
    return rep


def evaluate_selection(g: Dag, x: str, y: str, selected: Sequence[str]) -> SelectionMetrics:
    """Validity, size of the symmetric difference to the optimal set, and containment."""
    sel = frozenset(selected)
    target = G.optimal_adjustment(g, x, y)
    return SelectionMetrics(
        valid=G.is_valid_adjustment(g, x, y, sel),
        set_difference=len(sel ^ target),
        contains_target=target <= sel,
    )
