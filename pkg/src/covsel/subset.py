"""k-sparse least squares with an always-kept treatment coefficient.

Solves ``min 1/2 ||y - a*x - Z b||^2  s.t.  ||b||_0 <= k`` (intercept
profiled out by centering) with the projected-gradient / hard-thresholding
scheme

    beta_{m+1} = H_k(beta_m - grad g(beta_m) / L),

where ``H_k`` keeps the treatment coordinate and the ``k`` largest covariate
coordinates. Once the support stops changing the iterate is polished by
exact least squares on its support. Runs are repeated from several starting
supports and a 1-swap exchange search refines each distinct end point.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

from .sem import Dataset

EXHAUSTIVE_CAP = 15


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class SubsetProblem:
    """Design column 0 is the treatment; columns 1..p are the covariates."""

    design: np.ndarray
    response: np.ndarray
    k: int
    box_bound: float | None = None
    names: tuple[str, ...] | None = None
    standardize: bool = True

    def __post_init__(self):
        design = np.asarray(self.design, dtype=float)
        response = np.asarray(self.response, dtype=float).ravel()
        if design.ndim != 2 or design.shape[1] < 1:
            raise ValueError("design must be an n x (p+1) matrix")
        if design.shape[0] != response.shape[0] or design.shape[0] < 1:
            raise ValueError("design and response need the same positive number of rows")
        if not (np.all(np.isfinite(design)) and np.all(np.isfinite(response))):
            raise ValueError("non-finite values in subset problem")
        p = design.shape[1] - 1
        if not 0 <= self.k <= p:
            raise ValueError(f"k={self.k} outside [0, p={p}]")
        if self.box_bound is not None and not self.box_bound > 0:
            raise ValueError("box_bound must be positive")
        if self.names is not None and len(self.names) != p:
            raise ValueError("one name per covariate column required")
        object.__setattr__(self, "design", design)
        object.__setattr__(self, "response", response)
        object.__setattr__(self, "_work", None)

    @property
    def p(self) -> int:
        return self.design.shape[1] - 1

    @property
    def n(self) -> int:
        return self.design.shape[0]

    @classmethod
    def from_dataset(cls, d: Dataset, k: int, covariates: Sequence[str] | None = None, **kw) -> "SubsetProblem":
        covs = tuple(d.covariates if covariates is None else covariates)
        design = d.matrix([d.treatment, *covs])
        return cls(design, d.column(d.outcome), k, names=covs, **kw)

    def with_k(self, k: int) -> "SubsetProblem":
        out = SubsetProblem(self.design, self.response, k, self.box_bound, self.names, self.standardize)
        # the Gram work does not depend on k; share it across a k-path
        object.__setattr__(out, "_work", _work_for(self))
        return out


@dataclass
class SolverConfig:
    """Knobs for :func:`solve_k_sparse`.

    ``step_constant`` is the Lipschitz constant L in the solver's working
    (standardized) scale; when unset, ``L = step_scale * l`` with ``l`` the
    largest eigenvalue of the working Gram matrix. ``L < l`` is rejected.
    """

    step_constant: float | None = None
    step_scale: float = 1.0
    max_iterations: int = 1000
    tolerance: float = 1e-10
    restarts: int = 50
    seed: int = 0
    stable_window: int = 3
    swap_search: bool = True
    trace: bool = False
    check_decrease: bool = False

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.step_scale < 1.0:
            raise ValueError("step_scale must be >= 1 (L >= l)")


@dataclass
class SubsetSolution:
    support: tuple[int, ...]
    beta: np.ndarray
    alpha: float
    intercept: float
    objective: float
    iterations: int
    converged: bool
    names: tuple[str, ...] | None = None
    lipschitz: float = math.nan
    step_constant: float = math.nan
    trace: list[float] = field(default_factory=list)
    trace_kind: list[str] = field(default_factory=list)
    trace_step: list[float] = field(default_factory=list)

    @property
    def support_names(self) -> frozenset:
        if self.names is None:
            return frozenset(self.support)
        return frozenset(self.names[i] for i in self.support)


class _Work:
    """Centered/scaled copy of a problem plus its Gram quantities."""

    def __init__(self, prob: SubsetProblem):
        A = prob.design
        y = prob.response
        self.xmean = A.mean(axis=0)
        self.ymean = float(y.mean())
        Ac = A - self.xmean
        yc = y - self.ymean
        if prob.standardize:
            scale = np.sqrt(np.sum(Ac**2, axis=0))
            scale[scale == 0] = 1.0
        else:
            scale = np.ones(A.shape[1])
        if np.sum(Ac[:, 0] ** 2) == 0:
            raise SolverError("treatment column is constant")
        self.scale = scale
        As = Ac / scale
        self.G = As.T @ As
        self.c = As.T @ yc
        self.yy = float(yc @ yc)
        self.p = A.shape[1] - 1
        self.box = prob.box_bound
        self.l = float(np.linalg.eigvalsh(self.G)[-1])
        # exact polishing needs the centered design for rank-deficient supports
        self.As = As
        self.yc = yc
        self._full = None

    def full_fit(self) -> np.ndarray:
        if self._full is None:
            self._full = np.linalg.lstsq(self.As, self.yc, rcond=None)[0]
        return self._full

    def objective(self, beta: np.ndarray) -> float:
        return 0.5 * max(self.yy - 2.0 * self.c @ beta + beta @ self.G @ beta, 0.0)

    def project(self, v: np.ndarray, k: int) -> tuple[np.ndarray, tuple[int, ...]]:
        """Treatment coordinate kept; best k covariates; ties to the lower index."""
        cov = v[1:]
        if self.box is None:
            score = np.abs(cov)
        else:
            over = np.maximum(np.abs(cov) - self.box, 0.0)
            score = cov**2 - over**2
        order = np.argsort(-score, kind="stable")
        keep = np.sort(order[:k])
        out = np.zeros_like(v)
        out[0] = v[0]
        out[1 + keep] = cov[keep]
        if self.box is not None:
            out[1:] = np.clip(out[1:], -self.box, self.box)
        return out, tuple(int(i) for i in keep)

    def polish(self, support: tuple[int, ...]) -> np.ndarray:
        """Least squares restricted to the support (treatment always in)."""
        cols = [0, *[1 + j for j in support]]
        beta = np.zeros(self.p + 1)
        sub = self.G[np.ix_(cols, cols)]
        try:
            chol = np.linalg.cholesky(sub)
            if np.min(np.diag(chol)) ** 2 < 1e-12 * np.max(np.diag(sub)):
                raise np.linalg.LinAlgError
            sol = scipy.linalg.cho_solve((chol, True), self.c[cols])
        except np.linalg.LinAlgError:
            sol = np.linalg.lstsq(self.As[:, cols], self.yc, rcond=None)[0]
        if self.box is not None:
            sol[1:] = np.clip(sol[1:], -self.box, self.box)
        beta[cols] = sol
        return beta

    def rss_on(self, support: tuple[int, ...]) -> float:
        return 2.0 * self.objective(self.polish(support))


def _work_for(prob: SubsetProblem) -> _Work:
    if prob._work is None:
        object.__setattr__(prob, "_work", _Work(prob))
    return prob._work


def _iht(w: _Work, k: int, beta: np.ndarray, support: tuple[int, ...], L: float, cfg: SolverConfig, rec: list | None):
    """Run the thresholded-gradient iteration from a feasible point.

    Returns ``(beta, support, objective, iterations, converged)``.
    """
    obj = w.objective(beta)
    stable = 0
    slack = 1e-12 * (1.0 + abs(obj))
    for it in range(1, cfg.max_iterations + 1):
        grad = w.G @ beta - w.c
        new, new_supp = w.project(beta - grad / L, k)
        new_obj = w.objective(new)
        step = float(np.sum((new - beta) ** 2))
        if cfg.check_decrease and obj - new_obj < 0.5 * (L - w.l) * step - slack:
            raise SolverError(f"sufficient decrease violated at iteration {it}")
        if rec is not None:
            rec.append((new_obj, "iht", step))
        stable = stable + 1 if new_supp == support else 0
        gain = obj - new_obj
        beta, support, obj = new, new_supp, new_obj
        if stable >= cfg.stable_window or gain <= cfg.tolerance * (1.0 + obj):
            polished = w.polish(support)
            pol_obj = w.objective(polished)
            if pol_obj <= obj:
                if rec is not None:
                    rec.append((pol_obj, "polish", float(np.sum((polished - beta) ** 2))))
                beta, obj = polished, pol_obj
            # stationary if one more step keeps the support
            _, nxt = w.project(beta - (w.G @ beta - w.c) / L, k)
            if nxt == support:
                return beta, support, obj, it, True
            stable = 0
    return beta, support, obj, cfg.max_iterations, False


def _swap_search(w: _Work, support: tuple[int, ...], rss: float, rec: list | None, max_swaps: int = 1000):
    """Best-improvement exchange of one support member for one outsider.

    With ``M`` the inverse Gram matrix of the current columns, dropping
    member ``j`` changes the fit by Schur-complement updates, so the gain of
    every (drop j, add i) pair comes out of one matrix product.
    """
    k, p = len(support), w.p
    if k == 0 or k == p:
        return support, rss
    G, c = w.G, w.c
    for _ in range(max_swaps):
        cols = np.array([0, *[1 + s for s in support]])
        inside = set(support)
        outside = np.array([j for j in range(p) if j not in inside])
        out_cols = 1 + outside
        try:
            M = np.linalg.inv(G[np.ix_(cols, cols)])
        except np.linalg.LinAlgError:
            break
        b = M @ c[cols]
        full_rss = w.yy - c[cols] @ b
        U = G[np.ix_(cols, out_cols)]
        Q = M @ U
        d_full = G[out_cols, out_cols] - np.sum(U * Q, axis=0)
        r_full = c[out_cols] - U.T @ b
        mjj = np.diag(M)[1:]
        if np.any(mjj <= 0):
            break
        Qs = Q[1:]
        drop_rss = full_rss + b[1:] ** 2 / mjj
        r = r_full[None, :] + (b[1:] / mjj)[:, None] * Qs
        d = d_full[None, :] + Qs**2 / mjj[:, None]
        ok = d > 1e-12 * np.maximum(G[out_cols, out_cols], 1e-300)[None, :]
        gain = np.where(ok, r**2 / np.where(ok, d, 1.0), -np.inf)
        new_rss = drop_rss[:, None] - gain
        jj, ii = np.unravel_index(int(np.argmin(new_rss)), new_rss.shape)
        if rss - new_rss[jj, ii] <= 1e-10 * max(rss, 1e-300):
            break
        support = tuple(sorted((inside - {support[jj]}) | {int(outside[ii])}))
        rss = w.rss_on(support)
        if rec is not None:
            rec.append((0.5 * rss, "swap", math.nan))
    return support, rss


def _finish(prob: SubsetProblem, w: _Work, beta_w: np.ndarray, support, iters, converged, L, rec) -> SubsetSolution:
    coef = beta_w / w.scale
    alpha = float(coef[0])
    beta = coef[1:].copy()
    intercept = float(w.ymean - w.xmean @ coef)
    resid = prob.response - intercept - prob.design @ coef
    sol = SubsetSolution(
        support=tuple(sorted(support)),
        beta=beta,
        alpha=alpha,
        intercept=intercept,
        objective=0.5 * float(resid @ resid),
        iterations=iters,
        converged=converged,
        names=prob.names,
        lipschitz=w.l,
        step_constant=L,
    )
    if rec is not None:
        sol.trace = [r[0] for r in rec]
        sol.trace_kind = [r[1] for r in rec]
        sol.trace_step = [r[2] for r in rec]
    return sol


def _better(obj: float, supp, best_obj: float, best_supp) -> bool:
    tol = 1e-12 * max(1.0, abs(best_obj))
    if obj < best_obj - tol:
        return True
    return abs(obj - best_obj) <= tol and best_supp is not None and supp < best_supp


def solve_k_sparse(
    prob: SubsetProblem,
    cfg: SolverConfig | None = None,
    init_supports: Sequence[Sequence[int]] = (),
) -> SubsetSolution:
    """Best k-subset regression by restarted hard-thresholded gradient steps.

    Starts: the thresholded full least-squares fit, any ``init_supports``
    given by the caller, then random supports up to ``cfg.restarts`` runs.
    The lowest objective wins; ties go to the lexicographically smaller
    support.
    """
    cfg = cfg or SolverConfig()
    w = _work_for(prob)
    L = cfg.step_constant if cfg.step_constant is not None else cfg.step_scale * w.l
    if L < w.l * (1.0 - 1e-12):
        raise ValueError(f"step constant L={L:g} is below the largest Gram eigenvalue l={w.l:g}")
    k, p = prob.k, prob.p
    rng = np.random.default_rng(cfg.seed)

    if k == 0 or k == p:
        support = tuple(range(k))
        beta = w.polish(support)
        rec = [(w.objective(beta), "polish", math.nan)] if cfg.trace else None
        return _finish(prob, w, beta, support, 0, True, L, rec)

    starts: list[tuple[int, ...]] = []
    starts.append(w.project(w.full_fit(), k)[1])
    for s in init_supports:
        s = tuple(sorted(int(i) for i in s))
        if len(s) > k or any(not 0 <= i < p for i in s):
            raise ValueError(f"initial support {s} infeasible for k={k}")
        starts.append(s)
    n_random = max(cfg.restarts - len(starts), 0)
    for _ in range(n_random):
        starts.append(tuple(sorted(int(i) for i in rng.choice(p, size=k, replace=False))))

    seen_start: set = set()
    seen_end: dict = {}
    best = None
    total_iters = 0
    for s in starts:
        if s in seen_start:
            continue
        seen_start.add(s)
        rec = [] if cfg.trace else None
        beta0 = w.polish(s)
        if rec is not None:
            rec.append((w.objective(beta0), "start", math.nan))
        beta, supp, obj, iters, conv = _iht(w, k, beta0, s, L, cfg, rec)
        total_iters += iters
        if supp in seen_end:
            continue
        if cfg.swap_search and w.box is None:
            new_supp, rss = _swap_search(w, supp, 2.0 * obj, rec)
            if new_supp != supp:
                supp = new_supp
                beta = w.polish(supp)
                obj = w.objective(beta)
        seen_end[supp] = obj
        if best is None or _better(obj, supp, best[2], best[1]):
            best = (beta, supp, obj, conv, rec)
    beta, supp, obj, conv, rec = best
    return _finish(prob, w, beta, supp, total_iters, conv, L, rec)


def solve_exhaustive(prob: SubsetProblem, cap: int = EXHAUSTIVE_CAP) -> SubsetSolution:
    """Global minimiser by enumerating every support of size k.

    Adding a column never raises the residual sum of squares, so size-k
    supports attain the minimum over all supports of size at most k.
    """
    if prob.p > cap:
        raise ValueError(f"p={prob.p} exceeds the exhaustive-search cap {cap}")
    w = _work_for(prob)
    best = None
    for supp in itertools.combinations(range(prob.p), prob.k):
        beta = w.polish(supp)
        obj = w.objective(beta)
        if best is None or _better(obj, supp, best[2], best[1]):
            best = (beta, supp, obj)
    beta, supp, obj = best
    return _finish(prob, w, beta, supp, 0, True, w.l, None)


def objective_trace(sol: SubsetSolution) -> list[float]:
    """Objective values recorded along the winning run."""
    if not sol.trace:
        raise ValueError("solution has no trace; solve with SolverConfig(trace=True)")
    return list(sol.trace)


def trace_csv(sol: SubsetSolution) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration", "objective", "kind"])
    for i, (obj, kind) in enumerate(zip(sol.trace, sol.trace_kind)):
        w.writerow([i, repr(obj), kind])
    return buf.getvalue()
