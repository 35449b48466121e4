"""Least squares, partial correlation and Fisher-Z conditional-independence tests."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .sem import Dataset

RANK_TOL = 1e-10
DEFAULT_ALPHA = 0.05


class RankDeficientError(np.linalg.LinAlgError):
    def __init__(self, columns: Sequence[str]):
        self.columns = tuple(columns)
        super().__init__(f"design matrix is rank deficient; collinear columns: {', '.join(self.columns)}")


class DegenerateError(ValueError):
    pass


@dataclass(frozen=True)
class RegressionFit:
    coefficients: dict[str, float]
    intercept: float
    residual_variance: float
    n: int
    stderr: dict[str, float]

    def __getitem__(self, name: str) -> float:
        return self.coefficients[name]


@dataclass(frozen=True)
class CiResult:
    statistic: float
    p_value: float
    independent: bool
    cond_size: int
    underpowered: bool = False


def lstsq_qr(design: np.ndarray, y: np.ndarray, names: Sequence[str] | None = None):
    """Least squares through a column-pivoted QR.

    Returns ``(coef, rss, r_inv)`` where ``r_inv`` is the inverse triangular
    factor mapped back to the original column order, so that
    ``r_inv @ r_inv.T`` is ``(A^T A)^{-1}``.
    """
    n, q = design.shape
    if q == 0:
        return np.zeros(0), float(y @ y), np.zeros((0, 0))
    Q, R, piv = scipy.linalg.qr(design, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > RANK_TOL * diag[0])) if diag[0] > 0 else 0
    if rank < q or n < q:
        bad = sorted(piv[rank:]) if rank < q else []
        labels = [names[i] if names else str(i) for i in bad]
        raise RankDeficientError(labels or ["(more regressors than rows)"])
    qty = Q.T @ y
    coef_p = scipy.linalg.solve_triangular(R, qty)
    coef = np.empty(q)
    coef[piv] = coef_p
    resid = y - design @ coef
    r_inv_p = scipy.linalg.solve_triangular(R, np.eye(q))
    r_inv = np.empty_like(r_inv_p)
    r_inv[piv, :] = r_inv_p
    return coef, float(resid @ resid), r_inv


def ols(d: Dataset, response: str, regressors: Sequence[str]) -> RegressionFit:
    """Ordinary least squares of ``response`` on ``regressors`` plus an intercept."""
    regressors = list(regressors)
    if response in regressors:
        raise ValueError("response cannot also be a regressor")
    y = d.column(response)
    design = np.column_stack([np.ones(d.n), d.matrix(regressors)]) if regressors else np.ones((d.n, 1))
    if d.n <= len(regressors) + 1:
        raise RankDeficientError([f"n={d.n} too small for {len(regressors)} regressors"])
    coef, rss, r_inv = lstsq_qr(design, y, ["(intercept)", *regressors])
    dof = d.n - len(regressors) - 1
    s2 = rss / dof
    se = np.sqrt(s2 * np.sum(r_inv**2, axis=1))
    return RegressionFit(
        coefficients=dict(zip(regressors, coef[1:].tolist())),
        intercept=float(coef[0]),
        residual_variance=s2,
        n=d.n,
        stderr=dict(zip(regressors, se[1:].tolist())),
    )


def adjusted_effect(d: Dataset, x: str, y: str, z: Sequence[str]) -> float:
    """Treatment coefficient of the regression of ``y`` on ``x`` and ``z``."""
    return ols(d, y, [x, *z]).coefficients[x]


def _residualize(d: Dataset, col: str, cond: Sequence[str]) -> np.ndarray:
    v = d.column(col)
    design = np.column_stack([np.ones(d.n), d.matrix(cond)]) if cond else np.ones((d.n, 1))
    coef, _, _ = lstsq_qr(design, v, ["(intercept)", *cond])
    return v - design @ coef


def partial_correlation(d: Dataset, a: str, b: str, cond: Sequence[str] = ()) -> float:
    """Correlation of the residuals of ``a`` and ``b`` after regressing each on ``cond``."""
    cond = list(cond)
    if d.n <= len(cond) + 3:
        raise ValueError(f"n={d.n} too small for a conditioning set of size {len(cond)}")
    ra = _residualize(d, a, cond)
    rb = _residualize(d, b, cond)
    na, nb = ra @ ra, rb @ rb
    scale = max(d.column(a) @ d.column(a), d.column(b) @ d.column(b), 1.0)
    if na <= 1e-24 * scale or nb <= 1e-24 * scale:
        raise DegenerateError(f"no residual variance left in {a if na <= nb else b} given {cond}")
    return float(np.clip(ra @ rb / math.sqrt(na * nb), -1.0, 1.0))


def fisher_z(r: float, n: int, cond_size: int, alpha: float = DEFAULT_ALPHA) -> CiResult:
    """Fisher-Z test of zero partial correlation from a sample value ``r``."""
    dof = n - cond_size - 3
    if dof < 1:
        # unpowered: report dependence so no caller prunes on it
        return CiResult(math.nan, 0.0, False, cond_size, underpowered=True)
    if abs(r) >= 1.0:
        return CiResult(math.inf, 0.0, False, cond_size)
    stat = math.sqrt(dof) * abs(math.atanh(r))
    p = math.erfc(stat / math.sqrt(2.0))
    return CiResult(stat, p, p > alpha, cond_size)


def fisher_z_test(d: Dataset, a: str, b: str, cond: Sequence[str] = (), alpha: float = DEFAULT_ALPHA) -> CiResult:
    cond = list(cond)
    if d.n - len(cond) - 3 < 1:
        return fisher_z(0.0, d.n, len(cond), alpha)
    r = partial_correlation(d, a, b, cond)
    return fisher_z(r, d.n, len(cond), alpha)


CiTest = Callable[[str, str, Sequence[str]], CiResult]


class FisherZ:
    """Fisher-Z tester bound to one dataset.

    The correlation matrix is computed once; each query inverts the
    sub-matrix of the variables involved. Instances are callables matching
    the ``CiTest`` signature so other tests can be swapped in.
    """

    def __init__(self, d: Dataset, alpha: float = DEFAULT_ALPHA):
        if not 0.0 < alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        self.alpha = alpha
        self.n = d.n
        self._pos = {c: i for i, c in enumerate(d.columns)}
        sd = d.values.std(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            self._corr = np.corrcoef(d.values, rowvar=False) if d.n > 1 else np.eye(len(d.columns))
        self._constant = {c for c, s in zip(d.columns, sd) if s == 0.0}
        self.calls = 0

    def partial_corr(self, a: str, b: str, cond: Sequence[str] = ()) -> float:
        for c in (a, b):
            if c in self._constant:
                raise DegenerateError(f"column {c} is constant")
        idx = [self._pos[a], self._pos[b], *[self._pos[c] for c in cond if c not in self._constant]]
        sub = self._corr[np.ix_(idx, idx)]
        try:
            prec = np.linalg.inv(sub)
        except np.linalg.LinAlgError:
            prec = np.linalg.pinv(sub)
        den = prec[0, 0] * prec[1, 1]
        if not den > 0:
            raise DegenerateError(f"no residual variance for {a}, {b} given {list(cond)}")
        return float(np.clip(-prec[0, 1] / math.sqrt(den), -1.0, 1.0))

    def __call__(self, a: str, b: str, cond: Sequence[str] = ()) -> CiResult:
        self.calls += 1
        cond = list(cond)
        if self.n - len(cond) - 3 < 1:
            return fisher_z(0.0, self.n, len(cond), self.alpha)
        return fisher_z(self.partial_corr(a, b, cond), self.n, len(cond), self.alpha)
