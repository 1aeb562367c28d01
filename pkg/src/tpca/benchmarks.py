"""Comparison estimators built from the same machinery as target-PCA.

XP_Y runs the missing-data PCA on the target panel alone, XP_Z1 on the
unweighted concatenation [X, Y], and SE_PCA estimates factors separately on
X and Y and regresses each unit on the combined factor set.
"""

import dataclasses
import enum

import numpy as np

from .errors import InfeasibleError
from .estimator import FactorFit, fit, fit_weighted


class BenchmarkId(str, enum.Enum):
    TPCA = "TPCA"
    XP_Y = "XP_Y"
    XP_Z1 = "XP_Z1"
    SE_PCA = "SE_PCA"

    @classmethod
    def parse(cls, tag):
        if isinstance(tag, cls):
            return tag
        try:
            return cls(str(tag).upper().replace("-", "_"))
        except ValueError:
            names = ", ".join(b.value for b in cls)
            raise ValueError(f"unknown estimator {tag!r}; expected one of {names}") from None


def _check_periods(y):
    empty = np.flatnonzero(~y.mask.any(axis=1))
    if empty.size:
        raise InfeasibleError(f"period {empty[0]} has no observed target unit")


def _pca_single(panel, k, empty_pairs):
    _check_periods(panel)
    factors, loadings, vals = fit_weighted(panel, np.ones(panel.N), k, empty_pairs=empty_pairs)
    return factors, loadings, vals


def xp_y(y, k, empty_pairs="error"):
    """Missing-data PCA on the target panel alone (target weight = infinity)."""
    factors, loadings, vals = _pca_single(y, k, empty_pairs)
    T = y.T
    return FactorFit(
        factors=factors,
        loadings_x=np.zeros((0, factors.shape[1])),
        loadings_y=loadings,
        eigenvalues=vals,
        gamma=float("inf"),
        common_y=factors @ loadings.T,
        common_x=np.zeros((T, 0)),
        method=BenchmarkId.XP_Y.value,
    )


def xp_z1(x, y, k, empty_pairs="error"):
    """Target-PCA with unit target weight."""
    fitted = fit(x, y, k, 1.0, empty_pairs=empty_pairs)
    return dataclasses.replace(fitted, method=BenchmarkId.XP_Z1.value)


def regress_loadings(panel, factors):
    """Per-unit time-series OLS of the observed cells on the factors.

    Units sharing an observation pattern are solved together. Collinear
    factors get the minimum-norm solution.
    """
    T, N = panel.shape
    m = factors.shape[1]
    counts = panel.mask.sum(axis=0)
    short = np.flatnonzero(counts < m)
    if short.size:
        i = short[0]
        raise InfeasibleError(f"unit {i} has {counts[i]} observed periods, fewer than {m} factors")
    loadings = np.empty((N, m))
    patterns, inverse = np.unique(panel.mask.T, axis=0, return_inverse=True)
    for g, rows in enumerate(patterns):
        cols = np.flatnonzero(inverse.ravel() == g)
        sol, *_ = np.linalg.lstsq(factors[rows], panel.values[np.ix_(rows, cols)], rcond=None)
        loadings[cols] = sol.T
    return loadings


def se_pca(x, y, k, empty_pairs="error"):
    """Separate PCAs on X and Y with loadings re-estimated on the combined factors.

    If PCA on Y is infeasible the factor set is the X factors alone.
    """
    fx, _, vx = _pca_single(x, k, empty_pairs)
    try:
        fy, _, vy = _pca_single(y, k, empty_pairs)
        factors = np.hstack([fx, fy])
        vals = np.concatenate([vx, vy])
    except InfeasibleError:
        factors, vals = fx, vx
    lx = regress_loadings(x, factors)
    ly = regress_loadings(y, factors)
    return FactorFit(
        factors=factors,
        loadings_x=lx,
        loadings_y=ly,
        eigenvalues=vals,
        gamma=float("nan"),
        common_y=factors @ ly.T,
        common_x=factors @ lx.T,
        method=BenchmarkId.SE_PCA.value,
    )


def run_benchmark(tag, x, y, k, gamma, empty_pairs="error"):
    """Dispatch one estimator. ``gamma`` is only used by TPCA."""
    tag = BenchmarkId.parse(tag)
    if tag is BenchmarkId.TPCA:
        return fit(x, y, k, gamma, empty_pairs=empty_pairs)
    if tag is BenchmarkId.XP_Y:
        return xp_y(y, k, empty_pairs)
    if tag is BenchmarkId.XP_Z1:
        return xp_z1(x, y, k, empty_pairs)
    return se_pca(x, y, k, empty_pairs)
