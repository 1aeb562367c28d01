"""The target-PCA estimator.

Loadings are sqrt(N) times the top-k eigenvectors of the pairwise-complete
second-moment matrix of the weighted panel; factors come from a per-period
regression of the observed cells on those loadings.
"""

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import NumericalError, SingularGramError
from .moments import pairwise_second_moment
from .panel import Panel, _check_gamma

logger = logging.getLogger(__name__)

# Gram matrices with a larger condition number are treated as singular.
GRAM_CONDITION_LIMIT = 1e12


@dataclass(frozen=True, eq=False)
class FactorFit:
    """Estimated factor model for the target panel.

    Attributes
    ----------
    factors : ndarray, shape (T, k)
    loadings_x : ndarray, shape (N_x, k)
    loadings_y : ndarray, shape (N_y, k)
        Unscaled, so that ``common_y == factors @ loadings_y.T``.
    eigenvalues : ndarray, shape (k,)
        Top eigenvalues of the second-moment matrix divided by the number
        of units. For SE-PCA these are the X eigenvalues followed by the Y
        eigenvalues.
    gamma : float
        Target weight; ``inf`` for PCA on Y alone.
    common_y, common_x : ndarray
    method : str
        One of ``"TPCA"``, ``"XP_Y"``, ``"XP_Z1"``, ``"SE_PCA"``.
    """

    factors: np.ndarray
    loadings_x: np.ndarray
    loadings_y: np.ndarray
    eigenvalues: np.ndarray
    gamma: float
    common_y: np.ndarray
    common_x: np.ndarray
    method: str = "TPCA"

    @property
    def k(self):
        return self.factors.shape[1]

    def weighted_loadings(self):
        """Loadings of the weighted panel [X, sqrt(gamma) Y]."""
        return np.vstack([self.loadings_x, math.sqrt(self.gamma) * self.loadings_y])


def _orient(vecs):
    # Largest-magnitude entry of every eigenvector is made positive.
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def top_eigenpairs(sym, k):
    """The k algebraically largest eigenpairs of a symmetric matrix.

    Eigenvalues are returned in descending order. Exactly tied eigenvalues
    are ordered by their (sign-normalized) eigenvectors, compared
    lexicographically from the first coordinate.
    """
    n = sym.shape[0]
    vals, vecs = scipy.linalg.eigh(sym, subset_by_index=[n - k, n - 1])
    vecs = _orient(vecs)
    order = sorted(range(k), key=lambda j: (-vals[j], tuple(-vecs[:, j])))
    if logger.isEnabledFor(logging.DEBUG):
        low = scipy.linalg.eigh(sym, eigvals_only=True, subset_by_index=[0, 0])[0]
        if low < 0:
            logger.debug("second-moment matrix is indefinite; smallest eigenvalue %.3g", low)
    return vals[order], vecs[:, order]


def regress_factors(values, mask, loadings, ridge=False):
    """Per-period regression of the observed cells on the loadings.

    Parameters
    ----------
    values, mask : ndarray, shape (T, N)
    loadings : ndarray, shape (N, k)
    ridge : bool
        Add 1e-8 * trace(G_t) / k to singular Gram matrices instead of
        raising.
    """
    w = mask.astype(float)
    zw = np.where(mask, values, 0.0)
    k = loadings.shape[1]
    gram = np.einsum("ti,ij,il->tjl", w, loadings, loadings)
    rhs = zw @ loadings
    cond = np.linalg.cond(gram)
    bad = np.flatnonzero(~(cond < GRAM_CONDITION_LIMIT))
    if bad.size:
        if not ridge:
            raise SingularGramError(bad[0], cond[bad[0]])
        warnings.warn(
            f"{bad.size} singular loading Gram matrices regularized (first at period {bad[0]})",
            RuntimeWarning,
            stacklevel=2,
        )
        eye = np.eye(k)
        for t in bad:
            lam = 1e-8 * np.trace(gram[t]) / k
            if lam <= 0:
                raise SingularGramError(t, cond[t])
            gram[t] = gram[t] + lam * eye
    return np.linalg.solve(gram, rhs[..., None])[..., 0]


def fit_weighted(panel, col_weights, k, ridge=False, empty_pairs="error"):
    """Target-PCA on an arbitrary panel with per-column objective weights.

    Columns are scaled by sqrt(weight) before estimation. Returns the
    factors, the loadings of the scaled panel and the eigenvalues.
    """
    T, N = panel.shape
    k = int(k)
    if k < 1 or k >= min(T, N):
        raise ValueError(f"need 1 <= k < min(T, N) = {min(T, N)}, got k={k}")
    scale = np.sqrt(np.asarray(col_weights, dtype=float))
    scaled = Panel(panel.values * scale, panel.mask)
    sigma, _ = pairwise_second_moment(scaled, empty_pairs)
    vals, vecs = top_eigenpairs(sigma / N, k)
    loadings = math.sqrt(N) * vecs
    factors = regress_factors(scaled.values, scaled.mask, loadings, ridge=ridge)
    if not np.all(np.isfinite(factors)):
        raise NumericalError("factor regression produced non-finite values")
    return factors, loadings, vals


def fit(x, y, k, gamma, ridge=False, empty_pairs="error"):
    """Fit target-PCA on the auxiliary panel ``x`` and target panel ``y``.

    Parameters
    ----------
    x, y : Panel
        Same number of periods. Either may have missing cells.
    k : int
        Number of factors, 1 <= k < min(T, N_x + N_y).
    gamma : float
        Positive target weight.
    ridge : bool
        Regularize singular per-period Gram matrices instead of raising
        :class:`SingularGramError`.
    empty_pairs : {"error", "zero"}
        Treatment of unit pairs without a common observed period, see
        :func:`tpca.moments.pairwise_second_moment`.

    Returns
    -------
    FactorFit
    """
    gamma = _check_gamma(gamma)
    if x.T != y.T:
        raise ValueError(f"panels cover different periods: {x.T} vs {y.T}")
    values = np.hstack([x.values, y.values])
    mask = np.hstack([x.mask, y.mask])
    weights = np.concatenate([np.ones(x.N), np.full(y.N, gamma)])
    factors, loadings, vals = fit_weighted(Panel(values, mask), weights, k, ridge=ridge, empty_pairs=empty_pairs)
    lx = loadings[: x.N]
    ly = loadings[x.N :] / math.sqrt(gamma)
    return FactorFit(
        factors=factors,
        loadings_x=lx,
        loadings_y=ly,
        eigenvalues=vals,
        gamma=gamma,
        common_y=factors @ ly.T,
        common_x=factors @ lx.T,
    )


def impute(fit, y):
    """Replace the missing cells of ``y`` by the estimated common components."""
    if fit.common_y.shape != y.shape:
        raise ValueError("fit does not match the target panel")
    return y.replace(values=np.where(y.mask, y.values, fit.common_y), mask=np.ones(y.shape, bool))


def align_rotation(est_factors, true_factors):
    """Least-squares H minimizing ||true - est @ H||_F."""
    est = np.asarray(est_factors, dtype=float)
    true = np.asarray(true_factors, dtype=float)
    if np.linalg.matrix_rank(est) < est.shape[1]:
        raise ValueError("estimated factors are rank deficient")
    h, *_ = np.linalg.lstsq(est, true, rcond=None)
    return h
