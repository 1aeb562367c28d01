"""Asymptotic variances of target-PCA under the simplified factor model,
confidence intervals for the common components, and target-weight selection.

All formulas are evaluated in the coordinates of the supplied factors and
loadings. Plug-in estimates are rotated relative to the truth, but the
common-component variance is invariant to that rotation.
"""

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, SingularGramError
from .estimator import fit as fit_tpca
from .moments import obs_stats, plugin_moments
from .panel import delta_rate, stack_auxiliary

DEFAULT_R_GRID = np.logspace(-2, 2, 61)


@dataclass(frozen=True, eq=False)
class VarianceReport:
    """Closed-form variances at one target weight.

    Per-unit loading variances have shape (N_y, k, k), per-period factor
    variances (T, k, k). The four ``*_term`` arrays are the additive parts
    of ``sigma_C`` (T, N_y); ``cross_term`` already carries its factor -2.
    """

    sigma_Lambda_obs: np.ndarray
    sigma_Lambda_miss: np.ndarray
    sigma_F_obs: np.ndarray
    sigma_F_miss: np.ndarray
    loading_term: np.ndarray
    factor_obs_term: np.ndarray
    factor_miss_term: np.ndarray
    cross_term: np.ndarray
    sigma_C: np.ndarray
    delta: int
    r: float
    gamma: float
    moments: object = None
    obs: object = None

    @property
    def sigma_Lambda(self):
        return self.sigma_Lambda_obs + self.sigma_Lambda_miss

    @property
    def sigma_F(self):
        return self.sigma_F_obs + self.sigma_F_miss


def _inv(a):
    return np.linalg.inv(a)


def _kron_batch(a, b):
    # a: (T, k, k), b: (k, k) -> (T, k^2, k^2)
    T, k, _ = a.shape
    return np.einsum("tij,kl->tikjl", a, b).reshape(T, k * k, k * k)


def _loading_kernel(lam, xi):
    """(L_i' kron I) Xi (L_i kron I) for every row L_i of ``lam``."""
    k = lam.shape[1]
    xi4 = xi.reshape(k, k, k, k)
    return np.einsum("ia,ib,ajbl->ijl", lam, lam, xi4)


def _check_B(B):
    cond = np.linalg.cond(B)
    bad = np.flatnonzero(~(cond < 1e12))
    if bad.size:
        raise SingularGramError(bad[0], cond[bad[0]])


def corollary_variances(m, s, fit, r):
    """Evaluate the simplified-model variances at ``gamma = r * N_x / N_y``.

    Parameters
    ----------
    m : ModelMoments
    s : ObsStats
        Statistics of the target mask.
    fit : FactorFit
        Supplies F_t and the target loadings, in the same coordinates as
        ``m``.
    r : float
        Scale of the target weight relative to N_x / N_y.

    Returns
    -------
    VarianceReport
    """
    r = float(r)
    if not r > 0 or not math.isfinite(r):
        raise ValueError(f"r must be positive and finite, got {r}")
    F = np.asarray(fit.factors, dtype=float)
    lam = np.asarray(fit.loadings_y, dtype=float)
    T, k = F.shape
    n_y = lam.shape[0]
    if m.sigma_Ly_t.shape[0] != T or s.q_diag.shape[0] != n_y:
        raise ValueError("moments, pattern statistics and fit disagree in shape")
    n_x, n_y_m = m.n_x, m.n_y
    delta = delta_rate(n_y, T)
    xi = m.xi_F
    sx, sy, syt = m.sigma_Lx, m.sigma_Ly, m.sigma_Ly_t
    sf_inv = _inv(m.sigma_F)
    A = sx + r * sy
    a_inv = _inv(A)
    B = sx[None] + r * syt
    _check_B(B)
    b_inv = _inv(B)
    q_ii = s.q_diag

    # loadings
    lam_obs = (m.var_ey / q_ii)[:, None, None] * sf_inv[None]
    M = _loading_kernel(lam, xi)
    S = r * sy
    t1 = np.einsum("jk,ikl,lm->ijm", sf_inv, M, sf_inv) * (1.0 / q_ii - 1.0)[:, None, None]
    inner = m.var_ey * r * r * (sy @ m.sigma_F @ sy)
    inner = inner[None] + np.einsum("jk,ikl,lm->ijm", S, M, S)
    left = sf_inv @ a_inv
    t2 = np.einsum("jk,ikl,ml->ijm", left, inner, left)
    lam_miss = t1 + (s.omega23_i - 1.0 / q_ii)[:, None, None] * t2

    # factors, observed part
    noise = (n_y_m / n_x) * m.var_ex * sx[None] + (r * r * m.var_ey) * syt
    f_obs = b_inv @ noise @ b_inv

    # factors, missing part
    v = F @ (a_inv @ sf_inv).T                              # v_t = A^-1 Sigma_F^-1 F_t
    P = np.kron(sx, S)[None] + _kron_batch(r * syt, sx)
    R = _kron_batch(r * syt, S)
    o1, o2, o3 = s.omega1 - 1.0, s.omega2 - 1.0, s.omega3 - 1.0
    PX, RX = P @ xi, R @ xi
    mid = PX @ (o1 * P + o2 * R) + RX @ (o2 * P + o3 * R)
    # (I kron v_t') as a k x k^2 matrix
    eye = np.eye(k)
    iv = np.einsum("ab,tc->tabc", eye, v).reshape(T, k, k * k)
    G = b_inv @ iv                                          # (T, k, k^2)
    f_miss = G @ mid @ np.transpose(G, (0, 2, 1))

    # cross covariance, contracted with Lambda_i on the left and F_t on the right
    U = (G @ PX).reshape(T, k, k, k)
    V = (G @ RX).reshape(T, k, k, k)
    wx = v @ sx.T                                           # Sigma_Lx v_t
    wy = v @ S.T                                            # r Sigma_Ly v_t
    Ux = np.einsum("tpaj,tj->tpa", U, wx)
    Uy = np.einsum("tpaj,tj->tpa", U, wy)
    Vx = np.einsum("tpaj,tj->tpa", V, wx)
    Vy = np.einsum("tpaj,tj->tpa", V, wy)

    def quad(mat):
        return np.einsum("ip,tpa,ia->ti", lam, mat, lam)

    cov = (
        (s.omega1_i - 1.0) * quad(Ux)
        + (s.omega22_i - 1.0) * quad(Uy)
        + (s.omega21_i - 1.0) * quad(Vx)
        + (s.omega3_i - 1.0) * quad(Vy)
    )

    sig_lam = lam_obs + lam_miss
    loading_term = (delta / T) * np.einsum("tj,ijl,tl->ti", F, sig_lam, F)
    factor_obs_term = (delta / n_y) * np.einsum("ij,tjl,il->ti", lam, f_obs, lam)
    factor_miss_term = (delta / T) * np.einsum("ij,tjl,il->ti", lam, f_miss, lam)
    cross_term = -2.0 * (delta / T) * cov
    sigma_C = loading_term + factor_obs_term + factor_miss_term + cross_term
    if not np.all(np.isfinite(sigma_C)):
        raise NumericalError("variance formulas produced non-finite values")
    return VarianceReport(
        sigma_Lambda_obs=lam_obs,
        sigma_Lambda_miss=lam_miss,
        sigma_F_obs=f_obs,
        sigma_F_miss=f_miss,
        loading_term=loading_term,
        factor_obs_term=factor_obs_term,
        factor_miss_term=factor_miss_term,
        cross_term=cross_term,
        sigma_C=sigma_C,
        delta=delta,
        r=r,
        gamma=r * n_x / n_y_m,
        moments=m,
        obs=s,
    )


def weak_factor_rate(n_y, n_x, p_w=None, growth_g=None):
    """Effective cross-section size min(N_y^2 / g, N_x) of a weak factor.

    ``g`` is the growth rate of the weak factor's squared loadings in Y;
    in the simplified model g = p_w * N_y.
    """
    if growth_g is None:
        if p_w is None:
            raise ValueError("need p_w or growth_g")
        growth_g = p_w * n_y
    if not growth_g > 0:
        raise ValueError("growth rate must be positive")
    return min(n_y * n_y / growth_g, n_x)


def weak_factor_obs_variance(m, p_w, which, r, growth_g=None):
    """Observed-data variance block of weak factors (simulation diagnostic).

    Needs the true fraction ``p_w`` of target units loading on the weak
    factors and moments in population coordinates.

    Parameters
    ----------
    m : ModelMoments
    p_w : float in (0, 1]
    which : sequence of int
        Indices of the weak factors.
    r : float
    growth_g : float, optional
        Overrides g = p_w * N_y in the effective cross-section size.

    Returns
    -------
    ndarray, shape (T, k_w, k_w)
    """
    p_w = float(p_w)
    if not 0 < p_w <= 1:
        raise ValueError(f"p_w must lie in (0, 1], got {p_w}")
    w = np.atleast_1d(np.asarray(which, dtype=int))
    n_w = weak_factor_rate(m.n_y, m.n_x, p_w, growth_g)
    B = m.sigma_Lx[None] + r * m.sigma_Ly_t
    _check_B(B)
    b_w = _inv(B)[:, w[:, None], w[None, :]]
    sx_w = m.sigma_Lx[np.ix_(w, w)]
    syt_w = m.sigma_Ly_t[:, w[:, None], w[None, :]] / p_w
    mid = (n_w / m.n_x) * m.var_ex * sx_w[None] + (r * r * p_w * n_w / m.n_y) * m.var_ey * syt_w
    return b_w @ mid @ b_w


# Coefficients of the rational approximation to the inverse normal CDF
# (P. J. Acklam), refined with one Halley step.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def norm_ppf(p):
    """Inverse of the standard normal CDF."""
    p = float(p)
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability must lie in (0, 1), got {p}")
    if p < _P_LOW:
        q = math.sqrt(-2 * math.log(p))
        x = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / (
            (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1)
    elif p <= 1 - _P_LOW:
        q = p - 0.5
        rr = q * q
        x = (((((_A[0] * rr + _A[1]) * rr + _A[2]) * rr + _A[3]) * rr + _A[4]) * rr + _A[5]) * q / (
            ((((_B[0] * rr + _B[1]) * rr + _B[2]) * rr + _B[3]) * rr + _B[4]) * rr + 1)
    else:
        q = math.sqrt(-2 * math.log1p(-p))
        x = -(((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / (
            (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1)
    e = 0.5 * math.erfc(-x / math.sqrt(2)) - p
    u = e * math.sqrt(2 * math.pi) * math.exp(x * x / 2)
    return x - u / (1 + x * u / 2)


def confidence_intervals(report, fit, level=0.95):
    """Pointwise intervals for the target common components.

    Returns
    -------
    lower, upper : ndarray, shape (T, N_y)
    """
    level = float(level)
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    sig = report.sigma_C
    if np.any(sig <= 0):
        t, i = np.argwhere(sig <= 0)[0]
        raise NumericalError(f"non-positive variance at period {t}, unit {i}")
    z = norm_ppf((1.0 + level) / 2.0)
    half = z * np.sqrt(sig / report.delta)
    return fit.common_y - half, fit.common_y + half


OBJECTIVES = ("all", "missing")


def objective_value(report, mask, objective="all"):
    """Summed variance over all target cells or over the missing ones."""
    if objective == "all":
        return float(report.sigma_C.sum())
    if objective == "missing":
        return float(report.sigma_C[~np.asarray(mask, bool)].sum())
    raise ValueError(f"objective must be one of {OBJECTIVES}, got {objective!r}")


@dataclass(frozen=True, eq=False)
class GammaSelection:
    gamma_first: float
    r_grid: np.ndarray
    objective: str
    objective_values: np.ndarray
    r_star: float
    gamma_star: float
    first_fit: object = field(default=None, repr=False)
    moments: object = field(default=None, repr=False)
    obs: object = field(default=None, repr=False)

    def curve(self):
        return [{"r": float(r), "value": float(v)} for r, v in zip(self.r_grid, self.objective_values)]


def _check_grid(r_grid):
    grid = np.asarray(DEFAULT_R_GRID if r_grid is None else r_grid, dtype=float).ravel()
    if grid.size == 0:
        raise ValueError("r grid is empty")
    if np.any(~np.isfinite(grid)) or np.any(grid <= 0):
        raise ValueError("r grid must be positive and finite")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("r grid must be strictly increasing")
    return grid


def objective_curve(m, s, fit, mask, r_grid, objective="all"):
    return np.array([objective_value(corollary_variances(m, s, fit, r), mask, objective) for r in r_grid])


def select_gamma(x, y, k, r_grid=None, objective="all", omega_mode="exact", omega_seed=None,
                 ridge=False, empty_pairs="error", objective_mask=None, omega_tuples="distinct",
                 omega_sample_size=100_000):
    """Two-stage choice of the target weight.

    A first fit at gamma = N_x / N_y supplies plug-in moments; the summed
    common-component variance is then minimized over ``gamma = r N_x / N_y``
    for r on the grid, without refitting.

    ``objective_mask`` replaces the target mask when choosing the cells of
    the ``"missing"`` objective, e.g. the mask before anchoring.

    The pattern statistics average over distinct unit tuples by default
    (see :func:`obs_stats`); tuples with a repeated unit bias the selected
    weight at finite N. Panels with fewer than 4 target units fall back to
    all tuples.

    Returns
    -------
    GammaSelection
    """
    if objective not in OBJECTIVES:
        raise ValueError(f"objective must be one of {OBJECTIVES}, got {objective!r}")
    cells = y.mask if objective_mask is None else np.asarray(objective_mask, bool)
    if cells.shape != y.shape:
        raise ValueError("objective mask does not match the target panel")
    if objective == "missing" and cells.all():
        raise ValueError("the missing-cell objective needs at least one missing target cell")
    grid = _check_grid(r_grid)
    gamma_first = x.N / y.N
    first = fit_tpca(x, y, k, gamma_first, ridge=ridge, empty_pairs=empty_pairs)
    m = plugin_moments(first, x, y)
    if omega_tuples == "distinct" and y.N < 4:
        omega_tuples = "all"
    s = obs_stats(y.mask, mode=omega_mode, sample_size=omega_sample_size, seed=omega_seed,
                  empty_pairs=empty_pairs, tuples=omega_tuples)
    values = objective_curve(m, s, first, cells, grid, objective)
    j = int(np.argmin(values))
    return GammaSelection(
        gamma_first=gamma_first,
        r_grid=grid,
        objective=objective,
        objective_values=values,
        r_star=float(grid[j]),
        gamma_star=float(grid[j] * gamma_first),
        first_fit=first,
        moments=m,
        obs=s,
    )


def select_aux_weights(xs, y, k, rel_grid, r_grid=None, objective="all", **kwargs):
    """Joint choice of relative panel weights and target weight.

    Every combination of relative weights from ``rel_grid`` (the first
    panel fixed at 1) is scored by the minimized objective of
    :func:`select_gamma` on the stacked auxiliary panel.

    Returns
    -------
    rel : ndarray
    stacked : StackedAuxiliary
    selection : GammaSelection
    """
    xs = list(xs)
    best = None
    for combo in itertools.product(list(rel_grid), repeat=len(xs) - 1):
        rel = np.array((1.0, *combo))
        stacked = stack_auxiliary(xs, rel)
        sel = select_gamma(stacked.panel, y, k, r_grid=r_grid, objective=objective, **kwargs)
        score = float(sel.objective_values.min())
        if best is None or score < best[0]:
            best = (score, rel, stacked, sel)
    return best[1], best[2], best[3]
