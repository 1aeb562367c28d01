"""Second moments under missing data, observation-pattern statistics, and plug-in model moments."""

from dataclasses import dataclass

import numpy as np

from ._rng import make_rng
from .errors import IdentificationError
from .panel import Panel, WeightedConcat


@dataclass(frozen=True, eq=False)
class PairCounts:
    """Numbers of commonly observed periods for every pair of units.

    ``counts[i, j]`` is |Q_ij| and ``q = counts / T``.
    """

    counts: np.ndarray
    q: np.ndarray


def pair_counts(mask):
    w = np.asarray(mask, dtype=float)
    counts = w.T @ w
    counts = np.rint(np.triu(counts) + np.triu(counts, 1).T).astype(np.int64)
    return PairCounts(counts, counts / w.shape[0])


EMPTY_PAIR_POLICIES = ("error", "zero")


def _empty_pairs(counts, policy):
    if policy not in EMPTY_PAIR_POLICIES:
        raise ValueError(f"empty_pairs must be one of {EMPTY_PAIR_POLICIES}, got {policy!r}")
    never = np.flatnonzero(np.diag(counts) == 0)
    if never.size:
        raise IdentificationError(never[0], never[0])
    empty = np.argwhere(counts == 0)
    if empty.size and policy == "error":
        i, j = empty[0]
        raise IdentificationError(i, j)
    return empty


def pairwise_second_moment(z, empty_pairs="error"):
    """Average of Z_ti * Z_tj over the periods where both units are observed.

    Parameters
    ----------
    z : WeightedConcat or Panel
    empty_pairs : {"error", "zero"}
        What to do with pairs that share no observed period: raise, or set
        their entry to zero (the empty sum). A unit with no observation
        at all always raises.

    Returns
    -------
    sigma : ndarray, shape (N, N)
        Exactly symmetric.
    counts : PairCounts

    Raises
    ------
    IdentificationError
        If some pair of units is never observed together.
    """
    panel = z.panel if isinstance(z, WeightedConcat) else z
    pc = pair_counts(panel.mask)
    _empty_pairs(pc.counts, empty_pairs)
    zm = np.where(panel.mask, panel.values, 0.0)
    sigma = (zm.T @ zm) / np.maximum(pc.counts, 1)
    upper = np.triu(sigma)
    sigma = upper + np.triu(upper, 1).T
    return sigma, pc


@dataclass(frozen=True, eq=False)
class ObsStats:
    """Summary statistics of an observation pattern.

    Each per-unit omega is an average of q_{il,jh} / (q_il * q_jh), the
    joint observation frequency of two unit pairs relative to independence.
    ``q_diag`` holds each unit's observed fraction q_ii. ``std_errors`` is
    only populated in sampled mode and maps field names to Monte Carlo
    standard errors.
    """

    omega1_i: np.ndarray
    omega21_i: np.ndarray
    omega22_i: np.ndarray
    omega23_i: np.ndarray
    omega3_i: np.ndarray
    omega1: float
    omega2: float
    omega3: float
    q_diag: np.ndarray
    mode: str = "exact"
    tuples: str = "all"
    sample_size: int = None
    seed: int = None
    std_errors: dict = None

    def as_dict(self):
        out = {
            "mode": self.mode,
            "tuples": self.tuples,
            "omega1": self.omega1,
            "omega2": self.omega2,
            "omega3": self.omega3,
            "omega1_i": self.omega1_i.tolist(),
            "omega21_i": self.omega21_i.tolist(),
            "omega22_i": self.omega22_i.tolist(),
            "omega23_i": self.omega23_i.tolist(),
            "omega3_i": self.omega3_i.tolist(),
            "q_diag": self.q_diag.tolist(),
        }
        if self.mode == "sampled":
            out["sample_size"] = self.sample_size
            out["seed"] = self.seed
        return out


PER_UNIT_FIELDS = ("omega1_i", "omega21_i", "omega22_i", "omega23_i", "omega3_i")


def _checked_q(mask, empty_pairs):
    pc = pair_counts(mask)
    _empty_pairs(pc.counts, empty_pairs)
    return pc.q


def _inv_q(q):
    # pairs without a common period drop out of every average
    out = np.zeros_like(q)
    np.divide(1.0, q, out=out, where=q > 0)
    return out


def _exact_omegas(w, q):
    # Every omega is a sum over unit tuples of (1/T) sum_t prod W_t* / (q q);
    # swapping the order of summation leaves per-period sums over units.
    T, N = w.shape
    inv_q = _inv_q(q)
    d = np.diag(q).copy()
    v = w @ inv_q                        # v[t, i] = sum_l W_tl / q_il
    s = (v * w).sum(axis=1)              # s[t] = sum_{j,l} W_tj W_tl / q_jl
    u = w @ (1.0 / d)                    # u[t] = sum_j W_tj / q_jj
    n2 = float(N) * N
    omega1 = (q / np.outer(d, d)).sum(axis=1) / N
    omega21 = (w.T @ s) / (T * n2 * d)
    omega22 = (w * v).T @ u / (T * n2)
    omega23 = (w * v * v).sum(axis=0) / (T * n2)
    omega3 = (w * v).T @ s / (T * n2 * N)
    return omega1, omega21, omega22, omega23, omega3


def _exact_omegas_distinct(w, q):
    # Same sums restricted to pairwise distinct unit indices; the
    # coincident tuples are removed by inclusion-exclusion per period.
    T, N = w.shape
    R = _inv_q(q)
    r_ii = np.diag(R)
    d = np.diag(q).copy()
    v = w @ R                            # v[t, i] = sum_l W_tl R_il
    s = (v * w).sum(axis=1)
    diag_t = w @ r_ii                    # sum_j W_tj R_jj
    u = w @ (1.0 / d)
    x = (w / d) @ R                      # sum_j W_tj R_ij / q_jj
    y2 = w @ (R * R)                     # sum_j W_tj R_ij^2
    z = (w * (v - r_ii)) @ R             # sum_l W_tl (v_tl - R_ll) R_il
    b = v - r_ii                         # sum over l != i of W_tl R_il, where W_ti = 1
    pair_off = s[:, None] - diag_t[:, None] - 2 * b    # sum over j != h, both != i
    n1, n2, n3 = N - 1, (N - 1) * (N - 2), (N - 1) * (N - 2) * (N - 3)
    omega1 = ((q / np.outer(d, d)).sum(axis=1) - 1.0 / d) / n1
    omega21 = (w * pair_off).sum(axis=0) / (T * n2 * d)
    cross = (u[:, None] - 1.0 / d) * b - (x - r_ii / d)
    omega22 = (w * cross).sum(axis=0) / (T * n2)
    omega23 = (w * (b * b - (y2 - r_ii ** 2))).sum(axis=0) / (T * n2)
    row = (z - r_ii * b) - (y2 - r_ii ** 2)
    omega3 = (w * (pair_off * b - 2 * row)).sum(axis=0) / (T * n3)
    return omega1, omega21, omega22, omega23, omega3


def _popcount_rows(packed, *idx):
    acc = packed[idx[0]]
    for ix in idx[1:]:
        acc = acc & packed[ix]
    return np.bitwise_count(acc).sum(axis=1)


def _sampled_omegas(w, q, sample_size, seed, distinct=False):
    T, N = w.shape
    rng = make_rng(seed)
    inv_q = _inv_q(q)
    per_unit = max(1, int(sample_size) // N)
    packed = np.packbits(w.T.astype(bool), axis=1)
    d = np.diag(q)
    unit = np.repeat(np.arange(N), per_unit)
    m = unit.size

    def draw(n):
        idx = [rng.integers(0, N, size=m) for _ in range(n)]
        if not distinct:
            return idx
        # redraw tuples with a repeated unit until all indices differ
        while True:
            rows = np.vstack([unit, *idx])
            srt = np.sort(rows, axis=0)
            bad = np.flatnonzero((srt[1:] == srt[:-1]).any(axis=0))
            if bad.size == 0:
                return idx
            for a in idx:
                a[bad] = rng.integers(0, N, size=bad.size)

    (j,) = draw(1)
    r1 = q[unit, j] / (d[unit] * d[j])
    j, l = draw(2)
    r21 = _popcount_rows(packed, unit, j, l) / T / d[unit] * inv_q[j, l]
    j, l = draw(2)
    r22 = _popcount_rows(packed, j, unit, l) / T / d[j] * inv_q[unit, l]
    j, l = draw(2)
    r23 = _popcount_rows(packed, unit, j, l) / T * inv_q[unit, j] * inv_q[unit, l]
    j, l, h = draw(3)
    r3 = _popcount_rows(packed, unit, l, j, h) / T * inv_q[unit, l] * inv_q[j, h]

    means, ses = [], []
    for r in (r1, r21, r22, r23, r3):
        r = r.reshape(N, per_unit)
        means.append(r.mean(axis=1))
        if per_unit > 1:
            ses.append(r.std(axis=1, ddof=1) / np.sqrt(per_unit))
        else:
            ses.append(np.full(N, np.nan))
    return means, ses


TUPLES = ("all", "distinct")


def obs_stats(mask, mode="exact", sample_size=100_000, seed=None, empty_pairs="error", tuples="all"):
    """Observation-pattern statistics of a T x N mask.

    Parameters
    ----------
    mask : array_like of bool or Panel
    mode : {"exact", "sampled"}
        ``"exact"`` evaluates every average in O(T N^2) operations.
        ``"sampled"`` draws ``sample_size`` index tuples per statistic,
        split evenly across units, and reports Monte Carlo standard errors.
    seed : int
        Required in sampled mode.
    empty_pairs : {"error", "zero"}
        With ``"zero"``, unit pairs that share no observed period are left
        out of the averages instead of raising.
    tuples : {"all", "distinct"}
        ``"all"`` averages over every unit tuple. ``"distinct"`` averages
        over tuples of pairwise different units only. Both converge to the
        same limits, but tuples with a repeated unit add a bias of order
        1/N (e.g. 1/q_ii in place of 1 for omega1), the same order as the
        gamma-dependent part of the common-component variance. Needs
        N >= 4.
    """
    if isinstance(mask, Panel):
        mask = mask.mask
    w = np.asarray(mask, dtype=float)
    if w.ndim != 2:
        raise ValueError("mask must be 2-D")
    if tuples not in TUPLES:
        raise ValueError(f"tuples must be one of {TUPLES}, got {tuples!r}")
    q = _checked_q(w, empty_pairs)
    N = w.shape[1]
    if tuples == "distinct" and N < 4:
        raise ValueError("distinct-tuple omegas need at least 4 units")
    if mode == "exact":
        vals = _exact_omegas_distinct(w, q) if tuples == "distinct" else _exact_omegas(w, q)
        ses = None
    elif mode == "sampled":
        if seed is None:
            raise ValueError("sampled mode needs a seed")
        vals, se_list = _sampled_omegas(w, q, sample_size, seed, distinct=tuples == "distinct")
        ses = dict(zip(PER_UNIT_FIELDS, se_list))
        ses["omega1"] = float(np.sqrt(np.sum(se_list[0] ** 2)) / N)
        ses["omega2"] = float(np.sqrt(np.sum(se_list[1] ** 2)) / N)
        ses["omega3"] = float(np.sqrt(np.sum(se_list[4] ** 2)) / N)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    o1, o21, o22, o23, o3 = vals
    return ObsStats(
        omega1_i=o1,
        omega21_i=o21,
        omega22_i=o22,
        omega23_i=o23,
        omega3_i=o3,
        omega1=float(o1.mean()),
        omega2=float(o21.mean()),
        omega3=float(o3.mean()),
        q_diag=np.diag(q).copy(),
        mode=mode,
        tuples=tuples,
        sample_size=int(sample_size) if mode == "sampled" else None,
        seed=seed if mode == "sampled" else None,
        std_errors=ses,
    )


@dataclass(frozen=True, eq=False)
class ModelMoments:
    """Moments of the simplified factor model that enter the variance formulas.

    ``sigma_Ly_t`` has shape (T, k, k); ``xi_F`` is Var(vec(F_t F_t')) with
    shape (k^2, k^2).
    """

    sigma_F: np.ndarray
    sigma_Lx: np.ndarray
    sigma_Ly: np.ndarray
    sigma_Ly_t: np.ndarray
    xi_F: np.ndarray
    var_ex: float
    var_ey: float
    n_x: int
    n_y: int
    T: int
    k: int

    def scaled_noise(self, c):
        """Same moments with both noise variances multiplied by ``c``."""
        return ModelMoments(
            self.sigma_F, self.sigma_Lx, self.sigma_Ly, self.sigma_Ly_t, self.xi_F,
            self.var_ex * c, self.var_ey * c, self.n_x, self.n_y, self.T, self.k,
        )


def factor_fourth_moment(factors):
    """Var(vec(F_t F_t')) across periods, divisor T."""
    f = np.asarray(factors, dtype=float)
    T, k = f.shape
    vecs = np.einsum("tj,tl->tjl", f, f).reshape(T, k * k)
    centered = vecs - vecs.mean(axis=0)
    xi = centered.T @ centered / T
    return (xi + xi.T) / 2


def plugin_moments(fit, x, y):
    """Plug-in estimates of the model moments from a fitted target-PCA model."""
    F = fit.factors
    T, k = F.shape
    n_x, n_y = x.N, y.N
    if k >= min(T, n_x + n_y):
        raise ValueError(f"k={k} leaves no degrees of freedom for T={T}, N={n_x + n_y}")
    if n_x < 1:
        raise ValueError("plug-in moments need an auxiliary panel")
    lx, ly = fit.loadings_x, fit.loadings_y
    w = y.mask.astype(float)
    sigma_F = F.T @ F / T
    sigma_Lx = lx.T @ lx / n_x
    sigma_Ly = ly.T @ ly / n_y
    sigma_Ly_t = np.einsum("ti,ij,il->tjl", w, ly, ly) / n_y
    res_x = np.where(x.mask, x.values - fit.common_x, 0.0)
    res_y = np.where(y.mask, y.values - fit.common_y, 0.0)
    var_ex = float((res_x ** 2).sum() / x.mask.sum())
    var_ey = float((res_y ** 2).sum() / y.mask.sum())
    return ModelMoments(
        sigma_F=(sigma_F + sigma_F.T) / 2,
        sigma_Lx=(sigma_Lx + sigma_Lx.T) / 2,
        sigma_Ly=(sigma_Ly + sigma_Ly.T) / 2,
        sigma_Ly_t=sigma_Ly_t,
        xi_F=factor_fourth_moment(F),
        var_ex=var_ex,
        var_ey=var_ey,
        n_x=n_x,
        n_y=n_y,
        T=T,
        k=k,
    )
