"""Independent reference implementations used as test oracles."""

import itertools

import numpy as np
import pytest

from tpca import FactorFit
from tpca.moments import ModelMoments, ObsStats


def brute_force_omegas(mask):
    """Per-unit omegas by direct enumeration of every index tuple.

    q_{ab,cd} is the fraction of periods in which units a, b, c and d are
    all observed. O(T N^4); only for tiny masks.
    """
    w = np.asarray(mask, dtype=float)
    T, N = w.shape

    def q(*units):
        return np.prod(w[:, list(units)], axis=1).sum() / T

    o1 = np.zeros(N)
    o21 = np.zeros(N)
    o22 = np.zeros(N)
    o23 = np.zeros(N)
    o3 = np.zeros(N)
    for i in range(N):
        o1[i] = sum(q(i, j) / (q(i) * q(j)) for j in range(N)) / N
        for j, l in itertools.product(range(N), repeat=2):
            o21[i] += q(i, j, l) / (q(i) * q(j, l))
            o22[i] += q(j, i, l) / (q(j) * q(i, l))
            o23[i] += q(i, j, l) / (q(i, j) * q(i, l))
        for j, l, h in itertools.product(range(N), repeat=3):
            o3[i] += q(i, l, j, h) / (q(i, l) * q(j, h))
    return o1, o21 / N ** 2, o22 / N ** 2, o23 / N ** 2, o3 / N ** 3


def brute_force_distinct_omegas(mask):
    """As :func:`brute_force_omegas`, over tuples of pairwise different units."""
    w = np.asarray(mask, dtype=float)
    T, N = w.shape

    def q(*units):
        return np.prod(w[:, list(units)], axis=1).sum() / T

    out = [np.zeros(N) for _ in range(5)]
    for i in range(N):
        rest = [a for a in range(N) if a != i]
        out[0][i] = np.mean([q(i, j) / (q(i) * q(j)) for j in rest])
        pairs = list(itertools.permutations(rest, 2))
        out[1][i] = np.mean([q(i, j, l) / (q(i) * q(j, l)) for j, l in pairs])
        out[2][i] = np.mean([q(j, i, l) / (q(j) * q(i, l)) for j, l in pairs])
        out[3][i] = np.mean([q(i, j, l) / (q(i, j) * q(i, l)) for j, l in pairs])
        out[4][i] = np.mean([q(i, l, j, h) / (q(i, l) * q(j, h)) for l, j, h in itertools.permutations(rest, 3)])
    return tuple(out)


def pca_oracle(z, k):
    """Full-data PCA by dense eigendecomposition of Z'Z/T and OLS factors.

    Returns the common component matrix, which is invariant to the sign
    and rotation conventions.
    """
    T, N = z.shape
    vals, vecs = np.linalg.eigh(z.T @ z / (T * N))
    lam = np.sqrt(N) * vecs[:, ::-1][:, :k]
    f, *_ = np.linalg.lstsq(lam, z.T, rcond=None)
    return f.T @ lam.T, vals[::-1][:k]


def literal_sigma_C(m, s, F, lam, r):
    """Common-component variance evaluated entry by entry with explicit
    Kronecker products, following the printed simplified-model formulas.

    Returns a dict of the four additive terms and their sum, each (T, N_y).
    """
    T, k = F.shape
    ny = lam.shape[0]
    delta = min(ny, T)
    I = np.eye(k)
    sf_inv = np.linalg.inv(m.sigma_F)
    sx, sy = m.sigma_Lx, m.sigma_Ly
    a_inv = np.linalg.inv(sx + r * sy)
    xi = m.xi_F
    out = {name: np.zeros((T, ny)) for name in ("loading", "factor_obs", "factor_miss", "cross")}
    for t in range(T):
        syt = m.sigma_Ly_t[t]
        b_inv = np.linalg.inv(sx + r * syt)
        ft = F[t][:, None]
        P = np.kron(sx, r * sy) + np.kron(r * syt, sx)
        R = np.kron(r * syt, r * sy)
        left = np.kron(I, ft.T @ sf_inv @ a_inv)
        right = np.kron(I, a_inv @ sf_inv @ ft)
        f_obs = b_inv @ ((m.n_y / m.n_x) * m.var_ex * sx + r * r * m.var_ey * syt) @ b_inv
        f_miss = b_inv @ left @ (
            P @ xi @ ((s.omega1 - 1) * P + (s.omega2 - 1) * R)
            + R @ xi @ ((s.omega2 - 1) * P + (s.omega3 - 1) * R)
        ) @ right @ b_inv
        for i in range(ny):
            li = lam[i][:, None]
            qi = s.q_diag[i]
            kern = np.kron(li.T, I) @ xi @ np.kron(li, I)
            l_obs = m.var_ey / qi * sf_inv
            inner = m.var_ey * r * r * sy @ m.sigma_F @ sy + np.kron(li.T, r * sy) @ xi @ np.kron(li, r * sy)
            l_miss = (1 / qi - 1) * sf_inv @ kern @ sf_inv + (s.omega23_i[i] - 1 / qi) * (
                sf_inv @ a_inv @ inner @ a_inv @ sf_inv)
            cov = b_inv @ left @ (
                P @ xi @ ((s.omega1_i[i] - 1) * np.kron(li, sx) + (s.omega22_i[i] - 1) * np.kron(li, r * sy))
                + R @ xi @ ((s.omega21_i[i] - 1) * np.kron(li, sx) + (s.omega3_i[i] - 1) * np.kron(li, r * sy))
            ) @ a_inv @ sf_inv
            out["loading"][t, i] = delta / T * (ft.T @ (l_obs + l_miss) @ ft).item()
            out["factor_obs"][t, i] = delta / ny * (li.T @ f_obs @ li).item()
            out["factor_miss"][t, i] = delta / T * (li.T @ f_miss @ li).item()
            out["cross"][t, i] = -2 * delta / T * (li.T @ cov @ ft).item()
    out["total"] = sum(out[name] for name in ("loading", "factor_obs", "factor_miss", "cross"))
    return out


def mar_obs_stats(p, n):
    """Pattern statistics of a missing-at-random mask in the large-T limit."""
    one = np.ones(n)
    return ObsStats(one, one, one, one / p, one, 1.0, 1.0, 1.0, np.full(n, p))


def prop2_terms(F, lam, sf2, slx2, sly2, p, var_ex, var_ey, var_f2, gamma, n_x, n_y, T):
    """One-factor missing-at-random closed form, split into its three terms."""
    d = min(n_y, T)
    F2 = F[:, None] ** 2
    L2 = lam[None, :] ** 2
    a = n_y / n_x
    obs_l = d / T * var_ey / (p * sf2) * F2 + 0 * L2
    miss_l = d / T * (1 / p - 1) * var_f2 / sf2 ** 2 * L2 * F2
    fac = d / n_y * L2 * (slx2 + gamma * a * p * sly2) ** -2 * (
        a * slx2 * var_ex + gamma ** 2 * a ** 2 * p * sly2 * var_ey) + 0 * F2
    return obs_l + miss_l, fac


def scalar_moments(sf2, slx2, sly2, p, var_ex, var_ey, var_f2, n_x, n_y, T):
    """One-factor moments with Sigma_Ly,t = p * sigma_Ly^2 in every period."""
    a = np.array
    return ModelMoments(
        sigma_F=a([[sf2]]), sigma_Lx=a([[slx2]]), sigma_Ly=a([[sly2]]),
        sigma_Ly_t=np.full((T, 1, 1), p * sly2), xi_F=a([[var_f2]]),
        var_ex=var_ex, var_ey=var_ey, n_x=n_x, n_y=n_y, T=T, k=1,
    )


def random_moments(rng, k, T, n_x, n_y):
    """Well-conditioned random moments for formula checks."""
    def spd(d):
        a = rng.standard_normal((d, d))
        return a @ a.T / d + np.eye(d)

    syt = np.stack([spd(k) for _ in range(T)])
    return ModelMoments(
        sigma_F=spd(k), sigma_Lx=spd(k), sigma_Ly=spd(k), sigma_Ly_t=syt, xi_F=spd(k * k),
        var_ex=float(rng.uniform(0.5, 2)), var_ey=float(rng.uniform(0.5, 2)),
        n_x=n_x, n_y=n_y, T=T, k=k,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_mocked_fit(rng, T, n_y, k):
    """A FactorFit holding random factors and target loadings."""
    f = rng.standard_normal((T, k))
    ly = rng.standard_normal((n_y, k))
    return FactorFit(f, np.zeros((0, k)), ly, np.ones(k), 1.0, f @ ly.T, np.zeros((T, 0)))
