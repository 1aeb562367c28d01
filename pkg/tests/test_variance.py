import dataclasses

import numpy as np
import pytest
import scipy.stats

from conftest import literal_sigma_C, mar_obs_stats, prop2_terms, random_mocked_fit, random_moments, scalar_moments
from tpca import (DgpSpec, MaskSpec, NumericalError, Panel, confidence_intervals, corollary_variances, fit,
                  generate, generate_mask, obs_stats, select_gamma, weak_factor_obs_variance)
from tpca.moments import ObsStats
from tpca.variance import DEFAULT_R_GRID, norm_ppf, objective_value, select_aux_weights, weak_factor_rate


def test_full_mask_corrections_vanish(rng):
    T, ny = 6, 4
    m = random_moments(rng, 2, T, 9, ny)
    s = obs_stats(np.ones((T, ny), bool))
    f = random_mocked_fit(rng, T, ny, 2)
    rep = corollary_variances(m, s, f, 0.7)
    assert np.all(rep.sigma_Lambda_miss == 0)
    assert np.all(rep.sigma_F_miss == 0)
    assert np.all(rep.factor_miss_term == 0) and np.all(rep.cross_term == 0)
    d = min(ny, T)
    expect = d / T * np.einsum("tj,ijl,tl->ti", f.factors, rep.sigma_Lambda_obs, f.factors) + \
        d / ny * np.einsum("ij,tjl,il->ti", f.loadings_y, rep.sigma_F_obs, f.loadings_y)
    assert np.allclose(rep.sigma_C, expect, rtol=1e-12)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_matches_literal_kronecker_evaluation(rng, k):
    T, ny, nx = 7, 5, 11
    m = random_moments(rng, k, T, nx, ny)
    mask = rng.random((T, ny)) < 0.7
    mask[0] = True
    s = obs_stats(mask)
    f = random_mocked_fit(rng, T, ny, k)
    for r in (0.05, 1.0, 13.0):
        rep = corollary_variances(m, s, f, r)
        lit = literal_sigma_C(m, s, f.factors, f.loadings_y, r)
        for name, got in (("loading", rep.loading_term), ("factor_obs", rep.factor_obs_term),
                          ("factor_miss", rep.factor_miss_term), ("cross", rep.cross_term),
                          ("total", rep.sigma_C)):
            scale = np.abs(lit[name]).max() + 1e-300
            assert np.abs(got - lit[name]).max() <= 1e-10 * scale, (name, r)


def test_single_omega_special_case(rng):
    # equal per-unit omegas give the simplified cross-covariance expression
    k, T, ny, nx = 2, 4, 3, 6
    m = random_moments(rng, k, T, nx, ny)
    om = np.array([1.3, 0.8, 1.6])
    one = np.ones(ny)
    s = ObsStats(om, om, om, one, om, 1.0, 1.0, 1.0, np.full(ny, 0.7))
    f = random_mocked_fit(rng, T, ny, k)
    r = 0.9
    rep = corollary_variances(m, s, f, r)
    I = np.eye(k)
    sf_inv = np.linalg.inv(m.sigma_F)
    a_inv = np.linalg.inv(m.sigma_Lx + r * m.sigma_Ly)
    delta = min(ny, T)
    for t in range(T):
        b_inv = np.linalg.inv(m.sigma_Lx + r * m.sigma_Ly_t[t])
        ft = f.factors[t][:, None]
        core = np.kron(I, ft.T @ sf_inv @ a_inv) @ np.kron(m.sigma_Lx, m.sigma_Ly) + \
            np.kron(m.sigma_Ly_t[t], ft.T @ sf_inv)
        for i in range(ny):
            li = f.loadings_y[i][:, None]
            cov = (om[i] - 1) * r * b_inv @ core @ m.xi_F @ np.kron(li, I) @ sf_inv
            expect = -2 * delta / T * (li.T @ cov @ ft).item()
            assert rep.cross_term[t, i] == pytest.approx(expect, rel=1e-10, abs=1e-14)


def test_mar_reduction_termwise():
    T, ny, nx = 5, 4, 8
    F = np.array([0.3, -1.2, 2.0, 0.7, -0.1])
    lam = np.array([1.1, -0.4, 0.9, 2.2])
    m = scalar_moments(1.3, 0.8, 1.7, 0.6, 2.0, 0.5, 2.4, nx, ny, T)
    s = mar_obs_stats(0.6, ny)
    f = dataclasses.replace(random_mocked_fit(np.random.default_rng(0), T, ny, 1),
                            factors=F[:, None], loadings_y=lam[:, None])
    for gamma in (0.2, 1.0, 5.0):
        rep = corollary_variances(m, s, f, gamma * ny / nx)
        load, fac = prop2_terms(F, lam, 1.3, 0.8, 1.7, 0.6, 2.0, 0.5, 2.4, gamma, nx, ny, T)
        assert np.allclose(rep.loading_term, load, rtol=1e-10, atol=0)
        assert np.allclose(rep.factor_obs_term, fac, rtol=1e-10, atol=0)
        assert np.all(np.abs(rep.factor_miss_term) <= 1e-14)
        assert np.all(np.abs(rep.cross_term) <= 1e-14)


def test_zero_target_noise_full_mask(rng):
    T, ny = 5, 3
    m = dataclasses.replace(random_moments(rng, 2, T, 6, ny), var_ey=0.0)
    rep = corollary_variances(m, obs_stats(np.ones((T, ny), bool)), random_mocked_fit(rng, T, ny, 2), 1.0)
    assert np.all(rep.sigma_Lambda_obs == 0) and np.all(rep.loading_term == 0)


def realistic_report(r=1.0, seed=1):
    d = generate(DgpSpec("two_factor_iid", 40, 30, 20, 2, seed, {"sigma_ey": 2.0}))
    mask = generate_mask(MaskSpec("block", {"p": 0.7}, seed), 40, 20)
    y = d.y.replace(mask=mask)
    sel = select_gamma(d.x, y, 2)
    return sel, corollary_variances(sel.moments, sel.obs, sel.first_fit, r), d.x, y


def test_parts_symmetric_psd_and_positive():
    _, rep, _, _ = realistic_report()
    for part in (rep.sigma_Lambda_obs, rep.sigma_F_obs, rep.sigma_F_miss):
        assert np.allclose(part, np.transpose(part, (0, 2, 1)), atol=1e-8)
        assert np.linalg.eigvalsh((part + np.transpose(part, (0, 2, 1))) / 2).min() >= -1e-8
    assert np.all(rep.sigma_C > 0)


def test_continuous_in_r():
    sel, _, _, _ = realistic_report()
    prev = None
    for r in DEFAULT_R_GRID:
        rep = corollary_variances(sel.moments, sel.obs, sel.first_fit, r)
        if prev is not None:
            step = np.abs(rep.sigma_C - prev).max() / np.abs(prev).max()
            assert step < 0.5
            # the observed-data factor block stays positive definite between grid points
            assert np.linalg.eigvalsh(rep.sigma_F_obs).min() > 0
        prev = rep.sigma_C


def test_noise_scaling_invariance():
    sel, _, _, y = realistic_report()
    m = sel.moments
    for c in (0.1, 3.0):
        mc = m.scaled_noise(c)
        a = corollary_variances(m, sel.obs, sel.first_fit, 0.8)
        b = corollary_variances(mc, sel.obs, sel.first_fit, 0.8)
        assert np.allclose(b.sigma_Lambda_obs, c * a.sigma_Lambda_obs, rtol=1e-12)
        assert np.allclose(b.sigma_F_obs, c * a.sigma_F_obs, rtol=1e-12)
    # with equal omegas (MAR analytic inputs) only the noise ratio moves the argmin
    ms = scalar_moments(1.0, 1.0, 1.0, 0.7, 2.0, 1.0, 2.0, 50, 50, 30)
    s = mar_obs_stats(0.7, 50)
    f = random_mocked_fit(np.random.default_rng(3), 30, 50, 1)
    curves = []
    for c in (1.0, 0.2, 7.0):
        vals = [objective_value(corollary_variances(ms.scaled_noise(c), s, f, r), y.mask) for r in DEFAULT_R_GRID]
        curves.append(int(np.argmin(vals)))
    assert len(set(curves)) == 1


def test_weak_factor_rate():
    assert weak_factor_rate(100, 2000, p_w=100 ** -0.5) == pytest.approx(1000.0)
    assert weak_factor_rate(100, 500, p_w=0.1) == 500
    assert weak_factor_rate(100, 2000, growth_g=10.0) == 1000.0
    with pytest.raises(ValueError):
        weak_factor_rate(100, 2000)


def test_weak_factor_full_strength_is_strong_block(rng):
    T, ny, nx = 6, 5, 12
    m = random_moments(rng, 2, T, nx, ny)
    s = obs_stats(np.ones((T, ny), bool))
    rep = corollary_variances(m, s, random_mocked_fit(rng, T, ny, 2), 0.6)
    weak = weak_factor_obs_variance(m, 1.0, [0, 1], 0.6)
    assert np.allclose(weak, rep.sigma_F_obs, rtol=1e-12)
    with pytest.raises(ValueError):
        weak_factor_obs_variance(m, 0.0, [0], 0.6)


def test_weak_factor_without_auxiliary_noise(rng):
    T, ny, nx = 4, 100, 2000
    m = dataclasses.replace(random_moments(rng, 2, T, nx, ny), var_ex=0.0)
    pw, r = 0.1, 0.5
    out = weak_factor_obs_variance(m, pw, [1], r)
    n_w = ny / pw
    B_inv = np.linalg.inv(m.sigma_Lx[None] + r * m.sigma_Ly_t)[:, 1, 1]
    expect = B_inv ** 2 * r * r * pw * n_w / ny * m.var_ey * m.sigma_Ly_t[:, 1, 1] / pw
    assert np.allclose(out[:, 0, 0], expect, rtol=1e-12)


@pytest.mark.parametrize("p", [1e-12, 1e-6, 0.001, 0.02, 0.0243, 0.1, 0.5, 0.8, 0.975, 0.99, 0.999999])
def test_norm_ppf_matches_reference(p):
    assert norm_ppf(p) == pytest.approx(scipy.stats.norm.ppf(p), abs=1e-9)


def test_norm_ppf_domain():
    for p in (0.0, 1.0, -0.1, 2.0):
        with pytest.raises(ValueError):
            norm_ppf(p)


def test_interval_half_width():
    sel, rep, _, _ = realistic_report()
    unit = dataclasses.replace(rep, sigma_C=np.full_like(rep.sigma_C, rep.delta))
    lo, hi = confidence_intervals(unit, sel.first_fit, 0.95)
    assert np.allclose((hi - lo) / 2, 1.959964, atol=1e-5)
    lo, hi = confidence_intervals(unit, sel.first_fit, 1e-9)
    assert np.allclose(lo, sel.first_fit.common_y, atol=1e-8)
    bad = dataclasses.replace(rep, sigma_C=-rep.sigma_C)
    with pytest.raises(NumericalError):
        confidence_intervals(bad, sel.first_fit)
    with pytest.raises(ValueError):
        confidence_intervals(rep, sel.first_fit, 1.0)


def test_select_gamma_structure():
    sel, _, x, y = realistic_report()
    assert sel.gamma_first == 30 / 20
    assert sel.r_grid.size == 61
    j = int(np.argmin(sel.objective_values))
    assert sel.r_star == sel.r_grid[j]
    assert sel.gamma_star == pytest.approx(sel.r_star * 1.5)
    assert len(sel.curve()) == 61
    miss = select_gamma(x, y, 2, objective="missing")
    assert miss.objective == "missing"
    with pytest.raises(ValueError):
        select_gamma(Panel.full(np.ones((5, 3))), Panel.full(np.ones((5, 2))), 1, objective="missing")
    with pytest.raises(ValueError):
        select_gamma(Panel.full(np.ones((5, 3))), y, 1, r_grid=[1.0, 0.5])


def test_selected_gamma_tracks_noise_ratio():
    for nr in (0.25, 4.0):
        d = generate(DgpSpec("efficiency_one_factor", 100, 100, 100, 1, 3,
                             {"sigma_ex": nr ** 0.5 if nr > 1 else 1.0, "sigma_ey": 1.0 if nr > 1 else nr ** -0.5}))
        mask = generate_mask(MaskSpec("mar", {"p": 0.75}, 4), 100, 100)
        sel = select_gamma(d.x, d.y.replace(mask=mask), 1)
        assert abs(np.log(sel.gamma_star / nr)) < 0.3


def test_block_pattern_gamma():
    from tpca.simlab import optimized_gamma
    g, _ = optimized_gamma("block", 0.6, 1.0, 1, reps=20)
    assert g == pytest.approx(1.75, rel=0.2)


def test_aux_weight_search():
    d = generate(DgpSpec("two_factor_iid", 40, 30, 20, 2, 5))
    x2 = generate(DgpSpec("two_factor_iid", 40, 10, 20, 2, 6)).x
    mask = generate_mask(MaskSpec("mar", {"p": 0.7}, 5), 40, 20)
    rel, stacked, sel = select_aux_weights([d.x, x2], d.y.replace(mask=mask), 2, [0.5, 1.0, 2.0])
    assert rel[0] == 1.0 and rel[1] in (0.5, 1.0, 2.0)
    assert stacked.panel.N == 40
    assert np.all(stacked.source_weights(sel.gamma_star) > 0)


@pytest.mark.slow
def test_full_observation_variance_matches_monte_carlo():
    # fixed factors and loadings, fresh noise in every replication
    rng = np.random.default_rng(17)
    T = n = 500
    F = rng.standard_normal((T, 1))
    lx = rng.standard_normal((n, 1))
    ly = rng.standard_normal((n, 1))
    C = F @ ly.T
    gamma = 1.0
    errs = []
    for _ in range(60):
        x = F @ lx.T + rng.standard_normal((T, n))
        y = C + rng.standard_normal((T, n))
        errs.append(fit(Panel.full(x), Panel.full(y), 1, gamma).common_y - C)
    errs = np.array(errs)
    mc = errs.var(axis=0) * min(n, T)
    from tpca.moments import ModelMoments
    m = ModelMoments(F.T @ F / T, lx.T @ lx / n, ly.T @ ly / n, np.repeat((ly.T @ ly / n)[None], T, 0),
                     np.zeros((1, 1)), 1.0, 1.0, n, n, T, 1)
    f = dataclasses.replace(random_mocked_fit(rng, T, n, 1), factors=F, loadings_y=ly)
    rep = corollary_variances(m, obs_stats(np.ones((T, n), bool)), f, gamma * n / n)
    assert mc.mean() / rep.sigma_C.mean() == pytest.approx(1.0, abs=0.15)
    # the cell-level pattern is tracked as well
    assert np.corrcoef(mc.ravel(), rep.sigma_C.ravel())[0, 1] > 0.5


def test_selection_uses_distinct_tuples():
    sel, _, x, y = realistic_report()
    assert sel.obs.tuples == "distinct"
    alt = select_gamma(x, y, 2, omega_tuples="all")
    assert alt.obs.tuples == "all"
    small = select_gamma(Panel.full(np.random.default_rng(0).standard_normal((8, 5))),
                         Panel.full(np.random.default_rng(1).standard_normal((8, 3))), 1)
    assert small.obs.tuples == "all"


def test_mar_selection_is_free_of_repeated_unit_bias():
    # N_x / N_y = 4 at N_y = T = 50 is where all-tuple averages push gamma* up
    from tpca.simlab import optimized_gamma
    g, _ = optimized_gamma("mar", 0.6, 1.0, 4, reps=10)
    assert abs(np.log(g)) < 0.1
