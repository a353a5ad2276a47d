# tests/test_solver.py

import numpy as np
import pytest

from services.dsp import fft2, gaussian_label, ifft2
from services.solver import (
    CropOperator, SolverError, SolverParams, assemble_quadratic, context_samples, dense_minimizer,
    evaluate_objective, filter_response, filter_spectrum, solve_g, solve_g_bin, solve_w,
    spatial_from_spectrum, train_filter, update_multiplier,
)


def _complex(rng, shape):
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


def _instance(rng, grid=(6, 6), cropped=(3, 3), depth=2, patches=2):
    crop = CropOperator(full=grid, cropped=cropped)
    x0 = rng.normal(size=grid + (depth,))
    context = [(float(rng.uniform(0.1, 0.5)), rng.normal(size=grid + (depth,))) for _ in range(patches)]
    label = gaussian_label(grid[0], grid[1], sigma=1.0)
    return crop, x0, context, label


def test_low_rank_solve_matches_dense(rng):
    checked = 0
    for d in range(1, 9):
        for _ in range(5):
            p = int(rng.integers(0, 9))
            bins = 25
            x0 = _complex(rng, (bins, d))
            contexts = [(float(rng.uniform(0.05, 1.0)), _complex(rng, (bins, d))) for _ in range(p)]
            yf = _complex(rng, (bins,))
            zeta = _complex(rng, (bins, d))
            w_hat = _complex(rng, (bins, d))
            mu = float(rng.uniform(0.5, 5.0))
            fast = solve_g(x0, contexts, yf, zeta, w_hat, mu)
            dense = solve_g(x0, contexts, yf, zeta, w_hat, mu, dense=True)
            np.testing.assert_allclose(fast, dense, rtol=1e-10, atol=1e-10)
            checked += bins
    assert checked == 1000


def test_single_bin_solve_satisfies_system(rng):
    x0 = _complex(rng, (4,))
    contexts = [(0.3, _complex(rng, (4,))), (0.0, _complex(rng, (4,)))]
    y = 0.7 - 0.2j
    zeta, w_hat = _complex(rng, (4,)), _complex(rng, (4,))
    g = solve_g_bin(x0, contexts, y, zeta, w_hat, mu=2.0)
    system = 2.0 * np.eye(4) + np.outer(x0, x0.conj()) + 0.09 * np.outer(contexts[0][1], contexts[0][1].conj())
    np.testing.assert_allclose(system @ g, x0 * np.conj(y) - zeta + 2.0 * w_hat, atol=1e-12)


def test_non_positive_mu_rejected(rng):
    x = _complex(rng, (3, 2))
    with pytest.raises(SolverError):
        solve_g(x, [], np.ones(3), x, x, mu=0.0)


def test_crop_operator_geometry():
    crop = CropOperator(full=(8, 10), cropped=(3, 4))
    assert crop.origin == (3, 3)
    v = np.arange(12.0).reshape(3, 4)
    padded = crop.pad(v)
    assert padded.shape == (8, 10) and padded.sum() == v.sum()
    np.testing.assert_array_equal(crop.crop(padded), v)
    with pytest.raises(SolverError):
        CropOperator(full=(4, 4), cropped=(5, 1))


def test_spectrum_adjoint_pair(rng):
    crop = CropOperator(full=(6, 5), cropped=(3, 2))
    w = rng.normal(size=(3, 2, 2))
    np.testing.assert_allclose(np.real(spatial_from_spectrum(filter_spectrum(w, crop), crop)), w, atol=1e-12)


def test_response_equals_direct_correlation(rng):
    crop, x0, _, _ = _instance(rng)
    w = rng.normal(size=crop.cropped + (x0.shape[2],))
    response = filter_response(x0, filter_spectrum(w, crop))
    padded = crop.pad(w)
    direct = np.zeros(crop.full)
    for t in range(crop.full[0]):
        for s in range(crop.full[1]):
            direct[t, s] = np.sum(np.roll(x0, (-t, -s), axis=(0, 1)) * padded)
    np.testing.assert_allclose(response, direct, atol=1e-10)


def test_objective_matches_assembled_quadratic(rng):
    crop, x0, context, label = _instance(rng)
    params = SolverParams(lambda_=0.3, gamma=2.0)
    w = rng.normal(size=crop.cropped + (2,))
    w_tilde = rng.normal(size=w.shape)
    h, b, c = assemble_quadratic(x0, context, label, params, crop, w_tilde)
    quad = 0.5 * w.ravel() @ h @ w.ravel() - b @ w.ravel() + c
    assert evaluate_objective(w, x0, context, label, params, crop, w_tilde) == pytest.approx(quad, rel=1e-10)


def test_admm_reaches_dense_minimizer(rng):
    for _ in range(20):
        grid = tuple(int(v) for v in rng.integers(4, 7, size=2))
        cropped = (int(rng.integers(2, grid[0])), int(rng.integers(2, grid[1])))
        depth = int(rng.integers(1, 4))
        crop, x0, context, label = _instance(rng, grid, cropped, depth, patches=int(rng.integers(0, 3)))
        w_tilde = 0.1 * rng.normal(size=cropped + (depth,))
        params = SolverParams(lambda_=1.0, gamma=4.0, mu0=0.5, beta=1.0, mu_max=0.5, admm_iters=500)
        state = train_filter(x0, context, label, w_tilde, params, crop)
        best = dense_minimizer(x0, context, label, params, crop, w_tilde)
        e_admm = evaluate_objective(state.w, x0, context, label, params, crop, w_tilde)
        e_best = evaluate_objective(best, x0, context, label, params, crop, w_tilde)
        assert e_admm >= e_best - 1e-9
        assert (e_admm - e_best) / e_best < 1e-4


def test_ridge_closed_form_without_crop_context_or_keyfilter(rng):
    grid = (6, 5)
    crop = CropOperator(full=grid, cropped=grid)
    x0 = rng.normal(size=grid + (2,))
    label = gaussian_label(*grid, sigma=1.0)
    params = SolverParams(lambda_=1.0, gamma=0.0, mu0=1.0, beta=1.0, mu_max=1.0, admm_iters=500)
    state = train_filter(x0, None, label, None, params, crop)

    xf, yf = fft2(x0), fft2(label.y)
    n = crop.n_full
    energy = np.sum(np.abs(xf) ** 2, axis=2, keepdims=True)
    g_closed = xf * np.conj(yf)[..., None] / (energy + params.lambda_ / n)
    w_closed = np.real(spatial_from_spectrum(g_closed, crop))
    np.testing.assert_allclose(state.w, w_closed, atol=1e-3 * np.abs(w_closed).max())


def test_large_gamma_pins_filter_to_keyfilter(rng):
    crop, x0, context, label = _instance(rng)
    w_tilde = rng.normal(size=crop.cropped + (2,))
    state = train_filter(x0, context, label, w_tilde, SolverParams(gamma=1e6), crop)
    assert np.linalg.norm(state.w - w_tilde) / np.linalg.norm(w_tilde) < 1e-2


def test_keyfilter_none_disables_gamma(rng):
    crop, x0, _, label = _instance(rng)
    g_hat = fft2(rng.normal(size=crop.full + (2,)))
    zeta = fft2(rng.normal(size=crop.full + (2,)))
    a = solve_w(g_hat, zeta, None, SolverParams(gamma=50.0), crop, mu=1.0)
    b = solve_w(g_hat, zeta, None, SolverParams(gamma=0.0), crop, mu=1.0)
    np.testing.assert_array_equal(a, b)
    with pytest.raises(SolverError):
        solve_w(g_hat, zeta, np.zeros((1, 1, 2)), SolverParams(), crop, mu=1.0)


def test_dense_bins_flag_gives_same_filter(rng):
    crop, x0, context, label = _instance(rng)
    fast = train_filter(x0, context, label, None, SolverParams(), crop)
    dense = train_filter(x0, context, label, None, SolverParams(dense_bins=True), crop)
    np.testing.assert_allclose(fast.w, dense.w, atol=1e-9)


def test_residual_history_and_penalty_schedule(rng):
    crop, x0, context, label = _instance(rng)
    state = train_filter(x0, context, label, None, SolverParams(admm_iters=3), crop)
    assert len(state.residuals) == 3
    assert all(np.isfinite(state.residuals))
    assert state.mu == 1000.0


def test_residual_shrinks_while_penalty_grows(rng):
    crop, x0, context, label = _instance(rng, grid=(8, 8), cropped=(4, 4))
    state = train_filter(x0, context, label, None, SolverParams(admm_iters=4, mu_max=1e6), crop)
    assert state.residuals[-1] < state.residuals[0]


def test_context_samples_skip_zero_scores(rng):
    x = rng.normal(size=(4, 4, 1))
    assert [s for s, _ in context_samples([(0.0, x), (0.2, x)])] == [0.2]
    assert context_samples(None) == []


def test_mismatched_inputs_rejected(rng):
    crop, x0, context, label = _instance(rng)
    with pytest.raises(SolverError):
        train_filter(x0[:5], None, label, None, SolverParams(), crop)
    with pytest.raises(SolverError):
        train_filter(x0, [(0.2, x0[..., :1])], label, None, SolverParams(), crop)
    with pytest.raises(SolverError):
        update_multiplier(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 3)), 1.0)


def test_non_finite_input_raises(rng):
    crop, x0, _, label = _instance(rng)
    x0[0, 0, 0] = np.nan
    with pytest.raises(SolverError):
        train_filter(x0, None, label, None, SolverParams(), crop)


def test_params_validated():
    with pytest.raises(SolverError):
        SolverParams(mu0=0.0)
    with pytest.raises(SolverError):
        SolverParams(admm_iters=0)
    with pytest.raises(SolverError):
        SolverParams(lambda_=-1.0)


def test_residual_trend_over_many_seeds():
    steps = rises = 0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        crop, x0, context, label = _instance(rng, grid=(8, 8), cropped=(4, 4), depth=int(rng.integers(1, 4)))
        w_tilde = 0.1 * rng.normal(size=crop.cropped + (x0.shape[2],))
        state = train_filter(x0, context, label, w_tilde, SolverParams(admm_iters=5, mu_max=1e6), crop)
        diffs = np.diff(state.residuals)
        steps += diffs.size
        rises += int(np.sum(diffs > 0))
    assert steps == 200
    assert rises <= 0.05 * steps


def test_trained_spectrum_is_conjugate_symmetric(rng):
    crop, x0, context, label = _instance(rng, grid=(7, 6), cropped=(3, 4), depth=3)
    w_tilde = rng.normal(size=crop.cropped + (3,))
    state = train_filter(x0, context, label, w_tilde, SolverParams(admm_iters=4), crop)
    spatial = spatial_from_spectrum(state.g_hat, crop)
    assert np.abs(spatial.imag).max() < 1e-10
    np.testing.assert_allclose(np.abs(ifft2(state.g_hat).imag).max(), 0.0, atol=1e-10)


def test_w_step_rejects_asymmetric_spectrum(rng):
    crop, _, _, _ = _instance(rng)
    g_hat = _complex(rng, crop.full + (2,))
    with pytest.raises(SolverError, match="conjugate-symmetric"):
        solve_w(g_hat, np.zeros_like(g_hat), None, SolverParams(), crop, mu=1.0)


def test_objective_gradient_matches_linear_system(rng):
    crop, x0, context, label = _instance(rng, grid=(5, 5), cropped=(3, 2), depth=2, patches=2)
    params = SolverParams(lambda_=0.2, gamma=3.0)
    w_tilde = rng.normal(size=crop.cropped + (2,))
    w = rng.normal(size=w_tilde.shape)
    h, b, _ = assemble_quadratic(x0, context, label, params, crop, w_tilde)
    step = 1e-6
    numeric = np.zeros(w.size)
    for j in range(w.size):
        e = np.zeros(w.size)
        e[j] = step
        up = evaluate_objective(w + e.reshape(w.shape), x0, context, label, params, crop, w_tilde)
        down = evaluate_objective(w - e.reshape(w.shape), x0, context, label, params, crop, w_tilde)
        numeric[j] = (up - down) / (2 * step)
    np.testing.assert_allclose(numeric, h @ w.ravel() - b, atol=1e-5)


def test_context_aware_training_beats_plain_training_on_full_objective(rng):
    crop, x0, context, label = _instance(rng, grid=(4, 4), cropped=(2, 2), depth=2, patches=1)
    w_tilde = 0.5 * rng.normal(size=crop.cropped + (2,))
    params = SolverParams(lambda_=0.1, gamma=1.0, mu0=1.0, beta=1.0, mu_max=1.0, admm_iters=400)
    full = train_filter(x0, context, label, w_tilde, params, crop)
    plain = train_filter(x0, None, label, None, params, crop)
    e_full = evaluate_objective(full.w, x0, context, label, params, crop, w_tilde)
    e_plain = evaluate_objective(plain.w, x0, context, label, params, crop, w_tilde)
    assert e_full <= e_plain + 1e-6


def test_floating_point_overflow_raises_solver_error(rng):
    crop, _, _, label = _instance(rng)
    huge = np.full(crop.full + (2,), 1e200)
    with pytest.raises(SolverError, match="floating-point"):
        train_filter(huge, None, label, None, SolverParams(), crop)
