import math

import numpy as np
import pytest
from scipy import integrate, stats

from dpsbench import _kernels
from dpsbench.distributions import BernoulliLaplace, Gauss, Laplace, StudentT
from dpsbench.errors import DimensionError, InsufficientSamplesError, ParameterDomainError
from dpsbench.gibbs import (
    BlState,
    ChainResult,
    GlmProblem,
    bl_flip_logodds,
    chain_statistics,
    conjugate_posterior,
    denoising_chains,
    glm_latent_step,
    glm_signal_step,
    run_bl_chain,
    run_glm_chain,
    sample_posterior,
)
from dpsbench.levy import apply_D, jump_law, synthesize_signal
from dpsbench.operators import build_operator


def _problem(kind, law, rng, sigma=0.2, d=16):
    model = build_operator(kind, d, rng)
    x, _ = synthesize_signal(law, d, rng)
    y = model.matrix @ x + sigma * rng.standard_normal(model.m)
    return GlmProblem(model.matrix, y, sigma, law)


# latent step -----------------------------------------------------------------


def test_latent_gaussian_degenerate(rng):
    p = _problem("identity", Gauss(0.0, 0.25), rng)
    assert np.all(glm_latent_step(p, rng.standard_normal(16), rng) == 0.0)


def test_latent_student_at_zero(rng):
    p = _problem("identity", StudentT(2.0), rng, d=8)
    z = np.array([glm_latent_step(p, np.zeros(8), rng)[8:] for _ in range(20_000)])
    assert z.mean() == pytest.approx(1.5, rel=0.02)  # Gamma(1.5, rate 1)


def test_latent_laplace_boundary(rng):
    p = _problem("identity", Laplace(1.0), rng, d=8)
    z = np.array([glm_latent_step(p, np.zeros(8), rng)[8:] for _ in range(20_000)])
    assert np.all(z > 0)
    assert z.mean() == pytest.approx(1.0, rel=0.03)  # Gamma(1/2, rate 1/2)


def test_signal_step_rejects_bad_latents(rng):
    p = _problem("identity", Laplace(1.0), rng, d=4)
    with pytest.raises(ParameterDomainError):
        glm_signal_step(p, np.zeros(8), rng)


def test_problem_dimension_check():
    with pytest.raises(DimensionError):
        GlmProblem(np.eye(4), np.zeros(3), 1.0, Gauss(0.0, 1.0))


def test_problem_rejects_bl():
    with pytest.raises(ParameterDomainError):
        GlmProblem(np.eye(4), np.zeros(4), 1.0, BernoulliLaplace(0.1, 1.0))


# conjugate oracle ------------------------------------------------------------


@pytest.mark.parametrize("kind", ["identity", "convolution", "imputation", "fourier"])
def test_conjugate_equivalence(kind, rng):
    p = _problem(kind, Gauss(0.0, 0.25), rng, d=32)
    res = run_glm_chain(p, 500, 20_000, rng=rng)
    mean, cov = conjugate_posterior(p.matrix, p.y, p.sigma_n, 0.25)
    st = chain_statistics(res)
    assert np.linalg.norm(st["mean"] - mean) / np.linalg.norm(mean) <= 1e-2
    assert np.allclose(st["marginal_var"], np.diag(cov), rtol=0.06)


def test_one_dim_conjugacy(rng):
    p = GlmProblem(np.eye(1), np.array([1.0]), 1.0, Gauss(0.0, 1.0))
    draws = run_glm_chain(p, 100, 50_000, rng=rng).draws[:, 0]
    assert draws.mean() == pytest.approx(0.5, abs=0.015)
    assert draws.var() == pytest.approx(0.5, rel=0.03)


def test_reference_steps_match_kernel(rng):
    """Python reference latent/signal steps against the compiled chain (Laplace, convolution)."""
    p = _problem("convolution", Laplace(1.0), rng, sigma=0.3, d=16)
    x = np.zeros(16)
    ref = []
    for it in range(6000):
        x = glm_signal_step(p, glm_latent_step(p, x, rng), rng)
        if it >= 500:
            ref.append(x)
    ref = np.array(ref)
    fast = run_glm_chain(p, 500, 40_000, rng=rng).draws
    se = np.sqrt(ref.var(axis=0) / 1000 + fast.var(axis=0) / 8000)
    assert np.all(np.abs(ref.mean(axis=0) - fast.mean(axis=0)) <= 5 * se)


def test_chain_counts_and_determinism(rng):
    p = _problem("imputation", StudentT(2.0), rng)
    one = run_glm_chain(p, 0, 1, rng=np.random.default_rng(7))
    assert one.draws.shape == (1, 16)
    a = run_glm_chain(p, 50, 100, rng=np.random.default_rng(3)).draws
    b = run_glm_chain(p, 50, 100, rng=np.random.default_rng(3)).draws
    assert np.array_equal(a, b)
    with pytest.raises(ParameterDomainError):
        run_glm_chain(p, 0, 0, rng=rng)


def test_thinning_keeps_every_nth(rng):
    p = _problem("identity", Laplace(1.0), rng)
    full = run_glm_chain(p, 10, 30, rng=np.random.default_rng(5)).draws
    thin = run_glm_chain(p, 10, 10, rng=np.random.default_rng(5), thin=3).draws
    assert np.array_equal(thin, full[2::3])


def test_bl_with_no_atom_matches_laplace(rng):
    """BL(0, b) is Laplace(1/b): both samplers must agree (dense and state-space routes)."""
    for kind in ("identity", "convolution"):
        p = _problem(kind, Laplace(0.5), rng, sigma=0.3, d=16)
        glm = run_glm_chain(p, 500, 40_000, rng=rng).draws
        bl = run_bl_chain(p.matrix, p.y, p.sigma_n, 0.0, 2.0, 500, 20_000 if kind == "identity" else 8000, rng=rng).draws
        se = np.sqrt(glm.var(axis=0) / 4000 + bl.var(axis=0) / 1000)
        assert np.all(np.abs(glm.mean(axis=0) - bl.mean(axis=0)) <= 5 * se)


# Bernoulli-Laplace -------------------------------------------------------------


def _bl_one_dim_posterior_zero(y, sigma, lam, b):
    atom = lam * stats.norm.pdf(y, 0.0, sigma)
    f = lambda u: 0.5 * b * math.exp(-b * abs(u)) * stats.norm.pdf(y, u, sigma)
    slab = sum(integrate.quad(f, lo, hi)[0] for lo, hi in [(-np.inf, 0.0), (0.0, y), (y, np.inf)])
    return atom / (atom + (1 - lam) * slab)


@pytest.mark.parametrize("y", [0.2, 1.0, 3.0])
def test_bl_one_dim_support(y):
    rng = np.random.default_rng(11)
    exact = _bl_one_dim_posterior_zero(y, 0.5, 0.3, 1.5)
    res = run_bl_chain(np.eye(1), np.array([y]), 0.5, 0.3, 1.5, 1000, 100_000, rng=rng)
    assert abs(np.mean(~res.support[:, 0].astype(bool)) - exact) <= 0.01


def test_bl_exact_zeros(rng):
    for kind in ("identity", "fourier"):
        model = build_operator(kind, 16, rng)
        x, _ = synthesize_signal(jump_law("bl"), 16, rng)
        y = model.matrix @ x + 0.1 * rng.standard_normal(model.m)
        res = run_bl_chain(model.matrix, y, 0.1, 0.5, 1.0, 50, 200, rng=rng)
        off = ~res.support.astype(bool)
        assert off.any()
        assert np.all(res.increments[off] == 0.0)
        assert np.all(apply_D(res.draws)[off] == 0.0)


def test_bl_atom_dominates(rng):
    res = run_bl_chain(np.eye(8), rng.standard_normal(8), 1.0, 1.0, 1.0, 10, 50, rng=rng)
    assert np.all(res.draws == 0.0)


def test_bl_dense_and_statespace_agree(rng):
    """Imputation has a diagonal Gram, so it can run through both BL kernels."""
    model = build_operator("imputation", 12, np.random.default_rng(2))
    x, _ = synthesize_signal(jump_law("bl"), 12, rng)
    y = model.matrix @ x + 0.2 * rng.standard_normal(model.m)
    s2 = 0.04
    a = model.matrix
    u0 = np.zeros(12)
    ss = run_bl_chain(a, y, 0.2, 0.4, 1.0, 500, 40_000, init_u=u0, rng=rng)
    h = a @ np.tril(np.ones((12, 12)))
    xs, _, vs = _kernels.bl_dense_chain(0.4, 1.0, h, y, s2, u0.copy(), 500, 20_000, 1, rng)
    se = np.sqrt(ss.draws.var(axis=0) / 4000 + xs.var(axis=0) / 2000)
    assert np.all(np.abs(ss.draws.mean(axis=0) - xs.mean(axis=0)) <= 5 * se)
    assert np.allclose(ss.support.mean(axis=0), vs.mean(axis=0), atol=0.05)


def test_statespace_logodds_match_dense(rng):
    d = 10
    obs_prec = np.where(rng.random(d) < 0.6, 1 / 0.09, 0.0)
    y_full = rng.standard_normal(d)
    v = rng.random(d) < 0.5
    w = rng.exponential(2.0, d)
    deltas = np.empty(d)
    scratch = [np.empty(d) for _ in range(4)]
    vv = v.copy()
    _kernels.bl_statespace_sweep(vv, w, obs_prec, obs_prec * y_full, 0.3, None, *scratch, deltas)
    kept = np.flatnonzero(obs_prec > 0)
    state = BlState(np.eye(d)[kept], y_full[kept], 0.3, 1 / (1 + math.exp(0.3)), v, w)
    for k in range(d):
        # the sweep without a generator leaves v untouched, so every site sees the same state
        state.set_bit(k, v[k])
        assert deltas[k] == pytest.approx(state.logodds(k), abs=1e-9)


def _dense_logodds(state, k):
    on, off = state.v.copy(), state.v.copy()
    on[k], off[k] = True, False
    vals = []
    for bits in (on, off):
        b = state.sigma2 * np.eye(len(state.y)) + (state.h * (bits * state.w)) @ state.h.T
        vals.append((np.linalg.slogdet(b)[1], state.y @ np.linalg.solve(b, state.y)))
    return state.prior_logodds - 0.5 * (vals[0][0] - vals[1][0]) - 0.5 * (vals[0][1] - vals[1][1])


def test_flip_logodds_dense_oracle(rng):
    for _ in range(20):
        a = rng.standard_normal((6, 8))
        state = BlState(a, rng.standard_normal(6), 0.4, 0.2, rng.random(8) < 0.5, rng.exponential(1.0, 8))
        for k in range(8):
            exact = _dense_logodds(state, k)
            assert bl_flip_logodds(state, k) == pytest.approx(exact, rel=1e-8, abs=1e-10)


def test_flip_logodds_limits(rng):
    a = rng.standard_normal((5, 6))
    w = rng.exponential(1.0, 6)
    w[2] = 0.0
    state = BlState(a, rng.standard_normal(5), 0.3, 0.25, rng.random(6) < 0.5, w)
    assert bl_flip_logodds(state, 2) == pytest.approx(math.log(0.75 / 0.25))
    half = BlState(a, state.y, 0.3, 0.5, state.v, np.full(6, 1.0))
    assert half.prior_logodds == 0.0


def test_woodbury_after_100_flips(rng):
    a = rng.standard_normal((12, 16))
    state = BlState(a, rng.standard_normal(12), 0.5, 0.1, rng.random(16) < 0.5, rng.exponential(2.0, 16))
    for k in rng.integers(0, 16, 100):
        state.set_bit(k, not state.v[k])
    logdet, quad = state.dense()
    assert state.logdet == pytest.approx(logdet, rel=1e-8)
    assert state.quad == pytest.approx(quad, rel=1e-8)


# summaries -----------------------------------------------------------------------


def test_chain_statistics_examples():
    same = ChainResult(np.ones((5, 3)), 0)
    st = chain_statistics(same)
    assert np.all(st["marginal_var"] == 0.0) and np.all(st["covariance"] == 0.0)
    a, b = np.array([1.0, 2.0]), np.array([3.0, -1.0])
    st = chain_statistics(np.stack([a, b]))
    assert np.allclose(st["mean"], (a + b) / 2)
    assert np.allclose(st["covariance"], 0.5 * np.outer(a - b, a - b))
    with pytest.raises(InsufficientSamplesError):
        chain_statistics(ChainResult(np.ones((1, 3)), 0))


def test_chain_statistics_identity(rng):
    st = chain_statistics(rng.standard_normal((10_000, 4)))
    assert np.linalg.norm(st["covariance"] - np.eye(4)) / 2.0 <= 0.05


def test_sample_posterior_dispatch(rng):
    res = sample_posterior(np.eye(8), rng.standard_normal(8), 0.5, jump_law("bl"), 10, 20, rng)
    assert res.support is not None
    res = sample_posterior(np.eye(8), rng.standard_normal(8), 0.5, jump_law("laplace"), 10, 20, rng)
    assert res.support is None and res.draws.shape == (20, 8)


def test_denoising_chains_gauss(rng):
    ys = rng.standard_normal((3, 10))
    draws = denoising_chains(ys, 0.5, Gauss(0.0, 0.25), 200, 20_000, rng)
    assert draws.shape == (3, 20_000, 10)
    for i in range(3):
        mean, _ = conjugate_posterior(np.eye(10), ys[i], 0.5, 0.25)
        assert np.allclose(draws[i].mean(axis=0), mean, atol=0.02)
