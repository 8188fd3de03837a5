"""Variance-preserving diffusion schedules, denoisers and unconditional reverse diffusion.

Two scales appear throughout.  The *diffusion scale* is that of the forward
process ``x_t = sqrt(abar_t) x_0 + sqrt(1 - abar_t) n``.  The *signal
scale* divides by ``sqrt(abar_t)``, so ``x_t / sqrt(abar_t) = x_0 +
sigma_t n`` with ``sigma_t^2 = (1 - abar_t) / abar_t``.  Denoisers always
work on the signal scale; iterates of the posterior samplers are stored on
the signal scale as well.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientSamplesError, ParameterDomainError
from .gibbs import denoising_chains

__all__ = [
    "DiffusionSchedule",
    "build_schedule",
    "desk_schedule",
    "Denoiser",
    "OracleDenoiser",
    "register_denoiser",
    "get_denoiser",
    "oracle_denoise",
    "tweedie_score",
    "ddpm_prior_sample",
    "covariance_statistic",
    "jacobian_from_covariance",
    "covariance_times",
]

PAPER_STEPS = 1000
BETA_START = 1e-4
BETA_END = 2e-2


@dataclass(frozen=True, eq=False)
class DiffusionSchedule:
    """Arrays indexed by ``t = 0..T``; entry 0 is the clean state (``abar_0 = 1``)."""

    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray

    @property
    def T(self):
        return len(self.beta) - 1


def build_schedule(T=PAPER_STEPS, beta_0=BETA_START, beta_T=BETA_END):
    """Linear ``beta_t`` from ``beta_0`` (t = 1) to ``beta_T`` (t = T)."""
    T = int(T)
    if T < 2:
        raise ParameterDomainError("need at least two diffusion steps")
    if not (0.0 < beta_0 <= beta_T < 1.0):
        raise ParameterDomainError("need 0 < beta_0 <= beta_T < 1")
    beta = np.concatenate([[0.0], np.linspace(beta_0, beta_T, T)])
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    sigma = np.sqrt((1.0 - alpha_bar) / alpha_bar)
    return DiffusionSchedule(beta, alpha, alpha_bar, sigma)


def desk_schedule(T):
    """Shorter schedule whose endpoints are scaled by ``1000 / T``.

    Scaling keeps the final ``abar_T`` close to that of the 1000-step
    schedule, so the reverse process still starts from (almost) pure noise.
    """
    factor = PAPER_STEPS / float(T)
    return build_schedule(T, BETA_START * factor, min(BETA_END * factor, 0.999))


# ---------------------------------------------------------------------------
# denoisers
# ---------------------------------------------------------------------------


class Denoiser:
    """Contract for samplers of ``p(x_0 | x_0 + sigma n = x)``.

    ``__call__(x, sigma, S, rng)`` takes ``x`` of shape (n, d) on the signal
    scale and returns draws of shape (n, S, d).
    """

    name = ""

    def __call__(self, x, sigma, S, rng):
        raise NotImplementedError


class OracleDenoiser(Denoiser):
    """Exact denoising-posterior draws from Gibbs chains warm-started at ``x``.

    Parameters
    ----------
    law : jump law
    n_burn : int
        Burn-in of every inner chain.
    """

    name = "oracle"

    def __init__(self, law, n_burn=100):
        self.law = law
        self.n_burn = int(n_burn)

    def __call__(self, x, sigma, S, rng):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return denoising_chains(x, sigma, self.law, self.n_burn, int(S), rng, init=x)


_DENOISERS = {"oracle": OracleDenoiser}


def register_denoiser(name, factory):
    """Make ``factory(law, **options)`` available under ``name``."""
    _DENOISERS[name] = factory


def get_denoiser(name, law, **options):
    try:
        factory = _DENOISERS[name]
    except KeyError:
        raise ParameterDomainError(f"unknown denoiser {name!r}; registered: {sorted(_DENOISERS)}") from None
    return factory(law, **options)


def oracle_denoise(x_t, t, schedule, law, S, rng, n_burn=100):
    """Draws from the denoising posterior at step ``t`` for a signal-scale iterate."""
    if t < 1:
        raise ParameterDomainError("denoising needs t >= 1")
    return OracleDenoiser(law, n_burn)(x_t, schedule.sigma[t], S, rng)


# ---------------------------------------------------------------------------
# score and covariance identities
# ---------------------------------------------------------------------------


def tweedie_score(x, t, schedule, mmse):
    """Score of the diffusion-scale marginal from the posterior mean of ``x_0``.

    ``x`` is on the diffusion scale and ``mmse`` estimates ``E[x_0 | x_t = x]``.
    """
    ab = schedule.alpha_bar[t]
    return -(np.asarray(x) - np.sqrt(ab) * np.asarray(mmse)) / (1.0 - ab)


def covariance_statistic(draws):
    """Unbiased sample covariance of draws with shape (S, d)."""
    draws = np.asarray(draws, dtype=float)
    if draws.shape[0] < 2:
        raise InsufficientSamplesError("covariance needs at least two draws")
    c = draws - draws.mean(axis=0)
    return c.T @ c / (draws.shape[0] - 1)


def jacobian_from_covariance(cov, t, schedule):
    """Jacobian of ``x_t -> E[x_0 | x_t]`` (diffusion scale) from the conditional covariance."""
    ab = schedule.alpha_bar[t]
    return np.sqrt(ab) / (1.0 - ab) * np.asarray(cov)


def covariance_times(draws, v):
    """Product of the unbiased sample covariance of each draw set with ``v``.

    ``draws`` has shape (n, S, d) and ``v`` shape (n, d); the covariance is
    never formed.
    """
    S = draws.shape[1]
    if S < 2:
        raise InsufficientSamplesError("covariance needs at least two draws")
    c = draws - draws.mean(axis=1, keepdims=True)
    proj = np.einsum("nsd,nd->ns", c, v)
    return np.einsum("nsd,ns->nd", c, proj) / (S - 1)


# ---------------------------------------------------------------------------
# unconditional generation
# ---------------------------------------------------------------------------


def ddpm_prior_sample(denoiser, schedule, rng, n=1, d=64, S=300, return_path=False):
    """Unconditional reverse diffusion driven by a denoiser's sample mean.

    Each step applies ``x <- (x + beta_t score) / sqrt(1 - beta_t) + sqrt(beta_t) z``
    on the diffusion scale, with the score from :func:`tweedie_score` and no
    injected noise at ``t = 1``.

    Returns
    -------
    ndarray, shape (n, d)
        Generated signals (and the list of signal-scale iterates if
        ``return_path``).
    """
    x = rng.standard_normal((n, d))
    path = []
    for t in range(schedule.T, 0, -1):
        ab = schedule.alpha_bar[t]
        draws = denoiser(x / np.sqrt(ab), schedule.sigma[t], S, rng)
        score = tweedie_score(x, t, schedule, draws.mean(axis=1))
        beta = schedule.beta[t]
        x = (x + beta * score) / np.sqrt(1.0 - beta)
        if t > 1:
            x = x + np.sqrt(beta) * rng.standard_normal(x.shape)
        if return_path:
            path.append(x / np.sqrt(schedule.alpha_bar[t - 1]))
    return (x, path) if return_path else x
