"""Diffusion posterior sampling: a generic template and three update steps.

The template alternates two things for ``t = T..1``: ask a denoiser for
draws from the denoising posterior at the current iterate, then apply an
update step that combines those draws with the measurement.  Steps see the
prior only through the draws.

Step contract::

    step(x_t, draws, y, model, params, t, ctx, rng) -> x_{t-1}

``x_t`` has shape (n, d) (one row per trajectory, signal scale), ``draws``
shape (n, S, d), and ``ctx`` is the per-run :class:`StepContext` carrying
the noise schedule and cached operator factorizations.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .diffusion import build_schedule, covariance_times
from .distributions import PrecisionGaussian, sample_mv_gaussian
from .errors import DivergenceError, InsufficientSamplesError, ParameterDomainError

__all__ = [
    "DpsConfig",
    "DpsRunResult",
    "StepContext",
    "cdps_step",
    "diffpir_step",
    "dpnp_step",
    "dpnp_schedule",
    "register_step",
    "get_step",
    "run_dps",
]

DIVERGENCE_BOUND = 1e50


@dataclass
class DpsConfig:
    """Algorithm choice and parameters.

    Parameters
    ----------
    algorithm : {"cdps", "diffpir", "dpnp"} or a registered name
    params : dict
        ``zeta`` for cdps (plus ``normalize`` to use a constant guidance
        weight when False); ``lam`` and ``zeta`` for diffpir;
        ``eta_initial``, ``eta_final`` and ``K`` for dpnp (plus
        ``noise_weighted`` to drop the ``1 / sigma_n^2`` weight of the data
        term when False).
    schedule : DiffusionSchedule, optional
        Noise schedule for cdps/diffpir; the 1000-step default if omitted.
    S : int
        Denoiser draws per step.
    n_samples : int
        Independent trajectories (posterior draws) per measurement.
    """

    algorithm: str
    params: dict = field(default_factory=dict)
    schedule: object = None
    S: int = 300
    n_samples: int = 50


@dataclass
class DpsRunResult:
    draws: np.ndarray
    seconds: float = 0.0
    trajectories: list = None


class StepContext:
    """Per-run constants shared by all steps of one run."""

    def __init__(self, model, schedule=None, noise_levels=None):
        self.model = model
        self.schedule = schedule
        self.noise_levels = noise_levels
        a = model.matrix
        self.gram = a.T @ a
        self.eigval, self.eigvec = np.linalg.eigh(self.gram)
        self.sigma_n = model.sigma_n

    def prox(self, y, center, rho):
        """``argmin_x 0.5 ||A x - y||^2 + rho / 2 ||x - center||^2`` for each row of ``center``."""
        rhs = y @ self.model.matrix + rho * center
        v = self.eigvec
        return ((rhs @ v) / (self.eigval + rho)) @ v.T


def _check_draws(draws, minimum=1):
    if draws.shape[1] < minimum:
        raise InsufficientSamplesError(f"step needs at least {minimum} denoiser draws")


def cdps_step(x_t, draws, y, model, params, t, ctx, rng):
    """Ancestral DDPM step towards the draw mean plus covariance-based data guidance.

    The guidance is the gradient of ``0.5 ||A E[x_0 | x_t] - y||^2`` with
    the Jacobian of the posterior mean replaced by the scaled sample
    covariance of the draws.  Its weight is ``zeta_t = params["zeta"] /
    ||A x0_hat - y||`` per trajectory, the residual-normalized step of the
    original guidance; with ``params["normalize"] = False`` the weight is
    the constant ``zeta``.
    """
    _check_draws(draws, 2)
    s = ctx.schedule
    ab, ab_prev, beta, alpha = s.alpha_bar[t], s.alpha_bar[t - 1], s.beta[t], s.alpha[t]
    xa = np.sqrt(ab) * x_t
    x0 = draws.mean(axis=1)
    mean = (np.sqrt(alpha) * (1.0 - ab_prev) * xa + np.sqrt(ab_prev) * beta * x0) / (1.0 - ab)
    var = beta * (1.0 - ab_prev) / (1.0 - ab)
    out = mean + np.sqrt(var) * rng.standard_normal(x_t.shape)
    zeta = params.get("zeta", 0.0)
    if zeta != 0.0:
        resid = x0 @ model.matrix.T - y
        weight = np.full((x_t.shape[0], 1), float(zeta))
        if params.get("normalize", True):
            norm = np.linalg.norm(resid, axis=1, keepdims=True)
            weight = np.divide(weight, norm, out=np.zeros_like(weight), where=norm > 0.0)
        grad = covariance_times(draws, resid @ model.matrix)
        out = out - weight * np.sqrt(ab) / (1.0 - ab) * grad
    return out / np.sqrt(ab_prev)


def diffpir_step(x_t, draws, y, model, params, t, ctx, rng):
    """Data-proximal correction of the draw mean followed by a partially stochastic DDIM-type step."""
    s = ctx.schedule
    ab, ab_prev = s.alpha_bar[t], s.alpha_bar[t - 1]
    zeta = params["zeta"]
    rho = params["lam"] * ctx.sigma_n**2 / s.sigma[t] ** 2
    x0 = ctx.prox(y, draws.mean(axis=1), rho)
    eps = (np.sqrt(ab) * x_t - np.sqrt(ab) * x0) / np.sqrt(1.0 - ab)
    noise = rng.standard_normal(x_t.shape)
    out = np.sqrt(ab_prev) * x0 + np.sqrt(1.0 - ab_prev) * (np.sqrt(1.0 - zeta) * eps + np.sqrt(zeta) * noise)
    return out / np.sqrt(ab_prev)


def dpnp_step(x_t, draws, y, model, params, t, ctx, rng):
    """Exact draw from the data-proximal Gaussian centred at the first denoiser draw."""
    eta = ctx.noise_levels[t]
    weight = 1.0 / ctx.sigma_n**2 if params.get("noise_weighted", True) else 1.0
    d = x_t.shape[1]
    prec = weight * ctx.gram + np.eye(d) / eta**2
    shift = weight * (y @ model.matrix) + draws[:, 0, :] / eta**2
    return sample_mv_gaussian(PrecisionGaussian(0.5 * (prec + prec.T), shift), rng)


def dpnp_schedule(eta_initial, eta_final=0.15, K=40):
    """Noise levels ``eta_1..eta_K``: constant for ``K/5`` steps, then geometric down to ``eta_final``.

    Returned as an array of length ``K + 1`` indexed by step, entry 0 unused.
    """
    K = int(K)
    if K % 5 or K < 5:
        raise ParameterDomainError("K must be a positive multiple of 5")
    if eta_initial <= 0.0 or eta_final <= 0.0:
        raise ParameterDomainError("noise levels must be positive")
    k0 = K // 5
    i = np.arange(1, K + 1)
    frac = np.clip((i - k0) / (K - k0), 0.0, 1.0)
    eta = eta_initial * (eta_final / eta_initial) ** frac
    return np.concatenate([[np.nan], eta])


_STEPS = {"cdps": cdps_step, "diffpir": diffpir_step, "dpnp": dpnp_step}


def register_step(name, step):
    """Register a new update step under ``name`` (see the module docstring for its contract)."""
    _STEPS[name] = step


def get_step(name):
    try:
        return _STEPS[name]
    except KeyError:
        raise ParameterDomainError(f"unknown algorithm {name!r}; registered: {sorted(_STEPS)}") from None


def _validate(config):
    p = config.params
    if config.algorithm == "cdps" and p.get("zeta", 0.0) < 0.0:
        raise ParameterDomainError("zeta must be non-negative")
    if config.algorithm == "diffpir":
        if p["lam"] <= 0.0 or not (0.0 <= p["zeta"] <= 1.0):
            raise ParameterDomainError("diffpir needs lam > 0 and zeta in [0, 1]")


def run_dps(config, y, model, denoiser, rng, keep_path=False):
    """Draw ``config.n_samples`` posterior samples for one measurement.

    All trajectories advance together so the denoiser sees one batch per
    step.  Trajectories start from standard normal noise on the signal
    scale.

    Raises
    ------
    DivergenceError
        If an iterate becomes non-finite or exceeds ``DIVERGENCE_BOUND``.
    """
    _validate(config)
    step = get_step(config.algorithm)
    y = np.asarray(y, dtype=float)
    n, d = int(config.n_samples), model.d
    if config.algorithm == "dpnp":
        p = config.params
        levels = dpnp_schedule(p["eta_initial"], p.get("eta_final", 0.15), p.get("K", 40))
        ctx = StepContext(model, noise_levels=levels)
        S = 1
        steps = len(levels) - 1
    else:
        sched = config.schedule if config.schedule is not None else build_schedule()
        ctx = StepContext(model, schedule=sched)
        levels = sched.sigma
        S = config.S
        steps = sched.T
    start = time.perf_counter()
    x = rng.standard_normal((n, d))
    path = [] if keep_path else None
    for t in range(steps, 0, -1):
        draws = denoiser(x, levels[t], S, rng)
        x = step(x, draws, y, model, config.params, t, ctx, rng)
        if not np.all(np.abs(x) < DIVERGENCE_BOUND):
            raise DivergenceError(f"{config.algorithm} iterates diverged at step {t}")
        if keep_path:
            path.append(x.copy())
    return DpsRunResult(x, time.perf_counter() - start, path)
