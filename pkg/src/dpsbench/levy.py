"""Discrete Levy-process signals: increments, finite differences and prior densities."""

import numpy as np

from .distributions import BernoulliLaplace, Gauss, Laplace, StudentT, UnivariateLaw
from .errors import DimensionError, ParameterDomainError

DEFAULT_DIM = 64

__all__ = [
    "DEFAULT_DIM",
    "JUMP_LAWS",
    "jump_law",
    "law_name",
    "apply_D",
    "apply_D_inv",
    "difference_matrix",
    "synthesize_signal",
    "synthesize_signals",
    "log_prior",
]

# named jump laws used in the experiments
JUMP_LAWS = {
    "gauss": Gauss(0.0, 0.25),
    "laplace": Laplace(1.0),
    "bl": BernoulliLaplace(0.1, 1.0),
    "st1": StudentT(1.0),
    "st2": StudentT(2.0),
    "st3": StudentT(3.0),
}


def jump_law(name):
    """Look up a jump law by its short name (see ``JUMP_LAWS``)."""
    try:
        return JUMP_LAWS[name]
    except KeyError:
        raise ParameterDomainError(f"unknown jump law {name!r}; choose from {sorted(JUMP_LAWS)}") from None


def law_name(law):
    for name, known in JUMP_LAWS.items():
        if known == law:
            return name
    return repr(law)


def _check_jump_law(law):
    if not isinstance(law, (Gauss, Laplace, StudentT, BernoulliLaplace)):
        raise ParameterDomainError(f"{type(law).__name__} is not a supported jump law")
    if isinstance(law, Gauss) and law.mean != 0.0:
        raise ParameterDomainError("Gaussian jumps must be centred")


def apply_D(x):
    """Increments ``u_1 = x_1``, ``u_k = x_k - x_{k-1}`` along the last axis."""
    x = np.asarray(x, dtype=float)
    u = np.empty_like(x)
    u[..., 0] = x[..., 0]
    u[..., 1:] = x[..., 1:] - x[..., :-1]
    return u


def apply_D_inv(u):
    """Cumulative sum of increments along the last axis."""
    return np.cumsum(np.asarray(u, dtype=float), axis=-1)


def difference_matrix(d):
    """Dense lower-bidiagonal matrix with ones on the diagonal and -1 below it."""
    return np.eye(d) - np.eye(d, k=-1)


def synthesize_signals(law, d, n, rng):
    """Draw ``n`` signals of length ``d`` with i.i.d. increments from ``law``.

    Returns
    -------
    signals, increments : ndarray, shape (n, d)
        Increments are returned separately so that exact zeros of a spike
        law survive without passing through a subtraction.
    """
    _check_jump_law(law)
    if d < 1:
        raise DimensionError("signal length must be at least 1")
    u = np.asarray(law.sample(rng, (n, d)), dtype=float)
    return apply_D_inv(u), u


def synthesize_signal(law, d, rng):
    """Single-signal form of :func:`synthesize_signals`."""
    x, u = synthesize_signals(law, d, 1, rng)
    return x[0], u[0]


def log_prior(law, x, increments=None):
    """Log-density of a signal under i.i.d. jumps: the sum of jump log-densities.

    ``increments`` may be supplied to score exact zeros without
    recomputing differences.  A leading batch axis is allowed.
    """
    u = apply_D(x) if increments is None else np.asarray(increments, dtype=float)
    return law.logpdf(u).sum(axis=-1)
