"""Gold-standard posterior samplers for signals with i.i.d. Levy jumps.

Two samplers are provided:

* a latent-variable Gibbs sampler for Gaussian, Laplace and Student-t jumps,
  in which every factor of the posterior is written as a Gaussian scale
  mixture so the signal conditional is Gaussian;
* a partially collapsed Gibbs sampler for Bernoulli-Laplace jumps that
  sweeps the support bits with the increments integrated out.

The reference step functions (``glm_latent_step``, ``glm_signal_step``,
:class:`BlState`) follow the textbook construction with a stacked matrix
``K = [A; D]``.  Long chains go through compiled kernels that exploit the
structure of the problem: when ``A^T A`` is diagonal the signal precision
is tridiagonal and the support sweep becomes a linear-time state-space
recursion.  Both routes target the same conditionals and are tested
against each other.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .distributions import (
    BernoulliLaplace,
    Gauss,
    Laplace,
    PrecisionGaussian,
    StudentT,
    sample_mv_gaussian,
)
from .errors import DimensionError, InsufficientSamplesError, ParameterDomainError
from .levy import apply_D, difference_matrix

__all__ = [
    "GlmProblem",
    "ChainResult",
    "BlState",
    "glm_latent_step",
    "glm_signal_step",
    "run_glm_chain",
    "run_bl_chain",
    "bl_flip_logodds",
    "sample_posterior",
    "denoising_chains",
    "chain_statistics",
    "conjugate_posterior",
    "default_init",
]


def _law_code(law):
    if isinstance(law, Gauss):
        return _kernels.LAW_GAUSS, law.var
    if isinstance(law, Laplace):
        return _kernels.LAW_LAPLACE, law.scale
    if isinstance(law, StudentT):
        return _kernels.LAW_STUDENT, law.nu
    raise ParameterDomainError(f"{type(law).__name__} jumps are not handled by the scale-mixture sampler")


@dataclass(frozen=True, eq=False)
class GlmProblem:
    """Posterior ``p(x | y)`` with Gaussian noise and i.i.d. scale-mixture jumps.

    The factors are the ``m`` measurement residuals ``(A x - y)_i`` with
    variance ``sigma_n^2`` and the ``d`` increments ``(D x)_k`` with the
    jump law.
    """

    matrix: np.ndarray
    y: np.ndarray
    sigma_n: float
    law: object

    def __post_init__(self):
        _law_code(self.law)
        a = np.asarray(self.matrix, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if a.ndim != 2 or y.shape != (a.shape[0],):
            raise DimensionError("measurement length does not match the operator")
        object.__setattr__(self, "matrix", a)
        object.__setattr__(self, "y", y)

    @classmethod
    def from_model(cls, model, y, law):
        return cls(model.matrix, y, model.sigma_n, law)

    @property
    def d(self):
        return self.matrix.shape[1]

    @property
    def m(self):
        return self.matrix.shape[0]

    @property
    def stacked(self):
        """The stacked factor matrix ``K = [A; D]``."""
        return np.vstack([self.matrix, difference_matrix(self.d)])


@dataclass(frozen=True, eq=False)
class ChainResult:
    """Post-burn-in draws of one chain.

    Attributes
    ----------
    draws : ndarray, shape (S, d)
    burn_in : int
    thin : int
    seed : object
        Whatever identifies the random stream (kept for bookkeeping).
    increments, support : ndarray or None
        Bernoulli-Laplace chains also return the increments (with exact
        zeros) and the support bits of every kept draw.
    """

    draws: np.ndarray
    burn_in: int
    thin: int = 1
    seed: object = None
    increments: np.ndarray = None
    support: np.ndarray = None

    def __post_init__(self):
        if self.draws.ndim != 2 or self.draws.shape[0] < 1:
            raise InsufficientSamplesError("a chain result needs at least one draw")


# ---------------------------------------------------------------------------
# reference GLM steps
# ---------------------------------------------------------------------------


def glm_latent_step(problem, x, rng):
    """Draw the latent of every factor given the signal.

    Returns a vector of length ``m + d``.  Gaussian factors have a
    degenerate latent, reported as 0.  Laplace factors return the mixing
    variance ``z ~ GIG(1/b^2, s^2, 1/2)`` and Student-t factors the mixing
    precision ``z ~ Gamma((nu + 1)/2, rate (nu + s^2)/2)``, where ``s`` is
    the factor's argument ``(K x)_i``.
    """
    x = np.asarray(x, dtype=float)
    s = apply_D(x)
    z = np.zeros(problem.m + problem.d)
    law = problem.law
    jump = z[problem.m :]
    if isinstance(law, Laplace):
        a = 1.0 / law.scale**2
        for k, sk in enumerate(s):
            jump[k] = 1.0 / _kernels.gig_half_precision(a, sk * sk, rng)
    elif isinstance(law, StudentT):
        jump[:] = rng.standard_gamma(0.5 * (law.nu + 1.0), problem.d) / (0.5 * (law.nu + s * s))
    return z


def _factor_variances(problem, z):
    var = np.empty(problem.m + problem.d)
    var[: problem.m] = problem.sigma_n**2
    law = problem.law
    jump = np.asarray(z, dtype=float)[problem.m :]
    if isinstance(law, Gauss):
        var[problem.m :] = law.var
    elif isinstance(law, Laplace):
        var[problem.m :] = jump
    else:
        var[problem.m :] = 1.0 / jump
    return var


def glm_signal_step(problem, z, rng):
    """Draw the signal from its Gaussian conditional given all factor latents.

    The precision is ``K^T diag(1/var) K`` and the shift
    ``K^T diag(1/var) mu`` with ``mu = (y, 0)``.
    """
    var = _factor_variances(problem, z)
    if not np.all(np.isfinite(var) & (var > 0.0)):
        raise ParameterDomainError("latent variances must be finite and positive")
    k = problem.stacked
    prec = 1.0 / var
    mu = np.concatenate([problem.y, np.zeros(problem.d)])
    q = (k.T * prec) @ k
    q = 0.5 * (q + q.T)
    return sample_mv_gaussian(PrecisionGaussian(q, k.T @ (prec * mu)), rng)


# ---------------------------------------------------------------------------
# chains
# ---------------------------------------------------------------------------


def default_init(matrix, y, lam=1.0):
    """Quadratic-regularized solution ``(A^T A + 2 lam D^T D)^-1 A^T y`` used as a chain start."""
    d = matrix.shape[1]
    dm = difference_matrix(d)
    return np.linalg.solve(matrix.T @ matrix + 2.0 * lam * dm.T @ dm, matrix.T @ y)


def _diag_gram(matrix):
    g = matrix.T @ matrix
    diag = np.diag(g).copy()
    if np.array_equal(g, np.diag(diag)):
        return diag
    return None


def _check_counts(n_burn, n_keep, thin):
    if n_burn < 0 or n_keep < 1 or thin < 1:
        raise ParameterDomainError("need burn-in >= 0, at least one kept draw and thinning >= 1")


def run_glm_chain(problem, n_burn, n_keep, init=None, rng=None, thin=1, seed=None):
    """Latent-variable Gibbs chain for Gaussian, Laplace or Student-t jumps.

    Parameters
    ----------
    problem : GlmProblem
    n_burn, n_keep : int
        Discarded and retained iterations (after thinning).
    init : array_like, optional
        Starting signal; defaults to :func:`default_init`.
    rng : numpy.random.Generator
    thin : int
        Keep every ``thin``-th iteration after burn-in.

    Returns
    -------
    ChainResult
    """
    _check_counts(n_burn, n_keep, thin)
    code, param = _law_code(problem.law)
    a, y, s2 = problem.matrix, problem.y, problem.sigma_n**2
    x0 = default_init(a, y) if init is None else np.asarray(init, dtype=float)
    shift = a.T @ y / s2
    diag = _diag_gram(a)
    if diag is not None:
        out = _kernels.glm_tridiag_chain(
            code, float(param), diag / s2, shift[None, :], x0[None, :].copy(), n_burn, n_keep, thin, rng
        )[0]
    else:
        data_prec = a.T @ a / s2
        out = _kernels.glm_dense_chain(code, float(param), data_prec, shift, x0.copy(), n_burn, n_keep, thin, rng)
    return ChainResult(out, n_burn, thin, seed)


def run_bl_chain(matrix, y, sigma_n, zero_prob, rate, n_burn, n_keep, init_u=None, rng=None, thin=1, seed=None):
    """Partially collapsed Gibbs chain for Bernoulli-Laplace jumps.

    Each iteration draws the slab variances ``w``, sweeps the support bits
    with the increments marginalized, and then draws the increments given
    the support.  Increments outside the support are exactly 0.0.

    Parameters
    ----------
    matrix : ndarray, shape (m, d)
    y : ndarray, shape (m,)
    sigma_n : float
    zero_prob, rate : float
        Probability of a zero jump and the rate of the Laplace slab.
    init_u : array_like, optional
        Starting increments; defaults to those of :func:`default_init`.
    """
    _check_counts(n_burn, n_keep, thin)
    BernoulliLaplace(zero_prob, rate)
    a = np.asarray(matrix, dtype=float)
    y = np.asarray(y, dtype=float)
    s2 = float(sigma_n) ** 2
    u0 = apply_D(default_init(a, y)) if init_u is None else np.asarray(init_u, dtype=float)
    diag = _diag_gram(a)
    if diag is not None:
        xs, us, vs = _kernels.bl_statespace_chain(
            float(zero_prob), float(rate), diag / s2, (a.T @ y / s2)[None, :], u0[None, :].copy(),
            n_burn, n_keep, thin, rng,
        )
        xs, us, vs = xs[0], us[0], vs[0]
    else:
        h = a @ np.tril(np.ones((a.shape[1], a.shape[1])))
        xs, us, vs = _kernels.bl_dense_chain(float(zero_prob), float(rate), h, y, s2, u0.copy(), n_burn, n_keep, thin, rng)
    return ChainResult(xs, n_burn, thin, seed, us, vs)


def sample_posterior(matrix, y, sigma_n, law, n_burn, n_keep, rng, init=None, thin=1, seed=None):
    """Run the appropriate gold-standard chain for ``law``."""
    if isinstance(law, BernoulliLaplace):
        init_u = None if init is None else apply_D(init)
        return run_bl_chain(matrix, y, sigma_n, law.zero_prob, law.rate, n_burn, n_keep, init_u, rng, thin, seed)
    return run_glm_chain(GlmProblem(matrix, y, sigma_n, law), n_burn, n_keep, init, rng, thin, seed)


def denoising_chains(ys, sigma, law, n_burn, n_keep, rng, init=None, thin=1):
    """Independent denoising-posterior chains, one per row of ``ys``.

    Solves ``y = x + sigma * noise`` for every row with a warm start at
    ``init`` (defaults to ``ys``).  Returns draws of shape (n, n_keep, d).
    """
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    _check_counts(n_burn, n_keep, thin)
    n, d = ys.shape
    x0 = ys.copy() if init is None else np.atleast_2d(np.asarray(init, dtype=float)).copy()
    prec = 1.0 / float(sigma) ** 2
    dprec = np.full(d, prec)
    if isinstance(law, BernoulliLaplace):
        xs, _, _ = _kernels.bl_statespace_chain(
            float(law.zero_prob), float(law.rate), dprec, ys * prec, apply_D(x0), n_burn, n_keep, thin, rng
        )
        return xs
    code, param = _law_code(law)
    return _kernels.glm_tridiag_chain(code, float(param), dprec, ys * prec, x0, n_burn, n_keep, thin, rng)


# ---------------------------------------------------------------------------
# Bernoulli-Laplace support sweep: explicit state with cached factorization
# ---------------------------------------------------------------------------


class BlState:
    """Support/scale state of the Bernoulli-Laplace sampler with a cached factor of ``B``.

    ``B(v, w) = sigma_n^2 I + H diag(v w) H^T`` with ``H = A D^-1``.  The
    factor, ``log|B|`` and ``y^T B^-1 y`` are updated by rank-one
    modifications as bits flip.
    """

    def __init__(self, matrix, y, sigma_n, zero_prob, v, w):
        a = np.asarray(matrix, dtype=float)
        self.h = np.ascontiguousarray(a @ np.tril(np.ones((a.shape[1], a.shape[1]))))
        self.y = np.asarray(y, dtype=float)
        self.sigma2 = float(sigma_n) ** 2
        self.zero_prob = float(zero_prob)
        self.v = np.asarray(v, dtype=bool).copy()
        self.w = np.asarray(w, dtype=float).copy()
        self._scratch = np.empty(self.h.shape[0])
        self.refactor()

    @property
    def prior_logodds(self):
        zp = self.zero_prob
        if zp <= 0.0:
            return np.inf
        if zp >= 1.0:
            return -np.inf
        return float(np.log((1.0 - zp) / zp))

    def refactor(self):
        self.chol, self.zy, self.logdet, self.quad = _kernels.bl_refactor(self.h, self.y, self.sigma2, self.v, self.w)

    def _terms(self, k):
        hk = np.ascontiguousarray(self.h[:, k])
        return hk, _kernels.bl_logodds_dense(self.chol, self.zy, hk, self.w[k], self.v[k], self.prior_logodds, self._scratch)

    def logodds(self, k):
        return self._terms(k)[1][0]

    def set_bit(self, k, value):
        """Switch bit ``k`` and update the cached factor and scalars."""
        value = bool(value)
        if value == self.v[k]:
            return
        hk, (_, tau0, q0) = self._terms(k)
        ok, self.logdet, self.quad = _kernels.bl_apply_flip(
            self.chol, self.zy, self.y, hk, self.w[k], value, tau0, q0, self.logdet, self.quad
        )
        self.v[k] = value
        if not ok:
            self.refactor()

    def dense(self):
        """Recompute ``log|B|`` and ``y^T B^-1 y`` from scratch."""
        b = self.sigma2 * np.eye(len(self.y)) + (self.h * (self.v * self.w)) @ self.h.T
        _, logdet = np.linalg.slogdet(b)
        return logdet, float(self.y @ np.linalg.solve(b, self.y))


def bl_flip_logodds(state, k):
    """Log-odds of ``v_k = 1`` against ``v_k = 0`` given everything else."""
    return state.logodds(k)


# ---------------------------------------------------------------------------
# summaries and closed forms
# ---------------------------------------------------------------------------


def chain_statistics(result):
    """Sample mean, per-index unbiased variance and unbiased covariance of the draws."""
    draws = result.draws if isinstance(result, ChainResult) else np.asarray(result, dtype=float)
    if draws.shape[0] < 2:
        raise InsufficientSamplesError("covariance needs at least two draws")
    mean = draws.mean(axis=0)
    centred = draws - mean
    cov = centred.T @ centred / (draws.shape[0] - 1)
    return {"mean": mean, "marginal_var": np.diag(cov).copy(), "covariance": cov}


def conjugate_posterior(matrix, y, sigma_n, jump_var):
    """Closed-form posterior mean and covariance for Gaussian jumps."""
    a = np.asarray(matrix, dtype=float)
    dm = difference_matrix(a.shape[1])
    q = a.T @ a / sigma_n**2 + dm.T @ dm / jump_var
    cov = np.linalg.inv(q)
    return cov @ (a.T @ y) / sigma_n**2, cov
