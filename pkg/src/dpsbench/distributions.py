"""Univariate laws and precision-form Gaussian sampling.

Parameter conventions:

* ``Gauss(mean, var)``: normal with variance ``var``.
* ``Exponential(rate)``: density ``rate * exp(-rate x)`` on x >= 0.
* ``Laplace(scale)``: density ``exp(-|x| / scale) / (2 scale)``.
* ``StudentT(nu)``: unit-scale Student-t with ``nu`` degrees of freedom.
* ``Gamma(shape, rate)``: density ``rate^shape x^(shape-1) exp(-rate x) / Gamma(shape)``.
* ``GIG(a, b, p)``: density proportional to ``x^(p-1) exp(-(a x + b / x) / 2)``.
* ``BernoulliLaplace(zero_prob, rate)``: exactly 0 with probability
  ``zero_prob``, otherwise Laplace with density ``rate / 2 * exp(-rate |x|)``.
  Its log-density is taken with respect to Lebesgue measure plus a unit atom
  at zero, so ``logpdf(0) = log(zero_prob)``.
"""

from dataclasses import dataclass

import numpy as np
from scipy import special, stats
from scipy.linalg import solve_triangular

from . import _kernels
from .errors import NotPositiveDefiniteError, ParameterDomainError

__all__ = [
    "Gauss",
    "Exponential",
    "Laplace",
    "StudentT",
    "Gamma",
    "GIG",
    "BernoulliLaplace",
    "UnivariateLaw",
    "sample_univariate",
    "log_density_univariate",
    "sample_gig",
    "PrecisionGaussian",
    "sample_mv_gaussian",
]

_LOG_2PI = np.log(2.0 * np.pi)


def _positive(name, value):
    value = float(value)
    if not (np.isfinite(value) and value > 0.0):
        raise ParameterDomainError(f"{name} must be a finite positive number, got {value}")
    return value


class UnivariateLaw:
    """Common interface of the univariate laws."""

    tag = ""

    def sample(self, rng, size=None):
        raise NotImplementedError

    def logpdf(self, x):
        raise NotImplementedError

    def cdf(self, x):
        raise NotImplementedError


@dataclass(frozen=True)
class Gauss(UnivariateLaw):
    mean: float = 0.0
    var: float = 1.0
    tag = "gauss"

    def __post_init__(self):
        if not np.isfinite(self.mean):
            raise ParameterDomainError("mean must be finite")
        _positive("var", self.var)

    def sample(self, rng, size=None):
        return self.mean + np.sqrt(self.var) * rng.standard_normal(size)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        return -0.5 * (_LOG_2PI + np.log(self.var)) - 0.5 * (x - self.mean) ** 2 / self.var

    def cdf(self, x):
        return stats.norm.cdf(x, loc=self.mean, scale=np.sqrt(self.var))


@dataclass(frozen=True)
class Exponential(UnivariateLaw):
    rate: float = 1.0
    tag = "exp"

    def __post_init__(self):
        _positive("rate", self.rate)

    def sample(self, rng, size=None):
        return rng.standard_exponential(size) / self.rate

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(invalid="ignore"):
            out = np.log(self.rate) - self.rate * x
        return np.where(x >= 0.0, out, -np.inf)

    def cdf(self, x):
        return stats.expon.cdf(x, scale=1.0 / self.rate)


@dataclass(frozen=True)
class Laplace(UnivariateLaw):
    scale: float = 1.0
    tag = "laplace"

    def __post_init__(self):
        _positive("scale", self.scale)

    def sample(self, rng, size=None):
        return rng.laplace(0.0, self.scale, size)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        return -np.log(2.0 * self.scale) - np.abs(x) / self.scale

    def cdf(self, x):
        return stats.laplace.cdf(x, scale=self.scale)


@dataclass(frozen=True)
class StudentT(UnivariateLaw):
    nu: float = 1.0
    tag = "student"

    def __post_init__(self):
        _positive("nu", self.nu)

    def sample(self, rng, size=None):
        return rng.standard_t(self.nu, size)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        nu = self.nu
        const = special.gammaln(0.5 * (nu + 1.0)) - special.gammaln(0.5 * nu) - 0.5 * np.log(nu * np.pi)
        return const - 0.5 * (nu + 1.0) * np.log1p(x * x / nu)

    def cdf(self, x):
        return stats.t.cdf(x, self.nu)


@dataclass(frozen=True)
class Gamma(UnivariateLaw):
    shape: float = 1.0
    rate: float = 1.0
    tag = "gamma"

    def __post_init__(self):
        _positive("shape", self.shape)
        _positive("rate", self.rate)

    def sample(self, rng, size=None):
        return rng.standard_gamma(self.shape, size) / self.rate

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        a, r = self.shape, self.rate
        with np.errstate(divide="ignore", invalid="ignore"):
            out = a * np.log(r) + (a - 1.0) * np.log(x) - r * x - special.gammaln(a)
        return np.where(x > 0.0, out, -np.inf)

    def cdf(self, x):
        return stats.gamma.cdf(x, self.shape, scale=1.0 / self.rate)


@dataclass(frozen=True)
class GIG(UnivariateLaw):
    a: float = 1.0
    b: float = 1.0
    p: float = 0.5
    tag = "gig"

    def __post_init__(self):
        _positive("a", self.a)
        _positive("b", self.b)
        if not np.isfinite(self.p):
            raise ParameterDomainError("p must be finite")

    def sample(self, rng, size=None):
        if size is None:
            return _kernels.gig(self.a, self.b, self.p, rng)
        n = int(np.prod(size))
        return _kernels.gig_array(self.a, self.b, self.p, n, rng).reshape(size)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        a, b, p = self.a, self.b, self.p
        omega = np.sqrt(a * b)
        # log K_p(omega) through the exponentially scaled Bessel function
        log_kp = np.log(special.kve(p, omega)) - omega
        const = 0.5 * p * np.log(a / b) - np.log(2.0) - log_kp
        with np.errstate(divide="ignore", invalid="ignore"):
            out = const + (p - 1.0) * np.log(x) - 0.5 * (a * x + b / x)
        return np.where(x > 0.0, out, -np.inf)

    def cdf(self, x):
        omega = np.sqrt(self.a * self.b)
        return stats.geninvgauss.cdf(x, self.p, omega, scale=np.sqrt(self.b / self.a))


@dataclass(frozen=True)
class BernoulliLaplace(UnivariateLaw):
    zero_prob: float = 0.5
    rate: float = 1.0
    tag = "bl"

    def __post_init__(self):
        zp = float(self.zero_prob)
        if not (0.0 <= zp <= 1.0):
            raise ParameterDomainError(f"zero_prob must lie in [0, 1], got {zp}")
        _positive("rate", self.rate)

    def sample(self, rng, size=None):
        shape = () if size is None else size
        slab = rng.laplace(0.0, 1.0 / self.rate, shape)
        on = rng.random(shape) >= self.zero_prob
        out = np.where(on, slab, 0.0)
        return float(out) if size is None else out

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            atom = np.log(self.zero_prob)
            slab = np.log1p(-self.zero_prob) + np.log(0.5 * self.rate) - self.rate * np.abs(x)
        return np.where(x == 0.0, atom, slab)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        cont = (1.0 - self.zero_prob) * stats.laplace.cdf(x, scale=1.0 / self.rate)
        return cont + self.zero_prob * (x >= 0.0)


def sample_univariate(law, rng):
    """Draw one variate from ``law``."""
    return float(law.sample(rng))


def log_density_univariate(law, x):
    """Natural-log density of ``law`` at ``x`` (``-inf`` outside the support)."""
    out = law.logpdf(x)
    return float(out) if np.ndim(out) == 0 else out


def sample_gig(a, b, p, rng, size=None):
    """Draw from GIG(a, b, p) with Devroye's rejection sampler.

    Parameters
    ----------
    a, b : float
        Positive coefficients of ``x`` and ``1/x`` in the exponent.
    p : float
        Power parameter, any real.
    rng : numpy.random.Generator
    size : int or tuple, optional
        Output shape; a float is returned when omitted.
    """
    return GIG(a, b, p).sample(rng, size)


@dataclass(frozen=True, eq=False)
class PrecisionGaussian:
    """Gaussian with mean ``precision^-1 shift`` and covariance ``precision^-1``.

    ``shift`` may be 2-D with one row per requested draw; all rows share the
    precision and its factorization.
    """

    precision: np.ndarray
    shift: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.precision, dtype=float)
        h = np.asarray(self.shift, dtype=float)
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise ParameterDomainError("precision must be a square matrix")
        if h.shape[-1] != q.shape[0]:
            raise ParameterDomainError("shift length does not match the precision size")
        scale = max(np.abs(q).max(), np.finfo(float).tiny)
        if np.abs(q - q.T).max() > 1e-12 * scale:
            raise ParameterDomainError("precision is not symmetric")
        object.__setattr__(self, "precision", q)
        object.__setattr__(self, "shift", h)

    def cholesky(self):
        """Lower Cholesky factor, adding diagonal jitter only if plain factorization fails."""
        q = self.precision
        try:
            return np.linalg.cholesky(q)
        except np.linalg.LinAlgError:
            pass
        d = q.shape[0]
        jitter = 1e-10 * np.trace(q) / d
        for _ in range(3):
            try:
                return np.linalg.cholesky(q + jitter * np.eye(d))
            except np.linalg.LinAlgError:
                jitter *= 10.0
        raise NotPositiveDefiniteError("precision matrix is not positive definite")

    def mean(self):
        ell = self.cholesky()
        return _chol_solve(ell, self.shift)


def _chol_solve(ell, rhs):
    rhs_t = np.atleast_2d(rhs).T
    v = solve_triangular(ell, rhs_t, lower=True)
    out = solve_triangular(ell, v, lower=True, trans="T").T
    return out.reshape(np.shape(rhs))


def sample_mv_gaussian(g, rng, size=None):
    """Draw from a :class:`PrecisionGaussian` by factorizing its precision.

    With ``L L^T = Q`` the draw is ``L^-T (L^-1 shift + z)`` for standard
    normal ``z``.  ``size`` adds leading draws when ``shift`` is 1-D; a 2-D
    shift yields one draw per row.
    """
    ell = g.cholesky()
    d = ell.shape[0]
    h = g.shift
    if h.ndim == 1 and size is not None:
        h = np.broadcast_to(h, (int(size), d))
    hh = np.atleast_2d(h).T
    v = solve_triangular(ell, hh, lower=True)
    v = v + rng.standard_normal(v.shape)
    x = solve_triangular(ell, v, lower=True, trans="T").T
    return x[0] if h.ndim == 1 else x
