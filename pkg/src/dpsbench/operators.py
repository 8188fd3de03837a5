"""Linear measurement operators, noise calibration and measurement synthesis.

Operators are stored as dense matrices; at the signal sizes used here
(tens to a few hundred samples) this is both the simplest and the fastest
representation, and it makes the adjoint exact by construction.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateError, DimensionError, ParameterDomainError

__all__ = [
    "KINDS",
    "KEEP_PROB",
    "ForwardModel",
    "Measurement",
    "gaussian_kernel",
    "build_operator",
    "apply_forward",
    "apply_adjoint",
    "calibrate_noise",
    "synthesize_measurement",
    "synthesize_measurements",
    "model_from_descriptor",
]

KINDS = ("identity", "convolution", "imputation", "fourier")
KEEP_PROB = 0.4
KERNEL_HALF_WIDTH = 6
KERNEL_VARIANCE = 2.0
FOURIER_ALWAYS_KEPT = 5


def gaussian_kernel(half_width=KERNEL_HALF_WIDTH, variance=KERNEL_VARIANCE):
    """Taps ``g[k] ~ exp(-k^2 / (2 variance))`` for ``k = -half_width..half_width``, unit sum."""
    k = np.arange(-half_width, half_width + 1, dtype=float)
    g = np.exp(-(k**2) / (2.0 * variance))
    return g / g.sum()


def _convolution_matrix(taps, d):
    half = (len(taps) - 1) // 2
    a = np.zeros((d, d))
    rows = np.arange(d)
    for j, k in enumerate(range(-half, half + 1)):
        a[rows, (rows - k) % d] += taps[j]
    return a


def _real_dft_matrix(d):
    """Rows ``cos(2 pi f n / d)`` and ``-sin(2 pi f n / d)`` for ``f = 0..d//2``, interleaved."""
    nf = d // 2 + 1
    n = np.arange(d)
    f = np.arange(nf)[:, None]
    ang = 2.0 * np.pi * f * n / d
    out = np.empty((2 * nf, d))
    out[0::2] = np.cos(ang)
    out[1::2] = -np.sin(ang)
    return out


@dataclass(frozen=True, eq=False)
class ForwardModel:
    """A linear operator ``A`` of shape (m, d) plus its noise level.

    Attributes
    ----------
    kind : str
        One of ``KINDS``.
    matrix : ndarray, shape (m, d)
    sigma_n : float or None
        Noise standard deviation; ``None`` until calibrated.
    params : dict
        Kind-specific descriptor (kernel taps, kept indices or kept
        frequencies) sufficient to rebuild ``matrix``.
    """

    kind: str
    matrix: np.ndarray
    sigma_n: float = None
    params: dict = field(default_factory=dict)

    @property
    def m(self):
        return self.matrix.shape[0]

    @property
    def d(self):
        return self.matrix.shape[1]

    @property
    def gram(self):
        return self.matrix.T @ self.matrix

    @property
    def diagonal_gram(self):
        """Diagonal of ``A^T A`` when that matrix is diagonal, otherwise ``None``."""
        if self.kind in ("identity", "imputation"):
            return np.einsum("ij,ij->j", self.matrix, self.matrix)
        return None

    def with_noise(self, sigma_n):
        sigma_n = float(sigma_n)
        if not (np.isfinite(sigma_n) and sigma_n > 0.0):
            raise ParameterDomainError("sigma_n must be positive")
        return replace(self, sigma_n=sigma_n)

    def descriptor(self):
        out = {"kind": self.kind, "d": self.d, "m": self.m, "sigma_n": self.sigma_n}
        for key, val in self.params.items():
            out[key] = np.asarray(val).tolist()
        return out


def model_from_descriptor(desc):
    """Rebuild a :class:`ForwardModel` from :meth:`ForwardModel.descriptor` output."""
    kind, d = desc["kind"], int(desc["d"])
    if kind == "identity":
        model = ForwardModel("identity", np.eye(d))
    elif kind == "convolution":
        taps = np.asarray(desc["taps"], dtype=float)
        model = ForwardModel("convolution", _convolution_matrix(taps, d), params={"taps": taps})
    elif kind == "imputation":
        return _imputation(np.asarray(desc["kept"], dtype=int), d, desc.get("sigma_n"))
    elif kind == "fourier":
        return _fourier(np.asarray(desc["frequencies"], dtype=int), d, desc.get("sigma_n"))
    else:
        raise ParameterDomainError(f"unknown operator kind {kind!r}")
    if desc.get("sigma_n") is not None:
        model = model.with_noise(desc["sigma_n"])
    return model


def _imputation(kept, d, sigma_n=None):
    model = ForwardModel("imputation", np.eye(d)[kept], params={"kept": kept})
    return model if sigma_n is None else model.with_noise(sigma_n)


def _fourier(freqs, d, sigma_n=None):
    full = _real_dft_matrix(d)
    rows = np.sort(np.concatenate([2 * freqs, 2 * freqs + 1]))
    model = ForwardModel("fourier", full[rows], params={"frequencies": freqs})
    return model if sigma_n is None else model.with_noise(sigma_n)


def build_operator(kind, d, rng=None, keep_prob=KEEP_PROB):
    """Construct one of the four measurement operators (without noise level).

    Parameters
    ----------
    kind : {"identity", "convolution", "imputation", "fourier"}
    d : int
        Signal length.
    rng : numpy.random.Generator, optional
        Needed for the random row selections of imputation and Fourier.
    keep_prob : float
        Keep probability of each sample (imputation) or each frequency
        above the always-kept low band (Fourier).
    """
    if kind == "identity":
        return ForwardModel("identity", np.eye(d))
    if kind == "convolution":
        taps = gaussian_kernel()
        if d < len(taps):
            raise DimensionError(f"convolution needs d >= {len(taps)}, got {d}")
        return ForwardModel("convolution", _convolution_matrix(taps, d), params={"taps": taps})
    if kind == "imputation":
        kept = np.flatnonzero(rng.random(d) < keep_prob)
        if kept.size == 0:
            raise DimensionError("imputation mask kept no samples")
        return _imputation(kept, d)
    if kind == "fourier":
        nf = d // 2 + 1
        draws = rng.random(nf) < keep_prob
        draws[: min(FOURIER_ALWAYS_KEPT, nf)] = True
        return _fourier(np.flatnonzero(draws), d)
    raise ParameterDomainError(f"unknown operator kind {kind!r}; choose from {KINDS}")


def apply_forward(model, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.d:
        raise DimensionError(f"signal length {x.shape[-1]} does not match operator width {model.d}")
    return x @ model.matrix.T


def apply_adjoint(model, v):
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != model.m:
        raise DimensionError(f"vector length {v.shape[-1]} does not match operator height {model.m}")
    return v @ model.matrix


def calibrate_noise(model, signals, target_snr_db):
    """Noise level giving the requested median measurement SNR.

    The SNR of one signal is ``10 log10(||A x||^2 / (m sigma_n^2))``; the
    median over ``signals`` is matched exactly.
    """
    x = np.atleast_2d(np.asarray(signals, dtype=float))
    if x.shape[0] == 0:
        raise DegenerateError("calibration set is empty")
    power = np.median(np.sum(apply_forward(model, x) ** 2, axis=1) / model.m)
    if power <= 0.0:
        raise DegenerateError("calibration signals carry no power through the operator")
    return float(np.sqrt(power / 10.0 ** (target_snr_db / 10.0)))


@dataclass(frozen=True, eq=False)
class Measurement:
    y: np.ndarray
    model: ForwardModel
    truth: np.ndarray = None


def synthesize_measurements(model, x, rng):
    """``y = A x + sigma_n z`` for each row of ``x`` (one noise draw per signal)."""
    if model.sigma_n is None:
        raise ParameterDomainError("operator has no calibrated noise level")
    clean = apply_forward(model, x)
    return clean + model.sigma_n * rng.standard_normal(clean.shape)


def synthesize_measurement(model, x, rng):
    x = np.asarray(x, dtype=float)
    return Measurement(synthesize_measurements(model, x, rng), model, x.copy())
