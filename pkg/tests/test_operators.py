import numpy as np
import pytest

from dpsbench.errors import DegenerateError, DimensionError, ParameterDomainError
from dpsbench.operators import (
    KINDS,
    apply_adjoint,
    apply_forward,
    build_operator,
    calibrate_noise,
    gaussian_kernel,
    model_from_descriptor,
    synthesize_measurement,
    synthesize_measurements,
)
from dpsbench.operators import _real_dft_matrix


def test_kernel():
    g = gaussian_kernel()
    assert len(g) == 13
    assert g.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(g, g[::-1])
    assert np.argmax(g) == 6
    k = np.arange(-6, 7)
    assert np.allclose(g / g[6], np.exp(-(k**2) / 4.0))


def test_identity(rng):
    model = build_operator("identity", 64)
    x = rng.standard_normal(64)
    assert np.array_equal(apply_forward(model, x), x)
    assert model.m == 64


def test_convolution_preserves_constants():
    model = build_operator("convolution", 64)
    assert np.allclose(apply_forward(model, np.full(64, 3.0)), 3.0)


def test_convolution_is_circular():
    model = build_operator("convolution", 20)
    e = np.zeros(20)
    e[0] = 1.0
    col = apply_forward(model, e)
    g = gaussian_kernel()
    assert col[1] == pytest.approx(g[7]) and col[-1] == pytest.approx(g[5])


def test_convolution_too_short():
    with pytest.raises(DimensionError):
        build_operator("convolution", 12)


def test_imputation_keep_all_is_identity():
    model = build_operator("imputation", 16, np.random.default_rng(0), keep_prob=1.0)
    assert np.array_equal(model.matrix, np.eye(16))


def test_imputation_keep_rate():
    kept = [build_operator("imputation", 64, np.random.default_rng(s)).m for s in range(300)]
    assert np.mean(kept) / 64 == pytest.approx(0.4, abs=0.01)


def test_full_real_dft_rows():
    full = _real_dft_matrix(64)
    assert full.shape == (66, 64)
    assert np.allclose(full[1], 0.0)  # imaginary part of DC
    k = np.arange(64)
    assert np.allclose(full[2 * 3], np.cos(2 * np.pi * 3 * k / 64))
    assert np.allclose(full[2 * 3 + 1], -np.sin(2 * np.pi * 3 * k / 64))


def test_fourier_keeps_low_band():
    for s in range(20):
        model = build_operator("fourier", 64, np.random.default_rng(s))
        freqs = set(model.params["frequencies"].tolist())
        assert {0, 1, 2, 3, 4} <= freqs
        assert model.m == 2 * len(freqs)


def test_fourier_gram_diagonalized_by_dft(rng):
    model = build_operator("fourier", 64, rng)
    g = model.gram
    full = _real_dft_matrix(64)
    # each DFT basis vector of a kept frequency is an eigenvector of A^T A
    for f in model.params["frequencies"][1:4]:
        c = full[2 * f]
        assert np.allclose(g @ c, 32.0 * c)


@pytest.mark.parametrize("kind", KINDS)
def test_adjoint(kind, rng):
    model = build_operator(kind, 64, rng)
    for _ in range(20):
        x, v = rng.standard_normal(64), rng.standard_normal(model.m)
        lhs, rhs = apply_forward(model, x) @ v, x @ apply_adjoint(model, v)
        assert abs(lhs - rhs) <= 1e-10 * abs(lhs)


@pytest.mark.parametrize("kind", KINDS)
def test_descriptor_round_trip(kind, rng):
    model = build_operator(kind, 64, rng).with_noise(0.3)
    back = model_from_descriptor(model.descriptor())
    assert np.array_equal(back.matrix, model.matrix)
    assert back.sigma_n == 0.3


def test_dimension_checks():
    model = build_operator("identity", 8)
    with pytest.raises(DimensionError):
        apply_forward(model, np.zeros(7))
    with pytest.raises(DimensionError):
        apply_adjoint(model, np.zeros(9))
    with pytest.raises(ParameterDomainError):
        build_operator("blur", 8)


def test_calibration_examples():
    model = build_operator("identity", 4)
    x = np.ones((1, 4))
    assert calibrate_noise(model, x, 0.0) == pytest.approx(1.0)
    assert calibrate_noise(model, x, 25.0) == pytest.approx(10 ** -1.25)
    assert calibrate_noise(model, x, 25.0) == pytest.approx(0.05623, abs=1e-5)


def test_calibration_properties(rng):
    model = build_operator("convolution", 64)
    x = rng.standard_normal((51, 64))
    s = calibrate_noise(model, x, 20.0)
    assert calibrate_noise(model, 2 * x, 20.0) == pytest.approx(2 * s)
    assert calibrate_noise(model, x, 30.0) < s
    snr = 10 * np.log10(np.sum(apply_forward(model, x) ** 2, axis=1) / (64 * s**2))
    assert np.median(snr) == pytest.approx(20.0)


def test_calibration_degenerate():
    with pytest.raises(DegenerateError):
        calibrate_noise(build_operator("identity", 4), np.zeros((3, 4)), 25.0)


def test_measurement_noise(rng):
    model = build_operator("identity", 8).with_noise(0.5)
    x = np.tile(rng.standard_normal(8), (40_000, 1))
    y = synthesize_measurements(model, x, rng)
    assert np.allclose((y - x).var(axis=0), 0.25, rtol=0.03)
    meas = synthesize_measurement(model, x[0], rng)
    assert np.array_equal(meas.truth, x[0]) and meas.y.shape == (8,)


def test_measurement_needs_noise_level(rng):
    with pytest.raises(ParameterDomainError):
        synthesize_measurements(build_operator("identity", 4), np.zeros(4), rng)
