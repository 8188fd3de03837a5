import io
import sys

import numpy as np
import pytest

from dpsbench.diffusion import OracleDenoiser, get_denoiser
from dpsbench.external import (
    ExternalDenoiser,
    ProtocolError,
    decode_request,
    encode_request,
    encode_response,
    read_response,
    serve,
)
from dpsbench.levy import jump_law

SERVER = [sys.executable, "-m", "dpsbench.external", "--law", "gauss", "--burn-in", "20"]


def test_request_round_trip(rng):
    x = rng.standard_normal((3, 5))
    buf = io.BytesIO(encode_request(x, 0.7, 11, 2**62 + 5))
    back, sigma, S, seed = decode_request(buf)
    assert np.array_equal(back, x) and sigma == 0.7 and S == 11 and seed == 2**62 + 5
    assert decode_request(buf) is None


def test_response_round_trip(rng):
    draws = rng.standard_normal((2, 4, 3))
    assert np.array_equal(read_response(io.BytesIO(encode_response(draws))), draws)


def test_bad_frames():
    with pytest.raises(ProtocolError):
        decode_request(io.BytesIO(b"XXXX" + bytes(40)))
    with pytest.raises(ProtocolError):
        read_response(io.BytesIO(b"NOPE" + bytes(12)))
    with pytest.raises(EOFError):
        decode_request(io.BytesIO(b"DPSQ" + bytes(3)))


def test_serve_in_memory(rng):
    x = rng.standard_normal((2, 6))
    requests = encode_request(x, 0.5, 3, 1) + encode_request(x, 0.5, 3, 1)
    out = io.BytesIO()
    serve(lambda x, sigma, S, r: np.repeat(x[:, None, :], S, 1) + r.standard_normal((len(x), S, x.shape[1])),
          io.BytesIO(requests), out)
    out.seek(0)
    first, second = read_response(out), read_response(out)
    assert first.shape == (2, 3, 6)
    assert np.array_equal(first, second)  # same seed, same draws


def test_serve_reports_errors():
    out = io.BytesIO()
    serve(lambda x, sigma, S, r: np.zeros((1, 1, 1)), io.BytesIO(encode_request(np.zeros((2, 3)), 1.0, 2, 0)), out)
    out.seek(0)
    with pytest.raises(ProtocolError, match="shape"):
        read_response(out)


def test_subprocess_matches_in_process_oracle(rng):
    x = rng.standard_normal((2, 16))
    with ExternalDenoiser(SERVER) as den:
        a = den(x, 0.5, 4, np.random.default_rng(9))
        b = den(x, 0.5, 4, np.random.default_rng(9))
    seed = int(np.random.default_rng(9).integers(0, 2**63))
    local = OracleDenoiser(jump_law("gauss"), 20)(x, 0.5, 4, np.random.default_rng(seed))
    assert a.shape == (2, 4, 16)
    assert np.array_equal(a, b)
    assert np.array_equal(a, local)


def test_registry_entry():
    den = get_denoiser("external", None, command=SERVER)
    assert isinstance(den, ExternalDenoiser)
    with pytest.raises(ValueError):
        get_denoiser("external", None)
