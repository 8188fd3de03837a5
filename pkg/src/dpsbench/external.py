"""Out-of-process denoisers over a framed binary protocol on stdin/stdout.

All integers are little-endian unsigned, all reals little-endian float64.

Request (client to server)::

    b"DPSQ" | n:u32 | d:u32 | S:u32 | sigma:f64 | seed:u64 | x: n*d f64 (row-major)

Response (server to client)::

    b"DPSR" | n:u32 | S:u32 | d:u32 | draws: n*S*d f64 (row-major)

or, on failure::

    b"DPSE" | length:u32 | message: utf-8 bytes

The seed is drawn from the client's random stream so a run stays
reproducible as long as the server derives its randomness from it.

Running this module starts a server backed by the Gibbs oracle, which is
handy for testing the plumbing::

    python -m dpsbench.external --law laplace
"""

import argparse
import struct
import subprocess
import sys
import threading

import numpy as np

from .diffusion import Denoiser, OracleDenoiser, register_denoiser
from .levy import jump_law

__all__ = ["ExternalDenoiser", "serve", "encode_request", "decode_request", "encode_response", "read_response"]

_REQ = b"DPSQ"
_RES = b"DPSR"
_ERR = b"DPSE"
_REQ_HEAD = struct.Struct("<IIIdQ")
_RES_HEAD = struct.Struct("<III")
_LEN = struct.Struct("<I")


class ProtocolError(RuntimeError):
    """Malformed frame or an error reported by the server."""


def _read_exact(stream, n):
    buf = bytearray()
    while len(buf) < n:
        chunk = stream.read(n - len(buf))
        if not chunk:
            raise EOFError("stream closed mid-frame")
        buf.extend(chunk)
    return bytes(buf)


def encode_request(x, sigma, S, seed):
    x = np.ascontiguousarray(np.atleast_2d(x), dtype="<f8")
    n, d = x.shape
    return _REQ + _REQ_HEAD.pack(n, d, int(S), float(sigma), int(seed)) + x.tobytes()


def decode_request(stream):
    """Read one request; returns ``None`` at a clean end of stream."""
    magic = stream.read(4)
    if not magic:
        return None
    if magic != _REQ:
        raise ProtocolError(f"bad request magic {magic!r}")
    n, d, S, sigma, seed = _REQ_HEAD.unpack(_read_exact(stream, _REQ_HEAD.size))
    x = np.frombuffer(_read_exact(stream, 8 * n * d), dtype="<f8").reshape(n, d)
    return x, sigma, S, seed


def encode_response(draws):
    draws = np.ascontiguousarray(draws, dtype="<f8")
    n, S, d = draws.shape
    return _RES + _RES_HEAD.pack(n, S, d) + draws.tobytes()


def encode_error(message):
    data = str(message).encode("utf-8")
    return _ERR + _LEN.pack(len(data)) + data


def read_response(stream):
    magic = _read_exact(stream, 4)
    if magic == _ERR:
        (length,) = _LEN.unpack(_read_exact(stream, _LEN.size))
        raise ProtocolError(_read_exact(stream, length).decode("utf-8", "replace"))
    if magic != _RES:
        raise ProtocolError(f"bad response magic {magic!r}")
    n, S, d = _RES_HEAD.unpack(_read_exact(stream, _RES_HEAD.size))
    return np.frombuffer(_read_exact(stream, 8 * n * S * d), dtype="<f8").reshape(n, S, d).copy()


def serve(denoise, stdin=None, stdout=None):
    """Answer requests until the input closes.

    ``denoise(x, sigma, S, rng)`` must return draws of shape (n, S, d); the
    ``rng`` handed to it is seeded from the request.
    """
    stdin = stdin if stdin is not None else sys.stdin.buffer
    stdout = stdout if stdout is not None else sys.stdout.buffer
    while True:
        req = decode_request(stdin)
        if req is None:
            return
        x, sigma, S, seed = req
        try:
            draws = np.asarray(denoise(x, sigma, S, np.random.default_rng(seed)), dtype=float)
            if draws.shape != (x.shape[0], S, x.shape[1]) or not np.all(np.isfinite(draws)):
                raise ValueError(f"denoiser returned shape {draws.shape} or non-finite values")
            stdout.write(encode_response(draws))
        except Exception as exc:  # reported to the client, server keeps running
            stdout.write(encode_error(f"{type(exc).__name__}: {exc}"))
        stdout.flush()


class ExternalDenoiser(Denoiser):
    """Client for a denoiser server started as a subprocess.

    Parameters
    ----------
    command : list of str
        Command line that starts the server.
    """

    name = "external"

    def __init__(self, command):
        self.command = list(command)
        self._proc = None
        self._lock = threading.Lock()

    def _ensure(self):
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE)

    def __call__(self, x, sigma, S, rng):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        seed = int(rng.integers(0, 2**63))
        with self._lock:
            self._ensure()
            self._proc.stdin.write(encode_request(x, sigma, S, seed))
            self._proc.stdin.flush()
            draws = read_response(self._proc.stdout)
        if draws.shape != (x.shape[0], int(S), x.shape[1]):
            raise ProtocolError(f"unexpected response shape {draws.shape}")
        return draws

    def close(self):
        if self._proc is not None:
            self._proc.stdin.close()
            self._proc.wait(timeout=10)
            self._proc = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _external_factory(law, command=None, **_):
    if command is None:
        raise ValueError("the external denoiser needs a 'command'")
    return ExternalDenoiser(command)


register_denoiser("external", _external_factory)


def main(argv=None):
    parser = argparse.ArgumentParser(description="Serve Gibbs-oracle denoising draws over stdin/stdout.")
    parser.add_argument("--law", default="laplace", help="jump law name (default: laplace)")
    parser.add_argument("--burn-in", type=int, default=100)
    args = parser.parse_args(argv)
    serve(OracleDenoiser(jump_law(args.law), args.burn_in))


if __name__ == "__main__":
    main()
