"""Scoring: MMSE optimality gap, HPD coverage, signed-rank test, 1-D distances and chain diagnostics."""

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import DegenerateError, InsufficientSamplesError
from .gibbs import denoising_chains
from .levy import log_prior, synthesize_signal

__all__ = [
    "GapRecord",
    "CoverageRecord",
    "mmse_gap_db",
    "log_posterior",
    "hpd_threshold_index",
    "hpd_coverage",
    "expected_coverage",
    "wilcoxon_signed_rank",
    "wasserstein1_1d",
    "ks_distance",
    "burn_in_diagnostic",
    "sample_count_diagnostic",
    "first_plateau",
]


@dataclass(frozen=True)
class GapRecord:
    operator: str
    law: str
    method: str
    gaps: np.ndarray


@dataclass(frozen=True)
class CoverageRecord:
    alpha: float
    covered: np.ndarray

    @property
    def coverage(self):
        return float(np.mean(self.covered))


def mmse_gap_db(est_mean, gold_mean, truth):
    """``10 log10(||est - truth||^2 / ||gold - truth||^2)``."""
    gold_err = float(np.sum((np.asarray(gold_mean) - truth) ** 2))
    if gold_err == 0.0:
        raise DegenerateError("gold-standard error is zero")
    err = float(np.sum((np.asarray(est_mean) - truth) ** 2))
    with np.errstate(divide="ignore"):
        return float(10.0 * np.log10(err / gold_err))


def log_posterior(matrix, y, sigma_n, law):
    """Unnormalized log-posterior ``x -> -||A x - y||^2 / (2 sigma_n^2) + log p(x)``.

    The returned callable accepts one signal or a batch (rows).
    """
    a = np.asarray(matrix, dtype=float)
    y = np.asarray(y, dtype=float)

    def fn(x):
        x = np.asarray(x, dtype=float)
        r = x @ a.T - y
        return -0.5 * np.sum(r * r, axis=-1) / sigma_n**2 + log_prior(law, x)

    return fn


def hpd_threshold_index(alpha, n):
    """1-based rank ``ceil(alpha n)`` of the HPD threshold, robust to float round-off."""
    return max(1, min(n, int(math.ceil(alpha * n - 1e-9))))


def expected_coverage(alpha, n):
    """Coverage of an exact sampler: the truth must rank among the top ``ceil(alpha n)`` of ``n + 1``."""
    return hpd_threshold_index(alpha, n) / (n + 1.0)


def hpd_coverage(samples, truths, log_posts, alpha=0.9):
    """Empirical highest-posterior-density coverage.

    Parameters
    ----------
    samples : sequence of arrays, each (N, d)
        Posterior draws per test item.
    truths : sequence of arrays (d,)
    log_posts : sequence of callables
        Unnormalized log-posterior of each item.
    alpha : float
        Credible level.

    Returns
    -------
    CoverageRecord
        Item ``i`` is covered when the log-posterior of its truth is at
        least the ``ceil(alpha N)``-th largest sample log-posterior.  Ties
        in the sample values do not affect the threshold value.
    """
    covered = []
    for draws, truth, fn in zip(samples, truths, log_posts):
        vals = np.asarray(fn(draws), dtype=float)
        k = hpd_threshold_index(alpha, len(vals))
        threshold = -np.sort(-vals, kind="stable")[k - 1]
        covered.append(bool(fn(truth) >= threshold))
    return CoverageRecord(alpha, np.array(covered))


def wilcoxon_signed_rank(differences):
    """Two-sided Wilcoxon signed-rank test by the normal approximation.

    Zero differences are dropped, tied absolute values get average ranks
    and the variance is tie-corrected; a continuity correction of 1/2 is
    applied.

    Returns
    -------
    dict
        ``p_two_sided``, ``median_diff`` (over all differences), ``statistic``
        (sum of positive ranks) and ``n`` (nonzero pairs).
    """
    diffs = np.asarray(differences, dtype=float).ravel()
    if diffs.size == 0:
        raise InsufficientSamplesError("no differences supplied")
    median = float(np.median(diffs))
    nz = diffs[diffs != 0.0]
    n = nz.size
    if n == 0:
        return {"p_two_sided": 1.0, "median_diff": median, "statistic": 0.0, "n": 0}
    if n < 10:
        raise InsufficientSamplesError("the normal approximation needs at least 10 nonzero differences")
    ranks = stats.rankdata(np.abs(nz))
    t_plus = float(ranks[nz > 0].sum())
    mean = n * (n + 1) / 4.0
    _, counts = np.unique(np.abs(nz), return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(counts**3 - counts) / 48.0
    if var <= 0.0:
        return {"p_two_sided": 1.0, "median_diff": median, "statistic": t_plus, "n": n}
    z = max(abs(t_plus - mean) - 0.5, 0.0) / math.sqrt(var)
    p = min(1.0, 2.0 * stats.norm.sf(z))
    return {"p_two_sided": float(p), "median_diff": median, "statistic": t_plus, "n": n}


def wasserstein1_1d(a, b):
    """Wasserstein-1 distance of two empirical distributions on the line.

    Equal sizes reduce to the mean absolute difference of the sorted
    samples; otherwise the area between the two empirical CDFs is used.
    """
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise InsufficientSamplesError("W1 needs non-empty samples")
    if a.size == b.size:
        return float(np.mean(np.abs(a - b)))
    grid = np.concatenate([a, b])
    grid.sort(kind="mergesort")
    widths = np.diff(grid)
    fa = np.searchsorted(a, grid[:-1], side="right") / a.size
    fb = np.searchsorted(b, grid[:-1], side="right") / b.size
    return float(np.sum(np.abs(fa - fb) * widths))


def ks_distance(samples, cdf):
    """Kolmogorov-Smirnov distance between the empirical CDF of ``samples`` and ``cdf``."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    if n == 0:
        raise InsufficientSamplesError("KS distance needs samples")
    f = np.asarray(cdf(x), dtype=float)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - f), np.max(f - (i - 1) / n)))


def first_plateau(trace, factor=1.5):
    """First index at which ``trace`` is within ``factor`` times the median of its second half."""
    trace = np.asarray(trace, dtype=float)
    level = float(np.median(trace[len(trace) // 2 :]))
    hits = np.flatnonzero(trace <= factor * level)
    return int(hits[0]), level


def _diagnostic_chains(law, sigma, C, n_iter, d, rng, segment, record):
    """Run ``C`` denoising chains on one datum, passing each segment of draws to ``record``."""
    x0, _ = synthesize_signal(law, d, rng)
    y = x0 + sigma * rng.standard_normal(d)
    ys = np.tile(y, (C, 1))
    state = ys.copy()
    done = 0
    while done < n_iter:
        n = min(segment, n_iter - done)
        draws = denoising_chains(ys, sigma, law, 0, n, rng, init=state)
        record(done, draws)
        state = draws[:, -1, :]
        done += n
    return y


def burn_in_diagnostic(law, sigma, C, n_iter, n_avg, rng, window=1, index=32, d=64, segment=200):
    """Wasserstein-1 trace of one jump's distribution across many chains.

    ``C`` chains start from the noisy datum and run ``n_iter`` iterations.
    The reference is the pooled jump ``x[index] - x[index - 1]`` over the
    last ``n_avg`` iterations of all chains; the trace entry at iteration
    ``i`` compares the reference with the pooled jumps of iterations
    ``i .. i + window - 1``.

    Returns
    -------
    dict with ``trace``, ``plateau_iteration`` (1-based), ``plateau_level``.
    """
    if n_avg > n_iter:
        raise InsufficientSamplesError("averaging window longer than the run")
    jumps = np.empty((C, n_iter))

    def record(start, draws):
        jumps[:, start : start + draws.shape[1]] = draws[:, :, index] - draws[:, :, index - 1]

    _diagnostic_chains(law, sigma, C, n_iter, d, rng, segment, record)
    reference = jumps[:, n_iter - n_avg :].ravel()
    n_windows = n_iter - n_avg - window + 1
    trace = np.array([wasserstein1_1d(jumps[:, i : i + window], reference) for i in range(max(n_windows, 1))])
    start, level = first_plateau(trace)
    return {"trace": trace, "plateau_iteration": start + 1, "plateau_level": level}


def sample_count_diagnostic(law, sigma, C, n_iter, n_avg, tol, rng, d=64, segment=200, chain=0):
    """Window length needed for a single-chain average to match the many-chain MMSE.

    The reference MMSE averages the last ``n_avg`` iterations of all ``C``
    chains.  For one chain, windows ending at its last iteration grow to the
    left; the error of a window is ``mean((window mean - MMSE)^2) / sigma^2``.
    The result is the shortest length from which on every longer window
    stays below ``tol``.

    Returns
    -------
    dict with ``window`` (length), ``reached`` (False if even the full
    ``n_avg`` window misses ``tol``) and the error ``curve``.
    """
    if n_avg > n_iter:
        raise InsufficientSamplesError("averaging window longer than the run")
    tail_sum = np.zeros(d)
    single = np.empty((n_avg, d))
    first_tail = n_iter - n_avg

    def record(start, draws):
        lo = max(first_tail - start, 0)
        if lo >= draws.shape[1]:
            return
        tail_sum[:] += draws[:, lo:, :].sum(axis=(0, 1))
        single[start + lo - first_tail : start + draws.shape[1] - first_tail] = draws[chain, lo:, :]

    _diagnostic_chains(law, sigma, C, n_iter, d, rng, segment, record)
    mmse = tail_sum / (C * n_avg)
    lengths = np.arange(1, n_avg + 1)
    window_means = np.cumsum(single[::-1], axis=0) / lengths[:, None]
    curve = np.mean((window_means - mmse) ** 2, axis=1) / sigma**2
    above = np.flatnonzero(~(curve < tol))
    if above.size == 0:
        return {"window": 1, "reached": True, "curve": curve}
    if above[-1] == n_avg - 1:
        return {"window": n_avg, "reached": False, "curve": curve}
    return {"window": int(above[-1] + 2), "reached": True, "curve": curve}
