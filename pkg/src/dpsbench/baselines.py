"""Model-based estimators with quadratic and l1 increment penalties, and grid-search tuning.

Both estimators are solved in increment coordinates ``u = D x``.  Since
``D`` is invertible, ``min_x 0.5 ||A x - y||^2 + lam R(D x)`` is the same as
``min_u 0.5 ||H u - y||^2 + lam R(u)`` with ``H = A D^-1``, which turns the
l1 problem into an ordinary lasso.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ConvergenceError, DivergenceError, ParameterDomainError, SingularSystemError
from .levy import apply_D, apply_D_inv, difference_matrix

__all__ = [
    "loglinear_grid",
    "TuningGrid",
    "solve_l2",
    "solve_l1",
    "l1_objective",
    "L2Path",
    "L1Path",
    "tune_lambda",
    "tune_l2",
    "tune_l1",
    "tune_dps",
    "MODEL_GRID",
    "CDPS_GRID",
    "DIFFPIR_LAM_GRID",
    "DIFFPIR_ZETAS",
    "DPNP_GRID",
]

L1_REL_TOL = 1e-8
L1_MAX_SWEEPS = 50_000


def loglinear_grid(a, b, n):
    """``10 ** (a + (i - 1) (b - a) / (n - 1))`` for ``i = 1..n``."""
    if n < 2:
        raise ParameterDomainError("a grid needs at least two points")
    return 10.0 ** np.linspace(a, b, int(n))


@dataclass(frozen=True)
class TuningGrid:
    """Descriptor of a loglinear grid."""

    a: float
    b: float
    n: int

    @property
    def points(self):
        return loglinear_grid(self.a, self.b, self.n)


MODEL_GRID = TuningGrid(-5.0, 5.0, 1000)
CDPS_GRID = TuningGrid(-3.0, 1.0, 40)
DIFFPIR_LAM_GRID = TuningGrid(-4.0, 1.0, 20)
DIFFPIR_ZETAS = (0.3, 0.7)
DPNP_GRID = TuningGrid(-1.0, 4.0, 40)


def _increment_matrix(matrix):
    d = matrix.shape[1]
    return matrix @ np.tril(np.ones((d, d)))


def solve_l2(y, matrix, lam):
    """Solve ``(A^T A + 2 lam D^T D) x = A^T y``.

    ``y`` may hold one measurement per row.
    """
    if lam < 0.0:
        raise ParameterDomainError("lam must be non-negative")
    a = np.asarray(matrix, dtype=float)
    d = a.shape[1]
    dm = difference_matrix(d)
    q = a.T @ a + 2.0 * lam * (dm.T @ dm)
    if np.linalg.matrix_rank(q) < d:
        raise SingularSystemError("normal equations are singular")
    rhs = np.asarray(y, dtype=float) @ a
    return np.linalg.solve(q, rhs.T).T


def l1_objective(x, y, matrix, lam):
    x = np.asarray(x, dtype=float)
    r = x @ np.asarray(matrix).T - y
    return 0.5 * np.sum(r * r, axis=-1) + lam * np.sum(np.abs(apply_D(x)), axis=-1)


class L1Path:
    """Lasso in increment coordinates for a fixed operator, reusable across measurements.

    Solutions come from an exact homotopy over ``lam``; each one is checked
    against the duality gap and refined by coordinate descent if needed.
    Identical columns of ``H`` (runs of unobserved samples) are merged
    before solving and the merged weight is split evenly over the run, which
    selects the minimizer with the smallest ``||D x||_2`` among the
    equivalent ones.  All-zero columns get zero weight.
    """

    def __init__(self, matrix, rel_tol=L1_REL_TOL, max_sweeps=L1_MAX_SWEEPS):
        self.matrix = np.asarray(matrix, dtype=float)
        h = _increment_matrix(self.matrix)
        self.d = h.shape[1]
        groups = {}
        for j in range(self.d):
            col = h[:, j]
            if not np.any(col):
                continue
            groups.setdefault(col.tobytes(), []).append(j)
        self.members = list(groups.values())
        reps = [g[0] for g in self.members]
        self.h = np.ascontiguousarray(h[:, reps])
        self.gram = np.ascontiguousarray(self.h.T @ self.h)
        self.rel_tol = rel_tol
        self.max_sweeps = int(max_sweeps)

    def _expand(self, ur):
        ur = np.atleast_2d(ur)
        u = np.zeros((ur.shape[0], self.d))
        for g, members in enumerate(self.members):
            u[:, members] = ur[:, g : g + 1] / len(members)
        return u

    def path(self, y, lams):
        """Solutions at every ``lam`` in ``lams``.

        Returns
        -------
        x : ndarray, shape (len(lams), d)
        gaps : ndarray
            Final duality gaps.
        converged : ndarray of bool
            False where the gap is still above tolerance after refinement.
        """
        lams = np.asarray(lams, dtype=float)
        if np.any(lams < 0.0):
            raise ParameterDomainError("lam must be non-negative")
        y = np.asarray(y, dtype=float)
        c = self.h.T @ y
        yy = float(y @ y)
        tol = self.rel_tol * 0.5 * yy
        order = np.argsort(-lams, kind="stable")
        ur = np.zeros((len(lams), self.h.shape[1]))
        if self.h.shape[1]:
            sol, _ = _kernels.lasso_path(self.gram, c, lams[order], 50 * self.d)
            ur[order] = sol
        gaps = np.empty(len(lams))
        for i, lam in enumerate(lams):
            _, gaps[i] = _kernels.lasso_gap(self.h, y, lam, ur[i])
            if gaps[i] > tol:
                ur[i], gaps[i], _ = _kernels.lasso_cd(self.h, y, self.gram, c, lam, ur[i].copy(), tol, self.max_sweeps)
        return apply_D_inv(self._expand(ur)), gaps, gaps <= tol

    def solve(self, y, lam):
        """Single solution; raises :class:`ConvergenceError` if the gap test fails."""
        x, gaps, ok = self.path(y, [lam])
        if not ok[0]:
            raise ConvergenceError(f"lasso gap {gaps[0]:.3g} above tolerance", x[0], gaps[0])
        return x[0]


def solve_l1(y, matrix, lam, tol=L1_REL_TOL, max_sweeps=L1_MAX_SWEEPS):
    """Minimize ``0.5 ||A x - y||^2 + lam ||D x||_1``.

    The solution is accepted once the lasso duality gap is below ``tol``
    times the objective at zero (see :class:`L1Path`).

    Raises
    ------
    ConvergenceError
        At the sweep cap; the exception carries the last iterate and gap.
    """
    return L1Path(matrix, tol, max_sweeps).solve(y, lam)


class L2Path:
    """All quadratic-penalty solutions for a fixed operator via one SVD of ``H = A D^-1``."""

    def __init__(self, matrix):
        self.matrix = np.asarray(matrix, dtype=float)
        h = _increment_matrix(self.matrix)
        self.u, self.s, self.vt = np.linalg.svd(h, full_matrices=False)

    def solve(self, ys, lams):
        """Solutions of shape (len(lams), n, d) for measurements ``ys`` of shape (n, m)."""
        proj = np.atleast_2d(ys) @ self.u
        lams = np.atleast_1d(lams)
        filt = self.s / (self.s**2 + 2.0 * lams[:, None])
        inc = (proj[None, :, :] * filt[:, None, :]) @ self.vt
        return np.cumsum(inc, axis=-1)


def tune_lambda(estimator, ys, truths, grid):
    """Grid point minimizing the mean per-signal MSE over a validation set.

    Parameters
    ----------
    estimator : callable
        ``estimator(y, lam) -> x``.
    ys, truths : sequences of measurements and true signals
    grid : array_like
        Increasing parameter values; ties go to the smallest.

    Returns
    -------
    best : float
    curve : ndarray
        Mean MSE at every grid point.
    """
    grid = np.asarray(grid, dtype=float)
    curve = np.empty(len(grid))
    for j, lam in enumerate(grid):
        err = [np.mean((estimator(y, lam) - x) ** 2) for y, x in zip(ys, truths)]
        curve[j] = np.mean(err)
    return float(grid[int(np.argmin(curve))]), curve


def tune_l2(matrix, ys, truths, grid=None):
    """Fast :func:`tune_lambda` for the quadratic penalty."""
    grid = MODEL_GRID.points if grid is None else np.asarray(grid, dtype=float)
    truths = np.atleast_2d(truths)
    path = L2Path(matrix)
    curve = np.empty(len(grid))
    for start in range(0, len(grid), 100):
        sol = path.solve(ys, grid[start : start + 100])
        curve[start : start + 100] = np.mean((sol - truths[None]) ** 2, axis=(1, 2))
    return float(grid[int(np.argmin(curve))]), curve


def tune_l1(matrix, ys, truths, grid=None, rel_tol=L1_REL_TOL, max_sweeps=L1_MAX_SWEEPS):
    """:func:`tune_lambda` for the l1 penalty using the homotopy over the whole grid.

    Solutions that miss the gap tolerance still contribute their last
    iterate; their count is returned as the third value.
    """
    grid = MODEL_GRID.points if grid is None else np.asarray(grid, dtype=float)
    solver = L1Path(matrix, rel_tol, max_sweeps)
    ys = np.atleast_2d(ys)
    truths = np.atleast_2d(truths)
    err = np.empty((len(grid), len(ys)))
    missed = 0
    for i, (y, x) in enumerate(zip(ys, truths)):
        est, _, ok = solver.path(y, grid)
        missed += int(np.count_nonzero(~ok))
        err[:, i] = np.mean((est - x) ** 2, axis=1)
    curve = err.mean(axis=1)
    return float(grid[int(np.argmin(curve))]), curve, missed


def tune_dps(run, items, grid):
    """Grid search for DPS parameters.

    Parameters
    ----------
    run : callable
        ``run(theta, item_index) -> draws`` of shape (n_samples, d); it must
        derive its random stream from ``item_index`` alone so that all grid
        points see the same randomness.
    items : sequence of true signals
    grid : sequence of parameter settings

    Returns
    -------
    best : parameter setting
    curve : ndarray
        Summed squared error of the draw mean at each grid point; ``inf``
        where the sampler diverged on some item.
    """
    curve = np.empty(len(grid))
    for j, theta in enumerate(grid):
        total = 0.0
        for i, x in enumerate(items):
            try:
                est = np.asarray(run(theta, i)).mean(axis=0)
            except DivergenceError:
                total = np.inf
                break
            total += float(np.sum((est - x) ** 2))
        curve[j] = total
    return grid[int(np.argmin(curve))], curve
