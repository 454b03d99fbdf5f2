"""Zero-sum matrix games where the row player minimizes.

``solve_matrix_game`` is a dense tableau simplex with Bland's rule, so pivots and
the returned strategies are fully determined by the input.  ``minimax_two_column``
is an exact vectorized solver for games with two columns, used on the hot path
of the simulator where every run solves one small game per stage.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

PIVOT_EPS = 1e-12


class SolverError(RuntimeError):
    def __init__(self, message, incumbent=None, gap=float("nan")):
        super().__init__(f"{message} (duality gap {gap:.3e})")
        self.incumbent = incumbent
        self.gap = gap


@dataclass(frozen=True)
class GameValueSolution:
    value: float
    optimal_row: np.ndarray
    optimal_col: np.ndarray
    duality_gap: float


def duality_gap(matrix, p, q):
    """``max_j (p M)_j - min_i (M q)_i``: zero exactly at a saddle point."""
    m = np.asarray(matrix, dtype=float)
    return float(np.max(p @ m) - np.min(m @ q))


def solve_matrix_game(matrix, tolerance=1e-9, max_iter=10_000) -> GameValueSolution:
    """Value ``min_p max_j (p M)_j`` with optimal strategies for both players.

    The game is shifted to a positive matrix ``A`` and the row player's problem
    becomes ``max 1.x  s.t.  A^T x <= 1, x >= 0`` with ``p = x / sum(x)``; the
    column strategy is read off the slack columns of the final objective row.
    """
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.size == 0:
        raise ValueError("matrix game needs a nonempty 2D matrix")
    if not tolerance > 0:
        raise ValueError("tolerance must be positive")
    rows, cols = m.shape
    shift = 1.0 - float(m.min())
    a = m + shift

    # tableau rows: one per column constraint, plus the objective row at the end
    tab = np.zeros((cols + 1, rows + cols + 1))
    tab[:cols, :rows] = a.T
    tab[:cols, rows : rows + cols] = np.eye(cols)
    tab[:cols, -1] = 1.0
    tab[cols, :rows] = -1.0
    basis = list(range(rows, rows + cols))

    def incumbent():
        x = np.zeros(rows + cols)
        x[basis] = tab[:cols, -1]
        p = x[:rows]
        s = p.sum()
        return p / s if s > 0 else np.full(rows, 1.0 / rows)

    for _ in range(max_iter):
        obj = tab[cols, :-1]
        entering = next((c for c in range(rows + cols) if obj[c] < -PIVOT_EPS), None)
        if entering is None:
            break
        column = tab[:cols, entering]
        best = None
        for r in range(cols):
            if column[r] > PIVOT_EPS:
                ratio = tab[r, -1] / column[r]
                key = (ratio, basis[r])
                if best is None or key < best[0]:
                    best = (key, r)
        if best is None:
            # cannot happen for a positive matrix: the feasible set is bounded
            raise SolverError("unbounded pivot column", incumbent())
        r = best[1]
        tab[r] /= tab[r, entering]
        for other in range(cols + 1):
            if other != r and tab[other, entering] != 0.0:
                tab[other] -= tab[other, entering] * tab[r]
        basis[r] = entering
    else:
        p = incumbent()
        raise SolverError("simplex iteration cap exceeded", p, float(np.max(p @ m)))

    x = np.zeros(rows + cols)
    x[basis] = tab[:cols, -1]
    total = x[:rows].sum()
    p = np.clip(x[:rows], 0.0, None)
    p /= p.sum()
    y = np.clip(tab[cols, rows : rows + cols], 0.0, None)
    q = y / y.sum()
    value = 1.0 / total - shift
    gap = duality_gap(m, p, q)
    if gap > tolerance or gap < -tolerance:
        raise SolverError("solution misses the duality-gap tolerance", p, gap)
    return GameValueSolution(value=value, optimal_row=p, optimal_col=q, duality_gap=gap)


def minimax_two_column(matrices):
    """Exact ``min_p max(p.a, p.b)`` for a batch of ``(..., I, 2)`` matrices.

    The minimum of this convex piecewise-linear function sits at a pure row or
    at the point of an edge ``[i, k]`` where both columns pay the same.  The
    first candidate (pure rows by index, then pairs in lexicographic order)
    attaining the minimum is returned.

    Returns ``(values, mixes)`` with shapes ``(...)`` and ``(..., I)``.
    """
    m = np.asarray(matrices, dtype=float)
    a = m[..., 0]
    b = m[..., 1]
    rows = m.shape[-2]
    pairs = list(combinations(range(rows), 2))
    diff = a - b
    cands = [np.maximum(a, b)]
    weights = []
    if pairs:
        ii = np.array([p[0] for p in pairs])
        kk = np.array([p[1] for p in pairs])
        di, dk = diff[..., ii], diff[..., kk]
        crossing = di * dk < 0
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.where(crossing, -dk / (di - dk), 0.0)
        pair_val = w * a[..., ii] + (1.0 - w) * a[..., kk]
        cands.append(np.where(crossing, pair_val, np.inf))
        weights = w
    values_all = np.concatenate(cands, axis=-1)
    choice = np.argmin(values_all, axis=-1)
    values = np.take_along_axis(values_all, choice[..., None], axis=-1)[..., 0]

    mixes = np.zeros(m.shape[:-1])
    pure = choice < rows
    np.put_along_axis(mixes, np.where(pure, choice, 0)[..., None], pure[..., None] * 1.0, axis=-1)
    if pairs:
        pair_idx = np.where(pure, 0, choice - rows)
        w_sel = np.take_along_axis(weights, pair_idx[..., None], axis=-1)[..., 0]
        i_sel = ii[pair_idx]
        k_sel = kk[pair_idx]
        mixed = ~pure
        wi = np.where(mixed, w_sel, 0.0)
        wk = np.where(mixed, 1.0 - w_sel, 0.0)
        np.put_along_axis(mixes, i_sel[..., None], np.take_along_axis(mixes, i_sel[..., None], -1) + wi[..., None], axis=-1)
        np.put_along_axis(mixes, k_sel[..., None], np.take_along_axis(mixes, k_sel[..., None], -1) + wk[..., None], axis=-1)
    return values, mixes


def minimax_strategy(matrices):
    """Optimal minimizing mixes for a batch of games ``(..., I, J)``.

    Two-column games take the exact vectorized path; anything else is solved
    one game at a time with the simplex.
    """
    m = np.asarray(matrices, dtype=float)
    if m.shape[-1] == 2:
        return minimax_two_column(m)
    flat = m.reshape((-1,) + m.shape[-2:])
    values = np.empty(flat.shape[0])
    mixes = np.empty(flat.shape[:2])
    for k, game in enumerate(flat):
        sol = solve_matrix_game(game)
        values[k] = sol.value
        mixes[k] = sol.optimal_row
    return values.reshape(m.shape[:-2]), mixes.reshape(m.shape[:-1])
