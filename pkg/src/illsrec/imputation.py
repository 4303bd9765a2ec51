"""Least-squares completion of the spread score matrix.

A missing entry (item alpha, user i) is estimated from the user's K most
similar "coherent" users: regress the target's values at the other n-1 items
on the neighbours' values at those items (minimum-norm least squares), then
combine the neighbours' values at item alpha with the fitted weights.  The
outer loop repeats the pass, re-selecting neighbours from the previous
iteration's matrix, until the error on a held-back validation mask stops
moving.

Zeros in the neighbour columns are filled with each column's nonzero mean so
the regression stays well posed; the combination vector w keeps the raw
values, so an estimate only collects actual neighbour evidence at the target
item (a neighbour with nothing recorded there contributes nothing).

The per-entry contract is a least-squares solve with one row (the target
item) deleted.  Solving each entry from scratch is wasteful: all entries of
one user share the same neighbour design matrix B, so we solve the full-row
system once per user and reach each deleted-row solution through the
standard leave-one-out downdate

    x(alpha) = x - Ginv b_alpha * (a_alpha - p_alpha) / (1 - h_alpha)

where G is the Gram matrix of B, p = B x the full-system prediction and h
the row leverage.  Starting from the minimum-norm x keeps every x(alpha) in
the row space of B, so the downdate reproduces the minimum-norm deleted-row
solution exactly whenever the deletion does not drop the rank of B; rows
where it would (leverage ~ 1) fall back to an explicit solve.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .dataset import BipartiteGraph, DataError
from .spreading import IMPUTED, MISSING, OBSERVED, SPREAD, ScoreMatrix

# Relative singular-value cutoff for rank decisions in the min-norm solver.
LSTSQ_RCOND = 1e-10
# The batched path works through Gram matrices, which square the conditioning;
# a hair of diagonal ridge keeps the Cholesky factor positive definite without
# ever exciting null-space directions, so it tracks the minimum-norm solution
# to the same order on anything float64 can resolve.
_GRAM_RIDGE = 1e-10
_EIG_RCOND = 1e-12
# Rows whose leverage is this close to one (deleting them would drop the rank
# of the design, where the downdate identity fails) take the explicit solve.
# A genuine rank drop leaves 1 - h at ridge scale (~1e-10), far below this.
_LEVERAGE_TOL = 1e-6


class NumericError(ArithmeticError):
    """A metric or solve is mathematically undefined for the given data."""


@dataclass(frozen=True)
class NeighborSet:
    """The K most similar users to ``target``, most similar first."""

    target: int
    neighbors: tuple[int, ...]
    similarities: tuple[float, ...]


@dataclass(frozen=True)
class ValidationMask:
    """Spread entries hidden to make imputation error measurable.

    ``items``/``users`` are parallel index arrays; ``values`` holds the true
    spread scores that were blanked.
    """

    items: np.ndarray
    users: np.ndarray
    values: np.ndarray
    seed: int
    fraction: float

    def __len__(self) -> int:
        return len(self.items)


@dataclass(frozen=True)
class IllsConfig:
    k_grid: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
    max_iterations: int = 10
    convergence_tol: float = 1e-4
    mask_fraction: float = 0.01
    seed: int = 0

    def __post_init__(self):
        grid = tuple(float(f) for f in self.k_grid)
        if not grid:
            raise ValueError("k_grid must not be empty")
        if any(not 0.0 < f <= 1.0 for f in grid):
            raise ValueError("k_grid fractions must lie in (0, 1]")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError("k_grid must be strictly increasing")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.convergence_tol > 0:
            raise ValueError("convergence_tol must be positive")
        if not 0.0 < self.mask_fraction < 1.0:
            raise ValueError("mask_fraction must be in (0, 1)")
        object.__setattr__(self, "k_grid", grid)


@dataclass(frozen=True)
class IllsTrace:
    chosen_k: int
    nrmse_per_iteration: tuple[float, ...]
    iterations_run: int


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def similarity(graph: BipartiteGraph, i: int, j: int) -> float:
    """Profile overlap scaled by the quadratic mean of the two degrees.

    Identical profiles of any size score 1/sqrt(2); disjoint ones score 0.
    """
    if i == j:
        raise ValueError("self-similarity is undefined; exclude the target user")
    ki = int(graph.user_degrees[i])
    kj = int(graph.user_degrees[j])
    if ki == 0 or kj == 0:
        return 0.0
    common = np.intersect1d(graph.user_profile(i), graph.user_profile(j),
                            assume_unique=True).size
    return common / math.sqrt(ki * ki + kj * kj)


def similarity_dense(left: np.ndarray, right: np.ndarray) -> float:
    """Real-valued generalisation of :func:`similarity`.

    The squared Euclidean norm plays the role the degree plays on binary
    profiles, so the two agree exactly on 0/1 vectors.
    """
    left = np.asarray(left, dtype=np.float64)
    right = np.asarray(right, dtype=np.float64)
    if left.shape != right.shape or left.ndim != 1:
        raise ValueError("similarity_dense expects two equally sized vectors")
    if not (np.isfinite(left).all() and np.isfinite(right).all()):
        raise ValueError("similarity_dense requires finite inputs")
    sl = float(left @ left)
    sr = float(right @ right)
    if sl == 0.0 or sr == 0.0:
        return 0.0
    return float(left @ right) / math.sqrt(sl * sl + sr * sr)


def _pairwise_similarities(columns: np.ndarray) -> np.ndarray:
    """All-pairs :func:`similarity_dense` over the matrix columns."""
    sq = np.einsum("ij,ij->j", columns, columns)
    dots = columns.T @ columns
    denom = np.sqrt(sq[:, None] ** 2 + sq[None, :] ** 2)
    out = np.zeros_like(dots)
    np.divide(dots, denom, out=out, where=denom > 0.0)
    return out


def _neighbor_orders(columns: np.ndarray, targets) -> dict[int, np.ndarray]:
    """Every other user ranked by similarity (descending, index tie-break)."""
    sims = _pairwise_similarities(columns)
    orders = {}
    for u in targets:
        s = sims[u].copy()
        s[u] = -np.inf  # sink the target to the end of the ranking
        order = np.argsort(-s, kind="stable")
        orders[int(u)] = order[:-1]
    return orders


def select_neighbors(scores: ScoreMatrix, target: int, K: int) -> NeighborSet:
    """Top-K users by dense similarity over the current score columns."""
    if K < 1:
        raise ValueError("K must be >= 1")
    if not 0 <= target < scores.user_count:
        raise IndexError(f"user index {target} out of range")
    sims = _pairwise_similarities(scores.values)[target]
    order = _neighbor_orders(scores.values, [target])[target][:K]
    return NeighborSet(target, tuple(int(u) for u in order),
                       tuple(float(sims[u]) for u in order))


def row_average_fill(column: np.ndarray) -> np.ndarray:
    """Replace zeros with the mean of the nonzero entries (all-zero stays)."""
    column = np.asarray(column, dtype=np.float64)
    nonzero = column != 0.0
    if not nonzero.any():
        return column.copy()
    mean = column[nonzero].mean()
    return np.where(nonzero, column, mean)


def _fill_columns(values: np.ndarray) -> np.ndarray:
    """Column-wise :func:`row_average_fill` for a whole matrix."""
    counts = np.count_nonzero(values, axis=0)
    sums = values.sum(axis=0)
    means = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
    return np.where(values != 0.0, values, means[None, :])


def lstsq_min_norm(M: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Minimum-norm least-squares solution with a rank-revealing cutoff."""
    M = np.asarray(M, dtype=np.float64)
    rhs = np.asarray(rhs, dtype=np.float64)
    if M.ndim != 2 or rhs.ndim != 1 or M.shape[0] != rhs.shape[0]:
        raise ValueError("shape mismatch between matrix and right-hand side")
    if not (np.isfinite(M).all() and np.isfinite(rhs).all()):
        raise ValueError("lstsq_min_norm requires finite inputs")
    x, *_ = np.linalg.lstsq(M, rhs, rcond=LSTSQ_RCOND)
    return x


def estimate_entry(a: np.ndarray, B: np.ndarray, w: np.ndarray) -> float:
    """One missing value as a least-squares combination of K neighbours.

    ``a`` holds the target user's values at the other items, ``B`` the
    neighbours' values at those items, ``w`` the neighbours' values at the
    target item.  Scores are non-negative, so the result clamps at 0.
    """
    a = np.asarray(a, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if B.shape != (a.shape[0], w.shape[0]):
        raise ValueError("B must be (len(a), len(w))")
    x = lstsq_min_norm(B, a)
    return max(float(w @ x), 0.0)


def nrmse(estimates, truths) -> float:
    """Root-mean-square error over the standard deviation of the truths.

    0 is perfect; 1 matches the constant mean predictor.
    """
    estimates = np.asarray(estimates, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    if estimates.shape != truths.shape or estimates.ndim != 1 or estimates.size == 0:
        raise ValueError("estimates and truths must be equally sized non-empty vectors")
    sd = math.sqrt(float(np.mean((truths - truths.mean()) ** 2)))
    if sd < 1e-12:
        raise NumericError("NRMSE undefined for constant truths")
    return math.sqrt(float(np.mean((estimates - truths) ** 2))) / sd


def make_validation_mask(scores: ScoreMatrix, fraction: float, seed: int):
    """Blank a seeded sample of SPREAD entries and remember their values.

    Returns the masked copy (sampled entries zeroed and tagged MISSING) and
    the mask itself.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError("mask fraction must be in (0, 1)")
    rows, cols = np.nonzero(scores.provenance == SPREAD)
    total = rows.size
    if total < 10:
        raise DataError(f"need at least 10 spread entries to build a mask, have {total}")
    take = _round_half_up(fraction * total)
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(total, size=take, replace=False))
    items = rows[chosen]
    users = cols[chosen]
    truths = scores.values[items, users].copy()

    values = scores.values.copy()
    provenance = scores.provenance.copy()
    values[items, users] = 0.0
    provenance[items, users] = MISSING
    masked = ScoreMatrix(values, provenance, scores.training, scores.user_mass)
    return masked, ValidationMask(items, users, truths, seed, fraction)


# ---------------------------------------------------------------------------
# Batched per-user estimation


def _loo_from_chol(L, c, Bm, Wm, am):
    """Deleted-row estimates given a Cholesky factor of the Gram matrix.

    ``Bm`` holds the filled design rows at the target items, ``Wm`` the raw
    combination rows.  est(alpha) = w . x(alpha) expands to
    w.x - (w Ginv b) (a_alpha - p_alpha) / (1 - h_alpha).
    """
    x = scipy.linalg.cho_solve((L, True), c, check_finite=False)
    T = scipy.linalg.solve_triangular(L, Bm.T, lower=True, check_finite=False)
    S = scipy.linalg.solve_triangular(L, Wm.T, lower=True, check_finite=False)
    h = np.einsum("ij,ij->j", T, T)
    wgb = np.einsum("ij,ij->j", S, T)
    return _loo_combine(Bm @ x, Wm @ x, h, wgb, am)


def _loo_from_eigh(G, c, Bm, Wm, am):
    """Rank-aware variant used when the Gram matrix is (near-)singular."""
    lam, V = np.linalg.eigh(G)
    top = lam[-1] if lam.size else 0.0
    if top <= 0.0:
        return np.zeros_like(am), np.zeros(am.shape, dtype=bool)
    keep = lam > top * _EIG_RCOND
    Vr = V[:, keep]
    lr = lam[keep]
    x = Vr @ ((Vr.T @ c) / lr)
    U = Bm @ Vr
    R = Wm @ Vr
    h = ((U * U) / lr).sum(axis=1)
    wgb = ((R * U) / lr).sum(axis=1)
    return _loo_combine(Bm @ x, Wm @ x, h, wgb, am)


def _loo_combine(p, q, h, wgb, am):
    denom = 1.0 - h
    bad = denom <= _LEVERAGE_TOL
    est = np.zeros_like(am)
    np.divide(wgb * (p - am), denom, out=est, where=~bad)
    est += q
    return est, bad


def _exact_entry(filled, prev, user, nb, row, fill_w=False):
    """Literal per-entry solve; used where the downdate identity is unsafe."""
    keep = np.arange(filled.shape[0]) != row
    B = filled[np.ix_(keep, nb)]
    a = prev[keep, user]
    w = (filled if fill_w else prev)[row, nb]
    return estimate_entry(a, B, w)


def _ridged(G):
    """Copy of a Gram block with the stabilising diagonal ridge applied."""
    out = G.copy()
    jitter = _GRAM_RIDGE * max(out.diagonal().max(), 1e-300)
    out[np.diag_indices_from(out)] += jitter
    return out


def _estimate_rows(gram, cross, filled, prev, user, nb, rows, fill_w=False):
    """All estimates for one user's target rows against neighbours ``nb``."""
    if nb.size == 0:
        return np.zeros(rows.size)
    G = gram[np.ix_(nb, nb)]
    c = cross[nb, user]
    Bm = filled[np.ix_(rows, nb)]
    Wm = (filled if fill_w else prev)[np.ix_(rows, nb)]
    am = prev[rows, user]
    try:
        L = np.linalg.cholesky(_ridged(G))
        est, bad = _loo_from_chol(L, c, Bm, Wm, am)
    except np.linalg.LinAlgError:
        est, bad = _loo_from_eigh(G, c, Bm, Wm, am)
    for k in np.nonzero(bad)[0]:
        est[k] = _exact_entry(filled, prev, user, nb, rows[k], fill_w)
    return np.maximum(est, 0.0)


def impute_iteration(scores: ScoreMatrix, K: int, selection=None,
                     fill_w: bool = False) -> ScoreMatrix:
    """One Jacobi-style pass re-estimating every MISSING/IMPUTED entry.

    All reads go to ``scores`` (and to ``selection`` for the neighbour
    ranking, when given); estimates land in a fresh matrix, so the result is
    independent of user processing order.  OBSERVED and SPREAD entries are
    never touched.

    ``fill_w`` extends the zero-fill to the combination row w as well, so an
    absent neighbour contributes its column mean instead of nothing.  On a
    binary matrix that collapses every estimate to a per-user constant; the
    no-preprocessing baseline keeps that behaviour deliberately.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    prev = scores.values
    target_mask = (scores.provenance == MISSING) | (scores.provenance == IMPUTED)
    users = np.nonzero(target_mask.any(axis=0))[0]
    if users.size == 0:
        return scores

    if selection is None:
        sel_values = prev
    elif isinstance(selection, ScoreMatrix):
        sel_values = selection.values
    else:
        sel_values = np.asarray(selection, dtype=np.float64)

    m = scores.user_count
    keff = min(K, m - 1)
    orders = _neighbor_orders(sel_values, users)
    filled = _fill_columns(prev)
    gram = filled.T @ filled
    cross = filled.T @ prev

    new_values = prev.copy()
    new_prov = scores.provenance.copy()
    for u in users:
        rows = np.nonzero(target_mask[:, u])[0]
        nb = np.sort(orders[u][:keff])  # estimate is order-invariant; sorted gathers are cheaper
        new_values[rows, u] = _estimate_rows(gram, cross, filled, prev, u, nb, rows,
                                             fill_w=fill_w)
        new_prov[rows, u] = IMPUTED
    return ScoreMatrix(new_values, new_prov, scores.training, scores.user_mass)


# ---------------------------------------------------------------------------
# K selection and the outer iteration


def _grid_ks(k_grid, m: int) -> list[int]:
    return [max(1, _round_half_up(f * m)) for f in k_grid]


def _scan_k(masked: ScoreMatrix, mask: ValidationMask, k_grid):
    """NRMSE of a single estimation pass at each grid K.

    Neighbours come from the binary training profiles (the first-iteration
    ranking), so the whole grid shares one ordering per user and one
    Cholesky factor whose leading blocks serve every K.
    """
    prev = masked.values
    m = masked.user_count
    sel = np.where(masked.provenance == OBSERVED, 1.0, 0.0)
    requested = _grid_ks(k_grid, m)
    effective = sorted({min(k, m - 1) for k in requested})

    by_user = np.argsort(mask.users, kind="stable")
    bounds = np.searchsorted(mask.users[by_user], np.arange(m + 1))
    users = [u for u in range(m) if bounds[u + 1] > bounds[u]]

    orders = _neighbor_orders(sel, users)
    filled = _fill_columns(prev)
    gram = filled.T @ filled
    cross = filled.T @ prev

    estimates = {k: np.zeros(len(mask)) for k in effective}
    for u in users:
        idx = by_user[bounds[u]:bounds[u + 1]]
        rows = mask.items[idx]
        am = prev[rows, u]
        full = orders[u]
        G_full = _ridged(gram[np.ix_(full, full)])
        B_full = filled[rows][:, full]
        W_full = prev[rows][:, full]
        c_full = cross[full, u]
        try:
            L_full = np.linalg.cholesky(G_full)
        except np.linalg.LinAlgError:
            L_full = None
        for k in effective:
            nb = full[:k]
            Bm = B_full[:, :k]
            Wm = W_full[:, :k]
            if L_full is not None:
                est, bad = _loo_from_chol(L_full[:k, :k], c_full[:k], Bm, Wm, am)
            else:
                est, bad = _loo_from_eigh(G_full[:k, :k], c_full[:k], Bm, Wm, am)
            for j in np.nonzero(bad)[0]:
                est[j] = _exact_entry(filled, prev, u, nb, rows[j])
            estimates[k][idx] = np.maximum(est, 0.0)

    errors = {k: nrmse(estimates[k], mask.values) for k in effective}
    return [(float(f), k, errors[min(k, m - 1)]) for f, k in zip(k_grid, requested)]


def _best_k(curve) -> int:
    best_k, best_err = None, math.inf
    for _, k, err in curve:
        if err < best_err or (err == best_err and best_k is not None and k < best_k):
            best_k, best_err = k, err
    return best_k


def k_curve(scores: ScoreMatrix, config: IllsConfig):
    """(fraction, K, NRMSE) for each grid point, without iterating."""
    masked, mask = make_validation_mask(scores, config.mask_fraction, config.seed)
    return _scan_k(masked, mask, config.k_grid)


def select_k(scores: ScoreMatrix, config: IllsConfig) -> int:
    """The grid K whose single estimation pass minimises mask NRMSE."""
    return _best_k(k_curve(scores, config))


def run_ills(scores: ScoreMatrix, config: IllsConfig):
    """Full pipeline: pick K, iterate to convergence, restore the mask.

    Each round proposes one estimation pass over the best matrix found so
    far (neighbours re-selected from its columns after the first, binary
    round).  While the validation error keeps improving this is the plain
    rolled-forward iteration; once a proposal stops improving, the next
    proposal is built from the same unchanged matrix and therefore repeats
    it exactly, so the error difference hits zero and the stopping rule
    fires.  That keeps the loop from drifting away from its best state on
    data where repeated re-estimation amplifies noise instead of settling.

    Returns the best completed matrix (validation entries restored to their
    true spread values) and the per-iteration NRMSE trace.
    """
    masked, mask = make_validation_mask(scores, config.mask_fraction, config.seed)
    chosen = _best_k(_scan_k(masked, mask, config.k_grid))

    beyond_mask = bool(np.any((scores.provenance == MISSING) | (scores.provenance == IMPUTED)))
    binary_sel = np.where(scores.provenance == OBSERVED, 1.0, 0.0)

    best = masked
    best_err = math.inf
    history: list[float] = []
    for iteration in range(1, config.max_iterations + 1):
        selection = binary_sel if iteration == 1 else None
        candidate = impute_iteration(best, chosen, selection=selection)
        err = nrmse(candidate.values[mask.items, mask.users], mask.values)
        history.append(err)
        if err < best_err:
            best, best_err = candidate, err
        if iteration == 1 and not beyond_mask:
            break
        if iteration == 1 and math.isinf(config.convergence_tol):
            break
        if iteration >= 2 and abs(history[-1] - history[-2]) < config.convergence_tol:
            break

    values = best.values.copy()
    provenance = best.provenance.copy()
    values[mask.items, mask.users] = mask.values
    provenance[mask.items, mask.users] = SPREAD
    final = ScoreMatrix(values, provenance, scores.training, scores.user_mass)
    return final, IllsTrace(chosen, tuple(history), len(history))
