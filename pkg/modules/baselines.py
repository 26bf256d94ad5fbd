"""
Comparison completions: max-determinant PD completion and soft-impute low-rank completion.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from config.settings import Config
from modules.corestats import PartialSymmetricMatrix, is_positive_definite, pd_correction
from modules.dataset import IncompleteDataset
from utils.errors import GridEmpty, InputError, NoObservations, NoPDCompletion

logger = logging.getLogger(__name__)

MAX_CONTINUATION_HALVINGS = 40


@dataclass(frozen=True)
class MaxDetSolveReport:
    iterations: int
    residual: float
    converged: bool
    tol: float
    logdet_trace: Tuple[float, ...] = ()
    continuation_steps: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "iterations": self.iterations,
            "max_inverse_residual": self.residual,
            "converged": self.converged,
            "tol": self.tol,
            "continuation_steps": self.continuation_steps,
        }


@dataclass(frozen=True)
class LowRankSolveReport:
    lam: float
    effective_rank: int
    iterations: int
    relative_change: float
    converged: bool
    lambda_grid: Tuple[float, ...] = ()
    grid_ranks: Tuple[int, ...] = ()
    validation_errors: Tuple[float, ...] = ()
    holdout_size: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "lambda": self.lam,
            "effective_rank": self.effective_rank,
            "iterations": self.iterations,
            "relative_change": self.relative_change,
            "converged": self.converged,
            "lambda_grid": list(self.lambda_grid),
            "grid_ranks": list(self.grid_ranks),
            "validation_errors": list(self.validation_errors),
            "holdout_size": self.holdout_size,
        }


# --- max-determinant completion -----------------------------------------------

def _inverse(S: np.ndarray) -> np.ndarray:
    factor = linalg.cho_factor(S, lower=True)
    return linalg.cho_solve(factor, np.eye(S.shape[0]))


def _logdet(S: np.ndarray) -> float:
    sign, value = np.linalg.slogdet(S)
    return float(value) if sign > 0 else -np.inf


def _sweep(S: np.ndarray, K: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> None:
    """One cyclic pass of exact coordinate maximization, in place.

    Setting S_ij to S_iR S_RR^-1 S_Rj zeroes (S^-1)_ij; the step from the
    current value is K_ij / (K_ii K_jj - K_ij^2), and K follows by a rank-2
    Woodbury update.
    """
    for i, j in zip(rows, cols):
        k_ij = K[i, j]
        if k_ij == 0.0:
            continue
        step = k_ij / (K[i, i] * K[j, j] - k_ij ** 2)
        S[i, j] += step
        S[j, i] += step
        columns = K[:, [i, j]]
        inner = np.array([[0.0, 1.0 / step], [1.0 / step, 0.0]]) + columns[[i, j]]
        K -= columns @ np.linalg.solve(inner, columns.T)
        K[i, j] = K[j, i] = 0.0


def _ascend(S: np.ndarray, rows: np.ndarray, cols: np.ndarray, tol: float,
            max_sweeps: int) -> Tuple[np.ndarray, int, float, List[float]]:
    K = _inverse(S)
    residual = float(np.max(np.abs(K[rows, cols])))
    trace = [_logdet(S)]
    sweeps = 0
    while residual >= tol and sweeps < max_sweeps:
        _sweep(S, K, rows, cols)
        sweeps += 1
        K = _inverse(S)
        residual = float(np.max(np.abs(K[rows, cols])))
        trace.append(_logdet(S))
        logger.debug(f"MaxDet sweep {sweeps}: residual {residual:.3e}, logdet {trace[-1]:.10g}")
    return S, sweeps, residual, trace


def maxdet_complete(cov_O: PartialSymmetricMatrix, tol: Optional[float] = None,
                    max_iter: Optional[int] = None) -> Tuple[np.ndarray, MaxDetSolveReport]:
    """Max-determinant PD completion of the observed covariance.

    Missing entries start at 0. When the zero-filled matrix is not PD, the
    observed off-diagonals are first shrunk by the PD-correction factor and
    then walked back to their observed values, re-solving at each stage.
    """
    tol = Config.MAXDET_TOL if tol is None else tol
    max_iter = Config.MAXDET_MAX_SWEEPS if max_iter is None else max_iter
    sets = cov_O.pair_sets
    rows, cols = sets.missing_upper
    target = cov_O.as_dense(fill=0.0)
    if rows.size == 0:
        return target.copy(), MaxDetSolveReport(iterations=0, residual=0.0, converged=True, tol=tol)

    for k, subset in enumerate(cov_O.pattern.subsets):
        block = np.ix_(subset, subset)
        if sets.observed[block].all() and not is_positive_definite(target[block]):
            raise NoPDCompletion(f"observed block {k} is not positive definite")

    d = np.diag(target).copy()
    off_target = target - np.diag(d)
    if is_positive_definite(target):
        S, shrink = target.copy(), 1.0
    else:
        _, steps = pd_correction(target, return_steps=True)
        shrink = 1.0 / (1.0 + steps * Config.PD_DELTA)
        S = np.diag(d) + shrink * off_target
        logger.warning(f"Zero-filled covariance is not PD; starting MaxDet from shrinkage {shrink:.4f}")

    total_sweeps, continuation = 0, 0
    S, sweeps, residual, trace = _ascend(S, rows, cols, tol, max_iter)
    total_sweeps += sweeps
    step = 1.0 - shrink
    while shrink < 1.0:
        for _ in range(MAX_CONTINUATION_HALVINGS):
            proposal = min(1.0, shrink + step)
            # observed entries go to proposal * target, free entries scale along
            candidate = np.diag(d) + (proposal / shrink) * (S - np.diag(d))
            candidate[sets.observed] = (np.diag(d) + proposal * off_target)[sets.observed]
            if is_positive_definite(candidate):
                break
            step /= 2.0
        else:
            raise NoPDCompletion("observed covariance admits no positive definite completion")
        shrink = proposal
        continuation += 1
        S, sweeps, residual, trace_part = _ascend(candidate, rows, cols, tol, max_iter)
        total_sweeps += sweeps
        trace = trace_part

    converged = residual < tol
    if not converged:
        logger.warning(f"MaxDet did not converge in {max_iter} sweeps (residual {residual:.3e})")
    S = (S + S.T) / 2.0
    report = MaxDetSolveReport(iterations=total_sweeps, residual=residual, converged=converged, tol=tol,
                               logdet_trace=tuple(trace), continuation_steps=continuation)
    return S, report


# --- soft-impute low-rank completion ------------------------------------------

def _soft_impute(X: np.ndarray, mask: np.ndarray, lam: float, Z: np.ndarray,
                 max_iter: int, tol: float) -> Tuple[np.ndarray, int, int, float, bool]:
    rank, change = 0, np.inf
    for iteration in range(1, max_iter + 1):
        U, s, Vt = np.linalg.svd(np.where(mask, X, Z), full_matrices=False)
        s = np.maximum(s - lam, 0.0)
        rank = int(np.count_nonzero(s))
        Z_new = (U[:, :rank] * s[:rank]) @ Vt[:rank]
        change = float(np.sum((Z_new - Z) ** 2) / max(np.sum(Z ** 2), np.finfo(float).tiny))
        Z = Z_new
        if change < tol:
            return Z, rank, iteration, change, True
    return Z, rank, max_iter, change, False


def _holdout_mask(mask: np.ndarray, frac: float, rng: np.random.Generator) -> np.ndarray:
    """Random held-out observed cells; every column keeps one training cell."""
    observed = np.flatnonzero(mask)
    size = int(np.floor(frac * observed.size))
    holdout = np.zeros(mask.size, dtype=bool)
    holdout[rng.choice(observed, size=size, replace=False)] = True
    holdout = holdout.reshape(mask.shape)
    for j in np.flatnonzero(~(mask & ~holdout).any(axis=0)):
        holdout[np.flatnonzero(holdout[:, j])[0], j] = False
    return holdout


def lowrank_complete(data: IncompleteDataset, lambda_grid: Optional[Sequence[float]] = None,
                     holdout_frac: Optional[float] = None, max_iter: Optional[int] = None,
                     tol: Optional[float] = None, seed: int = 0) -> Tuple[np.ndarray, LowRankSolveReport]:
    """Complete the data matrix by soft-impute and return its sample covariance.

    The regularization is chosen on held-out observed cells, fitting the grid
    from the largest value down with warm starts, then refitting on every
    observed cell at the chosen value.
    """
    holdout_frac = Config.LOWRANK_HOLDOUT if holdout_frac is None else holdout_frac
    max_iter = Config.LOWRANK_MAX_ITER if max_iter is None else max_iter
    tol = Config.LOWRANK_TOL if tol is None else tol
    if not 0.0 <= holdout_frac < 1.0:
        raise InputError(f"holdout fraction must lie in [0, 1), got {holdout_frac}")

    X, mask = data.values, data.mask
    n = X.shape[0]
    empty = np.flatnonzero(~mask.any(axis=0))
    if empty.size:
        raise NoObservations(f"variables {empty.tolist()} have no observations")
    mean = np.nanmean(X, axis=0)
    centered = np.where(mask, X - mean, 0.0)

    if mask.all():
        cov = centered.T @ centered / n
        rank = int(np.linalg.matrix_rank(centered))
        return cov, LowRankSolveReport(lam=0.0, effective_rank=rank, iterations=0,
                                       relative_change=0.0, converged=True)

    if lambda_grid is None:
        top = float(np.linalg.norm(centered, 2))
        lambda_grid = np.geomspace(top, 1e-3 * top, Config.LOWRANK_GRID_SIZE)
    grid = np.sort(np.asarray(list(lambda_grid), dtype=float))[::-1]
    if grid.size == 0:
        raise GridEmpty("soft-impute lambda grid is empty")

    holdout = _holdout_mask(mask, holdout_frac, np.random.default_rng(seed))
    train = mask & ~holdout
    Z = np.zeros_like(centered)
    errors, ranks, fits = [], [], []
    for lam in grid:
        Z, rank, _, _, _ = _soft_impute(centered, train, lam, Z, max_iter, tol)
        fits.append(Z)
        ranks.append(rank)
        errors.append(float(np.sum((Z - centered)[holdout] ** 2)) if holdout.any() else 0.0)
    best = int(np.argmin(errors))
    lam = float(grid[best])
    logger.info(f"Soft-impute selected lambda={lam:.4g} (validation rank {ranks[best]})")

    Z, rank, iterations, change, converged = _soft_impute(centered, mask, lam, fits[best], max_iter, tol)
    if not converged:
        logger.warning(f"Soft-impute did not converge in {max_iter} iterations (change {change:.3e})")
    completed = np.where(mask, X, Z + mean)
    resid = completed - completed.mean(axis=0)
    cov = resid.T @ resid / n
    report = LowRankSolveReport(lam=lam, effective_rank=rank, iterations=iterations,
                                relative_change=change, converged=converged,
                                lambda_grid=tuple(float(v) for v in grid), grid_ranks=tuple(ranks),
                                validation_errors=tuple(errors), holdout_size=int(holdout.sum()))
    return cov, report
