"""
Observed sample moments of incomplete data and matrix utilities.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple, Union

import numpy as np
from scipy import linalg

from config.settings import Config
from modules.dataset import IncompleteDataset, ObservationPattern, PairSets, pair_sets, quad_sample_size
from utils.errors import (
    DegeneratePair,
    DomainError,
    NonpositiveDiagonal,
    NotObserved,
    NotSymmetric,
    ZeroVariance,
)

logger = logging.getLogger(__name__)

# Cov(Z_i Z_j, Z_k Z_l) evaluated elementwise on broadcastable index arrays
FourthMoments = Callable[[np.ndarray, np.ndarray, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class PartialSymmetricMatrix:
    """Symmetric p x p values defined on the observed pair set only.

    ``values`` is dense with NaN outside O.
    """

    values: np.ndarray
    pair_sets: PairSets
    n_clamped: int = 0
    zero_variance: Tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        values = np.array(self.values, dtype=float, copy=True)
        values[~self.pair_sets.observed] = np.nan
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def p(self) -> int:
        return self.pair_sets.p

    @property
    def pattern(self) -> ObservationPattern:
        return self.pair_sets.pattern

    @property
    def observed(self) -> np.ndarray:
        return self.pair_sets.observed

    @property
    def diagonal(self) -> np.ndarray:
        return np.diag(self.values).copy()

    def get(self, i: int, j: int) -> float:
        if not self.pair_sets.contains(i, j):
            raise NotObserved(f"pair ({i}, {j}) is not jointly observed")
        return float(self.values[i, j])

    def as_dense(self, fill: float = 0.0) -> np.ndarray:
        return np.where(self.observed, self.values, fill)


def centered_values(data: IncompleteDataset, mean: Optional[np.ndarray]) -> np.ndarray:
    """Data minus marginal means (over N_ii) or a known mean; zeros where missing."""
    if mean is None:
        mean = np.nanmean(data.values, axis=0)
    else:
        mean = np.asarray(mean, dtype=float)
        if mean.shape != (data.p,):
            raise DomainError(f"known mean must have length {data.p}")
    return np.nan_to_num(data.values - mean, nan=0.0)


def observed_sample_covariance(data: IncompleteDataset, mean: Optional[np.ndarray] = None,
                               sets: Optional[PairSets] = None) -> PartialSymmetricMatrix:
    """Pairwise sample covariance over jointly observed samples.

    Each pair (i, j) averages (X_i - m_i)(X_j - m_j) over its n_ij joint
    samples, dividing by n_ij. ``m`` is the variable's own mean over all its
    observations unless a known ``mean`` is given.
    """
    if sets is None:
        sets = pair_sets(data.pattern)
    counts = data.pattern.pair_counts
    off_diagonal = sets.observed & ~np.eye(data.p, dtype=bool)
    if np.any(counts[off_diagonal] < 2):
        raise DegeneratePair("a retained pair has fewer than 2 joint samples")

    Z = centered_values(data, mean)
    sums = Z.T @ Z
    with np.errstate(divide="ignore", invalid="ignore"):
        values = np.where(counts > 0, sums / counts, np.nan)
    values = (values + values.T) / 2.0

    zero = tuple(int(i) for i in np.flatnonzero(np.diag(values) <= 0))
    if zero:
        logger.warning(f"Zero observed variance for variables {list(zero)}")
    return PartialSymmetricMatrix(values=values, pair_sets=sets, zero_variance=zero)


def observed_correlations(cov: PartialSymmetricMatrix, eps: Optional[float] = None) -> PartialSymmetricMatrix:
    """Scale observed covariances to correlations, clamping off-diagonals to +-(1 - eps)."""
    if eps is None:
        eps = Config.CORR_CLAMP_EPS
    d = cov.diagonal
    if np.any(~(d > 0)):
        raise ZeroVariance(f"nonpositive variance for variables {np.flatnonzero(~(d > 0)).tolist()}")
    scale = np.sqrt(d)
    corr = cov.values / np.outer(scale, scale)
    off = cov.observed & ~np.eye(cov.p, dtype=bool)
    bound = 1.0 - eps
    clamped = off & (np.abs(corr) > bound)
    n_clamped = int(clamped.sum()) // 2
    if n_clamped:
        logger.warning(f"Clamped {n_clamped} observed correlations to +-{bound}")
    corr = np.where(off, np.clip(corr, -bound, bound), corr)
    np.fill_diagonal(corr, 1.0)
    return PartialSymmetricMatrix(values=corr, pair_sets=cov.pair_sets, n_clamped=n_clamped)


def fisher(r: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """Fisher transformation g(r) = atanh(r) for |r| < 1."""
    r_arr = np.asarray(r, dtype=float)
    if np.any(~(np.abs(r_arr) < 1)):
        raise DomainError("Fisher transformation needs |r| < 1")
    z = np.arctanh(r_arr)
    return float(z) if np.ndim(r) == 0 else z


def fisher_inv(z: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """Inverse Fisher transformation, tanh."""
    r = np.tanh(np.asarray(z, dtype=float))
    return float(r) if np.ndim(z) == 0 else r


def gaussian_fourth_moments(sigma: np.ndarray) -> FourthMoments:
    """Isserlis: Cov(Z_i Z_j, Z_k Z_l) = S_ik S_jl + S_il S_jk."""
    sigma = np.asarray(sigma, dtype=float)

    def moments(i, j, k, l):
        return sigma[i, k] * sigma[j, l] + sigma[i, l] * sigma[j, k]

    return moments


def empirical_fourth_moments(Z: np.ndarray) -> FourthMoments:
    """Plug-in Cov(Z_i Z_j, Z_k Z_l) from a complete, centered sample."""
    Z = np.asarray(Z, dtype=float)
    second = Z.T @ Z / Z.shape[0]

    def moments(i, j, k, l):
        i, j, k, l = np.broadcast_arrays(*(np.asarray(a) for a in (i, j, k, l)))
        fourth = np.einsum("ri,ri,ri,ri->i", Z[:, i.ravel()], Z[:, j.ravel()],
                           Z[:, k.ravel()], Z[:, l.ravel()]) / Z.shape[0]
        return fourth.reshape(i.shape) - second[i, j] * second[k, l]

    return moments


def cov_of_observed_covariances(pattern: ObservationPattern, fourth_moments: FourthMoments,
                                pair1: Tuple[int, int], pair2: Tuple[int, int],
                                sets: Optional[PairSets] = None) -> float:
    """Cov(S_ij, S_kl) = n_ijkl / (n_ij n_kl) * Cov(Z_i Z_j, Z_k Z_l)."""
    if sets is None:
        sets = pair_sets(pattern)
    (i, j), (k, l) = pair1, pair2
    if not (sets.contains(i, j) and sets.contains(k, l)):
        raise NotObserved(f"pairs {pair1} and {pair2} must both be observed")
    n_ijkl = quad_sample_size(pattern, i, j, k, l)
    if n_ijkl == 0:
        return 0.0
    weight = n_ijkl / float(pattern.pair_counts[i, j] * pattern.pair_counts[k, l])
    return float(weight * fourth_moments(np.asarray(i), np.asarray(j), np.asarray(k), np.asarray(l)))


def is_positive_definite(A: np.ndarray) -> bool:
    try:
        linalg.cho_factor(A, lower=True, check_finite=True)
        return True
    except (linalg.LinAlgError, ValueError):
        return False


def pd_correction(A: np.ndarray, delta: Optional[float] = None,
                  return_steps: bool = False):
    """Positive-definite correction by diagonal loading of the correlation scale.

    ``B = D^-1/2 A D^-1/2`` gets ``delta * I`` added until its smallest
    eigenvalue exceeds ``PD_EIG_TOL * p``; the result is rescaled back to unit
    diagonal and then to ``diag(A)``. Inputs that already pass are returned
    unchanged (as a copy).

    Parameters
    ----------
    A : ndarray
        Symmetric matrix with positive diagonal.
    delta : float, optional
        Loading step, ``Config.PD_DELTA`` by default.
    return_steps : bool
        Also return the number of loading steps taken.
    """
    if delta is None:
        delta = Config.PD_DELTA
    if delta <= 0:
        raise DomainError("delta must be positive")
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise NotSymmetric(f"expected a square matrix, got shape {A.shape}")
    scale_ref = max(np.max(np.abs(A)), 1.0)
    if not np.allclose(A, A.T, rtol=0.0, atol=1e-12 * scale_ref):
        raise NotSymmetric("matrix is not symmetric")
    d = np.diag(A).copy()
    if np.any(~(d > 0)):
        raise NonpositiveDiagonal("matrix diagonal must be strictly positive")

    p = A.shape[0]
    threshold = Config.PD_EIG_TOL * p
    inv_sqrt = 1.0 / np.sqrt(d)
    B = A * np.outer(inv_sqrt, inv_sqrt)
    B = (B + B.T) / 2.0
    lam_min = linalg.eigvalsh(B, subset_by_index=[0, 0])[0]
    if lam_min > threshold:
        return (A.copy(), 0) if return_steps else A.copy()

    # smallest m with lam_min + m * delta > threshold, then confirm numerically
    steps = int(np.floor((threshold - lam_min) / delta)) + 1
    while linalg.eigvalsh(B + steps * delta * np.eye(p), subset_by_index=[0, 0])[0] <= threshold:
        steps += 1
    loaded = B + steps * delta * np.eye(p)
    rescale = 1.0 / np.sqrt(np.diag(loaded))
    corrected = loaded * np.outer(rescale, rescale)
    out = corrected * np.outer(np.sqrt(d), np.sqrt(d))
    out = (out + out.T) / 2.0
    np.fill_diagonal(out, d)
    logger.debug(f"PD correction took {steps} loading steps (lambda_min was {lam_min:.3e})")
    return (out, steps) if return_steps else out
