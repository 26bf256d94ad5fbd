"""
Asymptotic covariance of Fisher-transformed observed correlations.

For the vector of observed correlations over U (pairs i < j in O),
sqrt(n) (g(C_hat_U) - g(C_U)) is asymptotically N(0, Psi) with

    Psi = F J H J' F

where H holds overlap-weighted fourth-moment covariances of the centered
products Z_i Z_j over U-bar, J is the Jacobian of correlations with respect to
covariances, and F = diag(1 / (1 - C_ij^2)) is the Fisher derivative.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg, sparse

from config.settings import Config
from modules.corestats import (
    FourthMoments,
    PartialSymmetricMatrix,
    gaussian_fourth_moments,
    observed_correlations,
    centered_values,
)
from modules.dataset import IncompleteDataset, ObservationPattern, PairSets, pair_sets
from utils.errors import (
    AsymmetricResult,
    DegeneratePair,
    InputError,
    MissingMomentEntry,
    NotObserved,
    PairLimitExceeded,
    SingularSigma,
)

logger = logging.getLogger(__name__)

SUBSTITUTION_POLICIES = ("baseline", "zero", "strict")


@dataclass(frozen=True, eq=False)
class PsiComponents:
    H: np.ndarray
    J: sparse.csr_matrix
    f_diag: np.ndarray
    psi: np.ndarray
    sets: PairSets
    substitution: str = "none"
    n_substituted: int = 0

    @property
    def F(self) -> np.ndarray:
        return np.diag(self.f_diag)

    @property
    def u_pairs(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.sets.upper

    @property
    def ubar_pairs(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.sets.upper_with_diag

    def pair_labels(self, names: Sequence[str]) -> List[str]:
        rows, cols = self.u_pairs
        return [f"{names[i]}:{names[j]}" for i, j in zip(rows, cols)]


def _check_limit(sets: PairSets) -> None:
    size = sets.upper[0].size
    if size > Config.DENSE_PAIR_LIMIT:
        raise PairLimitExceeded(f"|U| = {size} exceeds the dense pair limit {Config.DENSE_PAIR_LIMIT}")
    if size == 0:
        raise InputError("no observed off-diagonal pairs")


def overlap_weights(sets: PairSets) -> np.ndarray:
    """c_ijkl for every pair of U-bar entries.

    c = sum_t I_ij^t I_kl^t pi_t / ((sum_t I_ij^t pi_t)(sum_t I_kl^t pi_t)),
    which equals n * n_ijkl / (n_ij * n_kl) for block patterns.
    """
    pattern = sets.pattern
    rows, cols = sets.upper_with_diag
    member = (pattern.membership[:, rows] & pattern.membership[:, cols]).T.astype(float)
    pi = pattern.pi
    numerator = (member * pi) @ member.T
    marginal = member @ pi
    return numerator / np.outer(marginal, marginal)


def c_weight(pattern: ObservationPattern, pair1: Tuple[int, int], pair2: Tuple[int, int],
             sets: Optional[PairSets] = None) -> float:
    """Overlap weight c_ijkl for two observed pairs."""
    if sets is None:
        sets = pair_sets(pattern)
    (i, j), (k, l) = sorted(pair1), sorted(pair2)
    if not (sets.contains(i, j) and sets.contains(k, l)):
        raise NotObserved(f"pairs {pair1} and {pair2} must both be observed")
    first = pattern.membership[:, i] & pattern.membership[:, j]
    second = pattern.membership[:, k] & pattern.membership[:, l]
    pi = pattern.pi
    both = first & second
    return float(np.sum(pi[both]) / (np.sum(pi[first]) * np.sum(pi[second])))


def correlation_jacobian(sigma: np.ndarray, sets: PairSets) -> sparse.csr_matrix:
    """dC_ij / dSigma_kl over U x U-bar; three nonzeros per row."""
    rows, cols = sets.upper
    index = sets.ubar_index
    s_ii, s_jj, s_ij = sigma[rows, rows], sigma[cols, cols], sigma[rows, cols]
    d_ij = 1.0 / np.sqrt(s_ii * s_jj)
    d_ii = -s_ij / (2.0 * s_ii ** 1.5 * np.sqrt(s_jj))
    d_jj = -s_ij / (2.0 * s_jj ** 1.5 * np.sqrt(s_ii))
    m = rows.size
    data = np.column_stack([d_ij, d_ii, d_jj]).ravel()
    row_index = np.repeat(np.arange(m), 3)
    col_index = np.column_stack([index[rows, cols], index[rows, rows], index[cols, cols]]).ravel()
    return sparse.csr_matrix((data, (row_index, col_index)), shape=(m, index.max() + 1))


def _assemble(H: np.ndarray, J: sparse.csr_matrix, f_diag: np.ndarray) -> np.ndarray:
    JH = np.asarray(J @ H)
    psi = np.asarray(J @ JH.T).T
    psi = f_diag[:, None] * psi * f_diag[None, :]
    scale = max(np.max(np.abs(psi)), 1e-300)
    asymmetry = np.max(np.abs(psi - psi.T)) / scale
    if asymmetry >= 1e-8:
        raise AsymmetricResult(f"Psi asymmetry {asymmetry:.3e} exceeds tolerance")
    return (psi + psi.T) / 2.0


def _index_grids(sets: PairSets):
    rows, cols = sets.upper_with_diag
    return rows[:, None], cols[:, None], rows[None, :], cols[None, :]


def _fisher_derivative(corr: np.ndarray, sets: PairSets) -> np.ndarray:
    rows, cols = sets.upper
    return 1.0 / (1.0 - corr[rows, cols] ** 2)


def psi_oracle(pattern: ObservationPattern, true_sigma: np.ndarray,
               fourth_moments: Optional[FourthMoments] = None,
               sets: Optional[PairSets] = None) -> PsiComponents:
    """Psi from the true covariance (Gaussian fourth moments unless given)."""
    sigma = np.asarray(true_sigma, dtype=float)
    if sigma.shape != (pattern.p, pattern.p):
        raise InputError(f"Sigma must be {pattern.p} x {pattern.p}")
    try:
        linalg.cho_factor(sigma)
    except linalg.LinAlgError:
        raise SingularSigma("true Sigma is not positive definite")
    if sets is None:
        sets = pair_sets(pattern)
    _check_limit(sets)
    if fourth_moments is None:
        fourth_moments = gaussian_fourth_moments(sigma)

    H = overlap_weights(sets) * fourth_moments(*_index_grids(sets))
    J = correlation_jacobian(sigma, sets)
    scale = 1.0 / np.sqrt(np.diag(sigma))
    corr = sigma * np.outer(scale, scale)
    f_diag = _fisher_derivative(corr, sets)
    return PsiComponents(H=H, J=J, f_diag=f_diag, psi=_assemble(H, J, f_diag), sets=sets)


def psi_empirical(data: IncompleteDataset, cov: PartialSymmetricMatrix) -> PsiComponents:
    """Plug-in Psi from centered sample fourth moments."""
    sets = cov.pair_sets
    _check_limit(sets)
    counts = data.pattern.pair_counts
    rows, cols = sets.upper
    if np.any(counts[rows, cols] < 2):
        raise DegeneratePair("every pair in U needs at least 2 joint samples")

    # M_i over N_ii, also inside the fourth moments
    Z = centered_values(data, None)
    observed = data.mask
    ubar_rows, ubar_cols = sets.upper_with_diag
    products = Z[:, ubar_rows] * Z[:, ubar_cols]
    joint = (observed[:, ubar_rows] & observed[:, ubar_cols]).astype(float)

    second = products.sum(axis=0) / joint.sum(axis=0)
    n_quad = joint.T @ joint
    with np.errstate(divide="ignore", invalid="ignore"):
        fourth = np.where(n_quad > 0, (products.T @ products) / n_quad, 0.0)
    weights = overlap_weights(sets)
    H = np.where(weights > 0, weights * (fourth - np.outer(second, second)), 0.0)

    sigma = cov.as_dense(fill=0.0)
    J = correlation_jacobian(sigma, sets)
    f_diag = _fisher_derivative(observed_correlations(cov).as_dense(0.0), sets)
    return PsiComponents(H=H, J=J, f_diag=f_diag, psi=_assemble(H, J, f_diag), sets=sets)


def psi_gaussian(pattern: ObservationPattern, cov: PartialSymmetricMatrix,
                 baseline_corr: Optional[np.ndarray] = None,
                 policy: Optional[str] = None) -> PsiComponents:
    """Plug-in Psi under Gaussianity, H = c (S_ik S_jl + S_il S_jk).

    Cross terms S_ik outside O are filled per ``policy``: ``baseline`` rescales
    the supplied baseline correlation, ``zero`` uses 0, ``strict`` raises.
    """
    sets = cov.pair_sets
    _check_limit(sets)
    if policy is None:
        policy = "baseline" if baseline_corr is not None else "zero"
    if policy not in SUBSTITUTION_POLICIES:
        raise InputError(f"unknown substitution policy {policy!r}")
    if policy == "baseline" and baseline_corr is None:
        raise InputError("baseline substitution needs a baseline correlation matrix")

    d = cov.diagonal
    sigma = cov.values.copy()
    unobserved = ~sets.observed
    if policy == "baseline":
        sigma[unobserved] = (np.asarray(baseline_corr) * np.sqrt(np.outer(d, d)))[unobserved]
    elif policy == "zero":
        sigma[unobserved] = 0.0
    else:
        sigma[unobserved] = np.nan

    I, J_, K, L = _index_grids(sets)
    weights = overlap_weights(sets)
    needs_fill = weights > 0
    touched = needs_fill & (unobserved[I, K] | unobserved[J_, L] | unobserved[I, L] | unobserved[J_, K])
    n_substituted = int(touched.sum())
    if n_substituted and policy == "strict":
        raise MissingMomentEntry(f"{n_substituted} Psi entries need covariances outside O")
    if n_substituted:
        logger.info(f"Filled {n_substituted} Gaussian Psi entries with {policy} cross terms")

    with np.errstate(invalid="ignore"):
        isserlis = sigma[I, K] * sigma[J_, L] + sigma[I, L] * sigma[J_, K]
    H = np.where(needs_fill, weights * np.nan_to_num(isserlis), 0.0)

    J = correlation_jacobian(cov.as_dense(0.0), sets)
    f_diag = _fisher_derivative(observed_correlations(cov).as_dense(0.0), sets)
    return PsiComponents(H=H, J=J, f_diag=f_diag, psi=_assemble(H, J, f_diag), sets=sets,
                         substitution=policy, n_substituted=n_substituted)


def measurement_error_covariance(cov: PartialSymmetricMatrix, data: Optional[IncompleteDataset] = None,
                                 estimator: str = "gaussian",
                                 baseline_corr: Optional[np.ndarray] = None,
                                 return_components: bool = False):
    """Phi = Psi / n over U, the GLS measurement-error covariance.

    With ``return_components`` the Psi components are returned alongside Phi
    so callers can see how many Gaussian entries were substituted.
    """
    if estimator == "empirical":
        if data is None:
            raise InputError("the empirical Psi estimator needs the dataset")
        components = psi_empirical(data, cov)
    elif estimator == "gaussian":
        components = psi_gaussian(cov.pattern, cov, baseline_corr=baseline_corr)
    else:
        raise InputError(f"unknown Psi estimator {estimator!r}")
    phi = components.psi / cov.pattern.n
    if return_components:
        return phi, components
    return phi
