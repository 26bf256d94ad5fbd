"""
Completion of an incomplete covariance matrix from auxiliary pair covariates.

Pipeline for an observed covariance Sigma_O and covariates W:

    Step 1  observed correlations C_hat over O
    Step 2  regress g(C_hat_ij) on W_ij over U (g = Fisher transform)
    Step 3  baseline matrix C_bar_ij = tanh(f_hat(W_ij)), unit diagonal
    Step 4  completed matrix C_tilde = C_hat on O, C_bar elsewhere
    Step 5  PD-correct C_bar and C_tilde, then C(alpha) = alpha C_bar + (1 - alpha) C_tilde
            and Sigma(alpha) = D^1/2 C(alpha) D^1/2 with D = diag(Sigma_O)

The tuning weight alpha (and the baseline model) is chosen by block-wise
N-fold cross-validation; standard errors come from nonparametric or Gaussian
parametric bootstrap replicates that re-run the whole selection.
"""

import logging
from dataclasses import dataclass, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from sklearn.model_selection import KFold

from config.settings import Config
from modules.corestats import (
    PartialSymmetricMatrix,
    fisher,
    fisher_inv,
    observed_correlations,
    observed_sample_covariance,
    pd_correction,
)
from modules.dataset import AuxiliaryCovariates, IncompleteDataset, ObservationPattern, pair_sets
from modules.psi import measurement_error_covariance
from modules.regression import FittedBaseline, RegressionSpec, fit_baseline
from utils.errors import (
    AllFoldsDegenerate,
    DimensionMismatch,
    DomainError,
    FoldTooSmall,
    GridEmpty,
    InputError,
    NoAuxCoverage,
    NonPDBlock,
    NumericalError,
    PairLimitExceeded,
    ReplicateFailure,
)
from utils.helpers import derive_seed, parallel_map, replicate_rng

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Diagnostics:
    baseline_pd_steps: int = 0
    completed_pd_steps: int = 0
    n_clamped: int = 0
    n_fit_pairs: int = 0
    n_uncovered_observed: int = 0
    phi_substitution: Optional[str] = None
    warnings: Tuple[str, ...] = ()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "baseline_pd_steps": self.baseline_pd_steps,
            "completed_pd_steps": self.completed_pd_steps,
            "clamped_correlations": self.n_clamped,
            "regression_pairs": self.n_fit_pairs,
            "observed_pairs_without_covariates": self.n_uncovered_observed,
            "phi_substitution": self.phi_substitution,
            "warnings": list(self.warnings),
        }


@dataclass(frozen=True, eq=False)
class CvReport:
    """Cross-validated risk over (model, alpha) and the selected point."""

    alpha_grid: np.ndarray
    specs: Tuple[RegressionSpec, ...]
    risk: np.ndarray
    fold_losses: np.ndarray
    n_folds: int
    seed: int
    selected_alpha: float
    selected_spec: RegressionSpec
    failed: Tuple[Tuple[str, str], ...] = ()
    degenerate_folds: Tuple[int, ...] = ()

    @property
    def selected(self) -> Tuple[float, RegressionSpec]:
        return self.selected_alpha, self.selected_spec

    @property
    def grid(self) -> List[Dict[str, Any]]:
        return [{"alpha": float(alpha), "model": spec.label, "tau": spec.tau}
                for spec in self.specs for alpha in self.alpha_grid]

    def risk_curve(self) -> List[Dict[str, Any]]:
        curve = []
        for s, spec in enumerate(self.specs):
            for a, alpha in enumerate(self.alpha_grid):
                if np.isfinite(self.risk[s, a]):
                    curve.append({"model": spec.label, "tau": spec.tau,
                                  "alpha": float(alpha), "risk": float(self.risk[s, a])})
        return curve

    def to_dict(self) -> Dict[str, Any]:
        return {
            "alpha_cv": self.selected_alpha,
            "model_cv": self.selected_spec.label,
            "tau_cv": self.selected_spec.tau,
            "folds": self.n_folds,
            "seed": self.seed,
            "risk_curve": self.risk_curve(),
            "fold_losses": self.fold_losses,
            "failed_models": [{"model": label, "reason": reason} for label, reason in self.failed],
            "degenerate_folds": list(self.degenerate_folds),
        }


@dataclass(frozen=True, eq=False)
class AuxCovResult:
    alpha: float
    baseline_corr: np.ndarray
    completed_corr: np.ndarray
    final_corr: np.ndarray
    final_cov: np.ndarray
    model: FittedBaseline
    spec: RegressionSpec
    diagnostics: Diagnostics
    cv: Optional[CvReport] = None

    def to_dict(self) -> Dict[str, Any]:
        report = {
            "alpha": self.alpha,
            "model": self.model.to_dict(),
            "diagnostics": self.diagnostics.to_dict(),
        }
        if self.cv is not None:
            report["cv"] = self.cv.to_dict()
            report["alpha_cv"] = self.cv.selected_alpha
        return report


@dataclass(frozen=True, eq=False)
class AuxCovFit:
    """The alpha-independent part of the pipeline (steps 1 to 5 before mixing)."""

    observed_corr: PartialSymmetricMatrix
    variances: np.ndarray
    raw_baseline: np.ndarray
    raw_completed: np.ndarray
    baseline_corr: np.ndarray
    completed_corr: np.ndarray
    model: FittedBaseline
    spec: RegressionSpec
    diagnostics: Diagnostics

    def corr_at(self, alpha: float) -> np.ndarray:
        if not 0.0 <= alpha <= 1.0:
            raise DomainError(f"alpha must lie in [0, 1], got {alpha}")
        corr = alpha * self.baseline_corr + (1.0 - alpha) * self.completed_corr
        np.fill_diagonal(corr, 1.0)
        return corr

    def combine(self, alpha: float) -> AuxCovResult:
        corr = self.corr_at(alpha)
        sd = np.sqrt(self.variances)
        cov = corr * np.outer(sd, sd)
        np.fill_diagonal(cov, self.variances)
        return AuxCovResult(alpha=float(alpha), baseline_corr=self.baseline_corr,
                            completed_corr=self.completed_corr, final_corr=corr, final_cov=cov,
                            model=self.model, spec=self.spec, diagnostics=self.diagnostics)


def prepare_auxcov(cov_O: PartialSymmetricMatrix, aux: AuxiliaryCovariates, spec: RegressionSpec,
                   data: Optional[IncompleteDataset] = None,
                   phi: Optional[np.ndarray] = None) -> AuxCovFit:
    """Fit the baseline and build the PD-corrected baseline and completed matrices."""
    sets = cov_O.pair_sets
    p = sets.p
    if aux.p != p:
        raise DimensionMismatch(f"covariates are for p={aux.p}, covariance has p={p}")
    warnings: List[str] = []

    # Step 1
    corr = observed_correlations(cov_O)

    rows, cols = sets.upper
    covered = aux.covers(rows, cols) if rows.size else np.zeros(0, dtype=bool)
    miss_rows, miss_cols = sets.missing_upper
    if miss_rows.size and not aux.covers(miss_rows, miss_cols).all():
        lacking = int((~aux.covers(miss_rows, miss_cols)).sum())
        raise NoAuxCoverage(f"{lacking} unobserved pairs have no auxiliary covariates")
    n_uncovered = int((~covered).sum())
    if n_uncovered:
        message = f"{n_uncovered} observed pairs lack covariates and keep their observed correlation"
        logger.warning(message)
        warnings.append(message)

    # Step 2
    fit_rows, fit_cols = rows[covered], cols[covered]
    y = fisher(corr.values[fit_rows, fit_cols])
    W = aux.values_for(fit_rows, fit_cols)
    substitution = None
    if spec.kind == "gls":
        if phi is None:
            phi = spec.phi
        if phi is None:
            if rows.size > Config.DENSE_PAIR_LIMIT:
                raise PairLimitExceeded(f"GLS needs |U| <= {Config.DENSE_PAIR_LIMIT}, got {rows.size}")
            phi, components = measurement_error_covariance(cov_O, data, estimator=spec.phi_estimator,
                                                           return_components=True)
            substitution = components.substitution if components.n_substituted else "none"
        phi = np.asarray(phi, dtype=float)
        if phi.shape != (rows.size, rows.size):
            raise DimensionMismatch(f"Phi must be |U| x |U| = {rows.size} x {rows.size}")
        phi = phi[np.ix_(covered, covered)]
    model = fit_baseline(spec, y, W, phi)
    warnings.extend(model.warnings)

    # Step 3
    all_rows, all_cols = np.triu_indices(p, 1)
    has_w = aux.covers(all_rows, all_cols)
    baseline = np.eye(p)
    predicted = fisher_inv(model.predict(aux.values_for(all_rows[has_w], all_cols[has_w])))
    baseline[all_rows[has_w], all_cols[has_w]] = predicted
    baseline[all_rows[~has_w], all_cols[~has_w]] = corr.values[all_rows[~has_w], all_cols[~has_w]]
    baseline = np.triu(baseline, 1) + np.triu(baseline, 1).T + np.eye(p)

    # Step 4
    completed = np.where(sets.observed, corr.values, baseline)
    np.fill_diagonal(completed, 1.0)

    # Step 5
    baseline_pd, baseline_steps = pd_correction(baseline, return_steps=True)
    completed_pd, completed_steps = pd_correction(completed, return_steps=True)
    for name, steps in (("baseline", baseline_steps), ("completed", completed_steps)):
        if steps:
            message = f"PD correction of the {name} correlation took {steps} loading steps"
            logger.info(message)
            warnings.append(message)

    diagnostics = Diagnostics(baseline_pd_steps=baseline_steps, completed_pd_steps=completed_steps,
                              n_clamped=corr.n_clamped, n_fit_pairs=int(covered.sum()),
                              n_uncovered_observed=n_uncovered, phi_substitution=substitution,
                              warnings=tuple(warnings))
    return AuxCovFit(observed_corr=corr, variances=cov_O.diagonal, raw_baseline=baseline,
                     raw_completed=completed, baseline_corr=baseline_pd, completed_corr=completed_pd,
                     model=model, spec=spec, diagnostics=diagnostics)


def run_auxcov(cov_O: PartialSymmetricMatrix, aux: AuxiliaryCovariates, alpha: float,
               spec: RegressionSpec, data: Optional[IncompleteDataset] = None,
               phi: Optional[np.ndarray] = None) -> AuxCovResult:
    """Complete ``cov_O`` at a fixed alpha."""
    if not 0.0 <= alpha <= 1.0:
        raise DomainError(f"alpha must lie in [0, 1], got {alpha}")
    return prepare_auxcov(cov_O, aux, spec, data=data, phi=phi).combine(alpha)


# --- cross-validation ---------------------------------------------------------

def squared_loss(estimate: np.ndarray, target: np.ndarray) -> float:
    return float(np.sum((estimate - target) ** 2))


def absolute_loss(estimate: np.ndarray, target: np.ndarray) -> float:
    return float(np.sum(np.abs(estimate - target)))


LOSSES: Dict[str, Callable[[np.ndarray, np.ndarray], float]] = {
    "squared": squared_loss,
    "absolute": absolute_loss,
}


def _resolve_loss(loss: Union[str, Callable]) -> Callable[[np.ndarray, np.ndarray], float]:
    if callable(loss):
        return loss
    if loss not in LOSSES:
        raise InputError(f"unknown loss {loss!r}; expected one of {sorted(LOSSES)}")
    return LOSSES[loss]


def select_grid_point(risk: np.ndarray, alpha_grid: np.ndarray,
                      specs: Sequence[RegressionSpec]) -> Tuple[int, int]:
    """Index (spec, alpha) of the minimum risk; ties go to smallest alpha, then smallest tau."""
    finite = np.isfinite(risk)
    if not finite.any():
        raise AllFoldsDegenerate("no finite risk on the grid")
    best = np.min(risk[finite])
    tolerance = 1e-12 * max(1.0, abs(best))
    candidates = [(float(alpha_grid[a]), specs[s].tau or 0, s, a)
                  for s, a in zip(*np.nonzero(finite & (risk <= best + tolerance)))]
    _, _, s, a = min(candidates)
    return int(s), int(a)


def check_alpha_grid(alpha_grid: Optional[Sequence[float]]) -> np.ndarray:
    if alpha_grid is None:
        alpha_grid = Config.default_alpha_grid()
    grid = np.asarray(list(alpha_grid), dtype=float)
    if grid.size == 0:
        raise GridEmpty("alpha grid is empty")
    if np.any((grid < 0) | (grid > 1)):
        raise DomainError("alpha grid values must lie in [0, 1]")
    return grid


def split_folds(pattern: ObservationPattern, n_folds: int, seed: int) -> List[Tuple[List[np.ndarray], List[np.ndarray]]]:
    """Per-block shuffled contiguous folds; returns (train_rows, test_rows) per fold."""
    if n_folds < 2:
        raise InputError("cross-validation needs at least 2 folds")
    too_small = [k for k, n_k in enumerate(pattern.counts) if n_k < n_folds]
    if too_small:
        raise FoldTooSmall(f"blocks {too_small} have fewer than {n_folds} samples")
    per_block = []
    for k, n_k in enumerate(pattern.counts):
        block_seed = derive_seed(seed, k)
        splitter = KFold(n_splits=n_folds, shuffle=True, random_state=block_seed)
        per_block.append(list(splitter.split(np.arange(n_k))))
    return [([per_block[k][h][0] for k in range(pattern.K)],
             [per_block[k][h][1] for k in range(pattern.K)]) for h in range(n_folds)]


def _fold_target(cov: PartialSymmetricMatrix, outer_observed: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Held-out correlations and the unordered O pairs i < j they are defined on."""
    d = cov.diagonal
    positive = d > 0
    valid = cov.observed & outer_observed & np.outer(positive, positive)
    valid = np.triu(valid, 1)
    scale = np.sqrt(np.where(positive, d, 1.0))
    bound = 1.0 - Config.CORR_CLAMP_EPS
    target = np.clip(np.nan_to_num(cov.values) / np.outer(scale, scale), -bound, bound)
    return target, valid


def cross_validate(data: IncompleteDataset, aux: AuxiliaryCovariates,
                   specs: Sequence[RegressionSpec], alpha_grid: Optional[Sequence[float]] = None,
                   n_folds: Optional[int] = None, loss: Union[str, Callable] = "squared",
                   seed: int = 0, threads: Optional[int] = None,
                   mean: Optional[np.ndarray] = None) -> CvReport:
    """N-fold CV risk over every (spec, alpha) grid point."""
    specs = tuple(specs)
    if not specs:
        raise GridEmpty("no candidate regression models")
    grid = check_alpha_grid(alpha_grid)
    n_folds = Config.CV_FOLDS if n_folds is None else int(n_folds)
    threads = Config.THREADS if threads is None else threads
    loss_fn = _resolve_loss(loss)
    outer_observed = pair_sets(data.pattern).observed
    folds = split_folds(data.pattern, n_folds, seed)

    def evaluate(h: int):
        train_rows, test_rows = folds[h]
        train, test = data.take(train_rows), data.take(test_rows)
        target, valid = _fold_target(observed_sample_covariance(test, mean), outer_observed)
        if not valid.any():
            return None, {}
        cov_train = observed_sample_covariance(train, mean)
        losses = np.full((len(specs), grid.size), np.nan)
        failures = {}
        for s, spec in enumerate(specs):
            try:
                fit = prepare_auxcov(cov_train, aux, spec, data=train)
            except (NumericalError, InputError) as e:
                failures[spec.label] = f"{type(e).__name__}: {e}"
                continue
            for a, alpha in enumerate(grid):
                losses[s, a] = loss_fn(fit.corr_at(alpha)[valid], target[valid])
        return losses, failures

    logger.info(f"Cross-validating {len(specs)} model(s) x {grid.size} alpha values over {n_folds} folds")
    outcomes = parallel_map(evaluate, range(n_folds), threads)

    degenerate = tuple(h for h, (losses, _) in enumerate(outcomes) if losses is None)
    if len(degenerate) == n_folds:
        raise AllFoldsDegenerate("no fold has a held-out observed pair with two or more samples")
    fold_losses = np.full((n_folds, len(specs), grid.size), np.nan)
    failed: Dict[str, str] = {}
    for h, (losses, failures) in enumerate(outcomes):
        if losses is not None:
            fold_losses[h] = losses
        for label, reason in failures.items():
            failed.setdefault(label, f"fold {h}: {reason}")
    for label, reason in failed.items():
        logger.warning(f"Model {label} dropped from the CV grid ({reason})")

    usable = np.array([h not in degenerate for h in range(n_folds)])
    risk = np.full((len(specs), grid.size), np.nan)
    for s, spec in enumerate(specs):
        if spec.label not in failed:
            risk[s] = fold_losses[usable, s].mean(axis=0)
    if not np.isfinite(risk).any():
        raise AllFoldsDegenerate("every candidate model failed in some fold")

    s, a = select_grid_point(risk, grid, specs)
    logger.info(f"CV selected alpha={grid[a]:.3f}, model={specs[s].label} (risk {risk[s, a]:.6g})")
    return CvReport(alpha_grid=grid, specs=specs, risk=risk, fold_losses=fold_losses, n_folds=n_folds,
                    seed=int(seed), selected_alpha=float(grid[a]), selected_spec=specs[s],
                    failed=tuple(failed.items()), degenerate_folds=degenerate)


def auxcov_cv(data: IncompleteDataset, aux: AuxiliaryCovariates, specs: Sequence[RegressionSpec],
              alpha_grid: Optional[Sequence[float]] = None, n_folds: Optional[int] = None,
              loss: Union[str, Callable] = "squared", seed: int = 0, threads: Optional[int] = None,
              mean: Optional[np.ndarray] = None) -> AuxCovResult:
    """Select (alpha, model) by CV, then complete with the full data."""
    report = cross_validate(data, aux, specs, alpha_grid, n_folds, loss, seed, threads, mean)
    cov = observed_sample_covariance(data, mean)
    result = run_auxcov(cov, aux, report.selected_alpha, report.selected_spec, data=data)
    return replace(result, cv=report)


# --- bootstrap ----------------------------------------------------------------

def _covariance_to_correlation(cov: np.ndarray) -> np.ndarray:
    scale = 1.0 / np.sqrt(np.diag(cov))
    return cov * np.outer(scale, scale)


FUNCTIONALS: Dict[str, Callable[[np.ndarray], Union[float, np.ndarray]]] = {
    "entrywise-cov": lambda cov: cov,
    "entrywise-corr": _covariance_to_correlation,
}


def _resolve_functional(phi: Union[str, Callable]) -> Callable[[np.ndarray], Union[float, np.ndarray]]:
    if callable(phi):
        return phi
    if phi not in FUNCTIONALS:
        raise InputError(f"unknown functional {phi!r}; expected one of {sorted(FUNCTIONALS)}")
    return FUNCTIONALS[phi]


@dataclass(frozen=True, eq=False)
class BootstrapReport:
    variant: str
    se: Union[float, np.ndarray]
    replicates: np.ndarray
    replicate_ids: Tuple[int, ...]
    alphas: np.ndarray
    n_requested: int
    n_skipped: int
    seed: int

    def to_dict(self) -> Dict[str, Any]:
        return {
            "variant": self.variant,
            "replicates_requested": self.n_requested,
            "replicates_skipped": self.n_skipped,
            "seed": self.seed,
            "alpha_cv_mean": float(np.mean(self.alphas)),
            "alpha_cv_replicates": self.alphas,
        }


def _run_replicates(variant: str, draw: Callable[[np.random.Generator], IncompleteDataset],
                    aux: AuxiliaryCovariates, specs: Sequence[RegressionSpec],
                    alpha_grid: Optional[Sequence[float]], n_folds: Optional[int],
                    phi: Union[str, Callable], B: int, seed: int, loss: Union[str, Callable],
                    threads: Optional[int], replicate_ids: Optional[Sequence[int]],
                    mean: Optional[np.ndarray] = None) -> BootstrapReport:
    if B < 2:
        raise InputError("bootstrap needs at least 2 replicates")
    functional = _resolve_functional(phi)
    ids = list(range(B)) if replicate_ids is None else [int(b) for b in replicate_ids]
    if len(ids) != B:
        raise InputError(f"{len(ids)} replicate ids for B={B}")
    threads = Config.THREADS if threads is None else threads

    def one(b: int):
        rng = replicate_rng(seed, b)
        cv_seed = derive_seed(seed, b, 1)
        try:
            sample = draw(rng)
            result = auxcov_cv(sample, aux, specs, alpha_grid, n_folds, loss, cv_seed, threads=1, mean=mean)
            return np.asarray(functional(result.final_cov), dtype=float), result.alpha
        except (NumericalError, InputError) as e:
            logger.warning(f"Bootstrap replicate {b} skipped: {type(e).__name__}: {e}")
            return None

    logger.info(f"Running {B} {variant} bootstrap replicates")
    outcomes = parallel_map(one, ids, threads)
    kept = [(b, outcome) for b, outcome in zip(ids, outcomes) if outcome is not None]
    n_skipped = B - len(kept)
    if n_skipped > Config.BOOTSTRAP_MAX_FAILURE_RATE * B or len(kept) < 2:
        raise ReplicateFailure(f"{n_skipped} of {B} bootstrap replicates failed")
    if n_skipped:
        logger.warning(f"{n_skipped} of {B} bootstrap replicates skipped")

    values = np.stack([outcome[0] for _, outcome in kept])
    se = np.std(values, axis=0, ddof=1)
    return BootstrapReport(variant=variant, se=float(se) if se.ndim == 0 else se, replicates=values,
                           replicate_ids=tuple(b for b, _ in kept),
                           alphas=np.array([outcome[1] for _, outcome in kept]),
                           n_requested=B, n_skipped=n_skipped, seed=int(seed))


def bootstrap_nonparametric(data: IncompleteDataset, aux: AuxiliaryCovariates,
                            specs: Sequence[RegressionSpec], alpha_grid: Optional[Sequence[float]] = None,
                            n_folds: Optional[int] = None, phi: Union[str, Callable] = "entrywise-cov",
                            B: Optional[int] = None, seed: int = 0, loss: Union[str, Callable] = "squared",
                            threads: Optional[int] = None,
                            replicate_ids: Optional[Sequence[int]] = None,
                            mean: Optional[np.ndarray] = None) -> BootstrapReport:
    """Resample each block with replacement at its own size and redo CV + completion."""
    B = Config.BOOTSTRAP_REPLICATES if B is None else int(B)
    counts = data.pattern.counts

    def draw(rng: np.random.Generator) -> IncompleteDataset:
        return data.take([rng.integers(0, n_k, size=n_k) for n_k in counts])

    return _run_replicates("nonparametric", draw, aux, specs, alpha_grid, n_folds, phi, B, seed,
                           loss, threads, replicate_ids, mean)


def bootstrap_parametric(result: AuxCovResult, pattern: ObservationPattern, aux: AuxiliaryCovariates,
                         specs: Sequence[RegressionSpec], alpha_grid: Optional[Sequence[float]] = None,
                         n_folds: Optional[int] = None, phi: Union[str, Callable] = "entrywise-cov",
                         B: Optional[int] = None, seed: int = 0, loss: Union[str, Callable] = "squared",
                         threads: Optional[int] = None, names: Optional[Sequence[str]] = None,
                         replicate_ids: Optional[Sequence[int]] = None,
                         mean: Optional[np.ndarray] = None) -> BootstrapReport:
    """Draw block k as n_k Gaussian samples from the fitted covariance restricted to V_k.

    With a known ``mean`` the draws are centred on it and every replicate is
    refitted with that mean; otherwise draws are centred at zero.
    """
    B = Config.BOOTSTRAP_REPLICATES if B is None else int(B)
    if mean is not None:
        mean = np.asarray(mean, dtype=float)
        if mean.shape != (pattern.p,):
            raise DimensionMismatch(f"mean must have length {pattern.p}, got shape {mean.shape}")
    center = np.zeros(pattern.p) if mean is None else mean
    factors = []
    for k, subset in enumerate(pattern.subsets):
        block = result.final_cov[np.ix_(subset, subset)]
        try:
            factors.append(np.linalg.cholesky(block))
        except np.linalg.LinAlgError:
            raise NonPDBlock(f"fitted covariance is not positive definite on block {k}")

    def draw(rng: np.random.Generator) -> IncompleteDataset:
        blocks = [rng.standard_normal((n_k, len(subset))) @ factor.T + center[list(subset)]
                  for n_k, subset, factor in zip(pattern.counts, pattern.subsets, factors)]
        return IncompleteDataset.from_blocks(blocks, pattern.subsets, pattern.p, names)

    return _run_replicates("parametric", draw, aux, specs, alpha_grid, n_folds, phi, B, seed,
                           loss, threads, replicate_ids, mean)
