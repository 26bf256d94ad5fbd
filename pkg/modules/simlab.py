"""
Simulation lab: ground truths, structured missingness, losses, oracle tuning
and the simulation experiments.

Every generator is a pure function of its configuration and seed; nested
randomness is derived with ``utils.helpers.derive_seed`` so replicate results
do not depend on thread scheduling.
"""

import itertools
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from config.settings import Config
from modules.auxcov import (
    auxcov_cv,
    bootstrap_nonparametric,
    bootstrap_parametric,
    check_alpha_grid,
    cross_validate,
    prepare_auxcov,
    select_grid_point,
)
from modules.baselines import lowrank_complete, maxdet_complete
from modules.corestats import (
    PartialSymmetricMatrix,
    fisher,
    observed_correlations,
    observed_sample_covariance,
    pd_correction,
)
from modules.dataset import (
    AuxiliaryCovariates,
    IncompleteDataset,
    ObservationPattern,
    PairSets,
    pair_sets,
)
from modules.psi import psi_empirical, psi_gaussian, psi_oracle
from modules.regression import RegressionSpec
from utils.errors import (
    BadGamma,
    ConfigOutOfRange,
    DimensionMismatch,
    InputError,
    NumericalError,
    UnachievableEta,
)
from utils.experiment_config_loader import experiment_config_loader
from utils.helpers import derive_seed, parallel_map, save_json

logger = logging.getLogger(__name__)

EXPERIMENTS = ("cv-tracking", "cv-splines", "bootstrap-check", "methods-compare",
               "psi-verify", "gls-tracking", "pattern-sweep")
AUXCOV_METHODS = ("ols", "gls", "splines")
COMPARISON_METHODS = ("maxdet", "lowrank")


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """A simulated covariance whose correlations depend on a pair covariate."""

    Sigma: np.ndarray
    C: np.ndarray
    raw_corr: np.ndarray
    W: np.ndarray
    gamma: float
    nonlinear: bool
    pd_steps: int = 0

    @property
    def p(self) -> int:
        return self.Sigma.shape[0]

    @property
    def aux(self) -> AuxiliaryCovariates:
        return AuxiliaryCovariates.from_matrix(self.W)


def generate_ground_truth(p: int, gamma: float, nonlinear: bool = False, seed: int = 0) -> GroundTruth:
    """C_ij = sqrt(gamma/2) a(W_ij) + sqrt((1-gamma)/2) Z_ij, then PD-corrected.

    W and Z are i.i.d. Uniform(-1, 1); a is the identity or sin(7 w).
    """
    if not 0.0 <= gamma <= 1.0:
        raise BadGamma(f"gamma must lie in [0, 1], got {gamma}")
    if p < 2:
        raise InputError("ground truth needs p >= 2")
    rng = np.random.default_rng(seed)
    rows, cols = np.triu_indices(p, 1)
    w = rng.uniform(-1.0, 1.0, size=rows.size)
    z = rng.uniform(-1.0, 1.0, size=rows.size)
    signal = np.sin(7.0 * w) if nonlinear else w
    values = math.sqrt(gamma / 2.0) * signal + math.sqrt((1.0 - gamma) / 2.0) * z

    raw = np.eye(p)
    raw[rows, cols] = raw[cols, rows] = values
    W = np.zeros((p, p))
    W[rows, cols] = W[cols, rows] = w
    Sigma, steps = pd_correction(raw, return_steps=True)
    return GroundTruth(Sigma=Sigma, C=Sigma.copy(), raw_corr=raw, W=W, gamma=float(gamma),
                       nonlinear=bool(nonlinear), pd_steps=steps)


# --- structured missingness ---------------------------------------------------

def _windows(p: int, K: int, step: int) -> List[Tuple[int, ...]]:
    width = p - (K - 1) * step
    return [tuple(range(k * step, k * step + width)) for k in range(K)]


def _windows_eta(p: int, subsets: Sequence[Sequence[int]]) -> float:
    member = np.zeros((len(subsets), p), dtype=bool)
    for k, subset in enumerate(subsets):
        member[k, list(subset)] = True
    joint = (member.T.astype(int) @ member.astype(int)) > 0
    return float(1.0 - joint.mean())


def window_subsets(p: int, K: int, eta: float) -> List[Tuple[int, ...]]:
    """Sliding variable windows V_1..V_K whose missingness is closest to ``eta``.

    K = 2 uses V_1 = [0, p - s), V_2 = [s, p) with s = ceil(p sqrt(eta / 2)).
    Larger K uses equal-width windows at a common step, the step minimising
    |eta(step) - eta| (smallest step on ties).
    """
    if K < 1:
        raise InputError("K must be at least 1")
    if not 0.0 <= eta < 1.0:
        raise UnachievableEta(f"eta must lie in [0, 1), got {eta}")
    if K == 1 or eta == 0.0:
        if eta > 0.0:
            raise UnachievableEta("a single block cannot have missing pairs")
        return [tuple(range(p))] * K
    if K == 2:
        s = math.ceil(p * math.sqrt(eta / 2.0))
        if 2 * s > p:
            raise UnachievableEta(f"eta={eta} needs overlap offset {s} > p/2 for p={p}")
        return _windows(p, 2, s)

    steps = range(0, (p - 1) // (K - 1) + 1)
    etas = [_windows_eta(p, _windows(p, K, d)) for d in steps]
    if eta > max(etas):
        raise UnachievableEta(f"eta={eta} exceeds the largest achievable {max(etas):.3f} for p={p}, K={K}")
    best = int(np.argmin([abs(value - eta) for value in etas]))
    return _windows(p, K, steps[best])


def apply_missingness(values: np.ndarray, K: int, eta: float,
                      names: Optional[Sequence[str]] = None) -> IncompleteDataset:
    """Split complete rows into K equal blocks and keep window V_k in block k."""
    values = np.asarray(values, dtype=float)
    if values.ndim != 2:
        raise DimensionMismatch("values must be a 2-d array")
    if np.isnan(values).any():
        raise InputError("apply_missingness expects a complete data matrix")
    n, p = values.shape
    if n < K:
        raise InputError(f"{n} samples cannot fill {K} blocks")
    subsets = window_subsets(p, K, eta)
    row_blocks = np.array_split(np.arange(n), K)
    blocks = [values[rows][:, list(subset)] for rows, subset in zip(row_blocks, subsets)]
    return IncompleteDataset.from_blocks(blocks, subsets, p, names)


def _draw_gaussian(Sigma: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    factor = np.linalg.cholesky(Sigma)
    return rng.standard_normal((n, Sigma.shape[0])) @ factor.T


def inject_missingness(Sigma: np.ndarray, n: int, K: int, eta: float, seed: int = 0) -> IncompleteDataset:
    """Draw n samples from N(0, Sigma) and drop values outside each block's window."""
    Sigma = np.asarray(Sigma, dtype=float)
    if Sigma.ndim != 2 or Sigma.shape[0] != Sigma.shape[1]:
        raise DimensionMismatch(f"Sigma must be square, got shape {Sigma.shape}")
    data = apply_missingness(_draw_gaussian(Sigma, n, np.random.default_rng(seed)), K, eta)
    logger.debug(f"Injected missingness: target eta={eta}, realized eta={realized_eta(data.pattern):.4f}")
    return data


def realized_eta(pattern: ObservationPattern) -> float:
    """Share of ordered variable pairs never observed together."""
    return pair_sets(pattern, min_joint=1).eta


# --- losses and oracle tuning -------------------------------------------------

@dataclass(frozen=True)
class LossQuartet:
    """Normalized squared losses; None when a cell is empty or not computable."""

    corr_O: Optional[float]
    corr_Oc: Optional[float]
    pcorr_O: Optional[float]
    pcorr_Oc: Optional[float]

    def to_dict(self) -> Dict[str, Optional[float]]:
        return {"corr_O": self.corr_O, "corr_Oc": self.corr_Oc,
                "pcorr_O": self.pcorr_O, "pcorr_Oc": self.pcorr_Oc}


def _correlation(S: np.ndarray) -> np.ndarray:
    scale = 1.0 / np.sqrt(np.diag(S))
    return S * np.outer(scale, scale)


def _partial_correlation(S: np.ndarray) -> Optional[np.ndarray]:
    if np.linalg.cond(S) * np.finfo(float).eps >= 1.0:
        return None
    try:
        theta = np.linalg.inv(S)
    except np.linalg.LinAlgError:
        return None
    d = np.diag(theta)
    if np.any(d <= 0):
        return None
    return -theta / np.sqrt(np.outer(d, d))


def _mean_square(diff: np.ndarray, cells: np.ndarray) -> Optional[float]:
    count = int(cells.sum())
    return float(np.sum(diff[cells] ** 2) / count) if count else None


def losses(estimate: np.ndarray, truth: Union[GroundTruth, np.ndarray], pair_sets: PairSets) -> LossQuartet:
    """Correlation and partial-correlation losses over O (off-diagonal) and O^c."""
    true_cov = truth.Sigma if isinstance(truth, GroundTruth) else np.asarray(truth, dtype=float)
    estimate = np.asarray(estimate, dtype=float)
    if estimate.shape != true_cov.shape or estimate.shape != (pair_sets.p, pair_sets.p):
        raise DimensionMismatch("estimate, truth and pair sets disagree on p")
    estimate = (estimate + estimate.T) / 2.0
    on_O = pair_sets.observed & ~np.eye(pair_sets.p, dtype=bool)
    on_Oc = ~pair_sets.observed

    corr_diff = _correlation(estimate) - _correlation(true_cov)
    est_partial, true_partial = _partial_correlation(estimate), _partial_correlation(true_cov)
    if est_partial is None or true_partial is None:
        logger.warning("Singular estimate or truth; partial-correlation losses not reported")
        pcorr_O = pcorr_Oc = None
    else:
        pcorr_O = _mean_square(est_partial - true_partial, on_O)
        pcorr_Oc = _mean_square(est_partial - true_partial, on_Oc)
    return LossQuartet(corr_O=_mean_square(corr_diff, on_O), corr_Oc=_mean_square(corr_diff, on_Oc),
                       pcorr_O=pcorr_O, pcorr_Oc=pcorr_Oc)


def oracle_alpha(cov_O: PartialSymmetricMatrix, aux: AuxiliaryCovariates,
                 specs: Union[RegressionSpec, Sequence[RegressionSpec]],
                 truth: Union[GroundTruth, np.ndarray], alpha_grid: Optional[Sequence[float]] = None,
                 data: Optional[IncompleteDataset] = None) -> Tuple[float, RegressionSpec]:
    """Grid point minimising the squared error to the true correlations over O."""
    if isinstance(specs, RegressionSpec):
        specs = [specs]
    specs = list(specs)
    grid = check_alpha_grid(alpha_grid)
    true_cov = truth.Sigma if isinstance(truth, GroundTruth) else np.asarray(truth, dtype=float)
    true_corr = _correlation(true_cov)
    cells = np.triu(cov_O.observed, 1)

    risk = np.full((len(specs), grid.size), np.nan)
    for s, spec in enumerate(specs):
        try:
            fit = prepare_auxcov(cov_O, aux, spec, data=data)
        except NumericalError as e:
            logger.warning(f"Oracle skipped model {spec.label}: {e}")
            continue
        for a, alpha in enumerate(grid):
            risk[s, a] = np.sum((fit.corr_at(alpha) - true_corr)[cells] ** 2)
    s, a = select_grid_point(risk, grid, specs)
    return float(grid[a]), specs[s]


# --- experiments --------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ExperimentReport:
    name: str
    records: pd.DataFrame
    summary: pd.DataFrame
    manifest: Dict[str, Any]


def _as_list(value: Any) -> list:
    return list(value) if isinstance(value, (list, tuple)) else [value]


def _check_caps(config: Dict[str, Any]) -> None:
    caps = {"p": Config.MAX_P, "n": Config.MAX_N, "replicates": Config.MAX_REPLICATES,
            "bootstrap_replicates": Config.MAX_REPLICATES, "mc_draws": Config.MAX_REPLICATES,
            "estimator_replicates": Config.MAX_REPLICATES, "draws": Config.MAX_DRAWS}
    for key, cap in caps.items():
        if key in config and max(_as_list(config[key])) > cap:
            raise ConfigOutOfRange(f"{key}={config[key]} exceeds the cap {cap}")


def _specs_for(method: str, config: Dict[str, Any]) -> List[RegressionSpec]:
    if method == "ols":
        return [RegressionSpec.ols()]
    if method == "gls":
        return [RegressionSpec.gls(phi_estimator=config.get("phi_estimator", "gaussian"))]
    if method == "splines":
        return [RegressionSpec.splines(tau) for tau in config.get("tau_grid", Config.TAU_GRID)]
    raise InputError(f"unknown AuxCov method {method!r}")


def _alpha_grid(config: Dict[str, Any]) -> List[float]:
    size = int(config.get("alpha_grid_size", Config.ALPHA_GRID_SIZE))
    return [0.0] if size == 1 else [k / (size - 1) for k in range(size)]


def _settings(config: Dict[str, Any], keys: Sequence[str]) -> List[Dict[str, Any]]:
    values = [_as_list(config[key]) for key in keys]
    return [dict(zip(keys, combo)) for combo in itertools.product(*values)]


def _run_tuning(config: Dict[str, Any], seed: int, threads: int) -> Tuple[List[dict], Dict[str, Any]]:
    """alpha_cv against alpha_or (and tau for splines) over gamma, n, p, eta."""
    config = {**config, "gamma": config.get("gammas", config.get("gamma", 0.5))}
    settings = _settings(config, ["p", "n", "K", "eta", "gamma"])
    specs = [spec for method in config.get("methods", ["ols"]) for spec in _specs_for(method, config)]
    grid = _alpha_grid(config)
    folds = int(config.get("folds", Config.CV_FOLDS))
    nonlinear = bool(config.get("nonlinear", False))
    tasks = [(index, replicate) for index in range(len(settings))
             for replicate in range(int(config.get("replicates", 1)))]

    def run(task):
        index, replicate = task
        setting = settings[index]
        task_seed = derive_seed(seed, index, replicate)
        truth = generate_ground_truth(setting["p"], setting["gamma"], nonlinear, derive_seed(task_seed, 0))
        data = inject_missingness(truth.Sigma, setting["n"], setting["K"], setting["eta"],
                                  derive_seed(task_seed, 1))
        report = cross_validate(data, truth.aux, specs, grid, folds, seed=derive_seed(task_seed, 2), threads=1)
        alpha_or, spec_or = oracle_alpha(observed_sample_covariance(data), truth.aux, specs, truth, grid, data)
        base = {"replicate": replicate, **setting, "realized_eta": realized_eta(data.pattern)}
        rows = [{**base, "metric": "alpha_cv", "value": report.selected_alpha},
                {**base, "metric": "alpha_or", "value": alpha_or}]
        if report.selected_spec.kind == "splines" or spec_or.kind == "splines":
            rows += [{**base, "metric": "tau_cv", "value": report.selected_spec.tau},
                     {**base, "metric": "tau_or", "value": spec_or.tau}]
        return rows

    outcomes = parallel_map(run, tasks, threads)
    return [row for rows in outcomes for row in rows], {}


def _estimate(method: str, data: IncompleteDataset, aux: AuxiliaryCovariates, config: Dict[str, Any],
              seed: int) -> np.ndarray:
    if method == "maxdet":
        return maxdet_complete(observed_sample_covariance(data))[0]
    if method == "lowrank":
        return lowrank_complete(data, seed=seed)[0]
    result = auxcov_cv(data, aux, _specs_for(method, config), _alpha_grid(config),
                       int(config.get("folds", Config.CV_FOLDS)), seed=seed, threads=1)
    return result.final_cov


def _run_methods_compare(config: Dict[str, Any], seed: int, threads: int) -> Tuple[List[dict], Dict[str, Any]]:
    """Correlation and partial-correlation losses of every method against the ground truth."""
    config = {**config, "gamma": config.get("gammas", config.get("gamma", 0.5))}
    settings = _settings(config, ["p", "n", "K", "eta", "gamma"])
    methods = list(config.get("methods", AUXCOV_METHODS + COMPARISON_METHODS))
    for method in methods:
        if method not in AUXCOV_METHODS + COMPARISON_METHODS:
            raise InputError(f"unknown method {method!r}")
    tasks = [(index, replicate) for index in range(len(settings))
             for replicate in range(int(config.get("replicates", 1)))]

    def run(task):
        index, replicate = task
        setting = settings[index]
        task_seed = derive_seed(seed, index, replicate)
        truth = generate_ground_truth(setting["p"], setting["gamma"], False, derive_seed(task_seed, 0))
        data = inject_missingness(truth.Sigma, setting["n"], setting["K"], setting["eta"],
                                  derive_seed(task_seed, 1))
        sets = pair_sets(data.pattern)
        base = {"replicate": replicate, **setting, "realized_eta": realized_eta(data.pattern)}
        rows = []
        for m, method in enumerate(methods):
            try:
                estimate = _estimate(method, data, truth.aux, config, derive_seed(task_seed, 2, m))
            except NumericalError as e:
                logger.warning(f"{method} failed on replicate {replicate}: {type(e).__name__}: {e}")
                continue
            for metric, value in losses(estimate, truth, sets).to_dict().items():
                rows.append({**base, "method": method, "metric": metric,
                             "value": np.nan if value is None else value})
        return rows

    outcomes = parallel_map(run, tasks, threads)
    return [row for rows in outcomes for row in rows], {}


def _run_bootstrap_check(config: Dict[str, Any], seed: int, threads: int) -> Tuple[List[dict], Dict[str, Any]]:
    """Bootstrap standard errors of every covariance entry against Monte Carlo ones."""
    p, n, K, eta = int(config["p"]), int(config["n"]), int(config["K"]), float(config["eta"])
    grid = _alpha_grid(config)
    folds = int(config.get("folds", Config.CV_FOLDS))
    B = int(config.get("bootstrap_replicates", Config.BOOTSTRAP_REPLICATES))
    draws = int(config.get("mc_draws", 100))
    rows_idx, cols_idx = np.triu_indices(p)
    records = []

    for m, method in enumerate(config.get("methods", AUXCOV_METHODS)):
        specs = _specs_for(method, config)
        method_seed = derive_seed(seed, m)
        truth = generate_ground_truth(p, float(config["gamma"]), method == "splines", derive_seed(method_seed, 0))
        aux = truth.aux

        def monte_carlo(d: int) -> np.ndarray:
            sample = inject_missingness(truth.Sigma, n, K, eta, derive_seed(method_seed, 1, d))
            return auxcov_cv(sample, aux, specs, grid, folds, seed=derive_seed(method_seed, 2, d),
                             threads=1).final_cov

        logger.info(f"Monte Carlo reference for {method}: {draws} draws")
        se_true = np.std(np.stack(parallel_map(monte_carlo, range(draws), threads)), axis=0, ddof=1)
        for i, j in zip(rows_idx, cols_idx):
            records.append({"method": method, "variant": "monte-carlo", "i": int(i), "j": int(j),
                            "metric": "se_true", "value": se_true[i, j]})

        data = inject_missingness(truth.Sigma, n, K, eta, derive_seed(method_seed, 3))
        fit = auxcov_cv(data, aux, specs, grid, folds, seed=derive_seed(method_seed, 4), threads=threads)
        for variant in config.get("variants", ["nonparametric", "parametric"]):
            if variant == "nonparametric":
                boot = bootstrap_nonparametric(data, aux, specs, grid, folds, "entrywise-cov", B,
                                               derive_seed(method_seed, 5), threads=threads)
            elif variant == "parametric":
                boot = bootstrap_parametric(fit, data.pattern, aux, specs, grid, folds, "entrywise-cov", B,
                                            derive_seed(method_seed, 6), threads=threads, names=data.names)
            else:
                raise InputError(f"unknown bootstrap variant {variant!r}")
            for i, j in zip(rows_idx, cols_idx):
                records.append({"method": method, "variant": variant, "i": int(i), "j": int(j),
                                "metric": "se_boot", "value": boot.se[i, j]})
    return records, {}


def _run_psi_verify(config: Dict[str, Any], seed: int, threads: int) -> Tuple[List[dict], Dict[str, Any]]:
    """Psi entries against n times the Monte Carlo covariance of g(C_hat_U)."""
    p, n, K, eta = int(config["p"]), int(config["n"]), int(config["K"]), float(config["eta"])
    draws = int(config.get("draws", 1000))
    if draws < 2:
        raise InputError("psi-verify needs at least 2 draws")
    truth = generate_ground_truth(p, float(config.get("gamma", 0.5)), False, derive_seed(seed, 0))
    pattern = inject_missingness(truth.Sigma, n, K, eta, derive_seed(seed, 1, 0)).pattern
    sets = pair_sets(pattern)
    components = psi_oracle(pattern, truth.Sigma, sets=sets)
    rows, cols = sets.upper
    labels = [f"{i}:{j}" for i, j in zip(rows, cols)]

    n_estimators = min(int(config.get("estimator_replicates", 0)), draws)
    upper_a, upper_b = np.triu_indices(len(labels))

    def one(d: int):
        data = inject_missingness(truth.Sigma, n, K, eta, derive_seed(seed, 1, d))
        cov = observed_sample_covariance(data, sets=sets)
        rows_d = []
        if d < n_estimators:
            for metric, psi in (("psi_empirical", psi_empirical(data, cov).psi),
                                ("psi_gaussian", psi_gaussian(pattern, cov).psi)):
                rows_d.extend({"replicate": d, "pair_a": labels[a], "pair_b": labels[b],
                               "metric": metric, "value": psi[a, b]} for a, b in zip(upper_a, upper_b))
        return fisher(observed_correlations(cov).values[rows, cols]), rows_d

    outcomes = parallel_map(one, range(draws), threads)
    records = [row for _, rows_d in outcomes for row in rows_d]
    scaled_mc = n * np.cov(np.stack([z for z, _ in outcomes]), rowvar=False)

    for a, b in zip(upper_a, upper_b):
        records.append({"replicate": -1, "pair_a": labels[a], "pair_b": labels[b],
                        "metric": "psi", "value": components.psi[a, b]})
        records.append({"replicate": -1, "pair_a": labels[a], "pair_b": labels[b],
                        "metric": "n_cov_mc", "value": scaled_mc[a, b]})
    error = float(np.linalg.norm(components.psi - scaled_mc) / np.linalg.norm(components.psi))
    logger.info(f"Relative Frobenius error of Psi against n * Cov_MC: {error:.4f}")
    return records, {"relative_frobenius_error": error, "realized_eta": realized_eta(pattern),
                     "pairs": len(labels)}


def _run_pattern_sweep(config: Dict[str, Any], seed: int, threads: int) -> Tuple[List[dict], Dict[str, Any]]:
    """Systematic removal from one complete dataset, scored against its full-data estimate."""
    p, n = int(config["p"]), int(config["n"])
    grid = _alpha_grid(config)
    folds = int(config.get("folds", Config.CV_FOLDS))
    truth = generate_ground_truth(p, float(config.get("gamma", 0.8)), False, derive_seed(seed, 0))
    aux = truth.aux
    values = _draw_gaussian(truth.Sigma, n, np.random.default_rng(derive_seed(seed, 1)))
    full = IncompleteDataset.from_array(values)
    reference = auxcov_cv(full, aux, _specs_for("ols", config), grid, folds,
                          seed=derive_seed(seed, 2), threads=threads).final_cov

    tasks = [(K, eta) for K in _as_list(config.get("Ks", [5])) for eta in _as_list(config.get("etas", [0.3]))]

    def run(task):
        K, eta = task
        try:
            masked = apply_missingness(values, int(K), float(eta))
        except UnachievableEta as e:
            logger.warning(f"Skipping K={K}, eta={eta}: {e}")
            return []
        sets = pair_sets(masked.pattern)
        base = {"K": K, "eta": eta, "realized_eta": realized_eta(masked.pattern)}
        rows = []
        for m, method in enumerate(config.get("methods", ["ols"])):
            try:
                result = auxcov_cv(masked, aux, _specs_for(method, config), grid, folds,
                                   seed=derive_seed(seed, 3, int(K), m), threads=1)
            except (NumericalError, InputError) as e:
                logger.warning(f"{method} failed at K={K}, eta={eta}: {type(e).__name__}: {e}")
                continue
            entry = {**base, "method": method}
            rows.append({**entry, "metric": "alpha_cv", "value": result.alpha})
            if result.spec.kind == "splines":
                rows.append({**entry, "metric": "tau_cv", "value": result.spec.tau})
            else:
                rows.extend({**entry, "metric": f"beta_{k}", "value": beta}
                            for k, beta in enumerate(result.model.beta))
            for metric, value in losses(result.final_cov, reference, sets).to_dict().items():
                rows.append({**entry, "metric": metric, "value": np.nan if value is None else value})
        return rows

    outcomes = parallel_map(run, tasks, threads)
    return [row for rows in outcomes for row in rows], {}


RUNNERS: Dict[str, Callable[[Dict[str, Any], int, int], Tuple[List[dict], Dict[str, Any]]]] = {
    "cv-tracking": _run_tuning,
    "cv-splines": _run_tuning,
    "gls-tracking": _run_tuning,
    "bootstrap-check": _run_bootstrap_check,
    "methods-compare": _run_methods_compare,
    "psi-verify": _run_psi_verify,
    "pattern-sweep": _run_pattern_sweep,
}


def _summarize(records: pd.DataFrame) -> pd.DataFrame:
    if records.empty:
        return records
    keys = [c for c in records.columns if c not in ("replicate", "value", "realized_eta")]
    summary = (records.groupby(keys, sort=False, dropna=False)["value"]
               .agg(["mean", "std", "count"]).reset_index())
    with np.errstate(divide="ignore", invalid="ignore"):
        summary["log10_mean"] = np.log10(summary["mean"].where(summary["mean"] > 0))
    return summary


def run_experiment(name: str, config: Optional[Dict[str, Any]] = None, seed: int = 0,
                   threads: Optional[int] = None) -> ExperimentReport:
    """Run a named experiment preset, with ``config`` overriding preset values."""
    try:
        preset = experiment_config_loader.get_experiment_config(name)
    except KeyError:
        if name not in RUNNERS:
            raise InputError(f"unknown experiment {name!r}; expected one of "
                             f"{sorted(set(RUNNERS) | set(experiment_config_loader.get_experiment_names()))}")
        preset = {"experiment": name}
    merged = {**preset, **(config or {})}
    kind = merged.get("experiment", name)
    if kind not in RUNNERS:
        raise InputError(f"preset {name!r} names unknown experiment {kind!r}")
    _check_caps(merged)
    threads = Config.THREADS if threads is None else threads

    logger.info(f"Running experiment {name} ({kind}) with seed {seed}")
    rows, extra = RUNNERS[kind](merged, int(seed), threads)
    records = pd.DataFrame(rows)
    manifest = {
        "experiment": name,
        "kind": kind,
        "config": merged,
        "seed": int(seed),
        "version": Config.VERSION,
        "records": len(records),
        **extra,
    }
    return ExperimentReport(name=name, records=records, summary=_summarize(records), manifest=manifest)


def write_report(report: ExperimentReport, output_dir: str) -> Dict[str, str]:
    """Write the tidy records, the aggregate summary and the manifest."""
    directory = Path(output_dir)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        "records": str(directory / f"{report.name}.csv"),
        "summary": str(directory / f"{report.name}_summary.csv"),
        "manifest": str(directory / Config.MANIFEST_FILENAME),
    }
    report.records.to_csv(paths["records"], index=False, float_format="%.17g")
    report.summary.to_csv(paths["summary"], index=False, float_format="%.17g")
    save_json(report.manifest, paths["manifest"])
    return paths
