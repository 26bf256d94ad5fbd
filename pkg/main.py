#!/usr/bin/env python3
"""
CovComplete

Completes covariance and correlation matrices estimated from structurally
incomplete data by regressing observed correlations on auxiliary pair
covariates, with cross-validated tuning, bootstrap standard errors and a
simulation lab.
"""

import sys
import time
import logging
import argparse
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

# Add the current directory to Python path for imports
sys.path.append(str(Path(__file__).parent))

from config.settings import Config, parse_int_range
from utils.errors import InputError, NumericalError, error_name
from utils.experiment_config_loader import experiment_config_loader
from utils.helpers import setup_logging, save_json, create_unique_output_directory

logger = logging.getLogger(__name__)

COMMANDS = ("complete", "bootstrap", "simulate", "compare")
METHODS = ("ols", "gls", "splines")
COMPARE_METHODS = ("ols", "gls", "splines", "maxdet", "lowrank")


@dataclass
class RunConfig:
    """Validated options of one command-line run."""

    command: str
    seed: int = 0
    output_dir: Optional[str] = None
    threads: Optional[int] = None
    data_path: Optional[str] = None
    data_format: Optional[str] = None
    aux_path: Optional[str] = None
    method: str = "ols"
    alpha: Optional[float] = None
    alpha_grid_size: Optional[int] = None
    tau_grid: List[int] = field(default_factory=list)
    folds: Optional[int] = None
    mean: str = "marginal"
    mu: Optional[List[float]] = None
    phi_estimator: str = "gaussian"
    emit_baseline: bool = False
    emit_psi: bool = False
    variant: str = "nonparametric"
    replicates: Optional[int] = None
    functional: str = "entrywise-cov"
    experiment: Optional[str] = None
    methods: List[str] = field(default_factory=list)
    overrides: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "RunConfig":
        config = cls(command=args.command, seed=args.seed, output_dir=args.output_dir, threads=args.threads)
        if args.command in ("complete", "bootstrap"):
            for path in (args.data, args.aux):
                if not Path(path).exists():
                    raise InputError(f"input path not found: {path}")
            config.data_path, config.aux_path, config.data_format = args.data, args.aux, args.format
            config.method = args.method
            config.alpha = None if args.alpha == "cv" else _parse_alpha(args.alpha)
            config.alpha_grid_size = args.alpha_grid_size
            config.tau_grid = parse_int_range(args.tau) if args.tau else list(Config.TAU_GRID)
            config.folds = args.folds
            config.mean = args.mean
            config.phi_estimator = args.phi_estimator
            if args.mean == "known":
                if not args.mu:
                    raise InputError("--mean known needs --mu")
                try:
                    config.mu = [float(v) for v in args.mu.split(",")]
                except ValueError:
                    raise InputError(f"--mu must be comma-separated numbers, got {args.mu!r}")
        if args.command == "complete":
            config.emit_baseline, config.emit_psi = args.emit_baseline, args.emit_psi
        if args.command == "bootstrap":
            config.variant, config.replicates, config.functional = args.variant, args.replicates, args.functional
        if args.command == "simulate":
            config.experiment = args.name
        if args.command in ("simulate", "compare"):
            config.overrides = {key: value for key, value in (
                ("p", args.p), ("n", args.n), ("K", args.K), ("eta", args.eta),
                ("replicates", args.replicates), ("alpha_grid_size", args.alpha_grid_size),
                ("folds", args.folds)) if value is not None}
            if args.gamma is not None:
                config.overrides["gammas"] = [args.gamma]
                config.overrides["gamma"] = args.gamma
            if args.command == "simulate" and args.draws is not None:
                config.overrides["draws"] = args.draws
        if args.command == "compare":
            config.methods = [m.strip() for m in args.methods.split(",") if m.strip()]
            unknown = sorted(set(config.methods) - set(COMPARE_METHODS))
            if unknown or not config.methods:
                raise InputError(f"--methods must list some of {COMPARE_METHODS}, got {args.methods!r}")
            config.overrides["methods"] = config.methods
        config.validate()
        return config

    def validate(self):
        if self.folds is not None and self.folds < 2:
            raise InputError("--folds must be at least 2")
        if self.replicates is not None and self.replicates < 2 and self.command == "bootstrap":
            raise InputError("--replicates must be at least 2")
        if self.alpha_grid_size is not None and self.alpha_grid_size < 1:
            raise InputError("--alpha-grid-size must be at least 1")
        if self.threads is not None and self.threads < 1:
            raise InputError("--threads must be at least 1")

    def to_dict(self) -> Dict[str, Any]:
        return {key: value for key, value in asdict(self).items() if value not in (None, [], {})}


def _parse_alpha(text: str) -> float:
    try:
        alpha = float(text)
    except ValueError:
        raise InputError(f"--alpha must be a number in [0, 1] or 'cv', got {text!r}")
    if not 0.0 <= alpha <= 1.0:
        raise InputError(f"--alpha must lie in [0, 1], got {alpha}")
    return alpha


def parse_arguments(argv=None):
    """Parse command-line arguments."""
    parser = argparse.ArgumentParser(description='Complete incomplete covariance matrices using auxiliary pair covariates')
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--seed', type=int, default=0, help='Random seed (all output is deterministic given it)')
    common.add_argument('--output-dir', type=str, default=None,
                        help='Write outputs here (default: a new run directory under $COVCOMPLETE_OUTPUT_DIR)')
    common.add_argument('--threads', type=int, default=None, help='Worker cap for folds and replicates')
    common.add_argument('--log-level', type=str, default=None,
                        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'], help='Logging level')

    inputs = argparse.ArgumentParser(add_help=False)
    inputs.add_argument('--data', type=str, required=True, help='Long CSV file or directory of block CSVs')
    inputs.add_argument('--format', type=str, default=None, choices=['long-csv', 'block-directory'],
                        help='Dataset format (inferred from the path by default)')
    inputs.add_argument('--aux', type=str, required=True, help='Auxiliary covariates CSV (i,j,w1,...,wq)')
    inputs.add_argument('--method', type=str, default='ols', choices=METHODS, help='Baseline regression')
    inputs.add_argument('--alpha', type=str, default='cv', help="Tuning weight in [0, 1] or 'cv'")
    inputs.add_argument('--alpha-grid-size', type=int, default=None, help='Points in the CV alpha grid')
    inputs.add_argument('--tau', type=str, default=None, help='Spline knot counts, e.g. "2-10" or "2,4,6"')
    inputs.add_argument('--folds', type=int, default=None, help='Cross-validation folds')
    inputs.add_argument('--mean', type=str, default='marginal', choices=['marginal', 'known'],
                        help='Center by marginal sample means or a known mean')
    inputs.add_argument('--mu', type=str, default=None, help='Known mean, comma-separated')
    inputs.add_argument('--phi-estimator', type=str, default='gaussian', choices=['gaussian', 'empirical'],
                        help='Psi estimator used for the GLS measurement-error covariance')

    simulation = argparse.ArgumentParser(add_help=False)
    simulation.add_argument('--p', type=int, default=None, help='Number of variables')
    simulation.add_argument('--n', type=int, default=None, help='Total sample size')
    simulation.add_argument('--K', type=int, default=None, help='Number of blocks')
    simulation.add_argument('--eta', type=float, default=None, help='Target missingness proportion')
    simulation.add_argument('--gamma', type=float, default=None, help='Auxiliary signal strength')
    simulation.add_argument('--replicates', type=int, default=None, help='Simulation repeats')
    simulation.add_argument('--alpha-grid-size', type=int, default=None, help='Points in the CV alpha grid')
    simulation.add_argument('--folds', type=int, default=None, help='Cross-validation folds')

    subparsers = parser.add_subparsers(dest='command', required=True)

    complete = subparsers.add_parser('complete', parents=[common, inputs], help='Complete a dataset')
    complete.add_argument('--emit-baseline', action='store_true', help='Also write the baseline correlation matrix')
    complete.add_argument('--emit-psi', action='store_true', help='Also write Psi over observed pairs')

    bootstrap = subparsers.add_parser('bootstrap', parents=[common, inputs], help='Bootstrap standard errors')
    bootstrap.add_argument('--variant', type=str, default='nonparametric', choices=['nonparametric', 'parametric'])
    bootstrap.add_argument('--replicates', type=int, default=None, help='Bootstrap replicates B')
    bootstrap.add_argument('--functional', type=str, default='entrywise-cov',
                           choices=['entrywise-cov', 'entrywise-corr'])

    simulate = subparsers.add_parser('simulate', parents=[common, simulation], help='Run a simulation experiment')
    simulate.add_argument('--name', type=str, required=True, choices=experiment_config_loader.get_experiment_names(),
                          help='Experiment preset')
    simulate.add_argument('--draws', type=int, default=None, help='Monte Carlo draws (psi-verify)')

    compare = subparsers.add_parser('compare', parents=[common, simulation], help='Compare completion methods')
    compare.add_argument('--methods', type=str, default=','.join(COMPARE_METHODS),
                         help='Comma-separated subset of ' + ','.join(COMPARE_METHODS))

    return parser.parse_args(argv)


def _prepare_output_directory(config: RunConfig) -> str:
    if config.output_dir:
        Path(config.output_dir).mkdir(parents=True, exist_ok=True)
        return config.output_dir
    return create_unique_output_directory(f"covcomplete_{config.command}", parent=Config.DEFAULT_OUTPUT_DIR)


def _load_inputs(config: RunConfig):
    import numpy as np
    from modules.corestats import observed_sample_covariance
    from modules.dataset import load_auxiliary, load_dataset

    data = load_dataset(config.data_path, config.data_format)
    aux = load_auxiliary(config.aux_path, data.names)
    mean = None
    if config.mean == "known":
        if len(config.mu) != data.p:
            raise InputError(f"--mu has {len(config.mu)} values for p={data.p}")
        mean = np.asarray(config.mu)
    return data, aux, mean, observed_sample_covariance(data, mean)


def _build_specs(config: RunConfig, cov, aux):
    from modules.regression import RegressionSpec

    method = config.method
    n_pairs = cov.pair_sets.upper[0].size
    if method == "gls" and n_pairs > Config.DENSE_PAIR_LIMIT:
        method = "splines" if aux.q == 1 else "ols"
        logger.warning(f"|U| = {n_pairs} exceeds the GLS limit {Config.DENSE_PAIR_LIMIT}; using {method}")
    if method == "ols":
        return [RegressionSpec.ols()]
    if method == "gls":
        return [RegressionSpec.gls(phi_estimator=config.phi_estimator)]
    return [RegressionSpec.splines(tau) for tau in config.tau_grid]


def _alpha_grid(config: RunConfig) -> list:
    if config.alpha_grid_size is None:
        return Config.default_alpha_grid()
    size = config.alpha_grid_size
    return [0.0] if size == 1 else [k / (size - 1) for k in range(size)]


def _fit(config: RunConfig, data, aux, mean, cov, specs):
    from modules.auxcov import auxcov_cv, cross_validate, run_auxcov

    if config.alpha is None:
        return auxcov_cv(data, aux, specs, _alpha_grid(config), config.folds, seed=config.seed,
                         threads=config.threads, mean=mean)
    spec = specs[0]
    if len(specs) > 1:
        # fixed alpha, several knot counts: CV picks the model at that alpha
        report = cross_validate(data, aux, specs, [config.alpha], config.folds, seed=config.seed,
                                threads=config.threads, mean=mean)
        spec = report.selected_spec
    return run_auxcov(cov, aux, config.alpha, spec, data=data)


def cmd_complete(config: RunConfig) -> Dict[str, Any]:
    from modules.psi import psi_empirical, psi_gaussian
    from modules.simlab import realized_eta
    from utils.matrix_io import write_matrix, write_psi

    logger.info("Step 1: Loading dataset and auxiliary covariates...")
    data, aux, mean, cov = _load_inputs(config)

    logger.info("Step 2: Fitting the baseline and completing the matrix...")
    result = _fit(config, data, aux, mean, cov, _build_specs(config, cov, aux))

    logger.info("Step 3: Writing matrices...")
    write_matrix(result.final_corr, data.names, Config.get_completed_corr_file())
    write_matrix(result.final_cov, data.names, Config.get_completed_cov_file())
    if config.emit_baseline:
        write_matrix(result.baseline_corr, data.names, Config.get_baseline_corr_file())
    if config.emit_psi:
        if config.phi_estimator == "empirical":
            components = psi_empirical(data, cov)
        else:
            components = psi_gaussian(data.pattern, cov, baseline_corr=result.baseline_corr)
        write_psi(components.psi, components.pair_labels(data.names), Config.get_psi_file())

    report = result.to_dict()
    report.update({"eta": cov.pair_sets.eta, "realized_eta": realized_eta(data.pattern),
                   "n": data.n, "p": data.p, "K": data.pattern.K})
    return report


def cmd_bootstrap(config: RunConfig) -> Dict[str, Any]:
    from modules.auxcov import auxcov_cv, bootstrap_nonparametric, bootstrap_parametric
    from utils.matrix_io import write_matrix

    logger.info("Step 1: Loading dataset and auxiliary covariates...")
    data, aux, mean, cov = _load_inputs(config)
    specs = _build_specs(config, cov, aux)
    grid = _alpha_grid(config) if config.alpha is None else [config.alpha]

    logger.info(f"Step 2: Running {config.variant} bootstrap...")
    if config.variant == "parametric":
        fit = auxcov_cv(data, aux, specs, grid, config.folds, seed=config.seed, threads=config.threads, mean=mean)
        boot = bootstrap_parametric(fit, data.pattern, aux, specs, grid, config.folds, config.functional,
                                    config.replicates, config.seed, threads=config.threads, names=data.names,
                                    mean=mean)
    else:
        boot = bootstrap_nonparametric(data, aux, specs, grid, config.folds, config.functional,
                                       config.replicates, config.seed, threads=config.threads, mean=mean)

    logger.info("Step 3: Writing standard errors...")
    write_matrix(boot.se, data.names, Config.get_se_matrix_file())
    return {"bootstrap": boot.to_dict()}


def cmd_simulate(config: RunConfig) -> Dict[str, Any]:
    from modules.simlab import run_experiment, write_report

    logger.info(f"Step 1: Running experiment {config.experiment}...")
    report = run_experiment(config.experiment, config.overrides, seed=config.seed, threads=config.threads)

    logger.info("Step 2: Writing experiment report...")
    paths = write_report(report, Config.OUTPUT_DIR)
    return {"experiment": report.manifest, "files": paths}


def cmd_compare(config: RunConfig) -> Dict[str, Any]:
    from modules.simlab import run_experiment

    logger.info(f"Step 1: Comparing methods {', '.join(config.methods)}...")
    report = run_experiment("methods-compare", config.overrides, seed=config.seed, threads=config.threads)

    logger.info("Step 2: Writing losses...")
    report.records.to_csv(Config.get_losses_file(), index=False, float_format="%.17g")
    return {"experiment": report.manifest, "summary": report.summary.to_dict(orient="records")}


HANDLERS = {
    "complete": cmd_complete,
    "bootstrap": cmd_bootstrap,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
}


def main(argv=None) -> int:
    """Main execution function; returns the process exit code."""
    try:
        args = parse_arguments(argv)
    except SystemExit as e:
        return int(e.code or 0)

    if args.log_level:
        Config.set_log_level(args.log_level)
    logger = setup_logging()
    logger.info(f"Starting CovComplete {Config.VERSION}: {args.command}")
    started = time.perf_counter()

    try:
        config = RunConfig.from_args(args)
        if config.threads:
            Config.set_threads(config.threads)
        Config.validate()
        logger.info("Configuration validated successfully")

        output_dir = _prepare_output_directory(config)
        Config.set_output_directory(output_dir)
        logger.info(f"Output directory: {output_dir}")

        report = HANDLERS[config.command](config)
        report.update({"seed": config.seed, "config": config.to_dict(), "version": Config.VERSION,
                       "elapsed_seconds": round(time.perf_counter() - started, 3)})
        save_json(report, Config.get_report_file())

        logger.info("=" * 50)
        logger.info(f"{config.command.upper()} COMPLETE")
        logger.info("=" * 50)
        logger.info(f"Output directory: {Config.OUTPUT_DIR}")
        logger.info(f"Report: {Config.get_report_file()}")
        return 0

    except InputError as e:
        logger.error(f"Input error: {e}")
        print(f"error: {error_name(e)}: {e}", file=sys.stderr)
        return e.exit_code

    except NumericalError as e:
        logger.error(f"Numerical failure: {e}")
        print(f"error: {error_name(e)}: {e}", file=sys.stderr)
        return e.exit_code

    except (ValueError, FileNotFoundError) as e:
        logger.error(f"Configuration error: {e}")
        print(f"error: {error_name(e)}: {e}", file=sys.stderr)
        return 2

    except Exception as e:
        logger.error(f"Unexpected error: {e}")
        print(f"error: {error_name(e)}: {e}", file=sys.stderr)
        return 1


def check_dependencies():
    """Check if required packages are installed."""
    required_packages = [
        ('numpy', 'numpy'),
        ('scipy', 'scipy'),
        ('pandas', 'pandas'),
        ('statsmodels', 'statsmodels'),
        ('scikit-learn', 'sklearn'),
        ('python-dotenv', 'dotenv')
    ]

    missing_packages = []
    for package_name, import_name in required_packages:
        try:
            __import__(import_name)
        except ImportError:
            missing_packages.append(package_name)

    if missing_packages:
        print("Missing required packages:")
        for package in missing_packages:
            print(f"  - {package}")
        print("\nInstall them with:")
        print(f"pip install {' '.join(missing_packages)}")
        return False

    return True


if __name__ == "__main__":
    # Check dependencies first
    if not check_dependencies():
        sys.exit(1)

    sys.exit(main())
