import os
from dotenv import load_dotenv

# Load environment variables from .env file in project directory
load_dotenv()


def parse_int_range(text: str) -> list:
    """Parse "2-10" or "2,4,8" into a sorted list of ints."""
    text = text.strip()
    if not text:
        return []
    if "-" in text and "," not in text:
        low, high = text.split("-", 1)
        return list(range(int(low), int(high) + 1))
    return sorted(int(part) for part in text.split(",") if part.strip())


class Config:
    """Configuration settings for covariance completion runs."""

    VERSION = "0.3.0"

    # Logging
    LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO").upper()

    # Core numerics
    CORR_CLAMP_EPS = float(os.getenv("CORR_CLAMP_EPS", "1e-6"))
    PD_DELTA = float(os.getenv("PD_DELTA", "0.001"))
    PD_EIG_TOL = float(os.getenv("PD_EIG_TOL", "1e-10"))  # scaled by p
    MIN_JOINT_SAMPLES = int(os.getenv("MIN_JOINT_SAMPLES", "2"))
    DENSE_PAIR_LIMIT = int(os.getenv("DENSE_PAIR_LIMIT", "20000"))

    # Tuning
    ALPHA_GRID_SIZE = int(os.getenv("ALPHA_GRID_SIZE", "51"))
    TAU_GRID = parse_int_range(os.getenv("TAU_GRID", "2-10"))
    CV_FOLDS = int(os.getenv("CV_FOLDS", "10"))
    BOOTSTRAP_REPLICATES = int(os.getenv("BOOTSTRAP_REPLICATES", "200"))
    BOOTSTRAP_MAX_FAILURE_RATE = float(os.getenv("BOOTSTRAP_MAX_FAILURE_RATE", "0.10"))

    # GLS gradient ascent controls
    GLS_STEP = float(os.getenv("GLS_STEP", "0.001"))
    GLS_ACCEL = float(os.getenv("GLS_ACCEL", "1.4"))
    GLS_TOL = float(os.getenv("GLS_TOL", "1e-7"))
    GLS_MAX_ITER = int(os.getenv("GLS_MAX_ITER", "100"))

    # Comparison baselines
    MAXDET_TOL = float(os.getenv("MAXDET_TOL", "1e-8"))
    MAXDET_MAX_SWEEPS = int(os.getenv("MAXDET_MAX_SWEEPS", "500"))
    LOWRANK_GRID_SIZE = int(os.getenv("LOWRANK_GRID_SIZE", "20"))
    LOWRANK_HOLDOUT = float(os.getenv("LOWRANK_HOLDOUT", "0.1"))
    LOWRANK_TOL = float(os.getenv("LOWRANK_TOL", "1e-5"))
    LOWRANK_MAX_ITER = int(os.getenv("LOWRANK_MAX_ITER", "500"))

    # Desk-scale caps for simulation experiments
    MAX_P = int(os.getenv("MAX_P", "200"))
    MAX_N = int(os.getenv("MAX_N", "5000"))
    MAX_REPLICATES = int(os.getenv("MAX_REPLICATES", "500"))
    MAX_DRAWS = int(os.getenv("MAX_DRAWS", "100000"))

    # Worker parallelism (folds, bootstrap replicates, experiment replicates)
    THREADS = int(os.getenv("THREADS", str(os.cpu_count() or 1)))

    # Output Files (base names - will be combined with output directory)
    COMPLETED_CORR_FILENAME = "completed_correlation.csv"
    COMPLETED_COV_FILENAME = "completed_covariance.csv"
    BASELINE_CORR_FILENAME = "baseline_correlation.csv"
    PSI_FILENAME = "psi.csv"
    SE_MATRIX_FILENAME = "se_matrix.csv"
    LOSSES_FILENAME = "losses.csv"
    REPORT_FILENAME = "report.json"
    MANIFEST_FILENAME = "manifest.json"

    # Default output directory (env) and the one chosen for this run
    DEFAULT_OUTPUT_DIR = os.getenv("COVCOMPLETE_OUTPUT_DIR")
    OUTPUT_DIR = None

    @classmethod
    def set_output_directory(cls, output_dir: str):
        """Set the output directory for this run."""
        cls.OUTPUT_DIR = output_dir

    @classmethod
    def set_threads(cls, threads: int):
        """Set the worker cap for this run."""
        if threads < 1:
            raise ValueError("threads must be at least 1")
        cls.THREADS = threads

    @classmethod
    def set_log_level(cls, level: str):
        """Set the logging level for this run."""
        cls.LOG_LEVEL = level.upper()

    @classmethod
    def get_output_file(cls, filename: str) -> str:
        """Get the full path for an output file of this run."""
        if cls.OUTPUT_DIR:
            from pathlib import Path
            return str(Path(cls.OUTPUT_DIR) / filename)
        return filename

    @classmethod
    def get_report_file(cls) -> str:
        return cls.get_output_file(cls.REPORT_FILENAME)

    @classmethod
    def get_completed_corr_file(cls) -> str:
        return cls.get_output_file(cls.COMPLETED_CORR_FILENAME)

    @classmethod
    def get_completed_cov_file(cls) -> str:
        return cls.get_output_file(cls.COMPLETED_COV_FILENAME)

    @classmethod
    def get_baseline_corr_file(cls) -> str:
        return cls.get_output_file(cls.BASELINE_CORR_FILENAME)

    @classmethod
    def get_psi_file(cls) -> str:
        return cls.get_output_file(cls.PSI_FILENAME)

    @classmethod
    def get_se_matrix_file(cls) -> str:
        return cls.get_output_file(cls.SE_MATRIX_FILENAME)

    @classmethod
    def get_losses_file(cls) -> str:
        return cls.get_output_file(cls.LOSSES_FILENAME)

    @classmethod
    def default_alpha_grid(cls) -> list:
        """Evenly spaced alpha values {0, ..., 1}."""
        size = cls.ALPHA_GRID_SIZE
        if size < 1:
            return []
        if size == 1:
            return [0.0]
        return [k / (size - 1) for k in range(size)]

    @classmethod
    def validate(cls):
        """Validate that configured values are usable."""
        if not 0 < cls.CORR_CLAMP_EPS < 1:
            raise ValueError("CORR_CLAMP_EPS must lie in (0, 1)")
        if cls.PD_DELTA <= 0:
            raise ValueError("PD_DELTA must be positive")
        if cls.MIN_JOINT_SAMPLES < 1:
            raise ValueError("MIN_JOINT_SAMPLES must be at least 1")
        if cls.CV_FOLDS < 2:
            raise ValueError("CV_FOLDS must be at least 2")
        if cls.BOOTSTRAP_REPLICATES < 2:
            raise ValueError("BOOTSTRAP_REPLICATES must be at least 2")
        if not 0 <= cls.BOOTSTRAP_MAX_FAILURE_RATE < 1:
            raise ValueError("BOOTSTRAP_MAX_FAILURE_RATE must lie in [0, 1)")
        if cls.GLS_STEP <= 0 or cls.GLS_ACCEL <= 1:
            raise ValueError("GLS step must be positive and acceleration above 1")
        if cls.GLS_MAX_ITER < 1:
            raise ValueError("GLS_MAX_ITER must be at least 1")
        if not 0 < cls.LOWRANK_HOLDOUT < 1:
            raise ValueError("LOWRANK_HOLDOUT must lie in (0, 1)")
        if any(tau < 1 for tau in cls.TAU_GRID):
            raise ValueError("TAU_GRID entries must be at least 1")
        if cls.THREADS < 1:
            raise ValueError("THREADS must be at least 1")
        return True
