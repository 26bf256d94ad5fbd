"""
Shared fixtures: small simulated datasets with a known covariance and pair covariates.
"""

import sys
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

# Add project root to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from modules.dataset import save_dataset
from modules.simlab import generate_ground_truth, inject_missingness


@pytest.fixture
def truth():
    """p=6 ground truth with a strong linear covariate signal."""
    return generate_ground_truth(6, gamma=0.8, seed=11)


@pytest.fixture
def two_block_data(truth):
    """n=400 Gaussian samples, K=2 windows {0..3} and {2..5}."""
    return inject_missingness(truth.Sigma, 400, K=2, eta=0.2, seed=5)


@pytest.fixture
def complete_data(truth):
    return inject_missingness(truth.Sigma, 300, K=1, eta=0.0, seed=6)


def write_aux_csv(path: Path, W: np.ndarray) -> Path:
    """``i,j,w1`` rows with 1-based indices for every pair i < j."""
    rows, cols = np.triu_indices(W.shape[0], 1)
    frame = pd.DataFrame({"i": rows + 1, "j": cols + 1, "w1": W[rows, cols]})
    frame.to_csv(path, index=False, float_format="%.17g")
    return path


@pytest.fixture
def input_files(tmp_path, truth, two_block_data):
    """Long-CSV dataset and auxiliary covariate file on disk."""
    data_path = tmp_path / "data.csv"
    save_dataset(two_block_data, str(data_path))
    aux_path = write_aux_csv(tmp_path / "aux.csv", truth.W)
    return data_path, aux_path
