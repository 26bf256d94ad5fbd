"""
Dense matrix CSV files: a header row of labels, then the rows at 17 significant digits.
"""

import logging
from typing import List, Sequence, Tuple

import numpy as np
import pandas as pd

from utils.errors import DimensionMismatch, ParseError

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"


def write_matrix(matrix: np.ndarray, labels: Sequence[str], path: str) -> None:
    """Write a square matrix with ``labels`` as the header row."""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape != (len(labels), len(labels)):
        raise DimensionMismatch(f"matrix shape {matrix.shape} does not match {len(labels)} labels")
    pd.DataFrame(matrix, columns=list(labels)).to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.debug(f"Wrote {matrix.shape[0]} x {matrix.shape[1]} matrix to {path}")


def read_matrix(path: str) -> Tuple[np.ndarray, List[str]]:
    """Read a matrix written by ``write_matrix``."""
    try:
        frame = pd.read_csv(path, dtype=float)
    except ValueError as e:
        raise ParseError(f"{path}: non-numeric matrix entry ({e})")
    matrix = frame.to_numpy()
    if matrix.shape[0] != matrix.shape[1]:
        raise ParseError(f"{path}: expected a square matrix, got shape {matrix.shape}")
    return matrix, [str(c) for c in frame.columns]


def write_psi(psi: np.ndarray, pair_labels: Sequence[str], path: str) -> None:
    """Write Psi over observed pairs.

    Rows and columns are both labelled ``name_i:name_j``; the first column,
    ``pair``, repeats the row labels so each row can be read on its own.
    """
    psi = np.asarray(psi, dtype=float)
    labels = [str(label) for label in pair_labels]
    if psi.ndim != 2 or psi.shape != (len(labels), len(labels)):
        raise DimensionMismatch(f"Psi shape {psi.shape} does not match {len(labels)} pair labels")
    malformed = [label for label in labels if ":" not in label]
    if malformed:
        raise DimensionMismatch(f"pair labels must look like name_i:name_j, got {malformed[:3]}")
    if len(set(labels)) != len(labels):
        raise DimensionMismatch("pair labels are not unique")
    frame = pd.DataFrame(psi, columns=labels)
    frame.insert(0, "pair", labels)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.debug(f"Wrote Psi over {len(labels)} observed pairs to {path}")
