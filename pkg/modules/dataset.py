"""
Structurally incomplete multivariate data.

An ``ObservationPattern`` records K distinct variable subsets and how many
samples observed each one. Samples are stored block-contiguously: all samples
of subset 0, then subset 1, and so on. Variable indices are 0-based.
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from config.settings import Config
from utils.errors import (
    BadCounts,
    DimensionMismatch,
    DuplicatePair,
    EmptyUnion,
    InconsistentColumns,
    IndexOutOfRange,
    InputError,
    NoObservations,
    ParseError,
)

logger = logging.getLogger(__name__)

MISSING_TOKEN = "NA"


@dataclass(frozen=True)
class ObservationPattern:
    """Which variables are observed by which samples."""

    p: int
    subsets: Tuple[Tuple[int, ...], ...]
    counts: Tuple[int, ...]

    @property
    def K(self) -> int:
        return len(self.subsets)

    @property
    def n(self) -> int:
        return int(sum(self.counts))

    @cached_property
    def membership(self) -> np.ndarray:
        """(K, p) boolean matrix, True where subset k contains variable i."""
        member = np.zeros((self.K, self.p), dtype=bool)
        for k, subset in enumerate(self.subsets):
            member[k, list(subset)] = True
        return member

    @cached_property
    def pair_counts(self) -> np.ndarray:
        """Joint sample sizes n_ij as a (p, p) integer matrix."""
        member = self.membership.astype(np.int64)
        return member.T @ (np.asarray(self.counts, dtype=np.int64)[:, None] * member)

    @property
    def pi(self) -> np.ndarray:
        """Sample proportions n_k / n per subset."""
        return np.asarray(self.counts, dtype=float) / self.n

    @cached_property
    def block_offsets(self) -> np.ndarray:
        """Start row of each block, with n appended."""
        return np.concatenate([[0], np.cumsum(self.counts)]).astype(np.int64)

    @cached_property
    def sample_block(self) -> np.ndarray:
        """Block index of each of the n samples."""
        return np.repeat(np.arange(self.K), self.counts)

    def block_rows(self, k: int) -> slice:
        return slice(int(self.block_offsets[k]), int(self.block_offsets[k + 1]))

    def mask(self) -> np.ndarray:
        """(n, p) boolean observation mask."""
        return self.membership[self.sample_block]

    def joint_count(self, i: int, j: int) -> int:
        _check_indices(self.p, i, j)
        return int(self.pair_counts[i, j])


def _check_indices(p: int, *indices: int) -> None:
    for index in indices:
        if not 0 <= int(index) < p:
            raise IndexOutOfRange(f"variable index {index} outside 0..{p - 1}")


def build_pattern(subsets: Sequence[Iterable[int]], counts: Sequence[int],
                  p: Optional[int] = None) -> ObservationPattern:
    """Build a validated pattern, merging duplicate subsets by summing counts."""
    subsets = [tuple(sorted({int(v) for v in subset})) for subset in subsets]
    counts = [int(c) for c in counts]

    if len(subsets) != len(counts):
        raise BadCounts(f"{len(subsets)} subsets but {len(counts)} counts")
    if not subsets:
        raise EmptyUnion("no variable subsets given")
    for k, subset in enumerate(subsets):
        if not subset:
            raise EmptyUnion(f"subset {k} is empty")
        if subset[0] < 0:
            raise IndexOutOfRange(f"negative variable index in subset {k}")
    bad = [c for c in counts if c < 1]
    if bad:
        raise BadCounts(f"sample counts must be >= 1, got {bad}")

    largest = max(subset[-1] for subset in subsets)
    if p is None:
        p = largest + 1
    elif largest >= p:
        raise IndexOutOfRange(f"variable index {largest} outside 0..{p - 1}")

    covered = set().union(*subsets)
    missing = sorted(set(range(p)) - covered)
    if missing:
        raise EmptyUnion(f"variables never observed in any subset: {missing}")

    merged: Dict[Tuple[int, ...], int] = {}
    for subset, count in zip(subsets, counts):
        merged[subset] = merged.get(subset, 0) + count
    if len(merged) < len(subsets):
        logger.debug(f"Merged {len(subsets) - len(merged)} duplicate subsets")

    return ObservationPattern(p=p, subsets=tuple(merged), counts=tuple(merged.values()))


@dataclass(frozen=True, eq=False)
class PairSets:
    """Observed pair set O and its derived index sets.

    Off-diagonal pairs with fewer than ``min_joint`` joint samples are treated
    as unobserved. Diagonal pairs are always observed.
    """

    pattern: ObservationPattern
    observed: np.ndarray
    min_joint: int

    @property
    def p(self) -> int:
        return self.pattern.p

    @property
    def n_observed(self) -> int:
        return int(self.observed.sum())

    @property
    def n_missing(self) -> int:
        return self.p * self.p - self.n_observed

    @property
    def eta(self) -> float:
        return self.n_missing / float(self.p * self.p)

    @cached_property
    def upper(self) -> Tuple[np.ndarray, np.ndarray]:
        """U: observed pairs with i < j, row-major."""
        rows, cols = np.triu_indices(self.p, 1)
        keep = self.observed[rows, cols]
        return rows[keep], cols[keep]

    @cached_property
    def upper_with_diag(self) -> Tuple[np.ndarray, np.ndarray]:
        """U-bar: observed pairs with i <= j, row-major."""
        rows, cols = np.triu_indices(self.p, 0)
        keep = self.observed[rows, cols]
        return rows[keep], cols[keep]

    @cached_property
    def missing_upper(self) -> Tuple[np.ndarray, np.ndarray]:
        """Unobserved pairs with i < j, row-major."""
        rows, cols = np.triu_indices(self.p, 1)
        keep = ~self.observed[rows, cols]
        return rows[keep], cols[keep]

    @cached_property
    def ubar_index(self) -> np.ndarray:
        """(p, p) position of each pair in U-bar (either order), -1 if absent."""
        index = np.full((self.p, self.p), -1, dtype=np.int64)
        rows, cols = self.upper_with_diag
        positions = np.arange(rows.size)
        index[rows, cols] = positions
        index[cols, rows] = positions
        return index

    def contains(self, i: int, j: int) -> bool:
        _check_indices(self.p, i, j)
        return bool(self.observed[i, j])


def pair_sets(pattern: ObservationPattern, min_joint: Optional[int] = None) -> PairSets:
    """Observed pair set O = union of V_k x V_k, minus thin pairs."""
    if min_joint is None:
        min_joint = Config.MIN_JOINT_SAMPLES
    observed = pattern.pair_counts >= max(int(min_joint), 1)
    np.fill_diagonal(observed, True)
    thin = int(((pattern.pair_counts > 0) & ~observed).sum())
    if thin:
        logger.warning(f"{thin // 2} variable pairs have fewer than {min_joint} joint "
                       f"samples and are treated as unobserved")
    observed.setflags(write=False)
    return PairSets(pattern=pattern, observed=observed, min_joint=int(min_joint))


def quad_sample_size(pattern: ObservationPattern, i: int, j: int, k: int, l: int) -> int:
    """|N_ij intersect N_kl|: samples observing all four variables."""
    _check_indices(pattern.p, i, j, k, l)
    together = pattern.membership[:, [i, j, k, l]].all(axis=1)
    return int(np.asarray(pattern.counts)[together].sum())


@dataclass(frozen=True, eq=False)
class IncompleteDataset:
    """An n x p value array whose NaN entries are exactly the unobserved cells."""

    pattern: ObservationPattern
    values: np.ndarray
    names: Tuple[str, ...]

    def __post_init__(self):
        values = np.array(self.values, dtype=float, copy=True)
        if values.shape != (self.pattern.n, self.pattern.p):
            raise DimensionMismatch(
                f"values have shape {values.shape}, pattern needs {(self.pattern.n, self.pattern.p)}")
        if len(self.names) != self.pattern.p:
            raise InconsistentColumns(f"{len(self.names)} names for {self.pattern.p} variables")
        mask = self.pattern.mask()
        if not np.array_equal(~np.isnan(values), mask):
            raise InputError("defined-entry mask does not match the observation pattern")
        if not np.isfinite(values[mask]).all():
            raise InputError("observed values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "names", tuple(str(name) for name in self.names))

    @property
    def n(self) -> int:
        return self.pattern.n

    @property
    def p(self) -> int:
        return self.pattern.p

    @property
    def mask(self) -> np.ndarray:
        return self.pattern.mask()

    def block(self, k: int) -> np.ndarray:
        """Fully observed (n_k, |V_k|) array of block k."""
        return self.values[self.pattern.block_rows(k)][:, list(self.pattern.subsets[k])]

    def blocks(self) -> List[np.ndarray]:
        return [self.block(k) for k in range(self.pattern.K)]

    def take(self, rows_per_block: Sequence[np.ndarray]) -> "IncompleteDataset":
        """New dataset keeping the given within-block rows (repeats allowed)."""
        if len(rows_per_block) != self.pattern.K:
            raise DimensionMismatch(f"need row selections for {self.pattern.K} blocks")
        blocks = [self.block(k)[np.asarray(rows, dtype=np.int64)]
                  for k, rows in enumerate(rows_per_block)]
        return IncompleteDataset.from_blocks(blocks, self.pattern.subsets, self.p, self.names)

    @classmethod
    def from_blocks(cls, blocks: Sequence[np.ndarray], subsets: Sequence[Sequence[int]],
                    p: Optional[int] = None, names: Optional[Sequence[str]] = None) -> "IncompleteDataset":
        """Assemble from K fully observed blocks over the given variable subsets."""
        subsets = [tuple(subset) for subset in subsets]
        if len(blocks) != len(subsets):
            raise DimensionMismatch(f"{len(blocks)} blocks for {len(subsets)} subsets")
        counts = [np.asarray(block).shape[0] for block in blocks]
        pattern = build_pattern(subsets, counts, p)
        if pattern.K != len(subsets):
            # duplicate subsets: regroup row-wise so blocks stay contiguous
            rows = [_scatter(block, subset, pattern.p) for block, subset in zip(blocks, subsets)]
            return cls.from_array(np.vstack(rows), names)
        values = np.full((pattern.n, pattern.p), np.nan)
        for k, (block, subset) in enumerate(zip(blocks, subsets)):
            block = np.asarray(block, dtype=float)
            if block.ndim != 2 or block.shape[1] != len(subset):
                raise DimensionMismatch(f"block {k} has shape {block.shape}, expected (*, {len(subset)})")
            values[pattern.block_rows(k), sorted(subset)] = block[:, np.argsort(subset)]
        if names is None:
            names = default_names(pattern.p)
        return cls(pattern=pattern, values=values, names=tuple(names))

    @classmethod
    def from_array(cls, values: np.ndarray, names: Optional[Sequence[str]] = None) -> "IncompleteDataset":
        """Group rows of an array with NaN markers by their observed subset."""
        values = np.asarray(values, dtype=float)
        if values.ndim != 2:
            raise DimensionMismatch("values must be a 2-d array")
        mask = ~np.isnan(values)
        empty_rows = ~mask.any(axis=1)
        if empty_rows.any():
            logger.warning(f"Dropping {int(empty_rows.sum())} samples with no observed variable")
            values, mask = values[~empty_rows], mask[~empty_rows]
        never = np.flatnonzero(~mask.any(axis=0))
        if values.shape[0] == 0 or never.size:
            labels = [names[i] for i in never] if names is not None else list(never)
            raise NoObservations(f"variables never observed: {labels}")

        row_patterns, first_seen, inverse = np.unique(
            mask, axis=0, return_index=True, return_inverse=True)
        inverse = np.asarray(inverse).reshape(-1)
        order_of_pattern = np.argsort(first_seen, kind="stable")
        rank = np.empty_like(order_of_pattern)
        rank[order_of_pattern] = np.arange(order_of_pattern.size)
        row_order = np.argsort(rank[inverse], kind="stable")

        subsets = [tuple(np.flatnonzero(row_patterns[u])) for u in order_of_pattern]
        counts = [int((inverse == u).sum()) for u in order_of_pattern]
        pattern = build_pattern(subsets, counts, values.shape[1])
        if names is None:
            names = default_names(pattern.p)
        return cls(pattern=pattern, values=values[row_order], names=tuple(names))


def _scatter(block: np.ndarray, subset: Sequence[int], p: int) -> np.ndarray:
    rows = np.full((np.asarray(block).shape[0], p), np.nan)
    rows[:, list(subset)] = block
    return rows


def default_names(p: int) -> Tuple[str, ...]:
    return tuple(f"x{i + 1}" for i in range(p))


@dataclass(frozen=True, eq=False)
class AuxiliaryCovariates:
    """Per-pair covariates W_ij stored in condensed upper-triangle order.

    Rows are pairs (i, j), i < j, ordered as ``np.triu_indices(p, 1)``; NaN rows
    mark pairs without supplied covariates.
    """

    p: int
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float, copy=True)
        if values.ndim == 1:
            values = values[:, None]
        expected = self.p * (self.p - 1) // 2
        if values.shape[0] != expected:
            raise DimensionMismatch(f"expected {expected} pair rows, got {values.shape[0]}")
        defined = ~np.isnan(values).any(axis=1)
        if not np.isfinite(values[defined]).all():
            raise InputError("auxiliary covariates must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def q(self) -> int:
        return self.values.shape[1]

    @property
    def complete(self) -> bool:
        return not np.isnan(self.values).any()

    def pair_index(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        rows, cols = np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64)
        i, j = np.minimum(rows, cols), np.maximum(rows, cols)
        if np.any(i == j):
            raise IndexOutOfRange("auxiliary covariates are defined for i != j only")
        return i * self.p - i * (i + 1) // 2 + (j - i - 1)

    def values_for(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        """(m, q) covariates for the listed pairs (order of i, j irrelevant)."""
        return self.values[self.pair_index(rows, cols)]

    def covers(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        return ~np.isnan(self.values_for(rows, cols)).any(axis=1)

    @classmethod
    def from_matrix(cls, W: np.ndarray) -> "AuxiliaryCovariates":
        """From a symmetric (p, p) or (p, p, q) array; the diagonal is ignored."""
        W = np.asarray(W, dtype=float)
        if W.ndim == 2:
            W = W[:, :, None]
        if W.ndim != 3 or W.shape[0] != W.shape[1]:
            raise DimensionMismatch(f"expected a (p, p[, q]) array, got shape {W.shape}")
        if not np.allclose(W, W.transpose(1, 0, 2), equal_nan=True):
            raise InputError("auxiliary covariate matrix must be symmetric")
        rows, cols = np.triu_indices(W.shape[0], 1)
        return cls(p=W.shape[0], values=W[rows, cols, :])


# --- file formats -------------------------------------------------------------

def _read_header(path: Path) -> List[str]:
    try:
        first = pd.read_csv(path, nrows=1, header=None, dtype=str, keep_default_na=False,
                            encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise ParseError(f"{path}: empty file")
    except (pd.errors.ParserError, UnicodeDecodeError) as e:
        raise ParseError(f"{path}: {e}")
    names = [str(name).strip() for name in first.iloc[0]]
    unnamed = [i + 1 for i, name in enumerate(names) if not name]
    if unnamed:
        raise InconsistentColumns(f"{path}: unnamed columns at positions {unnamed}")
    duplicates = sorted({name for name in names if names.count(name) > 1})
    if duplicates:
        raise InconsistentColumns(f"{path}: duplicate column names {duplicates}")
    return names


def _read_numeric_csv(path: Path, allow_missing: bool) -> pd.DataFrame:
    """Parse a headed CSV into floats with NaN for missing tokens."""
    names = _read_header(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, na_filter=False,
                            encoding="utf-8")
    except pd.errors.ParserError as e:
        raise ParseError(f"{path}: {e}")
    frame.columns = names

    # short rows come back as NaN even with na_filter off
    short = frame.isna().any(axis=1).to_numpy()
    if short.any():
        line = int(np.flatnonzero(short)[0]) + 2
        raise ParseError(f"{path}: line {line}: expected {len(names)} fields")

    numeric = pd.DataFrame(index=frame.index)
    for name in names:
        text = frame[name].str.strip()
        missing = (text == MISSING_TOKEN) | (text == "")
        parsed = pd.to_numeric(text.where(~missing), errors="coerce")
        bad = (~missing & (parsed.isna() | ~np.isfinite(parsed.fillna(0.0)))).to_numpy()
        if bad.any():
            row = int(np.flatnonzero(bad)[0])
            raise ParseError(f"{path}: line {row + 2}: invalid value {frame[name].iloc[row]!r} "
                             f"in column {name!r}")
        if missing.any() and not allow_missing:
            row = int(np.flatnonzero(missing.to_numpy())[0])
            raise ParseError(f"{path}: line {row + 2}: missing value in fully observed block file")
        numeric[name] = parsed.astype(float)
    return numeric


def load_dataset(path: str, fmt: Optional[str] = None) -> IncompleteDataset:
    """Load a long-CSV file or a block directory of fully observed CSVs."""
    path = Path(path)
    if fmt is None:
        fmt = "block-directory" if path.is_dir() else "long-csv"
    if fmt == "long-csv":
        frame = _read_numeric_csv(path, allow_missing=True)
        if frame.shape[0] == 0:
            raise NoObservations(f"{path}: no samples")
        data = IncompleteDataset.from_array(frame.to_numpy(), list(frame.columns))
    elif fmt == "block-directory":
        files = sorted(p for p in path.iterdir() if p.suffix.lower() == ".csv")
        if not files:
            raise ParseError(f"{path}: no CSV files in block directory")
        frames = [_read_numeric_csv(f, allow_missing=False) for f in files]
        names: List[str] = []
        for frame in frames:
            names.extend(name for name in frame.columns if name not in names)
        # joined by column name; block order is file order
        stacked = pd.concat([frame.reindex(columns=names) for frame in frames], ignore_index=True)
        if stacked.shape[0] == 0:
            raise NoObservations(f"{path}: no samples")
        data = IncompleteDataset.from_array(stacked.to_numpy(dtype=float), names)
    else:
        raise InputError(f"unknown dataset format {fmt!r}")
    logger.info(f"Loaded dataset: n={data.n}, p={data.p}, K={data.pattern.K}")
    return data


def save_dataset(data: IncompleteDataset, path: str) -> None:
    """Write a long-CSV with ``NA`` markers and lossless float rendering."""
    frame = pd.DataFrame(data.values, columns=list(data.names))
    frame.to_csv(path, index=False, na_rep=MISSING_TOKEN, float_format="%.17g")


def load_auxiliary(path: str, names: Sequence[str]) -> AuxiliaryCovariates:
    """Read ``i,j,w1,...,wq`` rows; i/j are 1-based indices or variable names."""
    path = Path(path)
    header = _read_header(path)
    if len(header) < 3 or [h.lower() for h in header[:2]] != ["i", "j"]:
        raise InconsistentColumns(f"{path}: header must be i,j,w1,...,wq")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, na_filter=False,
                            encoding="utf-8")
    except pd.errors.ParserError as e:
        raise ParseError(f"{path}: {e}")
    frame.columns = header
    if frame.isna().any(axis=1).any():
        line = int(np.flatnonzero(frame.isna().any(axis=1).to_numpy())[0]) + 2
        raise ParseError(f"{path}: line {line}: expected {len(header)} fields")

    p = len(names)
    lookup = {str(name): k for k, name in enumerate(names)}
    resolved = []
    for column in header[:2]:
        text = frame[column].str.strip()
        as_int = pd.to_numeric(text, errors="coerce")
        by_name = text.map(lookup)
        index = np.where(as_int.notna(), as_int - 1, by_name)
        index = pd.to_numeric(pd.Series(index), errors="coerce")
        bad = (index.isna() | (index < 0) | (index >= p) | (index % 1 != 0)).to_numpy()
        if bad.any():
            row = int(np.flatnonzero(bad)[0])
            raise ParseError(f"{path}: line {row + 2}: unknown variable {text.iloc[row]!r}")
        resolved.append(index.to_numpy(dtype=np.int64))
    rows, cols = resolved
    same = rows == cols
    if same.any():
        row = int(np.flatnonzero(same)[0])
        raise ParseError(f"{path}: line {row + 2}: covariates are defined for i != j only")

    w = np.empty((frame.shape[0], len(header) - 2))
    for c, column in enumerate(header[2:]):
        parsed = pd.to_numeric(frame[column].str.strip(), errors="coerce")
        bad = (parsed.isna() | ~np.isfinite(parsed.fillna(0.0))).to_numpy()
        if bad.any():
            row = int(np.flatnonzero(bad)[0])
            raise ParseError(f"{path}: line {row + 2}: invalid value {frame[column].iloc[row]!r} "
                             f"in column {column!r}")
        w[:, c] = parsed.to_numpy(dtype=float)

    i, j = np.minimum(rows, cols), np.maximum(rows, cols)
    condensed = i * p - i * (i + 1) // 2 + (j - i - 1)
    duplicated = pd.Series(condensed).duplicated().to_numpy()
    if duplicated.any():
        row = int(np.flatnonzero(duplicated)[0])
        raise DuplicatePair(f"{path}: line {row + 2}: pair ({names[i[row]]}, {names[j[row]]}) "
                            f"listed twice")

    values = np.full((p * (p - 1) // 2, w.shape[1]), np.nan)
    values[condensed] = w
    aux = AuxiliaryCovariates(p=p, values=values)
    if not aux.complete:
        logger.warning(f"Auxiliary covariates cover {condensed.size} of {values.shape[0]} pairs")
    return aux
