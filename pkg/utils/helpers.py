import json
import logging
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime
from pathlib import Path
from typing import Any, Callable, Iterable, List

import numpy as np


def setup_logging(level: str = None) -> logging.Logger:
    """Set up logging configuration."""
    if level is None:
        from config.settings import Config
        level = Config.LOG_LEVEL
    logging.basicConfig(
        level=getattr(logging, str(level).upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )
    return logging.getLogger(__name__)


def _to_jsonable(value: Any) -> Any:
    """Convert numpy scalars/arrays nested in reports to plain JSON types."""
    if isinstance(value, dict):
        return {str(k): _to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _to_jsonable(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        # JSON has no inf/nan
        return value if np.isfinite(value) else None
    if isinstance(value, Path):
        return str(value)
    return value


def save_json(data: Any, filepath: str) -> None:
    """Save data to JSON file."""
    with open(filepath, 'w', encoding='utf-8') as f:
        json.dump(_to_jsonable(data), f, indent=2, ensure_ascii=False, sort_keys=True)


def load_json(filepath: str) -> Any:
    """Load data from JSON file."""
    with open(filepath, 'r', encoding='utf-8') as f:
        return json.load(f)


def create_unique_output_directory(base_name: str = "covcomplete_run", parent: str = None) -> str:
    """Create a unique directory for this run's output files."""
    timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
    directory_name = f"{base_name}_{timestamp}"

    root = Path(parent) if parent else Path(".")
    output_dir = root / directory_name

    # Handle potential collisions (several runs within one second)
    counter = 1
    original_name = directory_name
    while output_dir.exists():
        directory_name = f"{original_name}_{counter:03d}"
        output_dir = root / directory_name
        counter += 1

    output_dir.mkdir(parents=True, exist_ok=True)

    return str(output_dir)


def get_output_file_path(output_dir: str, filename: str) -> str:
    """Get the full path for an output file in the specified directory."""
    return str(Path(output_dir) / filename)


def replicate_rng(seed: int, *index: int) -> np.random.Generator:
    """Independent random stream derived from (seed, index...)."""
    return np.random.default_rng([int(seed), *[int(i) for i in index]])


def parallel_map(func: Callable, items: Iterable, threads: int = 1) -> List[Any]:
    """Map ``func`` over ``items`` keeping input order.

    Runs serially for ``threads <= 1``; otherwise on a thread pool. Results
    never depend on the schedule because each item carries its own seed.
    """
    items = list(items)
    if threads is None or threads <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(threads, len(items))) as pool:
        return list(pool.map(func, items))


def derive_seed(seed: int, *index: int) -> int:
    """Integer seed for APIs that take one (sklearn ``random_state``, nested runs)."""
    return int(np.random.SeedSequence([int(seed), *[int(i) for i in index]]).generate_state(1)[0])
