"""
Experiment preset loader for the simulation lab.
"""

import json
from pathlib import Path
from typing import Any, Dict, List

DEFAULT_CONFIG_DIR = Path(__file__).resolve().parent.parent / "experiment_configs"


class ExperimentConfigLoader:
    """Loads and caches experiment presets from an external JSON file."""

    def __init__(self, experiment_configs_dir: str = None):
        """Initialize the loader with the experiment configs directory."""
        self.experiment_configs_dir = Path(experiment_configs_dir) if experiment_configs_dir else DEFAULT_CONFIG_DIR
        self._cache = {}
        self._parameters = None

    def load_parameters(self) -> Dict[str, Any]:
        """Load experiment parameters from JSON file, with caching."""
        if self._parameters is not None:
            return self._parameters

        params_file = self.experiment_configs_dir / "experiment-parameters.json"

        if not params_file.exists():
            raise FileNotFoundError(f"Experiment parameters file not found: {params_file}")

        try:
            with open(params_file, 'r', encoding='utf-8') as f:
                self._parameters = json.load(f)
            return self._parameters

        except Exception as e:
            raise RuntimeError(f"Error loading experiment parameters: {str(e)}")

    def get_grid_settings(self) -> Dict[str, Any]:
        """Shared grids (alpha grid size, spline knot counts, folds)."""
        params = self.load_parameters()
        return params.get("grids", {})

    def get_experiment_names(self) -> List[str]:
        """Preset names accepted by the simulate command."""
        params = self.load_parameters()
        return sorted(params.get("experiments", {}))

    def get_experiment_config(self, name: str) -> Dict[str, Any]:
        """Preset for ``name`` merged over the shared grids; KeyError if unknown."""
        if name in self._cache:
            return dict(self._cache[name])

        experiments = self.load_parameters().get("experiments", {})
        if name not in experiments:
            raise KeyError(name)

        config = dict(self.get_grid_settings())
        config.update(experiments[name])
        config.setdefault("experiment", name)
        self._cache[name] = config
        return dict(config)

    def reload_config(self, name: str = None):
        """Force reload a preset from file (clears cache)."""
        if name:
            self._cache.pop(name, None)
        else:
            self._cache.clear()
            self._parameters = None


# Global instance for easy access
experiment_config_loader = ExperimentConfigLoader()
