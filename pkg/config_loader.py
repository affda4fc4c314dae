"""
Configuration loader for lfocv runs.
Handles sampler defaults, worker limits and output locations from config.json.
"""

import json
import os
import sys
from typing import Any, Dict, Optional

from model_api import SamplerConfig


# Environment override for the worker cap.
THREADS_ENV_VAR = "LFOCV_THREADS"

CONFIG_KEYS = ("sampler", "threads", "output_dir", "psis_debug")


def _parse_threads(raw: Any, source: str) -> int:
    try:
        threads = int(raw)
    except (TypeError, ValueError) as e:
        raise ValueError(f"{source} must be an integer, got {raw!r}") from e
    if threads < 1:
        raise ValueError(f"{source} must be at least 1, got {threads}")
    return threads


def get_app_dir() -> str:
    """
    Get the directory the application lives in.

    Returns:
        The executable's directory when frozen, otherwise the directory
        holding this source file. Schemas and bundled data are found there.
    """
    if getattr(sys, 'frozen', False):
        return os.path.dirname(sys.executable)
    return os.path.dirname(os.path.abspath(__file__))


def get_default_config_path() -> str:
    """
    Get the default config.json path.

    Returns:
        Path to config.json beside the application, independent of the
        working directory the CLI is launched from.
    """
    return os.path.join(get_app_dir(), "config.json")


class Config:
    """Configuration manager for sampler settings and run resources."""

    def __init__(self, config_file: Optional[str] = None):
        """
        Initialize configuration manager.

        Args:
            config_file: Path to the configuration file. Defaults to
                config.json beside the application, which may be absent.
        """
        self.config_file = config_file or get_default_config_path()
        self._required = config_file is not None
        self._config = None

    def load(self) -> Dict[str, Any]:
        """
        Load configuration from file.

        Returns:
            Dictionary containing configuration values. A missing default
            config.json yields an empty dictionary.

        Raises:
            FileNotFoundError: If an explicitly named config file doesn't exist
            ValueError: If the file is not a JSON object
        """
        if self._config is not None:
            return self._config

        if not os.path.exists(self.config_file):
            if self._required:
                raise FileNotFoundError(
                    f"Configuration file not found: {self.config_file}\n"
                    f"Copy config.template.json to start one."
                )
            self._config = {}
            return self._config

        try:
            with open(self.config_file, 'r', encoding='utf-8') as f:
                loaded = json.load(f)
        except json.JSONDecodeError as e:
            raise ValueError(f"Invalid JSON in {self.config_file}: {e}") from e
        if not isinstance(loaded, dict):
            raise ValueError(f"{self.config_file} must hold a JSON object")

        self._config = loaded
        return self._config

    def get(self, key: str, default: Any = None) -> Any:
        """
        Get a configuration value.

        Args:
            key: Configuration key
            default: Default value if key doesn't exist

        Returns:
            Configuration value or default
        """
        cfg = self.load()
        return cfg.get(key, default)

    @property
    def sampler(self) -> SamplerConfig:
        """Get the sampler settings, falling back to the built-in defaults."""
        values = self.get('sampler') or {}
        if not isinstance(values, dict):
            raise ValueError("sampler must be a JSON object")
        try:
            return SamplerConfig.from_dict(values)
        except TypeError as e:
            raise ValueError(f"Invalid sampler settings: {e}") from e

    @property
    def threads(self) -> int:
        """
        Get the worker process cap.

        LFOCV_THREADS takes precedence over the file; the CPU count is the
        fallback.
        """
        raw = os.environ.get(THREADS_ENV_VAR)
        if raw is not None and raw.strip():
            return _parse_threads(raw, THREADS_ENV_VAR)
        raw = self.get('threads')
        if raw is None:
            return os.cpu_count() or 1
        return _parse_threads(raw, 'threads')

    @property
    def output_dir(self) -> str:
        """Get the directory relative outputs are written under."""
        value = self.get('output_dir') or os.getcwd()
        if not isinstance(value, str):
            raise ValueError("output_dir must be a path string")
        return value

    @property
    def psis_debug(self) -> Optional[str]:
        """Get the PSIS diagnostic dump path, if one is configured."""
        value = self.get('psis_debug')
        if value is not None and not isinstance(value, str):
            raise ValueError("psis_debug must be a path string or null")
        return value or None

    def save(self, config_data: Dict[str, Any]) -> None:
        """
        Save configuration to file.

        Args:
            config_data: Dictionary of configuration values to save
        """
        with open(self.config_file, 'w', encoding='utf-8') as f:
            json.dump(config_data, f, indent=2)

        self._config = config_data

    def validate(self) -> None:
        """
        Check every known key of the loaded file.

        Raises:
            ValueError: If a value has the wrong type or range
        """
        _ = self.sampler, self.output_dir, self.psis_debug
        if self.get('threads') is not None:
            _parse_threads(self.get('threads'), 'threads')

    def update(self, key: str, value: Any) -> None:
        """
        Update a single configuration value.

        The file is left untouched when the new value does not validate.

        Args:
            key: Configuration key to update
            value: New value

        Raises:
            ValueError: If the key is unknown or the value is invalid
        """
        if key not in CONFIG_KEYS:
            raise ValueError(
                f"Unknown config key {key!r}; expected one of {', '.join(CONFIG_KEYS)}"
            )
        previous = self.load()
        self._config = dict(previous, **{key: value})
        try:
            self.validate()
        except ValueError:
            self._config = previous
            raise
        self.save(self._config)


def load_config(config_file: Optional[str] = None) -> Config:
    """
    Load configuration from file.

    Args:
        config_file: Path to configuration file. Defaults to config.json
            beside the application.

    Returns:
        Config object
    """
    return Config(config_file)


if __name__ == "__main__":
    try:
        config = load_config()
        print(f"Sampler: {config.sampler}")
        print(f"Threads: {config.threads}")
    except FileNotFoundError as e:
        print(f"Error: {e}")
    except ValueError as e:
        print(f"Error loading config: {e}")
