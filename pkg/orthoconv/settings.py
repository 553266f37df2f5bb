"""
Process-wide numerical settings read from the environment (and a local .env file).
"""
import os

from dotenv import load_dotenv

from orthoconv.exceptions import ConfigError
from orthoconv.logger import get_logger

logger = get_logger()

DEFAULT_DENSE_CAP = 4_000_000
DEFAULT_JACOBI_MAX_SWEEPS = 60
DEFAULT_JACOBI_TOL = 1e-12


class Settings:
    """
    Singleton holding the dense-materialization cap and Jacobi SVD limits.
    Values come from ORTHOCONV_DENSE_CAP, ORTHOCONV_JACOBI_MAX_SWEEPS and ORTHOCONV_JACOBI_TOL.
    """
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super(Settings, cls).__new__(cls)
            cls._instance._load()
        return cls._instance

    def _load(self):
        load_dotenv()
        self.dense_cap = self._read('ORTHOCONV_DENSE_CAP', int, DEFAULT_DENSE_CAP)
        self.jacobi_max_sweeps = self._read('ORTHOCONV_JACOBI_MAX_SWEEPS', int, DEFAULT_JACOBI_MAX_SWEEPS)
        self.jacobi_tol = self._read('ORTHOCONV_JACOBI_TOL', float, DEFAULT_JACOBI_TOL)
        if self.dense_cap < 1 or self.jacobi_max_sweeps < 1 or self.jacobi_tol <= 0:
            raise ConfigError(
                f"Settings must be positive: dense_cap={self.dense_cap}, "
                f"jacobi_max_sweeps={self.jacobi_max_sweeps}, jacobi_tol={self.jacobi_tol}"
            )
        logger.debug(f"Loaded settings: dense_cap={self.dense_cap}, "
                     f"jacobi_max_sweeps={self.jacobi_max_sweeps}, jacobi_tol={self.jacobi_tol}")

    @staticmethod
    def _read(name, cast, default):
        raw = os.environ.get(name)
        if raw is None or raw == "":
            return default
        try:
            return cast(raw)
        except ValueError as e:
            raise ConfigError(f"Environment variable {name}={raw!r} is not a valid {cast.__name__}") from e


def get_settings() -> Settings:
    """
    Get the settings instance.

    Returns:
        Singleton instance of Settings
    """
    return Settings()
