"""
Configuration module for the CrowdAttr toolkit.

This module loads environment variables from a .env file and provides
runtime settings shared by the HTTP gateway and the command line:
logging, worker pool size and the default algorithm parameters.
"""

import os
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()


def _get_bool(name: str, default: str = "false") -> bool:
    """
    Reads a boolean flag from the environment.

    Args:
        name (str): Environment variable name.
        default (str): Value used when the variable is not set.

    Returns:
        bool: True for "1", "true", "yes" or "on" (case-insensitive).
    """
    return os.getenv(name, default).strip().lower() in {"1", "true", "yes", "on"}


def _get_int(name: str, default: int) -> int:
    """
    Reads an integer from the environment, falling back to the default on garbage.

    Args:
        name (str): Environment variable name.
        default (int): Value used when the variable is unset or not an integer.

    Returns:
        int: Parsed value.
    """
    raw = os.getenv(name, "")
    try:
        return int(raw) if raw.strip() else default
    except ValueError:
        return default


class Config:
    """
    Configuration class for application settings.

    Values come from the process environment (optionally seeded from .env).
    Command-line flags and request bodies override the algorithm defaults.
    """

    # Application Settings
    APP_ENV: str = os.getenv("APP_ENV", "dev")
    DEBUG: bool = _get_bool("DEBUG")
    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "DEBUG" if DEBUG else "INFO").upper()

    # Per-image work is spread over this many threads
    WORKERS: int = _get_int("WORKERS", 1)

    CORS_ORIGINS: str = os.getenv(
        "CORS_ORIGINS",
        "http://localhost:5173,http://127.0.0.1:5173",
    )

    # Algorithm defaults
    DEFAULT_DOWNSAMPLE: int = _get_int("DEFAULT_DOWNSAMPLE", 4)
    DEFAULT_EMBEDDING_DIM: int = _get_int("DEFAULT_EMBEDDING_DIM", 4)

    @classmethod
    def validate(cls) -> None:
        """
        Validates that configuration values are usable.

        Raises:
            ValueError: If any configuration parameter is out of range.
        """
        problems = []
        if cls.WORKERS < 1:
            problems.append(f"WORKERS must be >= 1 (got {cls.WORKERS})")
        if cls.DEFAULT_DOWNSAMPLE < 1:
            problems.append(f"DEFAULT_DOWNSAMPLE must be >= 1 (got {cls.DEFAULT_DOWNSAMPLE})")
        if cls.DEFAULT_EMBEDDING_DIM < 2:
            problems.append(
                f"DEFAULT_EMBEDDING_DIM must be >= 2 (got {cls.DEFAULT_EMBEDDING_DIM})"
            )
        if cls.LOG_LEVEL not in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}:
            problems.append(f"LOG_LEVEL not recognised: {cls.LOG_LEVEL}")

        if problems:
            raise ValueError(f"Invalid configuration: {'; '.join(problems)}")

    @classmethod
    def display_config(cls) -> dict:
        """
        Returns the configuration for logging/debugging.

        Returns:
            dict: Dictionary with configuration values.
        """
        return {
            "APP_ENV": cls.APP_ENV,
            "DEBUG": cls.DEBUG,
            "LOG_LEVEL": cls.LOG_LEVEL,
            "WORKERS": cls.WORKERS,
            "CORS_ORIGINS": cls.CORS_ORIGINS,
            "DEFAULT_DOWNSAMPLE": cls.DEFAULT_DOWNSAMPLE,
            "DEFAULT_EMBEDDING_DIM": cls.DEFAULT_EMBEDDING_DIM,
        }

    @classmethod
    def get_cors_origins(cls) -> list[str]:
        """
        Parses the configured CORS origins into a list.

        Returns:
            list[str]: Origins allowed to access the API via CORS.
        """

        return [origin.strip() for origin in cls.CORS_ORIGINS.split(",") if origin.strip()]


# Create a global config instance
config = Config()
