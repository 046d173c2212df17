"""Backend package: services, HTTP gateway and command line."""

from .config import config  # noqa: F401

__all__ = ["config"]
