"""
Health Service - service status reporting.

Reports the runtime environment and the state of the worker pool.
"""

from typing import Any, Dict
import logging

from app.back.config import config
from app.back.workers import get_pool_status

logger = logging.getLogger(__name__)


def check_health() -> Dict[str, Any]:
    """
    Perform a health check of the application.

    Returns:
        dict: Status, environment and worker pool state.

    Raises:
        Exception: If the pool status cannot be read.
    """
    try:
        return {
            "status": "healthy",
            "environment": config.APP_ENV,
            "workers": get_pool_status(),
            "defaults": {
                "downsample": config.DEFAULT_DOWNSAMPLE,
                "embedding_dim": config.DEFAULT_EMBEDDING_DIM,
            },
        }
    except Exception as e:
        logger.error(f"Health check failed: {str(e)}")
        raise
