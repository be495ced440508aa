"""Select the compiled walk core when available, else the numpy fallback.

Set ``FRDECOMP_PURE_PYTHON=1`` to force the fallback.
"""
import logging
import os

logger = logging.getLogger(__name__)

if os.environ.get("FRDECOMP_PURE_PYTHON", "") not in ("", "0"):
    from ._walk_py import simulate_exits
    BACKEND = "python"
else:
    try:
        from ._walk_ext import simulate_exits
        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on build
        logger.info("compiled walk core unavailable, using numpy fallback")
        from ._walk_py import simulate_exits
        BACKEND = "python"

__all__ = ["simulate_exits", "BACKEND"]
