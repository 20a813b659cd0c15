"""Select the compiled kernels when available, else the numpy fallback.

Set ``TRIRL_BACKEND=python`` to force the fallback.
"""

import importlib
import logging
import os

from trirl import _kernels_py as reference_kernels

log = logging.getLogger(__name__)


def _load():
    if os.environ.get("TRIRL_BACKEND", "").lower() == "python":
        return reference_kernels, "python"
    try:
        return importlib.import_module("trirl._kernels"), "compiled"
    except ImportError:  # pragma: no cover - depends on the build
        log.debug("compiled kernels unavailable, using numpy fallback")
        return reference_kernels, "python"


kernels, BACKEND = _load()

__all__ = ["BACKEND", "kernels", "reference_kernels"]
