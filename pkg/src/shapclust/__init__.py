"""SHAP-based supervised clustering with generalized waterfall paths."""

import os

# The system TBB is too old for numba; pin the portable thread pool.
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

__version__ = "0.1.0"
