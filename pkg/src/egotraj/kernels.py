"""Backend selection for the hot kernels.

The compiled extension is used when it was built; setting
``EGOTRAJ_PURE_PYTHON=1`` forces the numpy fallback.
"""

import os

if os.environ.get("EGOTRAJ_PURE_PYTHON", "") not in ("", "0"):
    from ._kernels_py import cell_histograms, chi2_distance_matrix, smo_solve
    BACKEND = "python"
else:
    try:
        from ._kernels import cell_histograms, chi2_distance_matrix, smo_solve
        BACKEND = "cython"
    except ImportError:  # extension not built
        from ._kernels_py import cell_histograms, chi2_distance_matrix, smo_solve
        BACKEND = "python"

__all__ = ["BACKEND", "cell_histograms", "chi2_distance_matrix", "smo_solve"]
