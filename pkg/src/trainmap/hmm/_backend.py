"""Kernel backend selection.

The compiled Cython kernels are used when the extension built; otherwise
the numpy implementation takes over. Set TRAINMAP_PURE_PYTHON=1 to force
the fallback (the benchmark uses this to compare the two).
"""

import os

if os.environ.get("TRAINMAP_PURE_PYTHON") == "1":
    from . import _kernels_py as kernels

    BACKEND = "python"
else:
    try:
        from . import _kernels as kernels  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        from . import _kernels_py as kernels  # type: ignore[no-redef]

        BACKEND = "python"
