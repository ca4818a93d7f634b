"""Backend selection for the Monte Carlo kernels.

The compiled extension is used when it imports; set ``ATBP_PURE_PYTHON=1``
to force the numpy fallback.  Both expose ``posterior_sums`` and
``unit_means`` with identical signatures.
"""
from __future__ import annotations

import os
from types import ModuleType

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def get_backend(name: str) -> ModuleType:
    if name == "python":
        return _pykernels
    if name == "compiled":
        if _ckernels is None:
            raise ImportError("the compiled kernels are not built; run `pip install -e .`")
        return _ckernels
    raise ValueError(f"unknown backend {name!r}")


if _ckernels is not None and not os.environ.get("ATBP_PURE_PYTHON"):
    BACKEND = "compiled"
else:
    BACKEND = "python"

_impl = get_backend(BACKEND)
posterior_sums = _impl.posterior_sums
unit_means = _impl.unit_means
