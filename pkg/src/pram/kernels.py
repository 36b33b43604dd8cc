"""Select the compiled kernel, falling back to numpy.

Set ``PRAM_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

if os.environ.get("PRAM_PURE_PYTHON", "").strip() not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

MAX_COMPILED_D = 32


def glm_score_jac(X, r, W, beta, link, want_jac=True):
    if X.shape[2] > MAX_COMPILED_D:
        return _kernels_py.glm_score_jac(X, r, W, beta, link, want_jac)
    return _impl.glm_score_jac(X, r, W, beta, link, want_jac)


def glm_terms(X, r, W, beta, link):
    return _impl.glm_terms(X, r, W, beta, link)
