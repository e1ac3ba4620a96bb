"""Kernel selection.

The compiled extension is used when importable; set ``IMPFILTER_PURE=1`` to
force the numpy path. Both expose the same ``knn_query`` signature.
"""
import os

from . import _knn_py

if os.environ.get("IMPFILTER_PURE"):
    _ext = None
else:
    try:
        from . import _knn_ext as _ext
    except ImportError:  # extension not built
        _ext = None

BACKEND = "compiled" if _ext is not None else "python"
knn_query = _ext.knn_query if _ext is not None else _knn_py.knn_query
knn_query_py = _knn_py.knn_query
knn_query_ext = _ext.knn_query if _ext is not None else None
