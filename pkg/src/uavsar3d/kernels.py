"""Kernel backend selection.

The compiled core (``_kernels_c``, Cython) is preferred when it was built;
otherwise the NumPy fallback (``_kernels_py``) is used. Override with the
environment variable ``UAVSAR3D_KERNELS=compiled`` or
``UAVSAR3D_KERNELS=python``. Both backends implement the same contracts
with the same tie-breaking, so results do not depend on the choice (the
test suite asserts parity).
"""

from __future__ import annotations

import os

from uavsar3d import _kernels_py
from uavsar3d._kernels_py import AuctionConvergenceError

__all__ = [
    "AuctionConvergenceError",
    "auction_assign",
    "available_backends",
    "backend_name",
    "farthest_point_indices",
    "get_backend",
    "nn_dists",
    "ray_cast",
]

try:
    from uavsar3d import _kernels_c
except ImportError:  # extension not built
    _kernels_c = None


def available_backends():
    names = {"python": _kernels_py}
    if _kernels_c is not None:
        names["compiled"] = _kernels_c
    return names


def get_backend(name):
    backends = available_backends()
    if name not in backends:
        raise ValueError(
            "unknown kernel backend %r (available: %s)"
            % (name, ", ".join(sorted(backends)))
        )
    return backends[name]


def _select():
    forced = os.environ.get("UAVSAR3D_KERNELS", "").strip().lower()
    if forced:
        return get_backend(forced)
    return _kernels_c if _kernels_c is not None else _kernels_py


_impl = _select()

backend_name = _impl.BACKEND_NAME
ray_cast = _impl.ray_cast
nn_dists = _impl.nn_dists
farthest_point_indices = _impl.farthest_point_indices
auction_assign = _impl.auction_assign
