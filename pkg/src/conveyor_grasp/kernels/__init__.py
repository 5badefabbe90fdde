"""Hot kernels with a compiled (Cython) backend and a NumPy fallback.

The compiled module is used when it imports and ``CONVEYOR_GRASP_PURE`` is
not set; ``BACKEND`` reports which one is active.
"""

from __future__ import annotations

import os

import numpy as np

from . import _pure

try:
    if os.environ.get("CONVEYOR_GRASP_PURE"):
        raise ImportError("pure-Python backend forced by CONVEYOR_GRASP_PURE")
    from . import _core as _impl  # type: ignore[attr-defined]

    BACKEND = "cython"
except ImportError:
    _impl = _pure
    BACKEND = "python"

__all__ = ["BACKEND", "SpatialGrid", "backend_module", "render_depth", "ransac_triangles"]

_MAX_CELLS = 2_000_000


def backend_module(name: str | None = None):
    """Return the kernel module for ``name`` ("cython" / "python"), or the active one."""
    if name is None:
        return _impl
    if name == "python":
        return _pure
    if name == "cython":
        from . import _core  # noqa: F401  (raises ImportError when not built)

        return _core
    raise ValueError(f"unknown backend {name!r}")


def render_depth(*args, backend=None):
    return backend_module(backend).render_depth(*args)


def ransac_triangles(*args, backend=None):
    return backend_module(backend).ransac_triangles(*args)


class SpatialGrid:
    """Uniform hash grid over a fixed reference point set.

    ``query`` returns the index of (and squared distance to) the nearest
    reference point, or -1 / inf when none lies within ``max_dist``.
    """

    def __init__(self, points, cell: float):
        pts = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
        if cell <= 0:
            raise ValueError("cell size must be positive")
        self.points = pts
        if len(pts):
            lo = pts.min(axis=0)
            span = pts.max(axis=0) - lo
        else:
            lo = np.zeros(3)
            span = np.zeros(3)
        # coarsen the grid rather than allocate huge cell tables
        while np.prod(np.floor(span / cell) + 1) > _MAX_CELLS:
            cell *= 2.0
        self.cell = float(cell)
        self.origin = np.ascontiguousarray(lo, dtype=np.float64)
        self.dims = np.ascontiguousarray((np.floor(span / self.cell) + 1).astype(np.int64))
        ijk = np.floor((pts - self.origin) / self.cell).astype(np.int64)
        ijk = np.minimum(np.maximum(ijk, 0), self.dims - 1)
        cid = (ijk[:, 0] * self.dims[1] + ijk[:, 1]) * self.dims[2] + ijk[:, 2]
        self.order = np.ascontiguousarray(np.argsort(cid, kind="stable"), dtype=np.int64)
        counts = np.bincount(cid, minlength=int(np.prod(self.dims)))
        self.cell_start = np.ascontiguousarray(np.concatenate([[0], np.cumsum(counts)]), dtype=np.int64)

    def __len__(self):
        return len(self.points)

    def query(self, queries, max_dist: float = np.inf, backend=None):
        q = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
        idx = np.empty(len(q), dtype=np.int64)
        d2 = np.empty(len(q), dtype=np.float64)
        if len(self.points) == 0:
            idx[:] = -1
            d2[:] = np.inf
            return idx, d2
        backend_module(backend).nn_query(
            self.points, self.order, self.cell_start, self.origin, self.cell, self.dims,
            q, float(max_dist), idx, d2,
        )
        return idx, d2

    def count_within(self, queries, radius: float, backend=None) -> int:
        idx, _ = self.query(queries, radius, backend=backend)
        return int(np.count_nonzero(idx >= 0))
