"""Deterministic 2D grid primitives shared by every other module.

Three kernels do the heavy lifting during training: all-ones box-filter sums,
flood fill, and per-pixel multinomial sampling. They are dispatched to a
compiled extension when available and to a numpy fallback otherwise; both
produce identical results, so a training trajectory does not depend on which
backend is active. Set ``CAVAT_BACKEND=numpy`` or ``CAVAT_BACKEND=cython`` to
force a choice.

Conventions: an image is a float64 (H, W) array; a mask is an integer (H, W)
array of class labels; a probability map is a float64 (H, W, C) array whose
pixel rows sum to 1; a component is a boolean (H, W) array (the set of its
True coordinates).
"""

from __future__ import annotations

import os

import numpy as np

from . import _kernels_py
from .errors import InvalidArgumentError, InvalidDistributionError, InvalidSeedError
from .rng import RngState

__all__ = [
    "active_backend",
    "box_sum",
    "flood_fill",
    "is_connected",
    "sample_mask",
    "validate_probmap",
]

PROB_TOL = 1e-6  # absolute per-pixel normalization tolerance


def _select_backend():
    forced = os.environ.get("CAVAT_BACKEND", "").lower()
    if forced == "numpy":
        return _kernels_py
    try:
        from . import _gridext
    except ImportError:
        if forced == "cython":
            raise ImportError(
                "CAVAT_BACKEND=cython requested but the compiled extension is "
                "not available; reinstall with a C compiler present"
            )
        return _kernels_py
    return _gridext


_backend = _select_backend()


def active_backend() -> str:
    """Name of the kernel backend in use ('cython' or 'numpy')."""
    return _backend.BACKEND_NAME


def _as_grid(grid) -> np.ndarray:
    a = np.asarray(grid)
    if a.ndim != 2:
        raise InvalidArgumentError(f"expected a 2D grid, got shape {a.shape}")
    if a.dtype == np.float64:
        return a
    if a.dtype == bool or np.issubdtype(a.dtype, np.integer):
        return a.astype(np.int64)
    return a.astype(np.float64)


def box_sum(grid, window: int):
    """Sum of ``grid`` over the window x window neighbourhood of each cell.

    Zero padded at the borders, output has the input's shape. Integer input
    yields exact integer output. ``window`` must be odd, positive and no
    larger than either grid dimension.
    """
    a = _as_grid(grid)
    if window <= 0 or window % 2 == 0:
        raise InvalidArgumentError(f"window must be odd and positive, got {window}")
    if window > min(a.shape):
        raise InvalidArgumentError(
            f"window {window} exceeds grid extent {a.shape}"
        )
    return _backend.box_sum(a, int(window))


def _as_foreground(mask) -> np.ndarray:
    a = np.asarray(mask)
    if a.ndim != 2:
        raise InvalidArgumentError(f"expected a 2D mask, got shape {a.shape}")
    if a.dtype == bool:
        return a
    return a != 0


def flood_fill(mask, seed, adjacency: int = 4) -> np.ndarray:
    """Connected foreground component containing ``seed``, as a boolean mask.

    ``mask`` is binary (nonzero = foreground), ``seed`` an (row, col) pair on
    a foreground pixel, ``adjacency`` 4 or 8.
    """
    fg = _as_foreground(mask)
    if adjacency not in (4, 8):
        raise InvalidArgumentError(f"adjacency must be 4 or 8, got {adjacency}")
    r, c = int(seed[0]), int(seed[1])
    if not (0 <= r < fg.shape[0] and 0 <= c < fg.shape[1]):
        raise InvalidSeedError(f"seed {(r, c)} outside grid {fg.shape}")
    if not fg[r, c]:
        raise InvalidSeedError(f"seed {(r, c)} is a background pixel")
    return _backend.flood_fill(fg, r, c, adjacency)


def is_connected(mask, adjacency: int = 4) -> bool:
    """True when the foreground of ``mask`` is empty or one component."""
    fg = _as_foreground(mask)
    coords = np.argwhere(fg)
    if coords.shape[0] == 0:
        return True
    comp = flood_fill(fg, (coords[0, 0], coords[0, 1]), adjacency)
    return bool(comp.sum() == coords.shape[0])


def validate_probmap(p) -> np.ndarray:
    """Check ProbMap invariants; returns the map as float64 (H, W, C)."""
    a = np.asarray(p, dtype=np.float64)
    if a.ndim != 3 or a.shape[-1] < 2:
        raise InvalidDistributionError(
            f"expected (H, W, C>=2) probability map, got shape {a.shape}"
        )
    if not np.isfinite(a).all():
        raise InvalidDistributionError("probability map contains non-finite values")
    if a.min() < 0.0 or a.max() > 1.0:
        raise InvalidDistributionError("probability values outside [0, 1]")
    rows = a.sum(axis=-1)
    err = np.abs(rows - 1.0).max()
    if err > PROB_TOL:
        raise InvalidDistributionError(
            f"pixel distributions sum to 1 +/- {err:.3g}, tolerance {PROB_TOL}"
        )
    return a


def sample_mask(p, rng: RngState, validate: bool = True) -> np.ndarray:
    """Draw an integer mask, each pixel's label from its own distribution.

    Consumes exactly one (H, W) uniform draw from ``rng`` regardless of
    backend, so streams stay aligned across implementations. ``validate``
    may be disabled for maps that are softmax outputs by construction.
    """
    a = validate_probmap(p) if validate else np.asarray(p, dtype=np.float64)
    u = rng.uniform(a.shape[:2])
    return _backend.sample_from_uniforms(a, u)
