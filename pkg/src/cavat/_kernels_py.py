"""Pure-numpy fallback implementations of the hot grid kernels.

The compiled extension (``cavat._gridext``) implements the same three
kernels with identical arithmetic, element order and tie behaviour, so the
two backends are interchangeable bit for bit. Keep any semantic change in
sync with ``_gridext.pyx``.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "numpy"


def box_sum(grid: np.ndarray, window: int) -> np.ndarray:
    """Sum of ``grid`` over a window x window box centered at each cell.

    Borders are zero padded; integer input gives exact integer output. The
    float path uses a fixed summation order (row prefix sums, then column
    prefix sums, then a 4-term combination) shared with the compiled kernel.
    """
    h, w = grid.shape
    r = window // 2
    padded = np.zeros((h + 2 * r, w + 2 * r), dtype=grid.dtype)
    padded[r : r + h, r : r + w] = grid
    # Inclusive 2D prefix sums with a zero guard row/column.
    s = np.zeros((h + 2 * r + 1, w + 2 * r + 1), dtype=grid.dtype)
    s[1:, 1:] = padded.cumsum(axis=0).cumsum(axis=1)
    return (s[window:, window:] - s[:-window, window:]) - s[window:, :-window] + s[
        :-window, :-window
    ]


_SHIFTS_4 = ((-1, 0), (1, 0), (0, -1), (0, 1))
_SHIFTS_8 = _SHIFTS_4 + ((-1, -1), (-1, 1), (1, -1), (1, 1))


def flood_fill(fg: np.ndarray, seed_r: int, seed_c: int, adjacency: int) -> np.ndarray:
    """Connected component of (seed_r, seed_c) in boolean grid ``fg``.

    Frontier dilation: grow the component one ring of neighbours at a time.
    """
    shifts = _SHIFTS_8 if adjacency == 8 else _SHIFTS_4
    comp = np.zeros(fg.shape, dtype=bool)
    comp[seed_r, seed_c] = True
    frontier = comp.copy()
    while frontier.any():
        nb = np.zeros(fg.shape, dtype=bool)
        for dr, dc in shifts:
            src = frontier[
                max(0, -dr) : frontier.shape[0] - max(0, dr),
                max(0, -dc) : frontier.shape[1] - max(0, dc),
            ]
            nb[
                max(0, dr) : nb.shape[0] - max(0, -dr),
                max(0, dc) : nb.shape[1] - max(0, -dc),
            ] |= src
        frontier = nb & fg & ~comp
        comp |= frontier
    return comp


def sample_from_uniforms(p: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Per-pixel categorical draws: first class whose running CDF exceeds u.

    ``p`` is (H, W, C) float64, ``u`` is (H, W) in [0, 1). The label is the
    count of CDF entries <= u, clipped to C-1 so float residue in the last
    CDF entry cannot produce an out-of-range class.
    """
    cdf = np.cumsum(p, axis=-1)
    labels = (u[..., None] >= cdf).sum(axis=-1)
    return np.minimum(labels, p.shape[-1] - 1).astype(np.int64)
