"""Segmentation evaluation metrics: Dice overlap, Hausdorff distance, and the
percentage of foreground pixels disconnected from a random foreground seed."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import distance_transform_edt

from . import grid
from .errors import InvalidArgumentError, UndefinedMetricError
from .rng import RngState

__all__ = ["MetricReport", "dsc", "evaluate_masks", "hausdorff", "n_conn", "n_conn_stats"]


def _binary(mask) -> np.ndarray:
    a = np.asarray(mask)
    if a.ndim != 2:
        raise InvalidArgumentError(f"expected 2D mask, got shape {a.shape}")
    return a != 0


def dsc(pred, gt) -> float:
    """Dice overlap 2|A&B| / (|A|+|B|); both masks empty counts as perfect."""
    a, b = _binary(pred), _binary(gt)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"shape mismatch {a.shape} vs {b.shape}")
    na, nb = int(a.sum()), int(b.sum())
    if na + nb == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / (na + nb)


def hausdorff(pred, gt, spacing=None) -> float:
    """Symmetric Hausdorff distance between foreground point sets, in pixel
    units (or physical units when a per-axis ``spacing`` is given).

    Undefined when either mask is empty; callers should report it as missing
    rather than coercing to 0.
    """
    a, b = _binary(pred), _binary(gt)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"shape mismatch {a.shape} vs {b.shape}")
    if not a.any() or not b.any():
        raise UndefinedMetricError("Hausdorff distance undefined for an empty mask")
    sampling = None if spacing is None else tuple(spacing)
    # distance from every pixel to the nearest foreground pixel of the other set
    d_to_b = distance_transform_edt(~b, sampling=sampling)
    d_to_a = distance_transform_edt(~a, sampling=sampling)
    return float(max(d_to_b[a].max(), d_to_a[b].max()))


def n_conn(mask, rng: RngState, adjacency: int = 4) -> float:
    """Percent of foreground pixels outside the component of a random seed.

    Draws one uniform foreground seed from ``rng``; 0 for an empty mask.
    """
    fg = _binary(mask)
    coords = np.argwhere(fg)
    total = coords.shape[0]
    if total == 0:
        return 0.0
    k = int(rng.integers(total))
    comp = grid.flood_fill(fg, tuple(coords[k]), adjacency=adjacency)
    return 100.0 * (total - int(comp.sum())) / total


def n_conn_stats(mask, rng: RngState, draws: int = 5, adjacency: int = 4):
    """Mean and sample std of n_conn over several seed draws."""
    vals = np.array([n_conn(mask, rng, adjacency) for _ in range(draws)])
    return float(vals.mean()), float(vals.std(ddof=1)) if draws > 1 else 0.0


@dataclass
class MetricReport:
    """Per-image metric rows plus aggregates; hd is NaN where undefined."""

    dsc_values: list = field(default_factory=list)
    hd_values: list = field(default_factory=list)
    n_conn_values: list = field(default_factory=list)

    def add(self, d, h, n):
        self.dsc_values.append(d)
        self.hd_values.append(h)
        self.n_conn_values.append(n)

    @property
    def dsc_mean(self) -> float:
        return float(np.mean(self.dsc_values)) if self.dsc_values else float("nan")

    @property
    def hd_mean(self) -> float:
        vals = np.asarray(self.hd_values, dtype=np.float64)
        if vals.size == 0 or np.isnan(vals).all():
            return float("nan")
        return float(np.nanmean(vals))

    @property
    def n_conn_mean(self) -> float:
        return float(np.mean(self.n_conn_values)) if self.n_conn_values else float("nan")


def evaluate_masks(preds, gts, rng: RngState, draws: int = 5, adjacency: int = 4) -> MetricReport:
    """Score a list of predictions against ground truths.

    Hausdorff is recorded as NaN for images where it is undefined (an empty
    prediction or ground truth); aggregates skip those entries.
    """
    report = MetricReport()
    for pred, gt in zip(preds, gts):
        try:
            h = hausdorff(pred, gt)
        except UndefinedMetricError:
            h = float("nan")
        n_mean, _ = n_conn_stats(pred, rng, draws=draws, adjacency=adjacency)
        report.add(dsc(pred, gt), h, n_mean)
    return report
