"""Per-pixel constraint rewards for sampled segmentation masks.

A constraint scores a discrete mask with a binary map: reward 1 at pixel i
means the constraint holds around i. The shipped local-connectivity reward
relaxes global connectivity to patches: pick a seed inside (preferentially)
the largest foreground clump, flood-fill its component, and flag every k x k
window that still contains foreground outside that component.

Reward maps are gradient-free by construction; they only ever reach the
losses as constants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import grid
from .errors import InvalidArgumentError
from .rng import RngState

__all__ = [
    "AlwaysSatisfied",
    "ConnectivityConfig",
    "GlobalConnectivity",
    "LocalConnectivity",
    "connectivity_reward",
    "make_constraint",
    "select_seed",
]


@dataclass(frozen=True)
class ConnectivityConfig:
    """Windows for the local-connectivity reward.

    seed_window: box size used to rank candidate seed pixels (larger counts
        mean denser clumps). patch_window: box size inside which stray
        foreground triggers a violation. seed_mode 'random' draws uniformly
        among maximal candidates; 'first' deterministically takes the first
        one in row-major order and consumes no randomness.
    """

    seed_window: int = 5
    patch_window: int = 3
    adjacency: int = 4
    seed_mode: str = "random"

    def __post_init__(self):
        for name, v in (("seed_window", self.seed_window), ("patch_window", self.patch_window)):
            if v < 1 or v % 2 == 0:
                raise InvalidArgumentError(f"{name} must be odd and >= 1, got {v}")
        if self.adjacency not in (4, 8):
            raise InvalidArgumentError(f"adjacency must be 4 or 8, got {self.adjacency}")
        if self.seed_mode not in ("random", "first"):
            raise InvalidArgumentError(f"unknown seed_mode {self.seed_mode!r}")


def select_seed(mask, cfg: ConnectivityConfig, rng: RngState):
    """A foreground pixel maximizing the seed_window box count, or None.

    Ties are broken uniformly at random ('random' mode, consumes exactly one
    draw whenever foreground exists) or by row-major order ('first' mode).
    """
    fg = np.asarray(mask) != 0
    if not fg.any():
        return None
    counts = grid.box_sum(fg.astype(np.int64), cfg.seed_window)
    best = counts[fg].max()
    ties = np.argwhere(fg & (counts == best))
    if cfg.seed_mode == "random":
        k = int(rng.integers(ties.shape[0]))
    else:
        k = 0
    return int(ties[k, 0]), int(ties[k, 1])


def connectivity_reward(mask, cfg: ConnectivityConfig, rng: RngState) -> np.ndarray:
    """Binary reward map: 1 where the patch contains no out-of-component foreground.

    Empty-foreground masks are vacuously satisfied (all ones); discouraging
    empty predictions is the supervised loss's job, not the constraint's.
    """
    fg = np.asarray(mask) != 0
    seed = select_seed(fg, cfg, rng)
    if seed is None:
        return np.ones(fg.shape, dtype=np.int64)
    comp = grid.flood_fill(fg, seed, adjacency=cfg.adjacency)
    return _reward_given_component(fg, comp, cfg)


def _reward_given_component(fg: np.ndarray, comp: np.ndarray, cfg: ConnectivityConfig) -> np.ndarray:
    stray = (fg & ~comp).astype(np.int64)
    s = grid.box_sum(stray, cfg.patch_window)
    return (s == 0).astype(np.int64)


class LocalConnectivity:
    """The shipped constraint: per-patch connectivity around a sampled seed."""

    name = "connectivity"

    def __init__(self, cfg: ConnectivityConfig = ConnectivityConfig(), foreground_class: int = 1):
        self.cfg = cfg
        self.foreground_class = foreground_class

    def evaluate(self, mask, rng: RngState) -> np.ndarray:
        fg = np.asarray(mask) == self.foreground_class
        return connectivity_reward(fg, self.cfg, rng)


class AlwaysSatisfied:
    """Trivial constraint for ablations: every pixel always satisfied."""

    name = "none"

    def evaluate(self, mask, rng: RngState) -> np.ndarray:
        return np.ones(np.asarray(mask).shape, dtype=np.int64)


class GlobalConnectivity:
    """Reference constraint: scalar global-connectivity verdict, broadcast.

    1 everywhere when the foreground is empty or a single connected
    component, else 0 everywhere. Deterministic; consumes no randomness.
    """

    name = "global"

    def __init__(self, adjacency: int = 4, foreground_class: int = 1):
        self.adjacency = adjacency
        self.foreground_class = foreground_class

    def evaluate(self, mask, rng: RngState = None) -> np.ndarray:
        fg = np.asarray(mask) == self.foreground_class
        ok = grid.is_connected(fg, adjacency=self.adjacency)
        return np.full(fg.shape, 1 if ok else 0, dtype=np.int64)


def make_constraint(name: str, cfg: ConnectivityConfig, foreground_class: int = 1):
    if name == "connectivity":
        return LocalConnectivity(cfg, foreground_class)
    if name == "none":
        return AlwaysSatisfied()
    if name == "global":
        return GlobalConnectivity(cfg.adjacency, foreground_class)
    raise InvalidArgumentError(f"unknown constraint {name!r}")
