"""Adversarial perturbation generation for the unsupervised objective.

Power iteration on the inner objective: probe the loss surface at x + xi*d,
take the gradient with respect to the probe direction, renormalize, repeat.
The returned perturbation sits exactly on the radius-eps L2 sphere (or is
zero when eps is zero). The constraint term participates through the same
score-function surrogate as the outer loss, with the gradient flowing into
the input via the log-likelihoods of the sampled masks.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .losses import LossWeights, MonteCarloConfig, cavat_inner
from .rng import RngState

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdvConfig:
    """radius: L2 budget eps of the perturbation, in normalized-intensity
    units. probe_scale: finite-difference scale xi; None picks
    10*sqrt(machine eps)*||x||. power_iters: gradient/renormalize rounds."""

    radius: float = 0.5
    probe_scale: float | None = None
    power_iters: int = 1

    def __post_init__(self):
        if not np.isfinite(self.radius) or self.radius < 0:
            raise InvalidArgumentError(f"radius must be finite and >= 0, got {self.radius}")
        if self.probe_scale is not None and not self.probe_scale > 0:
            raise InvalidArgumentError(f"probe_scale must be > 0, got {self.probe_scale}")
        if self.power_iters < 1:
            raise InvalidArgumentError(f"power_iters must be >= 1, got {self.power_iters}")


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def gen_perturbation(
    x_u: np.ndarray,
    network,
    params,
    weights: LossWeights,
    constraint,
    mc: MonteCarloConfig,
    cfg: AdvConfig,
    rng: RngState,
    p_clean: np.ndarray | None = None,
) -> np.ndarray:
    """Approximate maximizer of the inner objective on the eps-sphere.

    Deterministic given the stream: one normal draw for the start direction,
    then the constraint sampling of each power iteration (when cons_weight is
    nonzero). Falls back to the random start direction if a gradient
    vanishes, which happens e.g. for a constant predictor.
    """
    x_u = np.asarray(x_u, dtype=np.float64)
    if cfg.radius == 0.0:
        return np.zeros_like(x_u)
    d0 = rng.normal(x_u.shape)
    while not np.linalg.norm(d0) > 0:
        d0 = rng.normal(x_u.shape)
    d0 = _unit(d0)
    xi = cfg.probe_scale
    if xi is None:
        scale = np.linalg.norm(x_u)
        xi = 10.0 * np.sqrt(np.finfo(np.float64).eps) * (scale if scale > 0 else 1.0)
    params_const = network.wrap_params(params, requires_grad=False)
    if p_clean is None:
        p_clean = network.forward(x_u, params)
    d = d0
    for _ in range(cfg.power_iters):
        inner = cavat_inner(
            x_u, xi * d, network, params_const, weights, constraint, mc, rng,
            want_input_grad=True, p_clean=p_clean,
        )
        inner.objective.backward()
        g = inner.input_tensor.grad.reshape(x_u.shape)
        norm = np.linalg.norm(g)
        if not norm > 0:
            log.warning("zero inner gradient; falling back to the random direction")
            return cfg.radius * d0
        d = g / norm
    return cfg.radius * d
