"""Training objectives.

Supervised cross-entropy, the KL smoothness term between clean and perturbed
predictions, the score-function (REINFORCE) surrogate that turns binary
constraint rewards on sampled masks into a differentiable loss, the combined
inner objective (smoothness + weighted constraint term), and baseline losses
(entropy minimization, mean-squared consistency).

Conventions shared by every loss here:
  * pixel reductions are means, so loss weights are resolution independent;
  * probabilities are floored at 1e-12 before any log;
  * sampled masks and reward maps are constants, gradients flow only through
    the predicted probabilities (log-likelihood factors).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import grid
from .autodiff import Tensor, astensor
from .errors import InvalidArgumentError
from .rng import RngState

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class LossWeights:
    """unsup_weight scales the whole unsupervised objective; cons_weight
    balances the constraint term against the smoothness term inside it."""

    unsup_weight: float = 1.0
    cons_weight: float = 1.0

    def __post_init__(self):
        for name, v in (("unsup_weight", self.unsup_weight), ("cons_weight", self.cons_weight)):
            if not np.isfinite(v) or v < 0:
                raise InvalidArgumentError(f"{name} must be finite and >= 0, got {v}")


@dataclass(frozen=True)
class MonteCarloConfig:
    samples: int = 10

    def __post_init__(self):
        if self.samples < 1:
            raise InvalidArgumentError(f"samples must be >= 1, got {self.samples}")


def _one_hot(labels: np.ndarray, classes: int) -> np.ndarray:
    if labels.min() < 0 or labels.max() >= classes:
        raise InvalidArgumentError(
            f"labels outside [0, {classes}): range {labels.min()}..{labels.max()}"
        )
    return np.eye(classes)[labels]


def _logp(p: Tensor) -> Tensor:
    return p.clamp_min(PROB_FLOOR).log()


def cross_entropy(p, y) -> Tensor:
    """Mean over pixels (and batch) of -log p at the true class."""
    p = astensor(p)
    y = np.asarray(y)
    if p.shape[:-1] != y.shape:
        raise InvalidArgumentError(f"probmap {p.shape} vs labels {y.shape}")
    onehot = Tensor(_one_hot(y, p.shape[-1]))
    picked = (p * onehot).sum(axis=-1)
    return -_logp(picked).mean()


def kl_lds(p_clean, p_adv) -> Tensor:
    """Mean per-pixel KL(clean || perturbed); the clean map is a constant.

    Gradients flow only through the perturbed prediction, the standard
    stop-gradient treatment of the reference distribution.
    """
    pc = p_clean.data if isinstance(p_clean, Tensor) else np.asarray(p_clean, dtype=np.float64)
    p_adv = astensor(p_adv)
    if pc.shape != p_adv.shape:
        raise InvalidArgumentError(f"shape mismatch {pc.shape} vs {p_adv.shape}")
    log_pc = np.log(np.maximum(pc, PROB_FLOOR))
    per_class = Tensor(pc) * (Tensor(log_pc) - _logp(p_adv))
    return per_class.sum(axis=-1).mean()


def entropy_min(p) -> Tensor:
    """Mean per-pixel Shannon entropy of the prediction."""
    p = astensor(p)
    return -(p * _logp(p)).sum(axis=-1).mean()


def reinforce_surrogate(p, masks: np.ndarray, rewards: np.ndarray) -> Tensor:
    """-(1/m) sum_s mean_i J_i(mask_s) log p(mask_s_i).

    Per-pixel factorized score-function surrogate: its gradient in the
    probabilities estimates the gradient of -E[J] under per-pixel sampling.
    ``masks`` and ``rewards`` are (m, H, W) constants.
    """
    p = astensor(p)
    masks = np.asarray(masks)
    rewards = np.asarray(rewards, dtype=np.float64)
    if masks.ndim != p.ndim or masks.shape[1:] != p.shape[:-1]:
        raise InvalidArgumentError(f"masks {masks.shape} vs probmap {p.shape}")
    if rewards.shape != masks.shape:
        raise InvalidArgumentError(f"rewards {rewards.shape} vs masks {masks.shape}")
    onehot = Tensor(_one_hot(masks, p.shape[-1]))  # (m, ..., C)
    picked = (p * onehot).sum(axis=-1)  # broadcast over the sample axis
    return -(Tensor(rewards) * _logp(picked)).mean()


def reinforce_constraint(p, constraint, mc: MonteCarloConfig, rng: RngState) -> Tensor:
    """Draw mc.samples masks from ``p``, score them, build the surrogate.

    Per sample the stream is consumed in a fixed order: one uniform grid for
    the mask draw, then whatever the constraint consumes.
    """
    p = astensor(p)
    if p.ndim != 3:
        raise InvalidArgumentError(f"expected a single (H, W, C) probmap, got {p.shape}")
    masks = []
    rewards = []
    for _ in range(mc.samples):
        mask = grid.sample_mask(p.data, rng, validate=False)
        masks.append(mask)
        rewards.append(constraint.evaluate(mask, rng))
    return reinforce_surrogate(p, np.stack(masks), np.stack(rewards))


class InnerObjective(NamedTuple):
    objective: Tensor
    lds: float
    cons: float
    input_tensor: Tensor


def cavat_inner(
    x_u: np.ndarray,
    r: np.ndarray,
    network,
    params_t,
    weights: LossWeights,
    constraint,
    mc: MonteCarloConfig,
    rng: RngState,
    want_input_grad: bool = False,
    p_clean: np.ndarray | None = None,
) -> InnerObjective:
    """Smoothness + weighted constraint objective at perturbation ``r``.

    kl_lds(f(x), f(x+r)) + cons_weight * reinforce_constraint(f(x+r)). The
    constraint term is skipped entirely (no sampling, no stream consumption)
    when cons_weight is 0, so a zero weight reduces exactly to the smoothness
    objective. ``p_clean`` may be supplied to avoid recomputing f(x); it is a
    constant either way.
    """
    x_u = np.asarray(x_u, dtype=np.float64)
    if p_clean is None:
        p_clean = network.forward(x_u, [t.data for t in params_t])
    xt = Tensor((x_u + r)[None, None], requires_grad=want_input_grad)
    h, w = x_u.shape
    p_adv = network.forward_t(xt, params_t).reshape(h, w, p_clean.shape[-1])
    lds = kl_lds(p_clean, p_adv)
    obj = lds
    cons_val = 0.0
    if weights.cons_weight > 0.0:
        cons = reinforce_constraint(p_adv, constraint, mc, rng)
        obj = lds + weights.cons_weight * cons
        cons_val = cons.item()
    return InnerObjective(obj, lds.item(), cons_val, xt)


def consistency_mse(p_student, p_teacher) -> Tensor:
    """Mean squared difference between probability maps; teacher is constant."""
    pt = p_teacher.data if isinstance(p_teacher, Tensor) else np.asarray(p_teacher)
    p_student = astensor(p_student)
    if pt.shape != p_student.shape:
        raise InvalidArgumentError(f"shape mismatch {pt.shape} vs {p_student.shape}")
    return (p_student - Tensor(pt)).square().mean()


def supervised_ce(network, params_t, images, masks) -> Tensor:
    """Cross-entropy over a labeled batch: (B, H, W) images and int masks."""
    xb = np.asarray(images, dtype=np.float64)[:, None]
    p = network.forward_t(Tensor(xb), params_t)
    return cross_entropy(p, masks)


def cavat_batch_term(
    network, params_t, unlabeled_images, weights, constraint, mc, perturb_fn, outer_rngs
):
    """Batch mean of the inner objective over unlabeled images.

    ``perturb_fn(i, image)`` supplies the perturbation of image i and
    ``outer_rngs[i]`` its sampling stream. Returns (tensor, lds, cons) or
    (None, 0, 0) for an empty batch.
    """
    n = len(unlabeled_images)
    if n == 0:
        return None, 0.0, 0.0
    params = [t.data for t in params_t]
    inner_sum = None
    lds_acc = 0.0
    cons_acc = 0.0
    for i, x in enumerate(unlabeled_images):
        pc = network.forward(x, params)
        r = perturb_fn(i, x, pc)
        inner = cavat_inner(
            x, r, network, params_t, weights, constraint, mc, outer_rngs[i], p_clean=pc
        )
        inner_sum = inner.objective if inner_sum is None else inner_sum + inner.objective
        lds_acc += inner.lds
        cons_acc += inner.cons
    return inner_sum * (1.0 / n), lds_acc / n, cons_acc / n


def total_loss(
    network,
    params_t,
    labeled_images: np.ndarray,
    labeled_masks: np.ndarray,
    unlabeled_images,
    weights: LossWeights,
    constraint,
    mc: MonteCarloConfig,
    perturb_fn,
    outer_rngs,
):
    """Supervised cross-entropy plus the weighted unsupervised objective.

    The unsupervised term is a batch mean, 0 for an empty batch, and is
    skipped entirely when unsup_weight is 0 so that a zero weight reproduces
    the supervised-only loss bit for bit.

    Returns (loss, parts) with parts holding the plain float components.
    """
    sup = supervised_ce(network, params_t, labeled_images, labeled_masks)
    parts = {"loss_sup": sup.item(), "loss_lds": 0.0, "loss_cons": 0.0}
    total = sup
    if weights.unsup_weight > 0.0 and len(unlabeled_images) > 0:
        term, lds, cons = cavat_batch_term(
            network, params_t, unlabeled_images, weights, constraint, mc,
            perturb_fn, outer_rngs,
        )
        total = sup + weights.unsup_weight * term
        parts["loss_lds"] = lds
        parts["loss_cons"] = cons
    return total, parts
