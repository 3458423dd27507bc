"""Semi-supervised comparison methods sharing one loss interface.

Every method uses the identical supervised term and data pipeline; only the
unsupervised term differs, which is the variable the experiments isolate:

    baseline          supervised cross-entropy only
    entropy_min       + w * prediction entropy on unlabeled images
    vat               + w * smoothness at an adversarial perturbation
    mean_teacher      + w * consistency against an EMA teacher on noised input
    cavat             + w * (smoothness + weighted constraint term) at an
                        adversarial perturbation that also attacks the
                        constraint
    cavat_no_perturb  cavat with the perturbation forced to zero
    mt_cavat          mean_teacher plus the cavat term

where w is the shared unsupervised weight; a zero w reduces every method to
the supervised baseline, bit for bit.

The CSV "loss_lds" column logs whichever smoothness/consistency term the
method uses; "loss_cons" logs the constraint term (cavat family only).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .adversarial import AdvConfig, gen_perturbation
from .autodiff import Tensor
from .errors import ConfigurationError, InvalidArgumentError
from .losses import (
    LossWeights,
    MonteCarloConfig,
    cavat_batch_term,
    consistency_mse,
    entropy_min,
    supervised_ce,
)
from .rng import RngState

METHOD_IDS = (
    "baseline",
    "entropy_min",
    "vat",
    "mean_teacher",
    "cavat",
    "cavat_no_perturb",
    "mt_cavat",
)


@dataclass(frozen=True)
class MethodSpec:
    method: str = "cavat"
    ema_alpha: float = 0.99
    consistency_weight: float = 1.0
    noise_sigma: float = 0.1

    def __post_init__(self):
        if self.method not in METHOD_IDS:
            raise ConfigurationError(
                f"unknown method {self.method!r}; expected one of {METHOD_IDS}"
            )
        if not (0.0 <= self.ema_alpha <= 1.0):
            raise InvalidArgumentError(f"ema_alpha must be in [0, 1], got {self.ema_alpha}")
        for name, v in (
            ("consistency_weight", self.consistency_weight),
            ("noise_sigma", self.noise_sigma),
        ):
            if not np.isfinite(v) or v < 0:
                raise InvalidArgumentError(f"{name} must be finite and >= 0, got {v}")

    @property
    def uses_teacher(self) -> bool:
        return self.method in ("mean_teacher", "mt_cavat")

    @property
    def uses_perturbation(self) -> bool:
        return self.method in ("vat", "cavat", "mt_cavat")


def ema_update(teacher_params, student_params, alpha: float):
    """teacher <- alpha * teacher + (1 - alpha) * student, elementwise."""
    if not (0.0 <= alpha <= 1.0):
        raise InvalidArgumentError(f"alpha must be in [0, 1], got {alpha}")
    if len(teacher_params) != len(student_params):
        raise InvalidArgumentError("teacher/student parameter count mismatch")
    out = []
    for t, s in zip(teacher_params, student_params):
        if t.shape != s.shape:
            raise InvalidArgumentError(f"shape mismatch {t.shape} vs {s.shape}")
        out.append(alpha * t + (1.0 - alpha) * s)
    return out


@dataclass
class StepStreams:
    """Per-step randomness, one independent substream per unlabeled image."""

    perturb: list = field(default_factory=list)
    outer: list = field(default_factory=list)
    noise: list = field(default_factory=list)

    @staticmethod
    def for_step(run_rng: RngState, step: int, n_unlabeled: int) -> "StepStreams":
        return StepStreams(
            perturb=[run_rng.spawn("perturb", step, i) for i in range(n_unlabeled)],
            outer=[run_rng.spawn("outer", step, i) for i in range(n_unlabeled)],
            noise=[run_rng.spawn("noise", step, i) for i in range(n_unlabeled)],
        )


def _perturb_generator(network, params_t, weights, constraint, mc, adv_cfg, streams):
    params = [t.data for t in params_t]

    def fn(i, x, p_clean=None):
        return gen_perturbation(
            x, network, params, weights, constraint, mc, adv_cfg, streams.perturb[i],
            p_clean=p_clean,
        )

    return fn


def _zero_perturbation(i, x, p_clean=None):
    return np.zeros_like(np.asarray(x, dtype=np.float64))


def _consistency_term(network, params_t, teacher_params, unlabeled, spec, streams):
    noised = np.stack(
        [
            np.asarray(x, dtype=np.float64)
            + spec.noise_sigma * streams.noise[i].normal(np.shape(x))
            for i, x in enumerate(unlabeled)
        ]
    )
    p_student = network.forward_t(Tensor(noised[:, None]), params_t)
    p_teacher = np.stack([network.forward(x, teacher_params) for x in unlabeled])
    return consistency_mse(p_student, p_teacher)


def method_loss(
    spec: MethodSpec,
    network,
    params_t,
    teacher_params,
    labeled_images,
    labeled_masks,
    unlabeled_images,
    weights: LossWeights,
    constraint,
    mc: MonteCarloConfig,
    adv_cfg: AdvConfig,
    streams: StepStreams,
):
    """Per-step loss of the selected method; returns (loss, parts).

    Terms with zero weight are skipped outright (not multiplied by zero), so
    zero-weight configurations reduce bit for bit to their simpler method.
    """
    sup = supervised_ce(network, params_t, labeled_images, labeled_masks)
    parts = {"loss_sup": sup.item(), "loss_lds": 0.0, "loss_cons": 0.0}
    loss = sup
    n = len(unlabeled_images)
    lam = weights.unsup_weight
    if spec.method == "baseline" or n == 0:
        return loss, parts

    if spec.method == "entropy_min":
        if lam > 0.0:
            xb = np.stack([np.asarray(x, dtype=np.float64) for x in unlabeled_images])
            ent = entropy_min(network.forward_t(Tensor(xb[:, None]), params_t))
            loss = loss + lam * ent
            parts["loss_lds"] = ent.item()
        return loss, parts

    if spec.method in ("vat", "cavat", "cavat_no_perturb", "mt_cavat"):
        eff = LossWeights(lam, 0.0 if spec.method == "vat" else weights.cons_weight)
        if spec.method == "cavat_no_perturb":
            perturb_fn = _zero_perturbation
        else:
            perturb_fn = _perturb_generator(
                network, params_t, eff, constraint, mc, adv_cfg, streams
            )
        if lam > 0.0:
            term, lds, cons = cavat_batch_term(
                network, params_t, unlabeled_images, eff, constraint, mc,
                perturb_fn, streams.outer,
            )
            loss = loss + lam * term
            parts["loss_lds"] = lds
            parts["loss_cons"] = cons
        if spec.method != "mt_cavat":
            return loss, parts

    if spec.method in ("mean_teacher", "mt_cavat"):
        if lam > 0.0 and spec.consistency_weight > 0.0:
            cons_t = _consistency_term(
                network, params_t, teacher_params, unlabeled_images, spec, streams
            )
            loss = loss + (lam * spec.consistency_weight) * cons_t
            if spec.method == "mean_teacher":
                parts["loss_lds"] = cons_t.item()
        return loss, parts

    raise ConfigurationError(f"unhandled method {spec.method!r}")
