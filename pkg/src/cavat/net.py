"""Small fully-convolutional per-pixel segmentation network.

Fixed architecture family: a stack of 3x3 same-padded convolutions with ReLU
between and a per-pixel softmax head. Parameters are plain float64 numpy
arrays; gradients come from the autodiff engine and are exact reverse-mode.
Also hosts the optimizer (Adam with optional variance rectification) and the
warm-up + cosine learning-rate schedule, plus text checkpoints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, conv2d, softmax
from .errors import InvalidArgumentError, NumericalFailureError
from .rng import RngState

CHECKPOINT_MAGIC = "CAVAT-CKPT-1"


@dataclass(frozen=True)
class ArchConfig:
    """Conv widths of the hidden layers; classes is the softmax fan-out."""

    in_channels: int = 1
    hidden: tuple = (8, 16)
    classes: int = 2
    kernel: int = 3

    def layer_shapes(self):
        """[(weight shape, bias shape), ...] for each conv layer."""
        widths = (self.in_channels,) + tuple(self.hidden) + (self.classes,)
        shapes = []
        for cin, cout in zip(widths[:-1], widths[1:]):
            shapes.append(((cout, cin, self.kernel, self.kernel), (cout,)))
        return shapes

    def param_names(self):
        names = []
        for i in range(len(self.hidden) + 1):
            names += [f"conv{i}.weight", f"conv{i}.bias"]
        return names


class SegNet:
    """f(x; params) -> per-pixel class distribution."""

    def __init__(self, arch: ArchConfig = ArchConfig()):
        self.arch = arch

    def init_params(self, rng: RngState) -> list[np.ndarray]:
        """Glorot-uniform weights, zero biases."""
        params = []
        for wshape, bshape in self.arch.layer_shapes():
            cout, cin, kh, kw = wshape
            fan_in = cin * kh * kw
            fan_out = cout * kh * kw
            a = math.sqrt(6.0 / (fan_in + fan_out))
            params.append((rng.uniform(wshape) * 2.0 - 1.0) * a)
            params.append(np.zeros(bshape))
        return params

    def wrap_params(self, params, requires_grad: bool) -> list[Tensor]:
        return [Tensor(p, requires_grad=requires_grad) for p in params]

    def forward_t(self, x: Tensor, params_t: list[Tensor]) -> Tensor:
        """Batched differentiable forward: (B, Cin, H, W) -> (B, H, W, C)."""
        n_layers = len(self.arch.hidden) + 1
        if len(params_t) != 2 * n_layers:
            raise InvalidArgumentError(
                f"expected {2 * n_layers} parameter tensors, got {len(params_t)}"
            )
        h = x
        for i in range(n_layers):
            h = conv2d(h, params_t[2 * i], params_t[2 * i + 1])
            if i < n_layers - 1:
                h = h.relu()
        return softmax(h.moveaxis(1, 3), axis=-1)

    def forward(self, image: np.ndarray, params) -> np.ndarray:
        """Single-image convenience forward without gradients: (H, W) -> (H, W, C)."""
        x = self._to_batch(image)
        out = self.forward_t(Tensor(x), self.wrap_params(params, False))
        return out.data[0]

    def _to_batch(self, image: np.ndarray) -> np.ndarray:
        a = np.asarray(image, dtype=np.float64)
        if a.ndim == 2:
            a = a[None, None]
        elif a.ndim == 3:  # (B, H, W)
            a = a[:, None]
        if a.ndim != 4 or a.shape[1] != self.arch.in_channels:
            raise InvalidArgumentError(f"bad input shape {np.shape(image)}")
        return a

    def predict(self, image: np.ndarray, params) -> np.ndarray:
        """Argmax class mask for a single image."""
        return np.argmax(self.forward(image, params), axis=-1).astype(np.int64)


def collect_gradients(loss: Tensor, params_t: list[Tensor], arch: ArchConfig) -> list[np.ndarray]:
    """Run backward and gather per-parameter gradients, checking finiteness."""
    if not np.isfinite(loss.data):
        raise NumericalFailureError("loss is non-finite", tensor_name="loss")
    loss.backward()
    names = arch.param_names()
    grads = []
    for name, t in zip(names, params_t):
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        if not np.isfinite(g).all():
            raise NumericalFailureError(f"non-finite gradient in {name}", tensor_name=name)
        grads.append(g)
    return grads


# ---------------------------------------------------------------- optimizer --

@dataclass
class Schedule:
    peak_lr: float = 1e-5
    warmup_steps: int = 100
    total_steps: int = 1000
    floor_lr: float = 0.0


def lr_at(step: int, sched: Schedule) -> float:
    """Linear ramp 0 -> peak over the warm-up, then cosine decay to the floor."""
    if step < 0:
        raise InvalidArgumentError(f"negative step {step}")
    if step < sched.warmup_steps:
        return sched.peak_lr * step / sched.warmup_steps
    step = min(step, sched.total_steps)
    span = sched.total_steps - sched.warmup_steps
    if span <= 0:
        return sched.floor_lr if step >= sched.total_steps else sched.peak_lr
    frac = (step - sched.warmup_steps) / span
    cos = 0.5 * (1.0 + math.cos(math.pi * frac))
    return sched.floor_lr + (sched.peak_lr - sched.floor_lr) * cos


@dataclass
class OptimizerState:
    sched: Schedule
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    rectified: bool = False
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def ensure_moments(self, params):
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]


def optimizer_step(params, grads, state: OptimizerState):
    """One Adam update at the scheduled learning rate; returns (params, state).

    With ``rectified`` on, applies the variance-rectification factor and falls
    back to an unadapted momentum update while the rectification term is
    undefined (early steps).
    """
    if len(params) != len(grads):
        raise InvalidArgumentError("parameter/gradient count mismatch")
    state.ensure_moments(params)
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise InvalidArgumentError(
                f"gradient shape {g.shape} does not match parameter {p.shape}"
            )
    state.step += 1
    t = state.step
    lr = lr_at(t, state.sched)
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1**t
    bias2 = 1.0 - b2**t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        m_hat = state.m[i] / bias1
        if state.rectified:
            rho_inf = 2.0 / (1.0 - b2) - 1.0
            rho = rho_inf - 2.0 * t * b2**t / bias2
            if rho > 4.0:
                r = math.sqrt(
                    ((rho - 4.0) * (rho - 2.0) * rho_inf)
                    / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho)
                )
                v_hat = np.sqrt(state.v[i] / bias2)
                out.append(p - lr * r * m_hat / (v_hat + state.eps))
            else:
                out.append(p - lr * m_hat)
        else:
            v_hat = np.sqrt(state.v[i] / bias2)
            out.append(p - lr * m_hat / (v_hat + state.eps))
    return out, state


# --------------------------------------------------------------- checkpoints --

def save_checkpoint(path, params, arch: ArchConfig):
    """Text container: magic, architecture line, then one block per tensor.

    Each block is a header ``tensor <name> <ndim> <d0> <d1> ...`` followed by a
    single line of %.17g values (row-major). %.17g round-trips float64 exactly.
    """
    names = arch.param_names()
    with open(path, "w") as f:
        f.write(CHECKPOINT_MAGIC + "\n")
        f.write(
            "arch in={} hidden={} classes={} kernel={}\n".format(
                arch.in_channels,
                ",".join(str(h) for h in arch.hidden),
                arch.classes,
                arch.kernel,
            )
        )
        for name, p in zip(names, params):
            dims = " ".join(str(d) for d in p.shape)
            f.write(f"tensor {name} {p.ndim} {dims}\n")
            f.write(" ".join(f"{v:.17g}" for v in p.reshape(-1)) + "\n")
        f.write("end\n")


def load_checkpoint(path):
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise InvalidArgumentError(f"{path}: not a checkpoint (missing magic)")
    fields = dict(kv.split("=") for kv in lines[1].split()[1:])
    hidden = tuple(int(x) for x in fields["hidden"].split(",")) if fields["hidden"] else ()
    arch = ArchConfig(
        in_channels=int(fields["in"]),
        hidden=hidden,
        classes=int(fields["classes"]),
        kernel=int(fields["kernel"]),
    )
    params = []
    i = 2
    while i < len(lines) and lines[i] != "end":
        head = lines[i].split()
        if head[0] != "tensor" or i + 1 >= len(lines):
            raise InvalidArgumentError(f"{path}: unexpected or truncated line {i + 1}")
        ndim = int(head[2])
        shape = tuple(int(d) for d in head[3 : 3 + ndim])
        vals = np.array([float(v) for v in lines[i + 1].split()], dtype=np.float64)
        params.append(vals.reshape(shape))
        i += 2
    if i >= len(lines):
        raise InvalidArgumentError(f"{path}: truncated checkpoint (no end marker)")
    expected = [ws for ws, bs in arch.layer_shapes() for ws in (ws, bs)]
    got = [p.shape for p in params]
    if got != expected:
        raise InvalidArgumentError(f"{path}: tensor shapes {got} do not match arch")
    return params, arch
