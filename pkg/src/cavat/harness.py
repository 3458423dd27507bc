"""Experiment orchestration: configuration, training loop, CSV logging,
multi-seed runs and parameter sweeps.

Randomness discipline: every consumer gets its own named substream of the
run seed (init / data / perturb / outer / noise / eval), so a method that
skips some machinery (e.g. zero unsupervised weight) leaves every other
stream untouched. That is what makes the weight-zero reductions and the
bitwise determinism checks possible.

The wall_s CSV column records wall-clock time and is the one column exempt
from determinism comparisons.
"""

from __future__ import annotations

import hashlib
import os
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import baselines, data as data_mod
from .adversarial import AdvConfig
from .baselines import MethodSpec, StepStreams
from .constraints import ConnectivityConfig, make_constraint
from .errors import ConfigurationError, NumericalFailureError
from .losses import LossWeights, MonteCarloConfig
from .metrics import evaluate_masks
from .net import (
    ArchConfig,
    OptimizerState,
    Schedule,
    SegNet,
    collect_gradients,
    lr_at,
    optimizer_step,
    save_checkpoint,
)
from .rng import RngState
from . import grid

CSV_HEADER = (
    "step,method,seed,lambda,gamma,epsilon,m,l,k,"
    "dsc,hd,n_conn,loss_sup,loss_lds,loss_cons,lr,wall_s"
)

# config-file / CLI names for fields whose code names differ
EXTERNAL_KEYS = {
    "lambda": "unsup_weight",
    "gamma": "cons_weight",
    "epsilon": "radius",
    "m": "mc_samples",
    "l": "seed_window",
    "k": "patch_window",
}
SWEEPABLE = {"lambda", "gamma", "epsilon", "m", "l", "k"}
UNICODE_ALIASES = {"γ": "gamma", "λ": "lambda", "ε": "epsilon"}


@dataclass(frozen=True)
class TrainConfig:
    # method and objective weights
    method: str = "cavat"
    unsup_weight: float = 1.0  # external name: lambda
    cons_weight: float = 1.0  # external name: gamma
    radius: float = 0.5  # external name: epsilon
    mc_samples: int = 10  # external name: m
    seed_window: int = 5  # external name: l
    patch_window: int = 3  # external name: k
    adjacency: int = 4
    seed_mode: str = "random"
    constraint: str = "connectivity"
    foreground_class: int = 1
    power_iters: int = 1
    probe_scale: float | None = None
    # optimizer and schedule
    lr: float = 1e-5
    warmup_steps: int = 100
    total_steps: int = 1000
    floor_lr: float = 0.0
    rectified_adam: bool = False
    # batches and data
    batch_labeled: int = 4
    batch_unlabeled: int = 16
    data_dir: str = ""
    labeled_ratio: float = 0.05
    val_fraction: float = 0.15
    split_seed: int = 0
    use_manifest: bool = False
    # method hyperparameters
    ema_alpha: float = 0.99
    consistency_weight: float = 1.0
    noise_sigma: float = 0.1
    # architecture
    arch_hidden: tuple = (8, 16)
    arch_kernel: int = 3
    # run control
    seeds: tuple = (0, 1, 2)
    out_dir: str = "runs/exp"
    eval_every: int = 50
    n_conn_draws: int = 5

    def validate(self):
        if self.method not in baselines.METHOD_IDS:
            raise ConfigurationError(f"unknown method {self.method!r}")
        LossWeights(self.unsup_weight, self.cons_weight)
        MonteCarloConfig(self.mc_samples)
        ConnectivityConfig(self.seed_window, self.patch_window, self.adjacency, self.seed_mode)
        AdvConfig(self.radius, self.probe_scale, self.power_iters)
        if self.total_steps < 1 or self.warmup_steps < 0:
            raise ConfigurationError("step counts must be positive")
        if self.eval_every < 1:
            raise ConfigurationError("eval_every must be >= 1")
        if not self.seeds:
            raise ConfigurationError("at least one seed is required")
        if not self.data_dir or not os.path.isdir(self.data_dir):
            raise ConfigurationError(f"data_dir {self.data_dir!r} does not exist")
        return self

    def arch(self) -> ArchConfig:
        return ArchConfig(hidden=tuple(self.arch_hidden), classes=2, kernel=self.arch_kernel)


def _coerce(value: str, default):
    """Parse a config-file string according to the default's type."""
    if isinstance(default, bool):
        if value.lower() in ("true", "1", "yes"):
            return True
        if value.lower() in ("false", "0", "no"):
            return False
        raise ConfigurationError(f"expected boolean, got {value!r}")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    if isinstance(default, tuple):
        parts = value.replace(",", " ").split()
        return tuple(int(p) for p in parts)
    if default is None:  # probe_scale: float or unset
        return None if value.lower() in ("none", "") else float(value)
    return value


def config_from_file(path, overrides=None) -> TrainConfig:
    """Flat 'key = value' file; unknown keys are an error. ``overrides`` is a
    dict of external-name -> raw string applied after the file."""
    raw = {}
    with open(path) as f:
        for ln, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}:{ln}: expected 'key = value'")
            k, v = (s.strip() for s in line.split("=", 1))
            raw[k] = v
    if overrides:
        raw.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_dict(raw)


def config_from_dict(raw: dict) -> TrainConfig:
    defaults = TrainConfig()
    by_name = {f.name: getattr(defaults, f.name) for f in fields(TrainConfig)}
    kwargs = {}
    for key, value in raw.items():
        k = UNICODE_ALIASES.get(key, key)
        name = EXTERNAL_KEYS.get(k, k)
        if name not in by_name:
            raise ConfigurationError(f"unknown config key {key!r}")
        kwargs[name] = value if not isinstance(value, str) else _coerce(value, by_name[name])
    return replace(defaults, **kwargs)


def config_echo(cfg: TrainConfig) -> str:
    """Canonical text of a config, external names included; hashed for the run id."""
    inv = {v: k for k, v in EXTERNAL_KEYS.items()}
    lines = []
    for f in sorted(fields(TrainConfig), key=lambda f: f.name):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        key = f.name
        if key in inv:
            lines.append(f"{inv[key]} = {v}  # {key}")
        else:
            lines.append(f"{key} = {v}")
    lines.append(f"kernel_backend = {grid.active_backend()}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: TrainConfig) -> str:
    return hashlib.sha256(config_echo(cfg).encode()).hexdigest()[:16]


@dataclass
class RunRecord:
    config_hash: str
    rows: list = field(default_factory=list)
    wall_clock_s: float = 0.0
    checkpoints: list = field(default_factory=list)
    out_dir: str = ""
    summary: dict = field(default_factory=dict)


def _format_cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _load_split(cfg: TrainConfig):
    ds = data_mod.read_dataset(cfg.data_dir)
    images = np.stack([data_mod.normalize_image(im) for im in ds.images])
    if cfg.use_manifest and ds.manifest and (ds.manifest.labeled or ds.manifest.val):
        man = ds.manifest
    else:
        man = data_mod.split(
            ds, cfg.labeled_ratio, cfg.val_fraction, RngState(cfg.split_seed)
        ).manifest
    lab = np.asarray(man.labeled, dtype=int)
    unlab = np.asarray(man.unlabeled, dtype=int)
    val = np.asarray(man.val, dtype=int)
    return images, ds.masks, lab, unlab, val


def _write_diagnostics(path, seed, step, parts, params_t, names, message):
    with open(path, "w") as f:
        f.write(f"seed = {seed}\nstep = {step}\nerror = {message}\n")
        for k, v in parts.items():
            f.write(f"{k} = {v!r}\n")
        for name, t in zip(names, params_t):
            g = t.grad
            norm = (
                float(np.linalg.norm(g))
                if g is not None and np.isfinite(g).all()
                else float("nan")
            )
            f.write(f"grad_norm_{name} = {norm!r}\n")


def run_experiment(cfg: TrainConfig) -> RunRecord:
    """Train per seed, evaluate on the validation split, log CSV rows.

    Writes into cfg.out_dir: results.csv, config_used.txt, one checkpoint per
    seed, summary.txt. A non-finite loss aborts the run after writing
    diagnostics.txt.
    """
    cfg.validate()
    t_start = time.perf_counter()
    os.makedirs(cfg.out_dir, exist_ok=True)
    echo = config_echo(cfg)
    with open(os.path.join(cfg.out_dir, "config_used.txt"), "w") as f:
        f.write(echo)
    record = RunRecord(config_hash=config_hash(cfg), out_dir=cfg.out_dir)
    images, masks, lab_ids, unlab_ids, val_ids = _load_split(cfg)
    network = SegNet(cfg.arch())
    csv_path = os.path.join(cfg.out_dir, "results.csv")
    finals = {}
    with open(csv_path, "w") as csv:
        csv.write(CSV_HEADER + "\n")
        for seed in cfg.seeds:
            rows = _train_single_seed(
                cfg, network, int(seed), images, masks, lab_ids, unlab_ids, val_ids, csv
            )
            record.rows.extend(rows)
            finals[seed] = rows[-1]
            ckpt = os.path.join(cfg.out_dir, f"ckpt_seed{seed}.txt")
            record.checkpoints.append(ckpt)
    record.wall_clock_s = time.perf_counter() - t_start
    record.summary = _summarize(cfg, finals)
    with open(os.path.join(cfg.out_dir, "summary.txt"), "w") as f:
        for k, v in record.summary.items():
            f.write(f"{k} = {v}\n")
    return record


def _summarize(cfg: TrainConfig, finals: dict) -> dict:
    out = {"method": cfg.method, "seeds": ",".join(str(s) for s in cfg.seeds)}
    for metric in ("dsc", "hd", "n_conn"):
        vals = np.array([finals[s][metric] for s in cfg.seeds], dtype=np.float64)
        vals = vals[~np.isnan(vals)]
        mean = float(vals.mean()) if vals.size else float("nan")
        std = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
        out[f"{metric}_mean"] = mean
        out[f"{metric}_std"] = std
    return out


def _train_single_seed(
    cfg, network, seed, images, masks, lab_ids, unlab_ids, val_ids, csv
):
    run_rng = RngState(seed)
    params = network.init_params(run_rng.spawn("init"))
    spec = MethodSpec(
        method=cfg.method,
        ema_alpha=cfg.ema_alpha,
        consistency_weight=cfg.consistency_weight,
        noise_sigma=cfg.noise_sigma,
    )
    teacher = [p.copy() for p in params] if spec.uses_teacher else None
    weights = LossWeights(cfg.unsup_weight, cfg.cons_weight)
    mc = MonteCarloConfig(cfg.mc_samples)
    adv_cfg = AdvConfig(cfg.radius, cfg.probe_scale, cfg.power_iters)
    conn_cfg = ConnectivityConfig(
        cfg.seed_window, cfg.patch_window, cfg.adjacency, cfg.seed_mode
    )
    constraint = make_constraint(cfg.constraint, conn_cfg, cfg.foreground_class)
    state = OptimizerState(
        Schedule(cfg.lr, cfg.warmup_steps, cfg.total_steps, cfg.floor_lr),
        rectified=cfg.rectified_adam,
    )
    uses_unlabeled = cfg.method != "baseline" and cfg.unsup_weight > 0.0
    val_images = images[val_ids]
    val_masks = [masks[i] for i in val_ids]
    rows = []
    t0 = time.perf_counter()
    parts = {"loss_sup": float("nan"), "loss_lds": 0.0, "loss_cons": 0.0}
    for step in range(1, cfg.total_steps + 1):
        bl = min(cfg.batch_labeled, len(lab_ids))
        pick = run_rng.spawn("data", step, "labeled").choice(len(lab_ids), bl)
        xs = images[lab_ids[pick]]
        ys = np.stack([masks[i] for i in lab_ids[pick]])
        if uses_unlabeled and len(unlab_ids) > 0:
            bu = min(cfg.batch_unlabeled, len(unlab_ids))
            upick = run_rng.spawn("data", step, "unlabeled").choice(len(unlab_ids), bu)
            xu = [images[i] for i in unlab_ids[upick]]
        else:
            xu = []
        streams = StepStreams.for_step(run_rng, step, len(xu))
        params_t = network.wrap_params(params, True)
        try:
            loss, parts = baselines.method_loss(
                spec, network, params_t, teacher, xs, ys, xu, weights,
                constraint, mc, adv_cfg, streams,
            )
            grads = collect_gradients(loss, params_t, network.arch)
        except NumericalFailureError as exc:
            diag = os.path.join(cfg.out_dir, "diagnostics.txt")
            _write_diagnostics(
                diag, seed, step, parts, params_t, network.arch.param_names(), str(exc)
            )
            raise NumericalFailureError(
                f"aborted at step {step} (seed {seed}); diagnostics at {diag}",
                tensor_name=exc.tensor_name,
            ) from exc
        params, state = optimizer_step(params, grads, state)
        if teacher is not None:
            teacher = baselines.ema_update(teacher, params, spec.ema_alpha)
        if step % cfg.eval_every == 0 or step == cfg.total_steps:
            report = evaluate_masks(
                [network.predict(v, params) for v in val_images],
                val_masks,
                run_rng.spawn("eval", step),
                draws=cfg.n_conn_draws,
                adjacency=cfg.adjacency,
            )
            row = {
                "step": step,
                "method": cfg.method,
                "seed": seed,
                "lambda": cfg.unsup_weight,
                "gamma": cfg.cons_weight,
                "epsilon": cfg.radius,
                "m": cfg.mc_samples,
                "l": cfg.seed_window,
                "k": cfg.patch_window,
                "dsc": report.dsc_mean,
                "hd": report.hd_mean,
                "n_conn": report.n_conn_mean,
                "loss_sup": parts["loss_sup"],
                "loss_lds": parts["loss_lds"],
                "loss_cons": parts["loss_cons"],
                "lr": lr_at(state.step, state.sched),
                "wall_s": time.perf_counter() - t0,
            }
            rows.append(row)
            csv.write(",".join(_format_cell(row[c]) for c in CSV_HEADER.split(",")) + "\n")
    save_checkpoint(os.path.join(cfg.out_dir, f"ckpt_seed{seed}.txt"), params, network.arch)
    return rows


def load_run(out_dir) -> RunRecord:
    """Rebuild a RunRecord from its CSV and config echo alone."""
    with open(os.path.join(out_dir, "config_used.txt")) as f:
        echo = f.read()
    rows = []
    with open(os.path.join(out_dir, "results.csv")) as f:
        header = f.readline().strip().split(",")
        if header != CSV_HEADER.split(","):
            raise ConfigurationError(f"{out_dir}: unexpected CSV header")
        for line in f:
            cells = line.strip().split(",")
            row = {}
            for key, cell in zip(header, cells):
                if key in ("step", "seed", "m", "l", "k"):
                    row[key] = int(cell)
                elif key == "method":
                    row[key] = cell
                else:
                    row[key] = float(cell)
            rows.append(row)
    ckpts = sorted(
        os.path.join(out_dir, p) for p in os.listdir(out_dir) if p.startswith("ckpt_seed")
    )
    return RunRecord(
        config_hash=hashlib.sha256(echo.encode()).hexdigest()[:16],
        rows=rows,
        checkpoints=ckpts,
        out_dir=str(out_dir),
    )


def sweep(cfg: TrainConfig, param: str, values) -> list[RunRecord]:
    """One run per value of a sweepable parameter; shared seeds and base config."""
    name = UNICODE_ALIASES.get(param, param)
    if name not in SWEEPABLE:
        raise ConfigurationError(
            f"cannot sweep {param!r}; choose from {sorted(SWEEPABLE)}"
        )
    field_name = EXTERNAL_KEYS[name]
    records = []
    table_rows = []
    for value in values:
        sub = replace(
            cfg,
            **{
                field_name: type(getattr(cfg, field_name))(value),
                "out_dir": os.path.join(cfg.out_dir, f"{name}_{value}"),
            },
        )
        rec = run_experiment(sub)
        records.append(rec)
        for seed in sub.seeds:
            last = [r for r in rec.rows if r["seed"] == seed][-1]
            table_rows.append((value, seed, last["dsc"], last["hd"], last["n_conn"]))
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, "sweep_summary.csv"), "w") as f:
        f.write(f"{name},seed,dsc,hd,n_conn\n")
        for row in table_rows:
            f.write(",".join(_format_cell(v) for v in row) + "\n")
    return records
