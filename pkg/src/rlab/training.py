"""Loss assembly, the RMSProp training loop and its plateau schedule."""

import csv
import math
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import gradcore as gc
from . import predictor
from .datasets import sample_window
from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class LossConfig:
    angular_weight: float = 1.0
    det_reg_lambda: float = 0.01


@dataclass(frozen=True)
class TrainSchedule:
    batch_size: int = 8
    lr_initial: float = 1e-4
    lr_decay_factor: float = 10.0
    plateau_epochs: int = 100
    stop_epochs: int = 200
    max_epochs: int = 300
    T_train: int = 10
    seed: int = 0
    min_delta: float = 1e-6

    def __post_init__(self):
        if self.stop_epochs < self.plateau_epochs:
            raise ConfigError("stop_epochs must be at least plateau_epochs")
        if self.batch_size < 1 or self.max_epochs < 1 or self.T_train < 1:
            raise ConfigError("batch_size, max_epochs and T_train must be positive")

    def to_json(self):
        return asdict(self)

    @classmethod
    def from_json(cls, d):
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass
class Batch:
    frames: np.ndarray  # (B, T0, H, W, 3)
    positions: np.ndarray  # (B, T, n, 2)
    angular_velocities: np.ndarray  # (B, T, n, 3)
    final_frames: np.ndarray = None  # (B, H, W, 3)


def make_batch(windows):
    final = None
    if windows[0].final_frame is not None:
        final = np.stack([w.final_frame for w in windows])
    return Batch(
        np.stack([w.frames for w in windows]),
        np.stack([w.positions for w in windows]),
        np.stack([w.angular_velocities for w in windows]),
        final,
    )


def _sq_dist(a, b):
    d = a - b
    return (d * d).sum(axis=-1)


def compute_loss(steps, extra, batch, config, loss_config=LossConfig()):
    """Scalar training loss for one rollout against a batch of targets.

    Per-step terms are averaged over steps, batch and objects; the determinant
    regulariser of ``probnet`` is summed over steps.
    """
    T = len(steps)
    if batch.positions.shape[1] != T:
        raise ShapeError(f"{T} predictions but {batch.positions.shape[1]} targets")
    total = 0.0
    for t, out in enumerate(steps):
        y = gc.Tensor(batch.positions[:, t])
        if config.variant == "probnet":
            term = gc.gaussian_nll(y, out["mu"], out["sigma"]).mean()
            reg = gc.det2x2(out["sigma"]).mean() * loss_config.det_reg_lambda
            total = total + term * (1.0 / T) + reg
        else:
            total = total + _sq_dist(out["position"], y).mean() * (1.0 / T)
        if "omega" in out and loss_config.angular_weight:
            w = gc.Tensor(batch.angular_velocities[:, t])
            total = total + _sq_dist(out["omega"], w).mean() * (loss_config.angular_weight / T)
    if config.variant == "interpnet":
        total = total + _sq_dist(extra["final"], gc.Tensor(batch.positions[:, -1])).mean()
    return gc.as_tensor(total)


def batch_loss(params, batch, config, loss_config=LossConfig(), tape=None):
    steps, extra = predictor.rollout(
        params, batch.frames, config, batch.positions.shape[1], batch.final_frames
    )
    return compute_loss(steps, extra, batch, config, loss_config)


def train_step(params, batch, config, opt_state, loss_config=LossConfig()):
    with gc.Tape() as tape:
        loss = batch_loss(params, batch, config, loss_config)
    grads = gc.backward(tape, loss)
    gc.rmsprop_step(params, grads, opt_state)
    return loss.item()


# ---------------------------------------------------------------- schedule


@dataclass
class ScheduleState:
    """Plateau bookkeeping; ``observe`` is called once per finished epoch."""

    schedule: TrainSchedule
    lr: float = None
    best: float = math.inf
    best_epoch: int = 0
    since_improvement: int = 0
    since_drop: int = 0
    lr_drops: list = field(default_factory=list)
    stopped_at: int = None

    def __post_init__(self):
        if self.lr is None:
            self.lr = self.schedule.lr_initial

    def observe(self, epoch, val_loss):
        """Returns True when ``val_loss`` is a new best."""
        s = self.schedule
        improved = val_loss < self.best - s.min_delta
        if improved:
            self.best, self.best_epoch = val_loss, epoch
            self.since_improvement = self.since_drop = 0
        else:
            self.since_improvement += 1
            self.since_drop += 1
            if self.since_drop >= s.plateau_epochs:
                self.lr /= s.lr_decay_factor
                self.lr_drops.append(epoch)
                self.since_drop = 0
            if self.since_improvement >= s.stop_epochs:
                self.stopped_at = epoch
        return improved

    @property
    def done(self):
        return self.stopped_at is not None


def run_schedule(schedule, train_epoch, validate, on_epoch=None):
    """Generic epoch loop: ``train_epoch(epoch, lr) -> loss``, ``validate() -> loss``.

    ``on_epoch(epoch, lr, train_loss, val_loss, improved)`` runs after each
    epoch; ``lr`` there is the rate the epoch was trained with.
    """
    state = ScheduleState(schedule)
    for epoch in range(1, schedule.max_epochs + 1):
        lr = state.lr
        train_loss = train_epoch(epoch, lr)
        val_loss = validate()
        improved = state.observe(epoch, val_loss)
        if on_epoch is not None:
            on_epoch(epoch, lr, train_loss, val_loss, improved)
        if state.done:
            break
    return state


# -------------------------------------------------------------- data access


def check_compatible(dataset, config):
    m = dataset.manifest
    if m.image_size != config.image_size:
        raise ConfigError(f"dataset image_size {m.image_size} != model {config.image_size}")
    if m.n_objects != config.n_objects:
        raise ConfigError(f"dataset has {m.n_objects} objects, model expects {config.n_objects}")
    if m.T0 != config.T0:
        raise ConfigError(f"dataset T0 {m.T0} != model T0 {config.T0}")


def windows_for(dataset, indices, T, mode, rng, config):
    interp = config.variant == "interpnet"
    return [
        sample_window(dataset.record(i), T, mode, rng, config.T0, with_final=interp)
        for i in indices
    ]


def evaluate_loss(params, windows, config, batch_size, loss_config=LossConfig()):
    """Mean loss over fixed windows, batched; no tape is recorded."""
    total, count = 0.0, 0
    for k in range(0, len(windows), batch_size):
        chunk = windows[k:k + batch_size]
        loss = batch_loss(params, make_batch(chunk), config, loss_config)
        total += loss.item() * len(chunk)
        count += len(chunk)
    return total / count


LOG_FIELDS = ("epoch", "lr", "train_loss", "val_loss", "wall_seconds")


def train(dataset, config, schedule, out_dir, loss_config=LossConfig(), init_seed=None,
          progress=None):
    """Fit ``config`` on the dataset's train split; keeps the best-validation checkpoint.

    Writes ``checkpoint.rllw`` and ``train_log.csv`` into ``out_dir`` and
    returns ``(params, schedule_state, log_rows)``.
    """
    check_compatible(dataset, config)
    train_idx, val_idx = dataset.split("train"), dataset.split("val")
    if not train_idx or not val_idx:
        raise ConfigError("dataset needs non-empty train and validation splits")
    os.makedirs(out_dir, exist_ok=True)
    seed = schedule.seed if init_seed is None else init_seed
    params = predictor.init_params(config, seed)
    rng = np.random.default_rng(np.random.SeedSequence([schedule.seed, 1]))
    val_windows = windows_for(dataset, val_idx, schedule.T_train, "eval_fixed", None, config)
    opt = gc.RmsPropState(learning_rate=schedule.lr_initial)
    rows = []
    ckpt_path = os.path.join(out_dir, "checkpoint.rllw")
    log_path = os.path.join(out_dir, "train_log.csv")
    started = time.perf_counter()

    def train_epoch(epoch, lr):
        opt.learning_rate = lr
        order = rng.permutation(train_idx)
        windows = windows_for(dataset, order, schedule.T_train, "train_random", rng, config)
        total = 0.0
        for k in range(0, len(windows), schedule.batch_size):
            chunk = windows[k:k + schedule.batch_size]
            total += train_step(params, make_batch(chunk), config, opt, loss_config) * len(chunk)
        return total / len(windows)

    def validate():
        return evaluate_loss(params, val_windows, config, schedule.batch_size, loss_config)

    with open(log_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_FIELDS)

        def on_epoch(epoch, lr, train_loss, val_loss, improved):
            row = (epoch, lr, train_loss, val_loss, time.perf_counter() - started)
            rows.append(row)
            writer.writerow([epoch, repr(lr), repr(train_loss), repr(val_loss),
                             f"{row[4]:.3f}"])
            fh.flush()
            if improved:
                save_model(ckpt_path, params, config, {
                    "epoch": epoch, "val_loss": val_loss, "schedule": schedule.to_json(),
                    "loss": asdict(loss_config), "init_seed": seed,
                })
            if progress is not None:
                progress(epoch, lr, train_loss, val_loss)

        state = run_schedule(schedule, train_epoch, validate, on_epoch)
    best, _ = load_model(ckpt_path)
    return best, state, rows


def save_model(path, params, config, extra=None):
    meta = {"model": config.to_json()}
    meta.update(extra or {})
    gc.save_checkpoint(path, params, meta)


def load_model(path):
    """Return ``(params, metadata)`` with params as leaf Tensors."""
    arrays, meta = gc.load_checkpoint(path)
    if "model" not in meta:
        raise ConfigError(f"checkpoint {path} carries no model config")
    config = predictor.ModelConfig.from_json(meta["model"])
    expected = predictor.parameter_shapes(config)
    if set(expected) != set(arrays):
        raise ConfigError(f"checkpoint {path} parameters do not match its model config")
    for name, shape in expected.items():
        if arrays[name].shape != tuple(shape):
            raise ConfigError(
                f"checkpoint {path}: {name} has shape {arrays[name].shape}, expected {shape}"
            )
    params = {
        name: gc.Tensor(arrays[name], requires_grad=True, name=name) for name in expected
    }
    meta["config"] = config
    return params, meta
