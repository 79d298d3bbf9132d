"""Flow matching training, the one-step average-velocity objective, and
seeded ensembles.

Both objectives are plain velocity regressions:

    fm:        mean ||v(x_t, t) - (x1 - x0)||^2,  x_t = t x1 + (1-t) x0
    one-step:  mean ||v(x0, 0) - (x1 - x0)||^2

with AdamW (decoupled weight decay, beta 0.9/0.999, eps 1e-8) and an optional
cosine learning-rate schedule. Data is regenerated from the seed stream every
epoch, so the run is fully determined by (task, config, initial parameters).
"""
from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .models import MlpArch, MlpVelocity
from .numerics import RngState

__all__ = [
    "TrainConfig",
    "TrainReport",
    "TrainingError",
    "fm_loss",
    "one_step_loss",
    "train",
    "train_ensemble",
]

# training samples t uniformly but keeps clear of the interpolant endpoints,
# where the downstream covariance formulas are singular
T_CLAMP = (1e-3, 1.0 - 1e-3)


class TrainingError(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 128
    learning_rate: float = 2e-4
    lr_schedule: str = "cosine"  # or "constant"
    weight_decay: float = 0.01
    seed: RngState = RngState(0)
    objective: str = "fm"  # or "one-step"
    pairs_per_epoch: int = 8192

    def __post_init__(self):
        if self.epochs < 1:
            raise TrainingError("epochs must be >= 1")
        if self.batch_size < 1 or self.pairs_per_epoch < self.batch_size:
            raise TrainingError("need 1 <= batch_size <= pairs_per_epoch")
        if self.learning_rate < 0:
            raise TrainingError("learning rate must be nonnegative")
        if self.lr_schedule not in ("constant", "cosine"):
            raise TrainingError(f"unknown lr schedule {self.lr_schedule!r}")
        if self.objective not in ("fm", "one-step"):
            raise TrainingError(f"unknown objective {self.objective!r}")


@dataclass(frozen=True)
class TrainReport:
    epoch_losses: tuple
    initial_loss: float
    seconds: float
    checksum: str
    notes: tuple = ()


def _batch_loss_and_grads(model, x0, x1, t, dropout_rng=None):
    """Shared core of both objectives: regress velocity onto x1 - x0."""
    target = x1 - x0
    if t is None:
        xin, tin = x0, 0.0
    else:
        tc = t[:, None]
        xin, tin = tc * x1 + (1.0 - tc) * x0, t
    out, cache = model.forward_cache(xin, tin, dropout_rng)
    resid = out - target
    n = x0.shape[0]
    loss = float((resid * resid).sum() / n)
    d_ws, d_bs = model.backward(cache, (2.0 / n) * resid)
    return loss, d_ws, d_bs


def fm_loss(model: MlpVelocity, x0, x1, t, dropout_rng: RngState | None = None):
    """Flow matching loss and parameter gradients on one batch.

    t holds one interior time per sample. Returns (loss, weight grads,
    bias grads); loss is the batch mean of the squared residual norm.
    """
    t = np.asarray(t, dtype=np.float64)
    if np.any(t <= 0.0) or np.any(t >= 1.0):
        raise TrainingError("fm loss needs interior times")
    loss, d_ws, d_bs = _batch_loss_and_grads(model, x0, x1, t, dropout_rng)
    if not np.isfinite(loss):
        raise TrainingError("non-finite loss")
    return loss, d_ws, d_bs


def one_step_loss(model: MlpVelocity, x0, x1, dropout_rng: RngState | None = None):
    """Average-velocity regression at t=0: mean ||v(x0, 0) - (x1 - x0)||^2."""
    loss, d_ws, d_bs = _batch_loss_and_grads(model, x0, x1, None, dropout_rng)
    if not np.isfinite(loss):
        raise TrainingError("non-finite loss")
    return loss, d_ws, d_bs


class _AdamW:
    """Decoupled-weight-decay Adam over a list of parameter arrays."""

    def __init__(self, params, weight_decay):
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.wd = weight_decay
        self.beta1, self.beta2, self.eps = 0.9, 0.999, 1e-8
        self.steps = 0

    def step(self, params, grads, lr):
        self.steps += 1
        c1 = 1.0 - self.beta1**self.steps
        c2 = 1.0 - self.beta2**self.steps
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= lr * self.wd * p
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _lr_at(config: TrainConfig, step: int, total_steps: int) -> float:
    if config.lr_schedule == "constant":
        return config.learning_rate
    return config.learning_rate * 0.5 * (1.0 + np.cos(np.pi * step / total_steps))


def train(model: MlpVelocity, task, config: TrainConfig) -> TrainReport:
    """Run the configured objective over freshly sampled pairs each epoch.

    Mutates ``model`` in place and returns the report. Fully deterministic
    given (initial parameters, task, config.seed): data, time draws, and
    dropout masks all come from per-epoch child streams.
    """
    if task.dim != model.arch.dim:
        raise TrainingError(f"task dim {task.dim} != model dim {model.arch.dim}")
    t0 = time.perf_counter()
    params = model.weights + model.biases
    opt = _AdamW(params, config.weight_decay)
    n = config.pairs_per_epoch
    steps_per_epoch = (n + config.batch_size - 1) // config.batch_size
    total_steps = config.epochs * steps_per_epoch
    use_dropout = model.arch.dropout > 0.0

    epoch_losses = []
    initial_loss = None
    step = 0
    for epoch in range(config.epochs):
        ep = config.seed.split(epoch)
        x0, x1 = task.sample_pairs(ep.split(0), n)
        if config.objective == "fm":
            t_all = ep.split(1).generator().uniform(size=n)
            t_all = np.clip(t_all, T_CLAMP[0], T_CLAMP[1])
        if epoch == 0:
            # pre-training reference: dropout-free eval on the first epoch's data
            if config.objective == "fm":
                tc = t_all[:, None]
                out = model.velocity(tc * x1 + (1.0 - tc) * x0, t_all)
            else:
                out = model.velocity(x0, 0.0)
            initial_loss = float(np.sum((out - (x1 - x0)) ** 2) / n)
        losses = []
        for k in range(steps_per_epoch):
            sl = slice(k * config.batch_size, (k + 1) * config.batch_size)
            drop = ep.split(2 + k) if use_dropout else None
            if config.objective == "fm":
                loss, d_ws, d_bs = fm_loss(model, x0[sl], x1[sl], t_all[sl], drop)
            else:
                loss, d_ws, d_bs = one_step_loss(model, x0[sl], x1[sl], drop)
            if loss > 1e6:
                partial = TrainReport(tuple(epoch_losses), initial_loss,
                                      time.perf_counter() - t0, model.checksum())
                raise TrainingError(
                    f"training diverged at epoch {epoch} step {k}: loss {loss:.3e}",
                    report=partial,
                )
            opt.step(params, d_ws + d_bs, _lr_at(config, step, total_steps))
            losses.append(loss)
            step += 1
        epoch_losses.append(float(np.mean(losses)))

    notes = ()
    if config.objective == "fm":
        notes = (f"t clamped to [{T_CLAMP[0]:g}, {T_CLAMP[1]:g}]",)
    return TrainReport(
        epoch_losses=tuple(epoch_losses),
        initial_loss=initial_loss,
        seconds=time.perf_counter() - t0,
        checksum=model.checksum(),
        notes=notes,
    )


def train_ensemble(count: int, arch: MlpArch, task, config: TrainConfig,
                   member_seeds=None):
    """Train ``count`` independent members; returns (models, reports).

    Members differ only in their seeds: member i initializes from
    config.seed.split(10_000 + i) and orders data by config.seed.split(i).
    ``member_seeds`` overrides the per-member (init, data) seed pairs, which
    the determinism tests use to force collisions.
    """
    if count < 2:
        raise TrainingError("an ensemble needs at least 2 members")
    if member_seeds is None:
        member_seeds = [
            (config.seed.split(10_000 + i), config.seed.split(i))
            for i in range(count)
        ]
    models, reports = [], []
    for init_rng, data_rng in member_seeds:
        model = MlpVelocity.init(arch, init_rng)
        report = train(model, task, replace(config, seed=data_rng))
        models.append(model)
        reports.append(report)
    return models, reports
