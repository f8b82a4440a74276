"""Losses, Adam, logarithmic learning-rate annealing, and the fit loop.

The same loop drives image and SDF fitting: a task sampler returns one or
more weighted batches per step, each batch supervising any subset of heads
on its own coordinate set. Image fitting uses a single unit-weight batch
(every head against the same full-resolution target, or per-head targets on
per-scale grids); SDF fitting uses a lambda-weighted coarse batch plus a
unit-weight fine batch.

Loss reduction is mean-per-element within a (head, batch) pair, summed over
heads and batches, so tolerances are resolution independent. Forward and
backward run in float32 by default with float64 master parameters and
float64 loss accumulation.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, InvalidInputError, TrainingDivergedError
from .network import NetworkParams, NetworkSpec, backward, forward
from .rng import Rng

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    total_steps: int
    lr_start: float = 1e-2
    lr_end: float = 1e-3
    batch_size: int = 0          # interpreted by the task sampler; 0 = full batch
    seed: int = 0
    supervision: str = "shared"  # "shared" or "per-head"

    def __post_init__(self):
        if self.total_steps < 0:
            raise InvalidInputError("total_steps must be >= 0")
        if not (self.lr_start >= self.lr_end > 0):
            raise InvalidInputError("need lr_start >= lr_end > 0")
        if self.supervision not in ("shared", "per-head"):
            raise InvalidInputError(f"unknown supervision mode {self.supervision!r}")


def lr_at(step: int, config: TrainConfig) -> float:
    """Geometric interpolation lr_start * (lr_end/lr_start)^(step/total_steps)."""
    if step < 0 or step > config.total_steps:
        raise DomainError(f"step {step} outside [0, {config.total_steps}]")
    if config.total_steps == 0:
        return config.lr_start
    t = step / config.total_steps
    return config.lr_start * (config.lr_end / config.lr_start) ** t


@dataclass
class AdamState:
    """First/second moment accumulators for every trainable tensor."""

    m: dict
    v: dict
    step: int = 0

    @staticmethod
    def for_params(params: NetworkParams) -> "AdamState":
        trainable = params.trainable()
        return AdamState(m={k: np.zeros_like(p) for k, p in trainable.items()},
                         v={k: np.zeros_like(p) for k, p in trainable.items()})


def adam_step(params: NetworkParams, grads: dict, state: AdamState, lr: float):
    """One bias-corrected Adam update in place; frozen frequencies untouched.

    ``grads`` must cover exactly the trainable tensors (zero arrays are fine).
    """
    state.step += 1
    t = state.step
    c1 = 1.0 - ADAM_BETA1 ** t
    c2 = 1.0 - ADAM_BETA2 ** t
    trainable = params.trainable()
    for key, p in trainable.items():
        g = grads[key]
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError(t, f"non-finite gradient for {key} at adam step {t}")
        m = state.m[key]
        v = state.v[key]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
    return params, state


def _mse_and_grads(head_outputs: dict, targets: dict, weight: float = 1.0):
    """Mean-per-element squared error summed over the targeted heads."""
    loss = 0.0
    grads = {}
    head_losses = {}
    for h, target in targets.items():
        y = head_outputs[h]
        t = np.asarray(target)
        if y.shape != t.shape:
            raise InvalidInputError(
                f"head {h}: output shape {y.shape} != target shape {t.shape}"
            )
        diff = y.astype(np.float64) - t.astype(np.float64)
        head_loss = float(np.mean(diff * diff))
        head_losses[h] = weight * head_loss
        loss += weight * head_loss
        grads[h] = (2.0 * weight / diff.size) * diff
    return loss, grads, head_losses


def image_loss(head_outputs: dict, targets: dict):
    """Sum over heads of mean squared error, with per-head output gradients."""
    loss, grads, _ = _mse_and_grads(head_outputs, targets)
    return loss, grads


def sdf_loss(coarse_outputs: dict, coarse_gt: dict, fine_outputs: dict,
             fine_gt: dict, lam: float = 0.01):
    """lam * MSE(coarse) + MSE(fine), each summed over heads.

    Returns (loss, (coarse_grads, fine_grads)).
    """
    if lam < 0:
        raise InvalidInputError("sdf loss weight must be >= 0")
    c_loss, c_grads, _ = _mse_and_grads(coarse_outputs, coarse_gt, weight=lam)
    f_loss, f_grads, _ = _mse_and_grads(fine_outputs, fine_gt, weight=1.0)
    return c_loss + f_loss, (c_grads, f_grads)


@dataclass
class WeightedBatch:
    """One supervision batch: coordinates, per-head targets, loss weight."""

    x: np.ndarray
    targets: dict            # head index -> (N, d_out) target array
    weight: float = 1.0


@dataclass
class TrainResult:
    params: NetworkParams
    curve: list              # per step: dict(step, lr, loss, head_losses)


def train(params: NetworkParams, spec: NetworkSpec, sampler, config: TrainConfig,
          dtype=np.float32) -> TrainResult:
    """Run sample -> forward -> loss -> backward -> adam for total_steps.

    ``sampler(step, rng)`` returns a list of :class:`WeightedBatch`; the rng
    argument is an independent fork of the config seed per step, so runs are
    bit-reproducible. The input params are copied, not mutated.
    """
    params = params.copy()
    state = AdamState.for_params(params)
    root = Rng(config.seed)
    curve = []
    for step in range(config.total_steps):
        batches = sampler(step, root.fork(step + 1))
        total_loss = 0.0
        head_losses = {}
        grad_acc = None
        for batch in batches:
            trace = forward(params, spec, batch.x, dtype=dtype)
            loss, out_grads, batch_head_losses = _mse_and_grads(
                trace.heads, batch.targets, weight=batch.weight)
            total_loss += loss
            for h, v in batch_head_losses.items():
                head_losses[h] = head_losses.get(h, 0.0) + v
            grads = backward(params, spec, trace, out_grads)
            if grad_acc is None:
                grad_acc = grads
            else:
                for k, g in grads.items():
                    grad_acc[k] += g
        if not np.isfinite(total_loss):
            raise TrainingDivergedError(step)
        adam_step(params, grad_acc, state, lr_at(step, config))
        curve.append({"step": step, "lr": lr_at(step, config),
                      "loss": total_loss, "head_losses": head_losses})
    return TrainResult(params=params, curve=curve)
