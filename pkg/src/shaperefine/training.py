"""Self-supervised SAE training: clipped BCE loss, Adam, seeded loop.

The loss clamps predictions to [clip_eps, 1 - clip_eps] before the logs, so
it is finite for any sigmoid output.  Adam applies decoupled weight decay
before the moment update and uses bias correction with eps = 1e-8.  Batch
gradients are accumulated one sample at a time in draw order, each scaled by
1/batch_size, which keeps runs bit-deterministic for a fixed seed.
"""

from __future__ import annotations

import sys
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import engine as en
from .augment import NoiseParams, TransformParams, make_training_triplet
from .autoencoder import SAEModel, sae_forward
from .errors import ConfigError, ShapeError, TrainingError
from .volume import MaskVolume

ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 2e-4
    beta1: float = 0.97
    beta2: float = 0.999
    weight_decay: float = 5e-4
    batch_size: int = 4
    iterations: int = 2000
    seed: int = 0
    clip_eps: float = 1e-7

    def __post_init__(self):
        if self.learning_rate <= 0.0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError(f"betas must lie in [0, 1), got {self.beta1}, {self.beta2}")
        if not 0.0 < self.clip_eps < 0.5:
            raise ConfigError(f"clip_eps must lie in (0, 0.5), got {self.clip_eps}")
        if self.batch_size < 1 or self.iterations < 0:
            raise ConfigError(
                f"batch_size >= 1 and iterations >= 0 required, "
                f"got {self.batch_size}, {self.iterations}"
            )


def sae_loss(pred, target, clip_eps: float = 1e-7) -> en.Tensor:
    """Mean binary cross-entropy with predictions clamped away from {0, 1}."""
    pred = en.as_tensor(pred)
    t = np.asarray(target, dtype=np.float64)
    if t.shape != pred.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {t.shape}")
    p = en.clamp(pred, clip_eps, 1.0 - clip_eps)
    ll = t * en.log(p) + (1.0 - t) * en.log(en.add(1.0, -p))
    return -en.mean_all(ll)


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_params(cls, params) -> "AdamState":
        state = cls()
        for p in params:
            state.m[p.name] = np.zeros_like(p.data)
            state.v[p.name] = np.zeros_like(p.data)
        return state


def adam_step(params, state: AdamState, cfg: TrainConfig) -> None:
    """One in-place update; parameters with absent gradients are an error."""
    state.step += 1
    bc1 = 1.0 - cfg.beta1 ** state.step
    bc2 = 1.0 - cfg.beta2 ** state.step
    for p in params:
        if p.grad is None:
            raise TrainingError(f"parameter {p.name} has no gradient")
        g = p.grad
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {p.name}")
        if cfg.weight_decay:
            p.data -= cfg.learning_rate * cfg.weight_decay * p.data
        m = state.m[p.name]
        v = state.v[p.name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        p.data -= cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)


@dataclass
class TrainResult:
    losses: list[float]
    diverged_at: int | None = None

    def write_trace(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("iteration,loss\n")
            for i, val in enumerate(self.losses):
                fh.write(f"{i},{val!r}\n")


def train_sae(
    model: SAEModel,
    corpus: list[MaskVolume],
    cfg: TrainConfig,
    transform: TransformParams | None = None,
    noise: NoiseParams | None = None,
    trace_path=None,
    log_every: int = 0,
) -> TrainResult:
    """Train in place; returns the per-iteration loss trace.

    Each iteration samples batch_size labels with replacement, builds seeded
    triplets, runs forward/backward per sample at 1/batch scale in a fixed
    order, then applies one Adam step.
    """
    if not corpus:
        raise ConfigError("training corpus is empty")
    dims = model.config.input_dims
    for i, v in enumerate(corpus):
        if v.voxels.shape != dims:
            raise ShapeError(
                f"corpus volume {i} has array shape {v.voxels.shape}, model wants {dims}"
            )
    params = model.parameters()
    state = AdamState.for_params(params)
    sampler = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0x5A)))
    losses: list[float] = []
    diverged_at = None
    run_over = 0
    scale = 1.0 / cfg.batch_size

    for it in range(cfg.iterations):
        picks = sampler.integers(0, len(corpus), size=cfg.batch_size)
        model.zero_grad()
        batch_loss = 0.0
        for slot, pick in enumerate(picks):
            ref, target, noisy = make_training_triplet(
                corpus[int(pick)], (cfg.seed, it, slot), transform, noise
            )
            pred = sae_forward(model, ref.voxels, noisy.voxels)
            loss = sae_loss(pred, target.voxels, cfg.clip_eps) * scale
            loss.backward()
            batch_loss += loss.data.item() * cfg.batch_size
        adam_step(params, state, cfg)
        mean_loss = batch_loss / cfg.batch_size
        if not np.isfinite(mean_loss):
            raise TrainingError(f"non-finite loss at iteration {it}")
        losses.append(mean_loss)
        if losses and mean_loss > 10.0 * losses[0]:
            run_over += 1
            if run_over >= 100 and diverged_at is None:
                diverged_at = it
                warnings.warn(
                    f"loss exceeded 10x the initial value for 100 consecutive "
                    f"iterations (at iteration {it})",
                    RuntimeWarning,
                )
        else:
            run_over = 0
        if log_every and (it + 1) % log_every == 0:
            recent = float(np.mean(losses[-log_every:]))
            print(
                f"iter {it + 1}/{cfg.iterations} loss {recent:.4f}",
                file=sys.stderr,
                flush=True,
            )

    result = TrainResult(losses=losses, diverged_at=diverged_at)
    if trace_path is not None:
        result.write_trace(trace_path)
    return result
