"""Training loops and evaluation metrics.

Two step functions share the same shell (draw memory batches, one SGD
update, reservoir-insert the incoming batch *after* the update):

* ``step_pdg`` trains on rho * quantile_term + memory_loss, where the
  quantile term is the Gaussian-estimated upper alpha-quantile of the
  per-batch risks of the incoming batch plus n_risk_batches memory draws.
  Its gradient is assembled as a weighted sum of per-batch cross-entropy
  gradients with the chain-rule weights from
  :func:`qreplay.quantile.quantile_risk_weights`.
* ``step_er`` is the experience-replay baseline: one step on
  0.5 * loss(B) + 0.5 * loss(B_M).

Before the memory holds anything both reduce to plain SGD on the
incoming batch.

Per-run randomness is split into fixed, documented streams derived from
the run seed: model init uses [seed, 0], batch draws use [seed, 1, t]
(inside data.next_batch), and the buffer uses [seed, 2].
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import nn
from .data import ROTATION_GRID, next_batch
from .memory import ReservoirBuffer
from .quantile import SCALE_MODES, estimate_quantile, quantile_risk_weights

METHODS = ("pdg", "er")


@dataclass
class TrainConfig:
    alpha: float = 0.9999
    rho: float = 0.5
    lr: float = 0.1
    batch_size: int = 512
    memory_batch_size: int = 64
    risk_batch_size: int = 64
    n_risk_batches: int = 3
    memory_capacity: int = 10000
    seed: int = 0
    scale_mode: str = "paper"
    method: str = "pdg"
    layer_dims: tuple = (784, 100, 100, 10)

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.rho < 0:
            raise ValueError("rho must be >= 0")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        for name in ("batch_size", "memory_batch_size", "risk_batch_size",
                     "n_risk_batches"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.memory_capacity < 0:
            raise ValueError("memory_capacity must be >= 0")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")
        if self.scale_mode not in SCALE_MODES:
            raise ValueError(f"scale_mode must be one of {SCALE_MODES}")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")

    def with_overrides(self, **kwargs):
        return replace(self, **kwargs)


@dataclass
class StepStats:
    """Per-step scalars for the metrics stream; NaN where undefined
    (e.g. the quantile fields of an ER step or a cold-start step)."""

    mu: float = math.nan
    sigma_sq: float = math.nan
    l_g: float = math.nan
    l_m: float = math.nan


@dataclass
class MetricsRecord:
    step: int
    per_rotation: dict
    avg_accuracy: float
    target_accuracy: float
    memorization_accuracy: float
    stats: StepStats = field(default_factory=StepStats)


def _traced_loss(model, batch):
    logits, trace = nn.forward(model, batch.images)
    return float(nn.cross_entropy(logits, batch.labels)), trace


def step_pdg(model, buffer, batch, config):
    """One update of the quantile-risk method. Returns StepStats."""
    r0, trace0 = _traced_loss(model, batch)
    traced = [(trace0, batch.labels)]
    risks = [r0]
    if len(buffer) > 0:
        for _ in range(config.n_risk_batches):
            rb = buffer.sample_batch(config.risk_batch_size)
            r, tr = _traced_loss(model, rb)
            risks.append(r)
            traced.append((tr, rb.labels))
    stats = StepStats()
    if len(risks) >= 2:
        est = estimate_quantile(risks, config.alpha, config.scale_mode)
        weights = list(config.rho * quantile_risk_weights(est))
        stats.mu, stats.sigma_sq, stats.l_g = est.mu, est.sigma_sq, est.l_g
    else:
        # Quantile undefined from one risk: fall back to plain SGD on B.
        weights = [1.0]
    if len(buffer) > 0:
        bm = buffer.sample_batch(config.memory_batch_size)
        l_m, trace_m = _traced_loss(model, bm)
        traced.append((trace_m, bm.labels))
        weights.append(1.0)
        stats.l_m = l_m
    else:
        stats.l_m = 0.0
    grads = nn.backward_weighted_sum(model, traced, weights)
    nn.sgd_step(model, grads, config.lr)
    buffer.insert_batch(batch)
    return stats


def step_er(model, buffer, batch, config):
    """One experience-replay update: 0.5/0.5 current and memory loss."""
    _, trace0 = _traced_loss(model, batch)
    stats = StepStats()
    if len(buffer) > 0:
        bm = buffer.sample_batch(config.memory_batch_size)
        l_m, trace_m = _traced_loss(model, bm)
        traced = [(trace0, batch.labels), (trace_m, bm.labels)]
        weights = [0.5, 0.5]
        stats.l_m = l_m
    else:
        traced = [(trace0, batch.labels)]
        weights = [1.0]
    grads = nn.backward_weighted_sum(model, traced, weights)
    nn.sgd_step(model, grads, config.lr)
    buffer.insert_batch(batch)
    return stats


STEP_FNS = {"pdg": step_pdg, "er": step_er}


def evaluate(model, eval_sets, held_out, rotation_grid=ROTATION_GRID):
    """(avg, target, per-rotation accuracies) over the rotated test sets.

    avg is the unweighted mean across every grid rotation, held-out
    included; target is the held-out rotation alone.
    """
    missing = [d for d in rotation_grid if d not in eval_sets]
    if missing:
        raise ValueError(f"evaluation sets missing rotations {missing}")
    if held_out not in eval_sets:
        raise ValueError(f"held-out rotation {held_out} has no evaluation set")
    per = {}
    for degrees in sorted(rotation_grid):
        batch = eval_sets[degrees]
        per[degrees] = nn.accuracy(model, batch.images, batch.labels)
    avg = float(np.mean([per[d] for d in sorted(rotation_grid)]))
    return avg, per[held_out], per


def memorization_accuracy(model, buffer):
    """Accuracy on everything currently stored; 1.0 for an empty buffer
    (vacuously perfect retention, keeps early-run curves defined)."""
    contents = buffer.full_contents()
    if len(contents) == 0:
        return 1.0
    return nn.accuracy(model, contents.images, contents.labels)


def run_training(config, schedule, base_images, base_labels, eval_sets,
                 eval_every=50):
    """Drive one full pass over the schedule. Returns (model, buffer,
    records) with a MetricsRecord every eval_every steps and at the end.
    """
    step_fn = STEP_FNS[config.method]
    model = nn.MlpModel.init(config.layer_dims, np.random.default_rng([config.seed, 0]))
    buffer = ReservoirBuffer(
        config.memory_capacity, seed=[config.seed, 2],
        feature_dim=config.layer_dims[0],
    )
    records = []
    total = schedule.total_steps
    for t in range(total):
        batch = next_batch(schedule, base_images, base_labels, t, config.batch_size)
        stats = step_fn(model, buffer, batch, config)
        if (t + 1) % eval_every == 0 or t == total - 1:
            avg, target, per = evaluate(model, eval_sets, schedule.held_out)
            records.append(
                MetricsRecord(
                    step=t + 1,
                    per_rotation=per,
                    avg_accuracy=avg,
                    target_accuracy=target,
                    memorization_accuracy=memorization_accuracy(model, buffer),
                    stats=stats,
                )
            )
    return model, buffer, records
