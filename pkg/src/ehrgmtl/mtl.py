"""Multi-task heads, dynamic task prioritisation, and the SGD training loop."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np

from . import diffcore as dc
from .diffcore import Tape, Tensor
from .encoder import BatchEncoding, EncoderConfig, EncoderParams, encode, init_encoder
from .errors import ConfigError, ContractError, DimensionError, SchemaError
from .graphbuild import GraphBatch, MedicalEventGraph, batch_graphs

KPI_INIT = 0.5
KPI_FLOOR = 1e-6
KPI_CEIL = 1.0 - 1e-12
TRAIN_THRESHOLD = 0.5


def make_rng(*seed: int) -> np.random.Generator:
    """All randomness goes through PCG64 seeded from integer tuples."""
    return np.random.Generator(np.random.PCG64(list(seed)))


@dataclass
class TaskHead:
    task: int
    weight: Tensor  # (d,)
    bias: Tensor    # scalar

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        yield f"head.{self.task}.weight", self.weight
        yield f"head.{self.task}.bias", self.bias


def init_heads(n_tasks: int, d: int, rng: np.random.Generator) -> list[TaskHead]:
    bound = 1.0 / math.sqrt(d)
    return [
        TaskHead(t, Tensor(rng.uniform(-bound, bound, size=d), requires_grad=True),
                 Tensor(0.0, requires_grad=True))
        for t in range(n_tasks)
    ]


def head_logits(layer_sum: Tensor, head: TaskHead) -> Tensor:
    """The same head vector is dotted with every layer's readout, so the
    logit is its dot product with the layer-summed representation."""
    if layer_sum.shape[1] != head.weight.shape[0]:
        raise SchemaError(
            f"head {head.task} has dimension {head.weight.shape[0]}, representation {layer_sum.shape[1]}"
        )
    return dc.dot_add(layer_sum, head.weight, head.bias)


def task_head_prob(rep: Sequence[np.ndarray], head: TaskHead) -> float:
    """Resistance probability for one graph representation."""
    w = head.weight.data
    logit = float(head.bias.data)
    for h in rep:
        h = np.asarray(h, dtype=np.float64)
        if h.shape != w.shape:
            raise SchemaError(f"representation has shape {h.shape}, head weight {w.shape}")
        logit += float(h @ w)
    return float(dc.sigmoid_stable(Tensor(logit)).data)


def sigmoid(z) -> np.ndarray:
    return dc.sigmoid_stable(Tensor(z)).data


def batch_recall(probs, labels, threshold: float = TRAIN_THRESHOLD) -> float | None:
    """TP / (TP + FN); ``None`` when the batch holds no positive label."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.shape != labels.shape:
        raise ContractError("probs and labels differ in length")
    pos = labels == 1
    if not pos.any():
        return None
    return float(np.count_nonzero(probs[pos] >= threshold)) / float(np.count_nonzero(pos))


def dtp_weight(kpi: float, gamma: float) -> float:
    """Focal-style task weight ``-(1-k)^gamma * log(k)`` with ``k`` clamped
    away from 0 and 1."""
    k = min(max(float(kpi), KPI_FLOOR), KPI_CEIL)
    return -((1.0 - k) ** gamma) * math.log(k)


@dataclass
class DtpState:
    kpi: np.ndarray
    alpha: float = 0.9
    gamma: float = 1.0
    step: int = 0

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.gamma < 0:
            raise ConfigError(f"gamma must be >= 0, got {self.gamma}")
        self.kpi = np.asarray(self.kpi, dtype=np.float64)

    @classmethod
    def initial(cls, n_tasks: int, alpha: float = 0.9, gamma: float = 1.0) -> "DtpState":
        return cls(np.full(n_tasks, KPI_INIT), alpha, gamma)

    @property
    def weights(self) -> np.ndarray:
        return np.array([dtp_weight(k, self.gamma) for k in self.kpi])


def kpi_update(state: DtpState, t: int, value: float | None) -> DtpState:
    """Exponential moving average of task ``t``'s KPI; ``None`` carries the
    previous value forward.  Updates ``state`` in place and returns it."""
    if value is None:
        return state
    if not 0.0 <= value <= 1.0:
        raise ContractError(f"KPI must lie in [0, 1], got {value}")
    state.kpi[t] = state.alpha * value + (1.0 - state.alpha) * state.kpi[t]
    return state


def total_loss(losses: Sequence[Tensor], weights: Sequence[float]) -> Tensor:
    """Weighted sum with the weights entering as constants."""
    if len(losses) != len(weights):
        raise ContractError(f"{len(losses)} losses but {len(weights)} weights")
    if any(w < 0 for w in weights):
        raise ContractError("task weights must be non-negative")
    out = None
    for L, w in zip(losses, weights):
        term = dc.scale(L, w)
        out = term if out is None else dc.add(out, term)
    return out


def sgd_step(params: Sequence[Tensor], grads: Sequence[np.ndarray | None], lr: float) -> None:
    """In-place ``p -= lr * g``; a ``None`` gradient leaves ``p`` untouched."""
    if lr < 0:
        raise ContractError("learning rate must be non-negative")
    if len(params) != len(grads):
        raise ContractError("params and grads differ in length")
    for p, g in zip(params, grads):
        if g is None:
            continue
        if g.shape != p.shape:
            raise ContractError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        if lr:
            p.data -= lr * g


def step_decay(lr0: float, epoch: int, factor: float, period: int) -> float:
    if period < 1:
        raise ContractError("decay period must be >= 1")
    return lr0 * factor ** (epoch // period)


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 0.01
    batch_size: int = 32
    epochs: int = 100
    lr_decay_factor: float = 0.5
    lr_decay_period: int = 20
    dtp_enabled: bool = True
    alpha: float = 0.9
    gamma: float = 1.0
    kpi_source: str = "batch"  # or "validation": once per epoch on held-out graphs
    seed: int = 0

    def __post_init__(self):
        if not self.lr0 >= 0:
            raise ConfigError("lr must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if not 0 < self.lr_decay_factor <= 1:
            raise ConfigError("lr_decay_factor must lie in (0, 1]")
        if self.lr_decay_period < 1:
            raise ConfigError("lr_decay_period must be >= 1")
        if not 0 < self.alpha <= 1:
            raise ConfigError("alpha must lie in (0, 1]")
        if self.gamma < 0:
            raise ConfigError("gamma must be >= 0")
        if self.kpi_source not in ("batch", "validation"):
            raise ConfigError(f"unknown kpi_source {self.kpi_source!r}")


@dataclass
class LossReport:
    epoch: int
    step: int
    lr: float
    losses: list[float]
    weights: list[float]
    recalls: list[float | None]
    total: float


class MultiTaskModel:
    """Shared graph encoder with one sigmoid head per task."""

    def __init__(self, encoder_config: EncoderConfig, encoder: EncoderParams, heads: list[TaskHead],
                 task_names: Sequence[str]):
        if len(heads) != len(task_names):
            raise ContractError("one head per task name is required")
        self.encoder_config = encoder_config
        self.encoder = encoder
        self.heads = heads
        self.task_names = list(task_names)

    @classmethod
    def create(cls, encoder_config: EncoderConfig, input_dim: int, task_names: Sequence[str],
               seed: int = 0) -> "MultiTaskModel":
        rng = make_rng(seed, 0)
        enc = init_encoder(encoder_config, input_dim, rng)
        heads = init_heads(len(task_names), encoder_config.hidden_dim, rng)
        return cls(encoder_config, enc, heads, task_names)

    @property
    def n_tasks(self) -> int:
        return len(self.heads)

    @property
    def input_dim(self) -> int:
        return self.encoder.input_dim

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = list(self.encoder.named_parameters())
        for h in self.heads:
            out.extend(h.named_parameters())
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def encode(self, batch: GraphBatch) -> BatchEncoding:
        return encode(batch, self.encoder, self.encoder_config)

    def forward(self, batch: GraphBatch) -> list[Tensor]:
        """Per-task logits, each of shape ``(n_graphs,)``."""
        rep = self.encode(batch).layer_sum()
        return [head_logits(rep, h) for h in self.heads]

    def predict_proba(self, graphs: Sequence[MedicalEventGraph], batch_size: int = 256) -> np.ndarray:
        out = []
        for i in range(0, len(graphs), batch_size):
            logits = self.forward(batch_graphs(graphs[i:i + batch_size]))
            out.append(np.stack([sigmoid(z.data) for z in logits], axis=1))
        if not out:
            return np.zeros((0, self.n_tasks))
        return np.concatenate(out)


def task_losses(model: MultiTaskModel, batch: GraphBatch) -> tuple[list[Tensor], list[np.ndarray]]:
    """Mean BCE per task and the matching probabilities."""
    logits = model.forward(batch)
    losses = [dc.mean(dc.bce_with_logits(z, batch.labels[:, t])) for t, z in enumerate(logits)]
    return losses, [sigmoid(z.data) for z in logits]


def train_step(model: MultiTaskModel, batch: GraphBatch, state: DtpState, config: TrainConfig,
               lr: float, epoch: int) -> LossReport:
    with Tape() as tape:
        losses, probs = task_losses(model, batch)
        recalls = [batch_recall(p, batch.labels[:, t]) for t, p in enumerate(probs)]
        if config.dtp_enabled:
            if config.kpi_source == "batch":
                for t, r in enumerate(recalls):
                    kpi_update(state, t, r)
            weights = [float(w) for w in state.weights]
        else:
            weights = [1.0] * model.n_tasks
        total = total_loss(losses, weights)
    model.zero_grad()
    dc.backward(total, tape)
    params = model.parameters()
    sgd_step(params, [p.grad for p in params], lr)
    state.step += 1
    return LossReport(epoch, state.step, lr, [float(L.data) for L in losses], weights, recalls,
                      float(total.data))



def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return make_rng(seed, 1, epoch).permutation(n)


def train_epoch(model: MultiTaskModel, graphs: Sequence[MedicalEventGraph], labels: np.ndarray,
                state: DtpState, config: TrainConfig, epoch: int = 0) -> list[LossReport]:
    """One pass over ``graphs`` in a seeded shuffled order; updates ``model``
    and ``state`` in place and returns one report per mini-batch."""
    if len(graphs) == 0:
        raise ContractError("cannot train on an empty dataset")
    labels = np.asarray(labels, dtype=np.float64).reshape(len(graphs), -1)
    if labels.shape[1] != model.n_tasks:
        raise DimensionError(f"{labels.shape[1]} label columns for {model.n_tasks} tasks")
    lr = step_decay(config.lr0, epoch, config.lr_decay_factor, config.lr_decay_period)
    order = epoch_order(len(graphs), config.seed, epoch)
    reports = []
    for start in range(0, len(order), config.batch_size):
        idx = order[start:start + config.batch_size]
        batch = batch_graphs([graphs[i] for i in idx], labels[idx])
        reports.append(train_step(model, batch, state, config, lr, epoch))
    return reports


@dataclass
class EpochSummary:
    epoch: int
    step: int
    lr: float
    total: float
    losses: list[float]
    weights: list[float]
    recalls: list[float]
    kpi: list[float]

    @classmethod
    def from_reports(cls, reports: list[LossReport], state: DtpState) -> "EpochSummary":
        T = len(reports[0].losses)

        def col_mean(attr):
            vals = np.array([[np.nan if v is None else v for v in getattr(r, attr)] for r in reports])
            out = []
            for t in range(T):
                c = vals[:, t]
                c = c[~np.isnan(c)]
                out.append(float(c.mean()) if c.size else float("nan"))
            return out

        return cls(
            epoch=reports[0].epoch,
            step=reports[-1].step,
            lr=reports[0].lr,
            total=float(np.mean([r.total for r in reports])),
            losses=col_mean("losses"),
            weights=col_mean("weights"),
            recalls=col_mean("recalls"),
            kpi=[float(k) for k in state.kpi],
        )


def fit(model: MultiTaskModel, graphs: Sequence[MedicalEventGraph], labels: np.ndarray,
        config: TrainConfig, state: DtpState | None = None,
        val_graphs: Sequence[MedicalEventGraph] | None = None, val_labels: np.ndarray | None = None,
        on_epoch: Callable[[EpochSummary], None] | None = None) -> list[EpochSummary]:
    """Train for ``config.epochs`` epochs and return per-epoch summaries."""
    if state is None:
        state = DtpState.initial(model.n_tasks, config.alpha, config.gamma)
    if config.kpi_source == "validation" and config.dtp_enabled and not val_graphs:
        raise ConfigError("kpi_source=validation needs validation graphs")
    history = []
    for epoch in range(config.epochs):
        if config.dtp_enabled and config.kpi_source == "validation":
            probs = model.predict_proba(val_graphs)
            vl = np.asarray(val_labels).reshape(len(val_graphs), -1)
            for t in range(model.n_tasks):
                kpi_update(state, t, batch_recall(probs[:, t], vl[:, t]))
        reports = train_epoch(model, graphs, labels, state, config, epoch)
        summary = EpochSummary.from_reports(reports, state)
        history.append(summary)
        if on_epoch is not None:
            on_epoch(summary)
    return history
