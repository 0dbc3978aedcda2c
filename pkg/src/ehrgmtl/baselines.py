"""Single-task baselines on the raw binary event vector (no graph).

Each task gets its own independent model; all tasks are stepped together on
the same shuffled mini-batches, which is equivalent to training them apart
because no parameter is shared.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import diffcore as dc
from .diffcore import Tape, Tensor
from .errors import ConfigError, ContractError
from .evaluation import EVAL_THRESHOLD, TaskMetrics, task_metrics
from .graphbuild import PatientRecord
from .mtl import TrainConfig, epoch_order, make_rng, sgd_step, sigmoid, step_decay


def _arrays(records: Sequence[PatientRecord]) -> tuple[np.ndarray, np.ndarray]:
    if not records:
        raise ContractError("no records")
    X = np.array([r.events for r in records], dtype=np.float64)
    Y = np.array([r.labels for r in records], dtype=np.float64)
    return X, Y


@dataclass
class BaselineModel:
    kind: str                       # "logreg" or "mlp"
    params: list[list[Tensor]]      # per task

    def parameters(self) -> list[Tensor]:
        return [p for task in self.params for p in task]

    def logits(self, X: Tensor) -> list[Tensor]:
        out = []
        for task in self.params:
            if self.kind == "logreg":
                w, b = task
                out.append(dc.dot_add(X, w, b))
            else:
                W1, b1, w2, b2 = task
                out.append(dc.dot_add(dc.relu(dc.matmul_add(X, W1, b1)), w2, b2))
        return out

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return np.stack([sigmoid(z.data) for z in self.logits(Tensor(X))], axis=1)


def init_baseline(kind: str, n_features: int, n_tasks: int, hidden: int = 64, seed: int = 0) -> BaselineModel:
    """Logistic regression starts at zero.  The MLP hidden layer is uniform
    in +-1/sqrt(fan_in) and its output layer starts at zero, so both models
    predict exactly 0.5 before training."""
    if kind not in ("logreg", "mlp"):
        raise ConfigError(f"unknown baseline {kind!r}")
    if hidden < 1:
        raise ConfigError("hidden width must be >= 1")
    rng = make_rng(seed, 4)
    params = []
    for _ in range(n_tasks):
        if kind == "logreg":
            params.append([Tensor(np.zeros(n_features), True), Tensor(0.0, True)])
        else:
            bound = 1.0 / math.sqrt(n_features)
            params.append([
                Tensor(rng.uniform(-bound, bound, (hidden, n_features)), True),
                Tensor(rng.uniform(-bound, bound, hidden), True),
                Tensor(np.zeros(hidden), True),
                Tensor(0.0, True),
            ])
    return BaselineModel(kind, params)


def fit_baseline(model: BaselineModel, X: np.ndarray, Y: np.ndarray, config: TrainConfig) -> list[float]:
    """Mean-BCE SGD with the step-decay schedule; returns per-epoch mean loss
    (summed over tasks)."""
    history = []
    for epoch in range(config.epochs):
        lr = step_decay(config.lr0, epoch, config.lr_decay_factor, config.lr_decay_period)
        order = epoch_order(len(X), config.seed, epoch)
        losses = []
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            with Tape() as tape:
                zs = model.logits(Tensor(X[idx]))
                total = None
                for t, z in enumerate(zs):
                    L = dc.mean(dc.bce_with_logits(z, Y[idx, t]))
                    total = L if total is None else dc.add(total, L)
            for p in model.parameters():
                p.grad = None
            dc.backward(total, tape)
            params = model.parameters()
            sgd_step(params, [p.grad for p in params], lr)
            losses.append(float(total.data))
        history.append(float(np.mean(losses)))
    return history


def _baseline(kind, train, eval_records, config, task_names, hidden):
    X, Y = _arrays(train)
    Xe, Ye = _arrays(eval_records)
    names = list(task_names) if task_names is not None else [f"task{t}" for t in range(Y.shape[1])]
    model = init_baseline(kind, X.shape[1], Y.shape[1], hidden, config.seed)
    fit_baseline(model, X, Y, config)
    return task_metrics(model.predict_proba(Xe), Ye, names, EVAL_THRESHOLD)


def baseline_logreg(train: Sequence[PatientRecord], eval_records: Sequence[PatientRecord],
                    config: TrainConfig, task_names: Sequence[str] | None = None) -> list[TaskMetrics]:
    return _baseline("logreg", train, eval_records, config, task_names, 1)


def baseline_mlp(train: Sequence[PatientRecord], eval_records: Sequence[PatientRecord],
                 config: TrainConfig, task_names: Sequence[str] | None = None,
                 hidden: int = 64) -> list[TaskMetrics]:
    return _baseline("mlp", train, eval_records, config, task_names, hidden)
