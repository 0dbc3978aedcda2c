"""Confusion-matrix metrics and probability threshold sweeps."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ContractError

EVAL_THRESHOLD = 0.5
CRITICAL_TOLERANCE = 0.02


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def confusion(probs, labels, threshold: float = EVAL_THRESHOLD) -> ConfusionCounts:
    """A record is predicted positive when ``prob >= threshold``."""
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels)
    if p.shape != y.shape:
        raise ContractError(f"{p.size} probabilities for {y.size} labels")
    if not 0.0 <= threshold <= 1.0:
        raise ContractError(f"threshold {threshold} outside [0, 1]")
    pred = p >= threshold
    pos = y == 1
    return ConfusionCounts(
        tp=int(np.count_nonzero(pred & pos)),
        fp=int(np.count_nonzero(pred & ~pos)),
        tn=int(np.count_nonzero(~pred & ~pos)),
        fn=int(np.count_nonzero(~pred & pos)),
    )


def precision_recall_f1(c: ConfusionCounts) -> tuple[float, float, float]:
    precision = c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0
    recall = c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


@dataclass(frozen=True)
class TaskMetrics:
    task: str
    threshold: float
    precision: float
    recall: float
    f1: float


def task_metrics(probs: np.ndarray, labels: np.ndarray, task_names: Sequence[str],
                 threshold: float = EVAL_THRESHOLD) -> list[TaskMetrics]:
    """Per-task metrics for ``(n, T)`` probability and label matrices."""
    probs = np.asarray(probs).reshape(len(probs), -1)
    labels = np.asarray(labels).reshape(len(labels), -1)
    out = []
    for t, name in enumerate(task_names):
        p, r, f = precision_recall_f1(confusion(probs[:, t], labels[:, t], threshold))
        out.append(TaskMetrics(name, threshold, p, r, f))
    return out


@dataclass(frozen=True)
class ThresholdSweepRow:
    threshold: float
    task: str
    frac_nonsusceptible: float  # predicted-positive share
    precision: float
    recall: float

    @property
    def frac_susceptible(self) -> float:
        return 1.0 - self.frac_nonsusceptible


@dataclass(frozen=True)
class SweepResult:
    rows: list[ThresholdSweepRow]
    label_rates: dict[str, float]
    critical: dict[str, float | None]


def threshold_sweep(probs: np.ndarray, labels: np.ndarray, thresholds: Sequence[float],
                    task_names: Sequence[str], tolerance: float = CRITICAL_TOLERANCE) -> SweepResult:
    """Rows ordered by threshold, then task.

    The critical threshold of a task is the smallest swept threshold whose
    predicted-positive share is within ``tolerance`` of the task's observed
    positive rate.
    """
    th = [float(x) for x in thresholds]
    if not th:
        raise ContractError("no thresholds given")
    if any(not 0.0 <= x <= 1.0 for x in th):
        raise ContractError("thresholds must lie in [0, 1]")
    if any(b <= a for a, b in zip(th, th[1:])):
        raise ContractError("thresholds must be strictly increasing")
    probs = np.asarray(probs, dtype=np.float64).reshape(len(probs), -1)
    labels = np.asarray(labels).reshape(len(labels), -1)
    n = probs.shape[0]
    if n == 0:
        raise ContractError("cannot sweep an empty prediction set")
    rates = {name: float(np.mean(labels[:, t] == 1)) for t, name in enumerate(task_names)}
    critical: dict[str, float | None] = {name: None for name in task_names}
    rows = []
    for x in th:
        for t, name in enumerate(task_names):
            c = confusion(probs[:, t], labels[:, t], x)
            p, r, _ = precision_recall_f1(c)
            frac = (c.tp + c.fp) / n
            rows.append(ThresholdSweepRow(x, name, frac, p, r))
            if critical[name] is None and abs(frac - rates[name]) <= tolerance:
                critical[name] = x
    return SweepResult(rows, rates, critical)


def frange(lo: float, hi: float, step: float) -> list[float]:
    """Inclusive grid ``lo, lo+step, ... <= hi`` free of accumulated drift."""
    if step <= 0:
        raise ContractError("step must be positive")
    n = int(np.floor((hi - lo) / step + 1e-9))
    return [round(lo + i * step, 12) for i in range(n + 1)]


def _fmt(x: float) -> str:
    return repr(float(x))


def write_metrics_csv(path, metrics: Sequence[TaskMetrics]) -> None:
    lines = ["task,threshold,precision,recall,f1"]
    lines += [f"{m.task},{_fmt(m.threshold)},{_fmt(m.precision)},{_fmt(m.recall)},{_fmt(m.f1)}" for m in metrics]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_sweep_csv(path, result: SweepResult) -> None:
    lines = ["threshold,task,frac_nonsusceptible,precision,recall"]
    lines += [
        f"{_fmt(r.threshold)},{r.task},{_fmt(r.frac_nonsusceptible)},{_fmt(r.precision)},{_fmt(r.recall)}"
        for r in result.rows
    ]
    for task, value in result.critical.items():
        if value is not None:
            lines.append(f"# critical_threshold {task} {_fmt(value)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_metrics_csv(path) -> list[TaskMetrics]:
    rows = Path(path).read_text(encoding="utf-8").splitlines()[1:]
    out = []
    for line in rows:
        task, *vals = line.split(",")
        out.append(TaskMetrics(task, *map(float, vals)))
    return out
