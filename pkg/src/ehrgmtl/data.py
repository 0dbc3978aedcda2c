"""CSV ingestion, seeded splitting, and the synthetic cohort generator.

Dataset CSV layout::

    patient_id,ev__<event>__<window>,...,label__<drug>,...

Cells are ``0``/``1``.  Randomness uses numpy's PCG64 bit generator, seeded
with integer tuples, so outputs are reproducible for a given seed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, ContractError, GenerationError, ParseError, SchemaError
from .graphbuild import EventVocabulary, PatientRecord

DEFAULT_TASKS = ("NIT", "SXT", "CIP", "LVX")
SPLIT = (0.7, 0.1, 0.2)


class LoadedDataset(NamedTuple):
    vocab: EventVocabulary
    records: list[PatientRecord]
    label_names: list[str]
    dropped: list[str]  # ids of rows with no active event


def parse_event_column(name: str) -> tuple[str, str]:
    parts = name.split("__")
    if len(parts) != 3 or parts[0] != "ev" or not parts[1] or not parts[2]:
        raise SchemaError(f"malformed event column {name!r}; expected ev__<event>__<window>")
    return parts[1], parts[2]


def load_column_mapping(path) -> dict[str, str]:
    """``source=target`` lines; blank lines and ``#`` comments ignored."""
    mapping = {}
    for n, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SchemaError(f"{path}:{n}: expected source=target, got {raw!r}")
        src, dst = (s.strip() for s in line.split("=", 1))
        if not src or not dst:
            raise SchemaError(f"{path}:{n}: empty column name")
        mapping[src] = dst
    return mapping


def load_csv(path, label_names: Sequence[str] | None = None,
             column_map: dict[str, str] | None = None) -> LoadedDataset:
    """Read a dataset CSV.  Rows without any active event are dropped.

    ``label_names`` selects (and orders) the label columns; by default every
    ``label__*`` column is used in header order.
    """
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except FileNotFoundError:
        raise SchemaError(f"data file not found: {path}") from None
    if not lines:
        raise SchemaError(f"{path}: empty file, header required")
    header = [c.strip() for c in lines[0].split(",")]
    if column_map:
        header = [column_map.get(c, c) for c in header]
    if header[0] != "patient_id":
        raise SchemaError(f"first column must be patient_id, got {header[0]!r}")

    ev_cols, pairs, label_cols = [], [], {}
    for j, name in enumerate(header[1:], 1):
        if name.startswith("ev__"):
            pairs.append(parse_event_column(name))
            ev_cols.append(j)
        elif name.startswith("label__") and len(name) > len("label__"):
            drug = name[len("label__"):]
            if "__" in drug:
                raise SchemaError(f"malformed label column {name!r}")
            label_cols[drug] = j
        else:
            raise SchemaError(f"unrecognised column {name!r}")
    if len(set(pairs)) != len(pairs):
        raise SchemaError("duplicate event column in header")
    if not pairs:
        raise SchemaError("no ev__ columns in header")
    if label_names is None:
        label_names = list(label_cols)
    for drug in label_names:
        if drug not in label_cols:
            raise SchemaError(f"missing label column 'label__{drug}'")
    lab_idx = [label_cols[d] for d in label_names]

    vocab = EventVocabulary.from_pairs(pairs)
    records, dropped = [], []
    for n, line in enumerate(lines[1:], 2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != len(header):
            raise ParseError(f"row {n}: {len(cells)} cells, header has {len(header)}")

        def bit(j):
            c = cells[j].strip()
            if c not in ("0", "1"):
                raise ParseError(f"row {n}, column {header[j]!r}: value {c!r} is not 0/1")
            return int(c)

        events = tuple(bit(j) for j in ev_cols)
        labels = tuple(bit(j) for j in lab_idx)
        pid = cells[0].strip()
        if not any(events):
            dropped.append(pid)
            continue
        records.append(PatientRecord(pid, events, labels))
    return LoadedDataset(vocab, records, list(label_names), dropped)


def write_csv(path, vocab: EventVocabulary, records: Sequence[PatientRecord],
              label_names: Sequence[str]) -> None:
    header = ["patient_id", *vocab.column_names(), *(f"label__{d}" for d in label_names)]
    out = [",".join(header)]
    for r in records:
        out.append(",".join([r.patient_id, *map(str, r.events), *map(str, r.labels)]))
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class DatasetSplit:
    train: list[PatientRecord]
    validation: list[PatientRecord]
    test: list[PatientRecord]
    seed: int


def partition_sizes(n: int, proportions: Sequence[float]) -> list[int]:
    """Largest-remainder rounding of ``n * p``; ties go to the earlier part."""
    raw = [n * p for p in proportions]
    sizes = [math.floor(x + 1e-9) for x in raw]
    rest = n - sum(sizes)
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in order[:rest]:
        sizes[i] += 1
    return sizes


def split(records: Sequence[PatientRecord], proportions: Sequence[float] = SPLIT,
          seed: int = 0) -> DatasetSplit:
    """Seeded uniform shuffle followed by a contiguous train/val/test cut."""
    if len(proportions) != 3 or abs(sum(proportions) - 1.0) > 1e-9 or min(proportions) < 0:
        raise ConfigError(f"split proportions must be three non-negative values summing to 1, got {proportions}")
    if len(records) < 3:
        raise ContractError(f"need at least 3 records to split, got {len(records)}")
    n_train, n_val, _ = partition_sizes(len(records), proportions)
    order = np.random.Generator(np.random.PCG64([seed, 2])).permutation(len(records))
    shuffled = [records[i] for i in order]
    return DatasetSplit(shuffled[:n_train], shuffled[n_train:n_train + n_val],
                        shuffled[n_train + n_val:], seed)


@dataclass(frozen=True)
class SyntheticConfig:
    n_patients: int = 2000
    n_events: int = 50
    n_windows: int = 4
    events_per_patient_mean: float = 6.0
    task_count: int = 4
    positive_rates: tuple[float, ...] = (0.12, 0.20, 0.06, 0.06)
    seed: int = 42
    label_noise: float = 0.2
    task_names: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.n_patients < 1:
            raise ConfigError("n_patients must be >= 1")
        if self.n_windows < 1 or self.n_events < self.n_windows:
            raise ConfigError("need n_windows >= 1 and n_events >= n_windows")
        if not 1.0 <= self.events_per_patient_mean <= self.n_events:
            raise ConfigError("events_per_patient_mean must lie in [1, n_events]")
        if len(self.positive_rates) != self.task_count:
            raise ConfigError(f"{len(self.positive_rates)} positive rates for {self.task_count} tasks")
        if any(not 0.0 < r <= 0.5 for r in self.positive_rates):
            raise ConfigError("positive rates must lie in (0, 0.5]")
        if self.label_noise < 0:
            raise ConfigError("label_noise must be >= 0")
        if self.task_names is not None and len(self.task_names) != self.task_count:
            raise ConfigError("task_names length must equal task_count")

    @property
    def names(self) -> tuple[str, ...]:
        if self.task_names is not None:
            return tuple(self.task_names)
        if self.task_count == len(DEFAULT_TASKS):
            return DEFAULT_TASKS
        return tuple(f"drug{t}" for t in range(self.task_count))


def _sample_events(cfg: SyntheticConfig, rng: np.random.Generator) -> np.ndarray:
    # skewed event popularity: a few common events, a long tail of rare ones
    popularity = rng.lognormal(0.0, 1.0, size=cfg.n_events)
    popularity /= popularity.sum()
    X = np.zeros((cfg.n_patients, cfg.n_events), dtype=np.int8)
    counts = 1 + rng.poisson(cfg.events_per_patient_mean - 1.0, size=cfg.n_patients)
    counts = np.minimum(counts, cfg.n_events)
    for i, k in enumerate(counts):
        X[i, rng.choice(cfg.n_events, size=k, replace=False, p=popularity)] = 1
    return X


def generate_synthetic(cfg: SyntheticConfig) -> tuple[EventVocabulary, list[PatientRecord]]:
    """Sparse binary cohort with imbalanced, partly shared pairwise label rules.

    Events are assigned round-robin to windows.  Each task scores a patient
    by a sparse positive combination of co-window event pairs, adds Gaussian
    noise, and thresholds at the quantile that yields the target positive
    rate.  Tasks draw their pairs from a common pool so they share structure.
    """
    rng = np.random.Generator(np.random.PCG64([cfg.seed, 3]))
    windows = [f"w{j % cfg.n_windows}" for j in range(cfg.n_events)]
    vocab = EventVocabulary.from_pairs((f"e{j:03d}", windows[j]) for j in range(cfg.n_events))
    X = _sample_events(cfg, rng)

    pairs = [(a, b) for a in range(cfg.n_events) for b in range(a + 1, cfg.n_events)
             if windows[a] == windows[b]]
    M = cfg.n_patients
    if pairs:
        P = np.stack([X[:, a] & X[:, b] for a, b in pairs], axis=1).astype(np.float64)
    else:
        P = np.zeros((M, 0))
    # only pairs that actually occur can carry signal
    live = np.flatnonzero(P.sum(axis=0) > 0)
    pool = rng.permutation(live)

    labels = np.zeros((M, cfg.task_count), dtype=np.int8)
    for t, rate in enumerate(cfg.positive_rates):
        n_pos = int(round(rate * M))
        if n_pos == 0 or n_pos >= M:
            raise GenerationError(f"task {t}: rate {rate} is infeasible with {M} patients")
        chosen = rng.permutation(pool)
        rule, covered = [], np.zeros(M, dtype=bool)
        for p in chosen:
            if covered.mean() >= min(1.0, 1.5 * rate):
                break
            rule.append(p)
            covered |= P[:, p] > 0
        beta = rng.uniform(0.5, 1.5, size=len(rule))
        score = P[:, rule] @ beta + cfg.label_noise * rng.standard_normal(M)
        order = np.argsort(-score, kind="stable")
        labels[order[:n_pos], t] = 1
        realized = n_pos / M
        if abs(realized - rate) > max(0.02, 0.5 / M + 1e-12):
            raise GenerationError(f"task {t}: realised rate {realized:.4f} misses target {rate}")

    records = [
        PatientRecord(f"p{i:06d}", tuple(int(v) for v in X[i]), tuple(int(v) for v in labels[i]))
        for i in range(M)
    ]
    return vocab, records
