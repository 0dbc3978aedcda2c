"""Patient rows -> medical-event graphs, and block-diagonal batching."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import ContractError, EmptyRecordError, SchemaError


class VocabEntry(NamedTuple):
    feature_id: int
    event_name: str
    window_tag: str


@dataclass(frozen=True)
class EventVocabulary:
    entries: tuple[VocabEntry, ...]

    def __post_init__(self):
        for i, e in enumerate(self.entries):
            if e.feature_id != i:
                raise SchemaError(f"feature ids must be 0..N-1 in order, got {e.feature_id} at {i}")
            if not e.window_tag:
                raise SchemaError(f"event {e.event_name!r} has an empty window tag")

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, str]]) -> "EventVocabulary":
        return cls(tuple(VocabEntry(i, ev, w) for i, (ev, w) in enumerate(pairs)))

    @property
    def size(self) -> int:
        return len(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def windows(self) -> tuple[str, ...]:
        return tuple(e.window_tag for e in self.entries)

    def column_names(self) -> list[str]:
        return [f"ev__{e.event_name}__{e.window_tag}" for e in self.entries]


@dataclass(frozen=True)
class PatientRecord:
    patient_id: str
    events: tuple[int, ...]
    labels: tuple[int, ...]

    def __post_init__(self):
        if any(v not in (0, 1) for v in self.events):
            raise SchemaError(f"patient {self.patient_id}: events must be 0/1")
        if any(v not in (0, 1) for v in self.labels):
            raise SchemaError(f"patient {self.patient_id}: labels must be 0/1")

    @property
    def active(self) -> tuple[int, ...]:
        return tuple(i for i, v in enumerate(self.events) if v)


class Node(NamedTuple):
    kind: str  # "event" or "virtual"
    feature_id: int | None


@dataclass(frozen=True)
class MedicalEventGraph:
    """Nodes are one-hot slots: ``0..N-1`` for events, ``N`` for the virtual node.

    ``input_dim`` is ``N + 1``.  Edges are undirected, stored once as
    ``(i, j)`` with ``i < j``.
    """

    slots: tuple[int, ...]
    edges: tuple[tuple[int, int], ...]
    input_dim: int

    def __post_init__(self):
        n = len(self.slots)
        seen = set()
        for i, j in self.edges:
            if not (0 <= i < j < n):
                raise ContractError(f"bad edge {(i, j)} for {n} nodes")
            if (i, j) in seen:
                raise ContractError(f"duplicate edge {(i, j)}")
            seen.add((i, j))
        if any(not (0 <= s < self.input_dim) for s in self.slots):
            raise ContractError("node slot outside the one-hot range")
        if sum(1 for s in self.slots if s == self.virtual_slot) > 1:
            raise ContractError("at most one virtual node is allowed")

    @property
    def virtual_slot(self) -> int:
        return self.input_dim - 1

    @property
    def n_nodes(self) -> int:
        return len(self.slots)

    @property
    def nodes(self) -> list[Node]:
        v = self.virtual_slot
        return [Node("virtual", None) if s == v else Node("event", s) for s in self.slots]

    @property
    def virtual_index(self) -> int | None:
        try:
            return self.slots.index(self.virtual_slot)
        except ValueError:
            return None

    def neighbors(self) -> list[set[int]]:
        adj = [set() for _ in self.slots]
        for i, j in self.edges:
            adj[i].add(j)
            adj[j].add(i)
        return adj

    def relabel(self, perm: Sequence[int]) -> "MedicalEventGraph":
        """Node ``i`` of this graph becomes node ``perm[i]`` of the result."""
        n = self.n_nodes
        if sorted(perm) != list(range(n)):
            raise ContractError("relabel needs a permutation of the node indices")
        slots = [0] * n
        for i, s in enumerate(self.slots):
            slots[perm[i]] = s
        edges = sorted(tuple(sorted((perm[i], perm[j]))) for i, j in self.edges)
        return MedicalEventGraph(tuple(slots), tuple(edges), self.input_dim)


def build_graph(record: PatientRecord, vocab: EventVocabulary, use_virtual: bool = True) -> MedicalEventGraph:
    """Active events become nodes (ascending feature id); events sharing a
    window tag are pairwise connected; the optional virtual node comes last
    and links to every event node."""
    if len(record.events) != vocab.size:
        raise SchemaError(
            f"patient {record.patient_id}: {len(record.events)} events for a vocabulary of {vocab.size}"
        )
    active = record.active
    if not active:
        raise EmptyRecordError(f"patient {record.patient_id} has no active event")
    windows = vocab.windows
    edges = [
        (a, b)
        for a in range(len(active))
        for b in range(a + 1, len(active))
        if windows[active[a]] == windows[active[b]]
    ]
    slots = list(active)
    if use_virtual:
        v = len(active)
        slots.append(vocab.size)
        edges.extend((a, v) for a in range(len(active)))
    return MedicalEventGraph(tuple(slots), tuple(sorted(edges)), vocab.size + 1)


@dataclass(frozen=True)
class GraphBatch:
    slots: np.ndarray        # (n_nodes,) one-hot slot per node
    edges: np.ndarray        # (n_edges, 2), already offset
    graph_ids: np.ndarray    # (n_nodes,)
    offsets: np.ndarray      # (n_graphs,) first node of each graph
    input_dim: int
    labels: np.ndarray | None = None  # (n_graphs, T)

    @property
    def n_graphs(self) -> int:
        return len(self.offsets)

    @property
    def n_nodes(self) -> int:
        return len(self.slots)

    def directed_edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Both directions of every edge as ``(src, dst)``."""
        a, b = self.edges[:, 0], self.edges[:, 1]
        return np.concatenate([a, b]), np.concatenate([b, a])

    def one_hot(self) -> np.ndarray:
        x = np.zeros((self.n_nodes, self.input_dim))
        x[np.arange(self.n_nodes), self.slots] = 1.0
        return x


def batch_graphs(graphs: Sequence[MedicalEventGraph], labels=None) -> GraphBatch:
    if not graphs:
        raise ContractError("cannot batch an empty list of graphs")
    dim = graphs[0].input_dim
    for g in graphs:
        if g.input_dim != dim:
            raise SchemaError(f"mixed input_dim in batch: {dim} and {g.input_dim}")
    sizes = np.array([g.n_nodes for g in graphs], dtype=np.intp)
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.intp)
    slots = np.fromiter((s for g in graphs for s in g.slots), dtype=np.intp, count=int(sizes.sum()))
    edge_parts = [np.asarray(g.edges, dtype=np.intp).reshape(-1, 2) + off for g, off in zip(graphs, offsets)]
    edges = np.concatenate(edge_parts) if edge_parts else np.zeros((0, 2), dtype=np.intp)
    graph_ids = np.repeat(np.arange(len(graphs), dtype=np.intp), sizes)
    lab = None
    if labels is not None:
        lab = np.asarray(labels, dtype=np.float64).reshape(len(graphs), -1)
    return GraphBatch(slots, edges, graph_ids, offsets, dim, lab)
