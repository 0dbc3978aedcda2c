"""Independent reference implementations shared by unit and acceptance tests.

Everything here is deliberately naive (explicit loops, dense matrices) so it
can serve as an oracle for the vectorised code in the package.
"""
from __future__ import annotations

import itertools

import numpy as np

from ehrgmtl.graphbuild import EventVocabulary, MedicalEventGraph, PatientRecord, build_graph


# --------------------------------------------------------------------------
# graph construction


def record(events, labels=(0,), pid="p"):
    return PatientRecord(pid, tuple(int(v) for v in events), tuple(labels))


def vocab_from_windows(windows):
    return EventVocabulary.from_pairs((f"e{i}", w) for i, w in enumerate(windows))


def is_connected(g: MedicalEventGraph) -> bool:
    if g.n_nodes == 0:
        return False
    adj = g.neighbors()
    seen, stack = {0}, [0]
    while stack:
        for u in adj[stack.pop()]:
            if u not in seen:
                seen.add(u)
                stack.append(u)
    return len(seen) == g.n_nodes


def graph_property_violations(events, windows, use_virtual: bool) -> list[str]:
    """Check one construction against the rules; returns the broken ones."""
    vocab = vocab_from_windows(windows)
    g = build_graph(record(events), vocab, use_virtual)
    bad = []
    active = [i for i, v in enumerate(events) if v]
    n_ev = len(active)
    if list(g.slots[:n_ev]) != active:
        bad.append("event nodes are not the active features in ascending order")
    edges = set(g.edges)
    for a, b in itertools.combinations(range(n_ev), 2):
        same = windows[active[a]] == windows[active[b]]
        if same and (a, b) not in edges:
            bad.append(f"window clique missing {(a, b)}")
        if not same and (a, b) in edges:
            bad.append(f"cross-window edge {(a, b)}")
    if use_virtual:
        v = g.virtual_index
        if v != n_ev or g.n_nodes != n_ev + 1:
            bad.append("virtual node is not the single last node")
        elif g.neighbors()[v] != set(range(n_ev)):
            bad.append("virtual node is not adjacent to every event node")
        if not is_connected(g):
            bad.append("graph with virtual node is disconnected")
    elif g.virtual_index is not None or g.n_nodes != n_ev:
        bad.append("virtual node present although disabled")
    if not permutation_isomorphic(events, windows, use_virtual, np.random.default_rng(len(events) * 7 + sum(events))):
        bad.append("column permutation does not give an isomorphic graph")
    return bad


def permutation_isomorphic(events, windows, use_virtual, rng) -> bool:
    """Permute the vocabulary columns; the feature permutation restricted to
    active events must map the original graph onto the new one."""
    n = len(events)
    sigma = rng.permutation(n)          # new column p holds old column sigma[p]
    where = np.argsort(sigma)           # old column f sits at new column where[f]
    g = build_graph(record(events), vocab_from_windows(windows), use_virtual)
    h = build_graph(record([events[s] for s in sigma]), vocab_from_windows([windows[s] for s in sigma]), use_virtual)
    if g.n_nodes != h.n_nodes:
        return False
    node_of_h = {s: i for i, s in enumerate(h.slots)}
    mapping = []
    for s in g.slots:
        target = n if s == n else int(where[s])
        if target not in node_of_h:
            return False
        mapping.append(node_of_h[target])
    mapped = {tuple(sorted((mapping[i], mapping[j]))) for i, j in g.edges}
    return mapped == set(h.edges)


def random_windows(rng, n, n_windows):
    return [f"w{int(x)}" for x in rng.integers(0, n_windows, n)]


def random_graph(rng, max_nodes: int, input_dim: int | None = None) -> MedicalEventGraph:
    """An arbitrary simple graph (not necessarily from build_graph)."""
    n = int(rng.integers(1, max_nodes + 1))
    dim = input_dim or n + 1
    slots = tuple(int(s) for s in rng.integers(0, dim - 1, n))
    p = rng.uniform(0.1, 0.8)
    edges = tuple((i, j) for i in range(n) for j in range(i + 1, n) if rng.uniform() < p)
    return MedicalEventGraph(slots, edges, dim)


# --------------------------------------------------------------------------
# encoder oracles


def dense_adjacency(n, edges):
    A = np.zeros((n, n))
    for i, j in edges:
        A[i, j] = A[j, i] = 1.0
    return A


def naive_mlp(x, mlp):
    x = np.asarray(x, dtype=np.float64)
    for j, (W, b) in enumerate(mlp):
        if j:
            x = np.maximum(x, 0.0)
        out = np.zeros(W.shape[0])
        for r in range(W.shape[0]):
            acc = 0.0
            for c in range(W.shape[1]):
                acc += W[r, c] * x[c]
            out[r] = acc + (b[r] if b is not None else 0.0)
        x = out
    return x


def naive_gin(h, edges, mlp):
    """Per-node loop: own row plus each neighbour row, then the MLP."""
    n = h.shape[0]
    nbrs = [[] for _ in range(n)]
    for i, j in edges:
        nbrs[i].append(j)
        nbrs[j].append(i)
    out = []
    for v in range(n):
        agg = h[v].copy()
        for u in nbrs[v]:
            agg = agg + h[u]
        out.append(naive_mlp(agg, mlp))
    return np.array(out)


def dense_gcn(h, edges, W):
    n = h.shape[0]
    A = dense_adjacency(n, edges) + np.eye(n)
    d = A.sum(axis=1)
    D = np.diag(1.0 / np.sqrt(d))
    return np.maximum(D @ A @ D @ h @ W.T, 0.0)


def rel_close(a, b, rtol):
    """Elementwise |a-b| <= rtol * max(|a|, |b|, 1e-12)."""
    a, b = np.asarray(a), np.asarray(b)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-12)
    return bool(np.all(np.abs(a - b) <= rtol * scale))
