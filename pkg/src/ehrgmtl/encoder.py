"""GIN and GCN graph encoders with per-layer mean readout."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .errors import ConfigError, ContractError, DimensionError, SchemaError
from .graphbuild import GraphBatch

KINDS = ("gin", "gcn")
DEFAULT_LAYERS = {"gin": 7, "gcn": 2}


@dataclass(frozen=True)
class EncoderConfig:
    kind: str = "gin"
    layers: int | None = None  # None -> 7 for gin, 2 for gcn
    hidden_dim: int = 64
    mlp_depth: int = 2
    use_virtual: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown encoder kind {self.kind!r}")
        if self.layers is not None and self.layers < 1:
            raise ConfigError("layers must be >= 1")
        if self.hidden_dim < 1 or self.mlp_depth < 1:
            raise ConfigError("hidden_dim and mlp_depth must be >= 1")

    @property
    def n_layers(self) -> int:
        return DEFAULT_LAYERS[self.kind] if self.layers is None else self.layers


@dataclass
class EncoderParams:
    """For gin, ``layers[k]`` is a list of ``(W, b)`` pairs forming MLP^(k).
    For gcn, ``layers[k]`` is ``[(W, None)]``."""

    kind: str
    layers: list[list[tuple[Tensor, Tensor | None]]] = field(default_factory=list)

    @property
    def input_dim(self) -> int:
        return self.layers[0][0][0].shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.layers[-1][-1][0].shape[0]

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        for k, mlp in enumerate(self.layers):
            for j, (W, b) in enumerate(mlp):
                yield f"encoder.{k}.{j}.weight", W
                if b is not None:
                    yield f"encoder.{k}.{j}.bias", b


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def init_encoder(config: EncoderConfig, input_dim: int, rng: np.random.Generator) -> EncoderParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases."""
    d = config.hidden_dim
    layers = []
    for k in range(config.n_layers):
        fan = input_dim if k == 0 else d
        if config.kind == "gin":
            mlp = []
            for j in range(config.mlp_depth):
                fin = fan if j == 0 else d
                mlp.append((_uniform(rng, (d, fin), fin), _uniform(rng, (d,), fin)))
            layers.append(mlp)
        else:
            layers.append([(_uniform(rng, (d, fan), fan), None)])
    return EncoderParams(config.kind, layers)


def _check_edges(edges: np.ndarray, n: int) -> np.ndarray:
    edges = np.asarray(edges, dtype=np.intp).reshape(-1, 2)
    if edges.size and (edges.min() < 0 or edges.max() >= n):
        raise ContractError(f"adjacency refers to a node outside 0..{n - 1}")
    return edges


def mlp_forward(x: Tensor, mlp) -> Tensor:
    """Fully connected layers with ReLU between consecutive layers only."""
    for j, (W, b) in enumerate(mlp):
        if j:
            x = dc.relu(x)
        x = dc.matmul_add(x, W, b)
    return x


def gin_layer(h: Tensor, edges, mlp) -> Tensor:
    """``h'_v = MLP(h_v + sum of neighbour rows)`` with undirected ``edges``."""
    edges = _check_edges(edges, h.shape[0])
    src = np.concatenate([edges[:, 0], edges[:, 1]])
    dst = np.concatenate([edges[:, 1], edges[:, 0]])
    return mlp_forward(dc.propagate(h, src, dst), mlp)


def gcn_coefficients(edges: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Symmetric-normalised propagation with self loops, as directed edge lists."""
    edges = _check_edges(edges, n)
    src = np.concatenate([edges[:, 0], edges[:, 1]])
    dst = np.concatenate([edges[:, 1], edges[:, 0]])
    deg = 1.0 + np.bincount(src, minlength=n)
    inv_sqrt = 1.0 / np.sqrt(deg)
    return src, dst, inv_sqrt[src] * inv_sqrt[dst], 1.0 / deg


def gcn_layer(h: Tensor, edges, W: Tensor) -> Tensor:
    """``ReLU(D^-1/2 (A + I) D^-1/2 h W^T)``; ``W`` is stored ``(out, in)``."""
    src, dst, ew, sw = gcn_coefficients(edges, h.shape[0])
    return dc.relu(dc.matmul_add(dc.propagate(h, src, dst, ew, sw), W))


def readout_mean(layer_outputs: list[Tensor], graph_ids, n_graphs: int) -> list[Tensor]:
    """Per layer, the mean node row of each graph -> list of ``(n_graphs, d)``."""
    if not layer_outputs:
        raise ContractError("readout needs at least one layer output")
    n = layer_outputs[0].shape[0]
    if any(h.shape[0] != n for h in layer_outputs):
        raise ContractError("layer outputs disagree on node count")
    return [dc.segment_mean(h, graph_ids, n_graphs) for h in layer_outputs]


@dataclass
class BatchEncoding:
    """Per-layer graph representations of a batch, each ``(n_graphs, d)``."""

    layers: list[Tensor]

    @property
    def n_graphs(self) -> int:
        return self.layers[0].shape[0]

    def graph(self, i: int) -> list[np.ndarray]:
        """The GraphRepresentation {h_G^(1), ..., h_G^(K)} of graph ``i``."""
        return [h.data[i].copy() for h in self.layers]

    def representations(self) -> list[list[np.ndarray]]:
        return [self.graph(i) for i in range(self.n_graphs)]

    def layer_sum(self) -> Tensor:
        out = self.layers[0]
        for h in self.layers[1:]:
            out = dc.add(out, h)
        return out


def encode(batch: GraphBatch, params: EncoderParams, config: EncoderConfig | None = None) -> BatchEncoding:
    """Stacked layers on one-hot node features, mean readout after every layer."""
    if params.input_dim != batch.input_dim:
        raise SchemaError(f"encoder expects input_dim {params.input_dim}, batch has {batch.input_dim}")
    if config is not None and (config.kind != params.kind or config.n_layers != len(params.layers)):
        raise DimensionError("encoder params do not match the config")
    h = Tensor(batch.one_hot())
    outputs = []
    for mlp in params.layers:
        if params.kind == "gin":
            h = gin_layer(h, batch.edges, mlp)
        else:
            h = gcn_layer(h, batch.edges, mlp[0][0])
        outputs.append(h)
    return BatchEncoding(readout_mean(outputs, batch.graph_ids, batch.n_graphs))
