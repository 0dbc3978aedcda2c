"""Plain-text model checkpoints.

Layout::

    ehrgmtl-v1
    meta <key>=<value>
    ...
    param <name> <dim> <dim> ...
    <values, space separated, 17 significant digits>
    ...
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .diffcore import Tensor
from .encoder import EncoderConfig, EncoderParams
from .errors import CheckpointError, ConfigError
from .mtl import MultiTaskModel, TaskHead

MAGIC = "ehrgmtl-v1"


def _fmt(values: np.ndarray) -> str:
    return " ".join(format(float(v), ".17g") for v in values.reshape(-1))


def save_checkpoint(path, model: MultiTaskModel, meta: dict[str, str] | None = None) -> None:
    ec = model.encoder_config
    info = {
        "encoder": ec.kind,
        "layers": str(ec.n_layers),
        "hidden_dim": str(ec.hidden_dim),
        "mlp_depth": str(ec.mlp_depth),
        "virtual_node": str(ec.use_virtual).lower(),
        "input_dim": str(model.input_dim),
        "tasks": ",".join(model.task_names),
    }
    if meta:
        for k, v in meta.items():
            info.setdefault(k, v)
    lines = [MAGIC]
    for k, v in info.items():
        v = str(v)
        if "\n" in v or "=" in k:
            raise ValueError(f"meta entry {k!r} cannot be serialised")
        lines.append(f"meta {k}={v}")
    for name, p in model.named_parameters():
        lines.append(" ".join(["param", name, *map(str, p.shape)]))
        lines.append(_fmt(p.data))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_checkpoint(path) -> tuple[MultiTaskModel, dict[str, str]]:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if not lines or lines[0].strip() != MAGIC:
        found = lines[0][:40] if lines else ""
        raise CheckpointError(f"{path}: expected header {MAGIC!r}, found {found!r}")
    meta: dict[str, str] = {}
    tensors: dict[str, np.ndarray] = {}
    i = 1
    try:
        while i < len(lines):
            line = lines[i]
            if line.startswith("meta "):
                k, v = line[5:].split("=", 1)
                meta[k] = v
                i += 1
            elif line.startswith("param "):
                _, name, *dims = line.split()
                shape = tuple(int(d) for d in dims)
                vals = np.array([float(x) for x in lines[i + 1].split()], dtype=np.float64)
                tensors[name] = vals.reshape(shape)
                i += 2
            elif not line.strip():
                i += 1
            else:
                raise CheckpointError(f"{path}:{i + 1}: unexpected line")
        config = EncoderConfig(
            kind=meta["encoder"],
            layers=int(meta["layers"]),
            hidden_dim=int(meta["hidden_dim"]),
            mlp_depth=int(meta["mlp_depth"]),
            use_virtual=meta["virtual_node"] == "true",
        )
        tasks = meta["tasks"].split(",")
        layers = []
        for k in range(config.n_layers):
            depth = config.mlp_depth if config.kind == "gin" else 1
            mlp = []
            for j in range(depth):
                W = Tensor(tensors.pop(f"encoder.{k}.{j}.weight"), requires_grad=True)
                bkey = f"encoder.{k}.{j}.bias"
                b = Tensor(tensors.pop(bkey), requires_grad=True) if bkey in tensors else None
                mlp.append((W, b))
            layers.append(mlp)
        heads = [
            TaskHead(t, Tensor(tensors.pop(f"head.{t}.weight"), requires_grad=True),
                     Tensor(tensors.pop(f"head.{t}.bias"), requires_grad=True))
            for t in range(len(tasks))
        ]
    except CheckpointError:
        raise
    except (KeyError, ValueError, IndexError, ConfigError) as exc:
        raise CheckpointError(f"{path}: corrupted checkpoint ({exc!r})") from None
    if tensors:
        raise CheckpointError(f"{path}: unexpected parameters {sorted(tensors)}")
    model = MultiTaskModel(config, EncoderParams(config.kind, layers), heads, tasks)
    if model.input_dim != int(meta["input_dim"]):
        raise CheckpointError(f"{path}: input_dim does not match the stored weights")
    return model, meta
