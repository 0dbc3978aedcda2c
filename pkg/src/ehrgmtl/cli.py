"""Command-line entry point: ``ehrgmtl {synth,train,eval,sweep,ablate,baseline}``.

Exit codes: 0 success, 2 data error, 3 configuration error.
"""
from __future__ import annotations

import argparse
import itertools
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .baselines import baseline_logreg, baseline_mlp
from .checkpoint import load_checkpoint, save_checkpoint
from .config import (RunConfig, load_run_config, parse_overrides, read_kv_file,
                     synthetic_config)
from .data import LoadedDataset, generate_synthetic, load_column_mapping, load_csv, split, write_csv
from .errors import ConfigError, DataError, EhrGraphError, GenerationError, SchemaError
from .evaluation import (EVAL_THRESHOLD, frange, task_metrics, threshold_sweep,
                         write_metrics_csv, write_sweep_csv)
from .graphbuild import PatientRecord, build_graph
from .mtl import EpochSummary, MultiTaskModel, fit

log = logging.getLogger("ehrgmtl")

EXIT_DATA = 2
EXIT_CONFIG = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _labels(records: Sequence[PatientRecord]) -> np.ndarray:
    return np.array([r.labels for r in records], dtype=np.float64)


def _load(data, column_map=None, label_names=None) -> LoadedDataset:
    mapping = load_column_mapping(column_map) if column_map else None
    ds = load_csv(data, label_names=label_names, column_map=mapping)
    if ds.dropped:
        log.info("dropped %d record(s) without any active event", len(ds.dropped))
    if not ds.label_names:
        raise SchemaError("no label__ columns in data")
    return ds


def _print_epoch(s: EpochSummary) -> None:
    print(f"{s.epoch},{s.total!r},{s.lr!r}", flush=True)


def train_run(cfg: RunConfig, ds: LoadedDataset, echo: bool = True) -> tuple[MultiTaskModel, list[EpochSummary]]:
    parts = split(ds.records, cfg.split, cfg.seed)
    use_v = cfg.virtual_node
    graphs = [build_graph(r, ds.vocab, use_v) for r in parts.train]
    val = [build_graph(r, ds.vocab, use_v) for r in parts.validation]
    model = MultiTaskModel.create(cfg.encoder_config(), ds.vocab.size + 1, ds.label_names, cfg.seed)
    history = fit(model, graphs, _labels(parts.train), cfg.train_config(),
                  val_graphs=val, val_labels=_labels(parts.validation) if val else None,
                  on_epoch=_print_epoch if echo else None)
    return model, history


def predict_test_partition(model: MultiTaskModel, cfg: RunConfig, ds: LoadedDataset) -> tuple[np.ndarray, np.ndarray]:
    if ds.vocab.size + 1 != model.input_dim:
        raise SchemaError(f"data has {ds.vocab.size} event columns, model expects {model.input_dim - 1}")
    test = split(ds.records, cfg.split, cfg.seed).test
    graphs = [build_graph(r, ds.vocab, cfg.virtual_node) for r in test]
    return model.predict_proba(graphs), _labels(test)


def write_history_csv(path, history: Sequence[EpochSummary], task_names: Sequence[str]) -> None:
    cols = ["epoch", "step", "lr", "total_loss"]
    for name in task_names:
        cols += [f"loss_{name}", f"weight_{name}", f"recall_{name}", f"kpi_{name}"]
    lines = [",".join(cols)]
    for s in history:
        row = [str(s.epoch), str(s.step), repr(s.lr), repr(s.total)]
        for t in range(len(task_names)):
            row += [repr(s.losses[t]), repr(s.weights[t]), repr(s.recalls[t]), repr(s.kpi[t])]
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def history_path(out) -> Path:
    out = Path(out)
    return out.with_name(out.stem + ".losses.csv")


def _model_config(meta: dict[str, str]) -> RunConfig:
    keys = {f for f in RunConfig.__dataclass_fields__}
    try:
        return RunConfig.from_mapping({k: v for k, v in meta.items() if k in keys})
    except ConfigError as exc:
        raise DataError(f"checkpoint carries an invalid run config: {exc}") from None


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    values = read_kv_file(args.config) if args.config else {}
    values.update(parse_overrides(args.set))
    cfg = synthetic_config(values)
    vocab, records = generate_synthetic(cfg)
    write_csv(args.out, vocab, records, cfg.names)
    log.info("wrote %d records to %s", len(records), args.out)
    return 0


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, parse_overrides(args.set))
    ds = _load(args.data, args.column_map, cfg.label_names)
    model, history = train_run(cfg, ds)
    save_checkpoint(args.out, model, cfg.to_mapping())
    write_history_csv(history_path(args.out), history, model.task_names)
    return 0


def cmd_eval(args) -> int:
    model, meta = load_checkpoint(args.model)
    cfg = _model_config(meta)
    ds = _load(args.data, args.column_map, model.task_names)
    probs, labels = predict_test_partition(model, cfg, ds)
    write_metrics_csv(args.out, task_metrics(probs, labels, model.task_names, EVAL_THRESHOLD))
    return 0


def parse_thresholds(spec: str) -> list[float]:
    parts = spec.split(":")
    if len(parts) != 3:
        raise ConfigError(f"threshold spec must be lo:hi:step, got {spec!r}")
    try:
        lo, hi, step = (float(p) for p in parts)
    except ValueError:
        raise ConfigError(f"threshold spec must be numeric, got {spec!r}") from None
    if not (0.0 <= lo < hi <= 1.0) or step <= 0 or step > hi - lo + 1e-12:
        raise ConfigError(f"threshold spec {spec!r} needs 0 <= lo < hi <= 1 and 0 < step <= hi - lo")
    return frange(lo, hi, step)


def cmd_sweep(args) -> int:
    thresholds = parse_thresholds(args.thresholds)
    model, meta = load_checkpoint(args.model)
    cfg = _model_config(meta)
    ds = _load(args.data, args.column_map, model.task_names)
    probs, labels = predict_test_partition(model, cfg, ds)
    write_sweep_csv(args.out, threshold_sweep(probs, labels, thresholds, model.task_names))
    return 0


GRID_COLUMNS = ("encoder", "dtp", "virtual_node")


def parse_grid(spec: str) -> list[tuple[str, list[str]]]:
    axes = []
    for token in spec.split():
        if "=" not in token:
            raise ConfigError(f"grid axis must look like key=v1,v2; got {token!r}")
        key, vals = token.split("=", 1)
        values = [v for v in vals.split(",") if v]
        if not key or not values:
            raise ConfigError(f"grid axis {token!r} is empty")
        if key in (a for a, _ in axes):
            raise ConfigError(f"grid axis {key!r} repeated")
        axes.append((key, values))
    if not axes:
        raise ConfigError("empty grid")
    return axes


def ablation_rows(base: RunConfig, axes, ds: LoadedDataset, echo: bool = True) -> tuple[list[str], list[list[str]]]:
    extra = [k for k, _ in axes if k not in GRID_COLUMNS]
    header = [*GRID_COLUMNS, *extra, "task", "precision", "recall", "f1"]
    points = []
    for combo in itertools.product(*(vals for _, vals in axes)):
        points.append(base.merged(dict(zip((k for k, _ in axes), combo))))
    rows = []
    for cfg in points:
        log.info("ablation point %s", {k: cfg.to_mapping()[k] for k in (*GRID_COLUMNS, *extra)})
        model, _ = train_run(cfg, ds, echo)
        probs, labels = predict_test_partition(model, cfg, ds)
        m = cfg.to_mapping()
        for tm in task_metrics(probs, labels, model.task_names):
            rows.append([*(m[k] for k in (*GRID_COLUMNS, *extra)), tm.task,
                         repr(tm.precision), repr(tm.recall), repr(tm.f1)])
    return header, rows


def cmd_ablate(args) -> int:
    axes = parse_grid(args.grid)
    base = load_run_config(args.config, parse_overrides(args.set))
    # validate every grid point before any training starts
    for combo in itertools.product(*(vals for _, vals in axes)):
        base.merged(dict(zip((k for k, _ in axes), combo)))
    ds = _load(args.data, args.column_map, base.label_names)
    header, rows = ablation_rows(base, axes, ds)
    lines = [",".join(header)] + [",".join(r) for r in rows]
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return 0


def cmd_baseline(args) -> int:
    cfg = load_run_config(args.config, parse_overrides(args.set))
    ds = _load(args.data, args.column_map, cfg.label_names)
    parts = split(ds.records, cfg.split, cfg.seed)
    if args.kind == "logreg":
        metrics = baseline_logreg(parts.train, parts.test, cfg.train_config(), ds.label_names)
    else:
        metrics = baseline_mlp(parts.train, parts.test, cfg.train_config(), ds.label_names, cfg.hidden_dim)
    write_metrics_csv(args.out, metrics)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ehrgmtl", description="Graph-based multi-task resistance prediction.")
    p.add_argument("-v", "--verbose", action="store_true", help="diagnostics on stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, data=True, config=True):
        if data:
            sp.add_argument("--data", required=True, help="dataset CSV")
            sp.add_argument("--column-map", help="source=target column renaming file")
        if config:
            sp.add_argument("--config", help="key=value config file")
            sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        sp.add_argument("--out", required=True)

    sp = sub.add_parser("synth", help="write a synthetic dataset CSV")
    common(sp, data=False)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("train", help="train a model and write a checkpoint")
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="metrics of a checkpoint on its test partition")
    common(sp, config=False)
    sp.add_argument("--model", required=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("sweep", help="threshold sweep on the test partition")
    common(sp, config=False)
    sp.add_argument("--model", required=True)
    sp.add_argument("--thresholds", required=True, help="lo:hi:step")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("ablate", help="train every point of a config grid")
    common(sp)
    sp.add_argument("--grid", required=True, help="e.g. 'encoder=gin,gcn dtp=true,false'")
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("baseline", help="logistic regression or MLP on raw event vectors")
    common(sp)
    sp.add_argument("--kind", choices=("logreg", "mlp"), required=True)
    sp.set_defaults(func=cmd_baseline)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, GenerationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except EhrGraphError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
