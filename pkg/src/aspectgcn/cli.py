"""Command-line interface.

Subcommands: prepare, stats, train, eval, cv, sweep-window, graph-diff,
plot.  Every run resolves a layered configuration (defaults <- --config
file <- --set key=value flags) and writes the resolved form plus its hash
into the artifacts it produces.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import corpus, harness
from .charts import line_chart_svg
from .config import RunConfig, load_config
from .depgraph import ParseCache, get_parser, parse_dependencies
from .errors import ConfigurationError
from .graphsup import edge_edits
from .model import load_checkpoint

log = logging.getLogger(__name__)


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML config file")
    p.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
        help="override a config field (repeatable)",
    )


def _resolve_config(args) -> RunConfig:
    overrides = {}
    for item in args.overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigurationError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key] = value
    return load_config(args.config, overrides)


def _load_any(path: str, fmt: str | None, dataset: str = "custom"):
    if fmt is None:
        fmt = "semeval" if path.endswith(".xml") else "twitter"
    return corpus.load_dataset(path, fmt, dataset)


def cmd_stats(args) -> int:
    instances = _load_any(args.path, args.format)
    print(corpus.stats_tsv(instances))
    return 0


def cmd_prepare(args) -> int:
    config = _resolve_config(args)
    paths = [p for p in (config.train_path, config.test_path) if p]
    if not paths:
        raise ConfigurationError("config needs train_path (and usually test_path)")
    parser = get_parser(config.parser) if config.parser != "none" else None
    cache_dir = Path(config.cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    cache = ParseCache(cache_dir / "parses.tsv")
    total = 0
    for path in paths:
        for inst in _load_any(path, config.data_format, config.dataset):
            parse_dependencies(inst.tokens, parser=parser, cache=cache)
            total += 1
    cache.save()
    print(f"cached parses for {total} instances ({len(cache)} unique sentences) "
          f"-> {cache.path}")
    return 0


def cmd_train(args) -> int:
    config = _resolve_config(args)
    train_instances, test_instances = harness.load_splits(config)
    resources = harness.prepare_resources(config, train_instances, test_instances)
    plan = corpus.make_folds(train_instances, config.folds, config.seed)
    fold = args.fold
    train_set = [resources.train_prepared[i] for i in plan.train_indices(fold)]
    val_set = [resources.train_prepared[i] for i in plan.fold_indices(fold)]
    outcome = harness.train_fold(
        config, train_set, val_set, resources.backend, seed=config.seed + fold
    )
    test_acc, test_f1 = harness.evaluate(
        outcome.model, resources.test_prepared, config, resources.backend
    )
    out_dir = Path(config.out_dir) / f"run-{config.config_hash()}"
    out_dir.mkdir(parents=True, exist_ok=True)
    from .model import save_checkpoint

    ckpt = out_dir / "checkpoints" / f"fold-{fold}.pt"
    save_checkpoint(
        ckpt, outcome.model, encoder_layers=config.encoder_layers,
        config=config.to_dict(), config_hash=config.config_hash(),
        extra={"fold": fold, "best_val_accuracy": outcome.best_val_accuracy},
    )
    (out_dir / f"history-fold-{fold}.json").write_text(
        json.dumps({"metadata": config.run_metadata(), "history": outcome.history},
                   indent=2),
        encoding="utf-8",
    )
    print(f"fold {fold}: best val accuracy {outcome.best_val_accuracy:.4f}; "
          f"test accuracy {test_acc:.4f}, macro-F1 {test_f1:.4f}; checkpoint {ckpt}")
    return 0


def cmd_eval(args) -> int:
    model, payload = load_checkpoint(args.checkpoint)
    saved = payload.get("config") or {}
    config = load_config(None, {k: v for k, v in saved.items() if v is not None})
    if args.data:
        config = config.replace(test_path=args.data)
    instances = _load_any(config.test_path, config.data_format, config.dataset)
    resources = harness.prepare_resources(config, [], instances)
    acc, f1 = harness.evaluate(model, resources.test_prepared, config, resources.backend)
    print(f"accuracy\t{acc!r}")
    print(f"macro_f1\t{f1!r}")
    return 0


def cmd_cv(args) -> int:
    config = _resolve_config(args)
    if args.ablation_matrix:
        results = harness.ablation_matrix(config)
        print("variant\taccuracy\tmacro_f1")
        for name, metrics in results.items():
            print(f"{name}\t{metrics.mean_accuracy!r}\t{metrics.mean_macro_f1!r}")
        return 0
    metrics = harness.run_cv(config)
    print(metrics.to_tsv())
    return 0


def cmd_sweep_window(args) -> int:
    config = _resolve_config(args)
    w_values = [int(w) for w in args.windows.replace(",", " ").split()]
    rows, csv_path, svg_path = harness.window_sweep(config, w_values)
    for w, acc, f1 in rows:
        print(f"{w}\t{acc!r}\t{f1!r}")
    print(f"wrote {csv_path} and {svg_path}")
    return 0


def cmd_graph_diff(args) -> int:
    config = _resolve_config(args)
    instances = _load_any(
        args.data or config.train_path, config.data_format, config.dataset
    )
    if not 0 <= args.index < len(instances):
        raise ConfigurationError(f"index {args.index} out of range ({len(instances)} instances)")
    inst = instances[args.index]
    backend = harness.build_backend(config)
    parser = get_parser(config.parser) if config.parser != "none" else None
    cache_dir = Path(config.cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    cache = ParseCache(cache_dir / "parses.tsv")
    table = harness.build_table(config, set(inst.tokens))
    prepared = harness.prepare_instances([inst], table, backend, parser, cache)[0]
    cache.save()
    from .plmfeat import encode

    features = encode(backend, inst, prepared.alignment, config.encoder_layers)
    graphs = harness.graphs_for(prepared.dep, features, config)
    print("layer\ti\ttoken_i\tj\ttoken_j\tedit")
    for layer_pos, sup in enumerate(graphs.per_layer):
        for i, j, kind in edge_edits(graphs.original, sup):
            print(f"{config.encoder_layers[layer_pos]}\t{i}\t{inst.tokens[i]}\t"
                  f"{j}\t{inst.tokens[j]}\t{kind}")
    return 0


def cmd_plot(args) -> int:
    lines = [
        line for line in Path(args.csv).read_text(encoding="utf-8").strip().splitlines()
        if not line.startswith("#")
    ]
    header = lines[0].split(",")
    x_col = header.index(args.x)
    series = {}
    for name in args.y.split(","):
        col = header.index(name)
        pts = []
        for line in lines[1:]:
            cells = line.split(",")
            pts.append((float(cells[x_col]), float(cells[col])))
        series[name] = pts
    svg = line_chart_svg(series, title=args.title, x_label=args.x, y_label="value")
    Path(args.out).write_text(svg, encoding="utf-8")
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aspectgcn",
        description="Aspect polarity classification with attention-edited "
                    "dependency-graph convolutions",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", help="per-class counts of a dataset file as TSV")
    p.add_argument("--path", required=True)
    p.add_argument("--format", choices=["semeval", "twitter"])
    p.set_defaults(fn=cmd_stats)

    p = sub.add_parser("prepare", help="parse sentences and fill the parse cache")
    _add_config_args(p)
    p.set_defaults(fn=cmd_prepare)

    p = sub.add_parser("train", help="train a single fold")
    _add_config_args(p)
    p.add_argument("--fold", type=int, default=0)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="override the test file recorded in the checkpoint")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("cv", help="full cross-validation protocol")
    _add_config_args(p)
    p.add_argument(
        "--ablation-matrix", action="store_true",
        help="expand the config into the four module-flag combinations",
    )
    p.set_defaults(fn=cmd_cv)

    p = sub.add_parser("sweep-window", help="cross-validation per window size")
    _add_config_args(p)
    p.add_argument("--windows", required=True, help="comma-separated window sizes")
    p.set_defaults(fn=cmd_sweep_window)

    p = sub.add_parser("graph-diff", help="added/pruned edges per layer as TSV")
    _add_config_args(p)
    p.add_argument("--data", help="dataset file (defaults to the config train_path)")
    p.add_argument("--index", type=int, default=0, help="instance index")
    p.set_defaults(fn=cmd_graph_diff)

    p = sub.add_parser("plot", help="render a CSV as an SVG line chart")
    p.add_argument("--csv", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--x", default="window")
    p.add_argument("--y", default="accuracy,macro_f1")
    p.add_argument("--title", default="")
    p.set_defaults(fn=cmd_plot)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.fn(args)
    except (ConfigurationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())
