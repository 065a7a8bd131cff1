"""Training and evaluation protocol.

k-fold cross-validation over the training split: the held-out fold is the
validation set, the epoch-end checkpoint with the best validation accuracy
is kept, and the official test split is scored once per fold.  Reported
numbers are arithmetic means over folds.  Both learning rates warm up
linearly from zero to their peak, then decay linearly back to zero.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import corpus
from .config import RunConfig
from .corpus import Instance, WordVectorTable, embed, make_folds
from .depgraph import (
    DepGraph,
    ParseCache,
    SubwordAlignment,
    get_parser,
    parse_dependencies,
    to_adjacency,
)
from .errors import ConfigurationError
from .graphsup import SupplementedGraph, build_supplemented
from .metrics import FoldResult, RunMetrics, accuracy, macro_f1
from .model import AspectGcn, classification_loss, save_checkpoint
from .plmfeat import EncoderBackend, FeatureCache, PlmFeatures, StubEncoder, encode

log = logging.getLogger(__name__)


def linear_warmup_scale(step: int, total_steps: int, warmup_steps: int) -> float:
    """Piecewise-linear factor: 0 at step 0, 1 at warmup end, 0 at the last step."""
    if total_steps <= 0:
        return 0.0
    step = min(max(step, 0), total_steps)
    if warmup_steps > 0 and step < warmup_steps:
        return step / warmup_steps
    if total_steps == warmup_steps:
        return 1.0
    return (total_steps - step) / (total_steps - warmup_steps)


def build_backend(config: RunConfig) -> EncoderBackend:
    if config.encoder == "stub":
        return StubEncoder(
            hidden_size=config.stub_hidden_size,
            num_heads=config.stub_heads,
            num_layers=config.stub_layers,
            seed=config.seed,
        )
    from .plmfeat import HuggingFaceEncoder

    return HuggingFaceEncoder(config.encoder_path, finetune=config.finetune_encoder)


def build_table(config: RunConfig, vocab: set[str] | None = None) -> WordVectorTable:
    if config.word_vectors:
        table = corpus.load_word_vectors(
            config.word_vectors,
            vocab=vocab,
            oov_policy=config.oov_policy,
            oov_seed=config.seed,
        )
        if table.dim != config.embed_dim:
            raise ConfigurationError(
                f"word vectors are {table.dim}-dimensional, config says {config.embed_dim}"
            )
        return table
    return WordVectorTable(
        dim=config.embed_dim, entries={}, oov_policy=config.oov_policy,
        oov_seed=config.seed,
    )


def build_model(
    config: RunConfig, backend: EncoderBackend, dtype: torch.dtype = torch.float32,
    seed: int | None = None, device: str = "cpu",
) -> AspectGcn:
    model = AspectGcn(
        embed_dim=config.embed_dim,
        hidden_dim=config.hidden_dim,
        encoder_dim=backend.hidden_size,
        num_layers=len(config.encoder_layers),
        window=config.resolved_window,
        dropout=config.dropout,
        use_position=config.use_position,
        use_attention_graph=config.use_attention_graph,
        seed=config.seed if seed is None else seed,
        dtype=dtype,
    )
    return model.to(device)


@dataclass
class PreparedInstance:
    """Everything static a forward pass needs for one instance."""

    instance: Instance
    x: torch.Tensor
    dep: DepGraph
    alignment: SubwordAlignment
    features: PlmFeatures | None = None   # filled for frozen backends
    graphs: SupplementedGraph | None = None


def prepare_instances(
    instances: Sequence[Instance],
    table: WordVectorTable,
    backend: EncoderBackend,
    parser=None,
    parse_cache: ParseCache | None = None,
) -> list[PreparedInstance]:
    prepared = []
    for inst in instances:
        heads = parse_dependencies(inst.tokens, parser=parser, cache=parse_cache)
        dep = to_adjacency(heads, len(inst.tokens))
        _, alignment = backend.align(inst.tokens, inst.aspect_tokens)
        x = torch.from_numpy(embed(inst.tokens, table))
        prepared.append(
            PreparedInstance(instance=inst, x=x, dep=dep, alignment=alignment)
        )
    return prepared


def graphs_for(
    dep: DepGraph, features: PlmFeatures, config: RunConfig
) -> SupplementedGraph:
    attention = [
        features.attention[l].detach().cpu().numpy() for l in features.layers
    ]
    return build_supplemented(
        dep,
        attention,
        config.alpha,
        config.beta,
        use_attention_graph=config.use_attention_graph,
    )


def precompute_frozen(
    prepared: Sequence[PreparedInstance],
    backend: EncoderBackend,
    config: RunConfig,
    feature_cache: FeatureCache | None = None,
) -> None:
    """Fill features and graphs once; valid only for frozen backends."""
    for prep in prepared:
        features = None
        if feature_cache is not None:
            features = feature_cache.load(
                prep.instance, backend.name, config.encoder_layers
            )
        if features is None:
            features = encode(backend, prep.instance, prep.alignment, config.encoder_layers)
            if feature_cache is not None:
                feature_cache.store(
                    prep.instance, backend.name, config.encoder_layers, features
                )
        prep.features = features
        prep.graphs = graphs_for(prep.dep, features, config)


def instance_forward(
    model: AspectGcn,
    prep: PreparedInstance,
    config: RunConfig,
    backend: EncoderBackend | None = None,
):
    if prep.features is not None and prep.graphs is not None:
        features, graphs = prep.features, prep.graphs
    else:
        if backend is None:
            raise ValueError("no precomputed features and no backend to encode with")
        features = encode(backend, prep.instance, prep.alignment, config.encoder_layers)
        graphs = graphs_for(prep.dep, features, config)
    return model(
        prep.x, features, graphs, prep.instance.aspect_start, prep.instance.aspect_len
    )


def predict(
    model: AspectGcn,
    prepared: Sequence[PreparedInstance],
    config: RunConfig,
    backend: EncoderBackend | None = None,
) -> list[int]:
    model.eval()
    out = []
    with torch.no_grad():
        for prep in prepared:
            trace = instance_forward(model, prep, config, backend)
            out.append(int(trace.logits.argmax()))
    return out


def evaluate(
    model: AspectGcn,
    prepared: Sequence[PreparedInstance],
    config: RunConfig,
    backend: EncoderBackend | None = None,
) -> tuple[float, float]:
    """Accuracy and macro-F1 of a model over prepared instances."""
    if not prepared:
        raise ValueError("cannot evaluate on an empty instance list")
    preds = predict(model, prepared, config, backend)
    labels = [p.instance.label_index for p in prepared]
    return accuracy(labels, preds), macro_f1(labels, preds)


@dataclass
class FoldOutcome:
    model: AspectGcn
    best_val_accuracy: float
    best_epoch: int
    history: list[dict] = field(default_factory=list)


def _dump_divergence(config: RunConfig, epoch: int, step: int, batch) -> Path:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "divergence.json"
    payload = {
        "epoch": epoch,
        "step": step,
        "batch": [
            {
                "hash": prep.instance.content_hash(),
                "tokens": list(prep.instance.tokens),
                "label": prep.instance.label,
            }
            for prep in batch
        ],
    }
    path.write_text(json.dumps(payload, indent=2), encoding="utf-8")
    return path


def train_fold(
    config: RunConfig,
    train_set: Sequence[PreparedInstance],
    val_set: Sequence[PreparedInstance],
    backend: EncoderBackend,
    *,
    seed: int | None = None,
    dtype: torch.dtype = torch.float32,
    device: str = "cpu",
) -> FoldOutcome:
    """Train once, validating per epoch; keeps the best-validation state."""
    if not train_set:
        raise ValueError("empty training set")
    seed = config.seed if seed is None else seed
    torch.manual_seed(seed)
    model = build_model(config, backend, dtype=dtype, seed=seed, device=device)

    head_params = list(model.parameters())
    groups = [{"params": head_params, "lr": 0.0, "peak_lr": config.lr_head}]
    encoder_params = list(backend.trainable_parameters())
    if encoder_params:
        groups.append({"params": encoder_params, "lr": 0.0, "peak_lr": config.lr_encoder})
    optimizer = torch.optim.Adam(groups)
    penalized = head_params + encoder_params

    steps_per_epoch = math.ceil(len(train_set) / config.batch_size)
    total_steps = steps_per_epoch * config.epochs
    warmup_steps = int(round(config.warmup_frac * total_steps))
    rng = np.random.default_rng(seed)

    def snapshot():
        return {k: v.detach().clone() for k, v in model.state_dict().items()}

    best_state = snapshot()
    best_val = -1.0
    best_epoch = 0
    if config.epochs == 0 and val_set:
        best_val, _ = evaluate(model, val_set, config, backend)

    history: list[dict] = []
    step = 0
    for epoch in range(1, config.epochs + 1):
        model.train()
        order = rng.permutation(len(train_set))
        epoch_loss = 0.0
        correct = 0
        for start in range(0, len(order), config.batch_size):
            batch = [train_set[i] for i in order[start : start + config.batch_size]]
            optimizer.zero_grad()
            logits = []
            labels = []
            for prep in batch:
                trace = instance_forward(model, prep, config, backend)
                logits.append(trace.logits)
                labels.append(prep.instance.label_index)
            logits_t = torch.stack(logits)
            labels_t = torch.tensor(labels, dtype=torch.long, device=logits_t.device)
            loss = classification_loss(logits_t, labels_t, penalized, config.lambda_l2)
            if not torch.isfinite(loss):
                path = _dump_divergence(config, epoch, step, batch)
                raise RuntimeError(
                    f"loss is not finite at epoch {epoch} step {step}; "
                    f"offending batch dumped to {path}"
                )
            loss.backward()
            scale = linear_warmup_scale(step, total_steps, warmup_steps)
            for group in optimizer.param_groups:
                group["lr"] = group["peak_lr"] * scale
            optimizer.step()
            step += 1
            epoch_loss += float(loss.detach())
            correct += int((logits_t.argmax(dim=1) == labels_t).sum())
        train_acc = correct / len(train_set)
        val_acc = float("nan")
        if val_set:
            val_acc, _ = evaluate(model, val_set, config, backend)
            if val_acc > best_val:
                best_val = val_acc
                best_epoch = epoch
                best_state = snapshot()
            elif epoch - best_epoch >= config.patience:
                history.append({
                    "epoch": epoch, "train_loss": epoch_loss,
                    "train_accuracy": train_acc, "val_accuracy": val_acc,
                })
                log.info("early stop at epoch %d (best %.4f @ %d)", epoch, best_val, best_epoch)
                break
        history.append({
            "epoch": epoch, "train_loss": epoch_loss,
            "train_accuracy": train_acc, "val_accuracy": val_acc,
        })

    model.load_state_dict(best_state)
    model.eval()
    return FoldOutcome(
        model=model, best_val_accuracy=best_val, best_epoch=best_epoch, history=history
    )


def load_splits(config: RunConfig) -> tuple[list[Instance], list[Instance]]:
    if not config.train_path or not config.test_path:
        raise ConfigurationError("train_path and test_path are required")
    fmt = config.resolved_format
    train = corpus.load_dataset(config.train_path, fmt, config.dataset)
    test = corpus.load_dataset(config.test_path, fmt, config.dataset)
    return train, test


@dataclass
class CvResources:
    """Shared, reusable pieces of a cross-validation run."""

    backend: EncoderBackend
    table: WordVectorTable
    train_prepared: list[PreparedInstance]
    test_prepared: list[PreparedInstance]
    frozen: bool


def prepare_resources(
    config: RunConfig,
    train_instances: Sequence[Instance],
    test_instances: Sequence[Instance],
    backend: EncoderBackend | None = None,
    table: WordVectorTable | None = None,
    parser=None,
) -> CvResources:
    backend = backend or build_backend(config)
    if table is None:
        vocab = {t for inst in list(train_instances) + list(test_instances) for t in inst.tokens}
        table = build_table(config, vocab)
    if parser is None and config.parser != "none":
        parser = get_parser(config.parser)
    cache_dir = Path(config.cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    parse_cache = ParseCache(cache_dir / "parses.tsv")
    train_prepared = prepare_instances(train_instances, table, backend, parser, parse_cache)
    test_prepared = prepare_instances(test_instances, table, backend, parser, parse_cache)
    parse_cache.save()
    frozen = not (config.finetune_encoder and backend.trainable)
    if frozen:
        feature_cache = FeatureCache(cache_dir / "features")
        precompute_frozen(train_prepared, backend, config, feature_cache)
        precompute_frozen(test_prepared, backend, config, feature_cache)
    return CvResources(
        backend=backend, table=table, train_prepared=train_prepared,
        test_prepared=test_prepared, frozen=frozen,
    )


def _write_metrics(out_dir: Path, metrics: RunMetrics, config: RunConfig) -> None:
    (out_dir / "metrics.jsonl").write_text(
        metrics.to_json_lines(config.config_hash()) + "\n", encoding="utf-8"
    )
    (out_dir / "metrics.tsv").write_text(
        metrics.to_tsv(config.config_hash()) + "\n", encoding="utf-8"
    )


def run_cv(
    config: RunConfig,
    train_instances: Sequence[Instance] | None = None,
    test_instances: Sequence[Instance] | None = None,
    resources: CvResources | None = None,
    dtype: torch.dtype = torch.float32,
) -> RunMetrics:
    """Full protocol: per-fold training, test scoring, and artifact output."""
    if resources is None:
        if train_instances is None or test_instances is None:
            train_instances, test_instances = load_splits(config)
        resources = prepare_resources(config, train_instances, test_instances)
    else:
        train_instances = [p.instance for p in resources.train_prepared]

    out_dir = Path(config.out_dir) / f"run-{config.config_hash()}"
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "metadata.json").write_text(
        json.dumps(config.run_metadata(), indent=2), encoding="utf-8"
    )

    plan = make_folds(train_instances, config.folds, config.seed)
    metrics = RunMetrics()
    try:
        for fold in range(config.folds):
            train_set = [resources.train_prepared[i] for i in plan.train_indices(fold)]
            val_set = [resources.train_prepared[i] for i in plan.fold_indices(fold)]
            outcome = train_fold(
                config, train_set, val_set, resources.backend,
                seed=config.seed + fold, dtype=dtype,
            )
            test_acc, test_f1 = evaluate(
                outcome.model, resources.test_prepared, config, resources.backend
            )
            metrics.folds.append(
                FoldResult(
                    fold=fold,
                    best_val_accuracy=outcome.best_val_accuracy,
                    test_accuracy=test_acc,
                    test_macro_f1=test_f1,
                )
            )
            save_checkpoint(
                out_dir / "checkpoints" / f"fold-{fold}.pt",
                outcome.model,
                encoder_layers=config.encoder_layers,
                config=config.to_dict(),
                config_hash=config.config_hash(),
                extra={"fold": fold, "best_val_accuracy": outcome.best_val_accuracy},
            )
            _write_metrics(out_dir, metrics, config)
            log.info(
                "fold %d: val %.4f test acc %.4f f1 %.4f",
                fold, outcome.best_val_accuracy, test_acc, test_f1,
            )
    except Exception:
        _write_metrics(out_dir, metrics, config)
        raise
    return metrics


ABLATION_GRID = (
    ("full", {"use_position": True, "use_attention_graph": True}),
    ("no_position", {"use_position": False, "use_attention_graph": True}),
    ("no_attention_graph", {"use_position": True, "use_attention_graph": False}),
    ("no_position_no_attention_graph",
     {"use_position": False, "use_attention_graph": False}),
)


def ablation_matrix(
    config: RunConfig,
    train_instances: Sequence[Instance] | None = None,
    test_instances: Sequence[Instance] | None = None,
    dtype: torch.dtype = torch.float32,
) -> dict[str, RunMetrics]:
    """The four flag combinations as separate cross-validation runs,
    summarized into one table."""
    results: dict[str, RunMetrics] = {}
    for name, flags in ABLATION_GRID:
        results[name] = run_cv(
            config.replace(**flags), train_instances, test_instances, dtype=dtype
        )
    out_dir = Path(config.out_dir) / f"ablation-{config.config_hash()}"
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = [f"# config_hash={config.config_hash()}",
            "variant\taccuracy\tmacro_f1"]
    for name, metrics in results.items():
        rows.append(f"{name}\t{metrics.mean_accuracy!r}\t{metrics.mean_macro_f1!r}")
    (out_dir / "ablation.tsv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    return results


def window_sweep(
    config: RunConfig,
    w_values: Sequence[int],
    train_instances: Sequence[Instance] | None = None,
    test_instances: Sequence[Instance] | None = None,
    dtype: torch.dtype = torch.float32,
) -> tuple[list[tuple[int, float, float]], Path, Path]:
    """One cross-validation run per window size; emits CSV plus an SVG chart."""
    if not w_values:
        raise ConfigurationError("w_values must not be empty")
    from .charts import line_chart_svg

    rows: list[tuple[int, float, float]] = []
    for w in w_values:
        cfg = config.replace(window=int(w))
        metrics = run_cv(cfg, train_instances, test_instances, dtype=dtype)
        rows.append((int(w), metrics.mean_accuracy, metrics.mean_macro_f1))

    out_dir = Path(config.out_dir) / f"sweep-{config.config_hash()}"
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "window_sweep.csv"
    lines = [f"# config_hash={config.config_hash()}", "window,accuracy,macro_f1"]
    for w, acc, f1 in rows:
        lines.append(f"{w},{acc!r},{f1!r}")
    csv_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    svg_path = out_dir / "window_sweep.svg"
    svg = line_chart_svg(
        {
            "accuracy": [(w, acc) for w, acc, _ in rows],
            "macro_f1": [(w, f1) for w, _, f1 in rows],
        },
        title="Effect of the position window",
        x_label="window",
        y_label="score",
    )
    svg = svg.replace(
        ">", f"><!-- config_hash={config.config_hash()} -->", 1
    )
    svg_path.write_text(svg, encoding="utf-8")
    return rows, csv_path, svg_path
