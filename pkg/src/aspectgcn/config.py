"""Run configuration: dataclass defaults, layered file + override loading,
and the config hash embedded in every artifact."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigurationError

DATASET_WINDOW_DEFAULTS = {"twitter": 2, "laptop": 3, "restaurant": 5}
ENCODER_DIR_ENV = "ASPECTGCN_ENCODER_DIR"

# Fixed reading of points the upstream description leaves open; serialized
# into run metadata so results are interpretable later.
CONVENTIONS = {
    "tokenization": "whitespace split with aspect boundaries forced onto token "
                    "boundaries; mid-token offsets snapped outward with a warning",
    "thresholds": "the larger threshold adds edges, the smaller prunes; defaults "
                  "alpha=0.25 beta=0.01",
    "edge_orientation": "attention[i, j] gates edge j->i in row i's neighborhood",
    "attention_word_reduction": "heads averaged first; rows read at the first "
                                "sub-word, columns summed over sub-words",
    "root_edges": "no extra edge for the parse root beyond its self-loop",
    "degree": "row nonzero count of the edited adjacency",
    "position_anchor": "offsets are relative to the aggregating node",
    "dropout_semantics": "configured rate is the drop probability",
    "l2_penalty": "single global 2-norm over all trainable parameters",
    "fold_protocol": "folds drawn from the training split only; the held-out fold "
                     "is the validation set and the official test split is scored once",
}


@dataclass
class RunConfig:
    """Everything a run needs; all fields land in the run metadata."""

    dataset: str = "custom"
    train_path: str | None = None
    test_path: str | None = None
    data_format: str | None = None          # semeval | twitter; inferred if None
    word_vectors: str | None = None
    oov_policy: str = "uniform_init"
    embed_dim: int = 300

    encoder: str = "stub"
    encoder_layers: tuple[int, ...] = (1, 5, 9, 12)
    finetune_encoder: bool = True
    stub_hidden_size: int = 32
    stub_heads: int = 4
    stub_layers: int = 12

    parser: str = "spacy"

    alpha: float = 0.25
    beta: float = 0.01
    window: int | None = None               # per-dataset default if None
    hidden_dim: int = 300
    lambda_l2: float = 1e-5
    dropout: float = 0.8

    batch_size: int = 32
    epochs: int = 30
    patience: int = 10
    warmup_frac: float = 0.1
    lr_encoder: float = 2e-5
    lr_head: float = 1e-3
    folds: int = 10
    seed: int = 1

    use_position: bool = True
    use_attention_graph: bool = True

    cache_dir: str = ".aspectgcn_cache"
    out_dir: str = "runs"

    def __post_init__(self):
        self.encoder_layers = tuple(int(x) for x in self.encoder_layers)
        self.validate()

    def validate(self) -> None:
        if not (0.0 <= self.beta < self.alpha <= 1.0):
            raise ConfigurationError(
                f"need 0 <= beta < alpha <= 1, got alpha={self.alpha} beta={self.beta}"
            )
        if not self.encoder_layers:
            raise ConfigurationError("encoder_layers must not be empty")
        if any(l < 1 for l in self.encoder_layers):
            raise ConfigurationError("encoder layer indices are 1-based")
        if len(set(self.encoder_layers)) != len(self.encoder_layers):
            raise ConfigurationError("encoder_layers contains duplicates")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError(f"dropout must be in [0, 1), got {self.dropout}")
        if not 0.0 <= self.warmup_frac <= 1.0:
            raise ConfigurationError("warmup_frac must be in [0, 1]")
        if self.window is not None and self.window < 0:
            raise ConfigurationError("window must be non-negative")
        if self.folds < 2:
            raise ConfigurationError("folds must be at least 2")
        if self.epochs < 0 or self.patience < 0 or self.batch_size < 1:
            raise ConfigurationError("invalid training loop settings")

    @property
    def resolved_window(self) -> int:
        if self.window is not None:
            return self.window
        return DATASET_WINDOW_DEFAULTS.get(self.dataset, 2)

    @property
    def resolved_format(self) -> str:
        if self.data_format:
            return self.data_format
        if self.dataset == "twitter":
            return "twitter"
        if self.dataset in ("laptop", "restaurant"):
            return "semeval"
        if self.train_path and str(self.train_path).endswith(".xml"):
            return "semeval"
        return "twitter"

    @property
    def encoder_path(self) -> str:
        override = os.environ.get(ENCODER_DIR_ENV)
        if override and self.encoder != "stub":
            return override
        return self.encoder

    def to_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        out["encoder_layers"] = list(self.encoder_layers)
        return out

    def config_hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]

    def run_metadata(self) -> dict[str, Any]:
        return {
            "config": self.to_dict(),
            "config_hash": self.config_hash(),
            "resolved_window": self.resolved_window,
            "conventions": dict(CONVENTIONS),
        }

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(name: str, value: Any) -> Any:
    if name not in _FIELDS:
        raise ConfigurationError(f"unknown config key {name!r}")
    if not isinstance(value, str):
        return value
    # flag overrides arrive as strings
    text = value.strip()
    if name == "encoder_layers":
        return tuple(int(x) for x in text.replace(",", " ").split())
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    if lowered in ("none", "null"):
        return None
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    return text


def load_config(
    path: str | Path | None = None, overrides: dict[str, Any] | None = None
) -> RunConfig:
    """Defaults, then file values, then explicit overrides."""
    values: dict[str, Any] = {}
    if path is not None:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        if not isinstance(raw, dict):
            raise ConfigurationError(f"{path}: expected a mapping at top level")
        for key, val in raw.items():
            if key not in _FIELDS:
                raise ConfigurationError(f"{path}: unknown config key {key!r}")
            values[key] = tuple(val) if key == "encoder_layers" and isinstance(
                val, list
            ) else val
    for key, val in (overrides or {}).items():
        values[key] = _coerce(key, val)
    return RunConfig(**values)
