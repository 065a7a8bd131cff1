"""Dataset loading, word vectors, and cross-validation fold assignment.

Two input formats are supported: the SemEval-2014 task-4 XML layout
(sentences with ``aspectTerm`` children carrying character offsets) and the
three-line Twitter text layout (sentence with a ``$T$`` placeholder, aspect
string, integer label).  Both are canonicalized to whitespace tokens so the
dependency parser and the classifier operate on the same word sequence.
"""

from __future__ import annotations

import hashlib
import logging
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import AlignmentError, ConfigurationError, CorpusFormatError

log = logging.getLogger(__name__)

POLARITIES = ("negative", "neutral", "positive")
LABEL_TO_INDEX = {name: i for i, name in enumerate(POLARITIES)}

_TWITTER_LABELS = {"-1": "negative", "0": "neutral", "1": "positive"}


@dataclass(frozen=True)
class Instance:
    """One (sentence, aspect span, polarity) classification unit."""

    tokens: tuple[str, ...]
    aspect_start: int
    aspect_len: int
    label: str
    dataset_id: str = "custom"

    def __post_init__(self):
        n = len(self.tokens)
        if self.aspect_len < 1:
            raise ValueError("aspect span must contain at least one token")
        if not (0 <= self.aspect_start and self.aspect_start + self.aspect_len <= n):
            raise ValueError(
                f"aspect span [{self.aspect_start}, {self.aspect_start + self.aspect_len}) "
                f"out of range for {n} tokens"
            )
        if self.label not in LABEL_TO_INDEX:
            raise ValueError(f"unknown polarity label {self.label!r}")

    @property
    def aspect_tokens(self) -> tuple[str, ...]:
        return self.tokens[self.aspect_start : self.aspect_start + self.aspect_len]

    @property
    def label_index(self) -> int:
        return LABEL_TO_INDEX[self.label]

    def content_hash(self) -> str:
        payload = "\x1f".join(self.tokens)
        payload += f"\x1e{self.aspect_start}\x1e{self.aspect_len}\x1e{self.label}"
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _byte_offset(path: Path, line: int, column: int) -> int:
    """Byte offset of a 1-based (line, column) position in a file."""
    offset = 0
    with open(path, "rb") as fh:
        for _ in range(line - 1):
            offset += len(fh.readline())
    return offset + column


def _token_char_spans(text: str) -> list[tuple[int, int]]:
    spans = []
    start = None
    for pos, ch in enumerate(text):
        if ch.isspace():
            if start is not None:
                spans.append((start, pos))
                start = None
        elif start is None:
            start = pos
    if start is not None:
        spans.append((start, len(text)))
    return spans


def _snap_span(text: str, start: int, end: int, sentence_id: str) -> tuple[int, int]:
    """Expand a character span to whole-token boundaries.

    Offsets landing strictly inside a token are snapped outward with a
    warning; spans covering no token at all raise.
    """
    spans = _token_char_spans(text)
    covered = [(a, b) for a, b in spans if a < end and b > start]
    if not covered:
        raise AlignmentError(
            f"sentence {sentence_id}: aspect offsets [{start}, {end}) cover no token"
        )
    snapped_start = covered[0][0]
    snapped_end = covered[-1][1]
    requested = text[start:end].strip()
    if text[snapped_start:snapped_end] != requested:
        log.warning(
            "sentence %s: aspect offsets [%d, %d) split a token; snapped to [%d, %d) %r",
            sentence_id, start, end, snapped_start, snapped_end,
            text[snapped_start:snapped_end],
        )
    return snapped_start, snapped_end


def _span_instance(
    text: str, start: int, end: int, label: str, dataset_id: str, sentence_id: str
) -> Instance:
    if not (0 <= start < end <= len(text)):
        raise AlignmentError(
            f"sentence {sentence_id}: aspect offsets [{start}, {end}) out of range "
            f"for text of length {len(text)}"
        )
    start, end = _snap_span(text, start, end, sentence_id)
    left = text[:start].split()
    aspect = text[start:end].split()
    right = text[end:].split()
    return Instance(
        tokens=tuple(left + aspect + right),
        aspect_start=len(left),
        aspect_len=len(aspect),
        label=label,
        dataset_id=dataset_id,
    )


def load_semeval(path: str | Path, dataset_id: str = "custom") -> list[Instance]:
    """Load a SemEval-2014 task-4 XML file into one Instance per aspect term.

    Aspect terms with "conflict" polarity are dropped.  Character offsets are
    converted to word indices over a whitespace tokenization with the aspect
    boundaries forced onto token boundaries.
    """
    path = Path(path)
    try:
        tree = ET.parse(path)
    except ET.ParseError as exc:
        line, column = exc.position
        raise CorpusFormatError(
            f"{path}: malformed XML at byte {_byte_offset(path, line, column)} "
            f"(line {line}, column {column}): {exc.msg}"
        ) from exc
    instances = []
    for sentence in tree.getroot().iter("sentence"):
        sentence_id = sentence.get("id", "?")
        text = sentence.findtext("text") or ""
        for term in sentence.iter("aspectTerm"):
            polarity = term.get("polarity", "")
            if polarity == "conflict":
                continue
            if polarity not in LABEL_TO_INDEX:
                raise CorpusFormatError(
                    f"{path}: sentence {sentence_id}: unknown polarity {polarity!r}"
                )
            try:
                start = int(term.get("from", ""))
                end = int(term.get("to", ""))
            except ValueError as exc:
                raise CorpusFormatError(
                    f"{path}: sentence {sentence_id}: bad offsets "
                    f"from={term.get('from')!r} to={term.get('to')!r}"
                ) from exc
            instances.append(
                _span_instance(text, start, end, polarity, dataset_id, sentence_id)
            )
    return instances


def load_twitter(path: str | Path, dataset_id: str = "twitter") -> list[Instance]:
    """Load the three-line-per-record Twitter format.

    Record layout: sentence containing ``$T$``, aspect string, label in
    {-1, 0, 1}.
    """
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    if len(lines) % 3 != 0:
        raise CorpusFormatError(
            f"{path}: {len(lines)} non-empty lines; expected a multiple of 3"
        )
    instances = []
    for rec in range(0, len(lines), 3):
        sentence = lines[rec].strip()
        aspect = lines[rec + 1].strip()
        raw_label = lines[rec + 2].strip()
        if raw_label not in _TWITTER_LABELS:
            raise CorpusFormatError(
                f"{path}: record {rec // 3}: unknown label {raw_label!r}"
            )
        if "$T$" not in sentence:
            raise CorpusFormatError(
                f"{path}: record {rec // 3}: sentence lacks the $T$ placeholder"
            )
        left, _, right = sentence.partition("$T$")
        left_tokens = left.split()
        aspect_tokens = aspect.split()
        right_tokens = right.split()
        if not aspect_tokens:
            raise CorpusFormatError(f"{path}: record {rec // 3}: empty aspect string")
        instances.append(
            Instance(
                tokens=tuple(left_tokens + aspect_tokens + right_tokens),
                aspect_start=len(left_tokens),
                aspect_len=len(aspect_tokens),
                label=_TWITTER_LABELS[raw_label],
                dataset_id=dataset_id,
            )
        )
    return instances


def load_dataset(path: str | Path, fmt: str, dataset_id: str = "custom") -> list[Instance]:
    if fmt == "semeval":
        return load_semeval(path, dataset_id)
    if fmt == "twitter":
        return load_twitter(path, dataset_id)
    raise ConfigurationError(f"unknown dataset format {fmt!r}")


def count_labels(instances: Iterable[Instance]) -> dict[str, int]:
    counts = {name: 0 for name in POLARITIES}
    for inst in instances:
        counts[inst.label] += 1
    return counts


def stats_tsv(instances: Sequence[Instance]) -> str:
    counts = count_labels(instances)
    rows = [f"{name}\t{counts[name]}" for name in ("positive", "neutral", "negative")]
    rows.append(f"total\t{len(instances)}")
    return "\n".join(rows)


@dataclass
class WordVectorTable:
    """Static word-vector lookup with a fixed out-of-vocabulary policy.

    ``uniform_init`` draws a deterministic vector per token in
    [-0.25, 0.25], seeded by (oov_seed, token), so repeated lookups of the
    same token always agree.  Immutable after construction.
    """

    dim: int
    entries: dict[str, np.ndarray] = field(default_factory=dict)
    oov_policy: str = "uniform_init"
    oov_seed: int = 0

    def __post_init__(self):
        if self.oov_policy not in ("zeros", "uniform_init"):
            raise ConfigurationError(f"unknown OOV policy {self.oov_policy!r}")
        for token, vec in self.entries.items():
            if vec.shape != (self.dim,):
                raise CorpusFormatError(
                    f"vector for {token!r} has shape {vec.shape}, expected ({self.dim},)"
                )

    def lookup(self, token: str) -> np.ndarray:
        vec = self.entries.get(token)
        if vec is not None:
            return vec
        if self.oov_policy == "zeros":
            return np.zeros(self.dim, dtype=np.float32)
        digest = hashlib.sha256(token.encode("utf-8")).digest()
        rng = np.random.default_rng(
            (self.oov_seed, int.from_bytes(digest[:8], "little"))
        )
        return rng.uniform(-0.25, 0.25, self.dim).astype(np.float32)


def load_word_vectors(
    path: str | Path,
    dim: int | None = None,
    vocab: set[str] | None = None,
    oov_policy: str = "uniform_init",
    oov_seed: int = 0,
) -> WordVectorTable:
    """Parse whitespace-separated text vectors: token followed by floats."""
    entries: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2:
                continue
            token = parts[0]
            if vocab is not None and token not in vocab:
                continue
            values = parts[1:]
            if dim is None:
                dim = len(values)
            if len(values) != dim:
                raise CorpusFormatError(
                    f"{path}:{lineno}: {len(values)} components, expected {dim}"
                )
            try:
                entries[token] = np.asarray([float(v) for v in values], dtype=np.float32)
            except ValueError as exc:
                raise CorpusFormatError(f"{path}:{lineno}: non-numeric component") from exc
    if dim is None:
        raise CorpusFormatError(f"{path}: no vectors found")
    return WordVectorTable(dim=dim, entries=entries, oov_policy=oov_policy, oov_seed=oov_seed)


def embed(tokens: Sequence[str], table: WordVectorTable) -> np.ndarray:
    """Stack per-token vectors into an (n, dim) float32 matrix."""
    if not tokens:
        return np.zeros((0, table.dim), dtype=np.float32)
    return np.stack([table.lookup(tok) for tok in tokens]).astype(np.float32, copy=False)


@dataclass(frozen=True, eq=False)
class FoldPlan:
    """Deterministic k-way partition of a dataset."""

    k: int
    seed: int
    assignments: np.ndarray  # fold index per instance, aligned with data order

    def fold_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)


def make_folds(data: Sequence[Instance], k: int, seed: int) -> FoldPlan:
    """Plain shuffled partition; fold sizes differ by at most one."""
    n = len(data)
    if k < 2:
        raise ConfigurationError(f"fold count must be at least 2, got {k}")
    if k > n:
        raise ConfigurationError(f"cannot split {n} instances into {k} folds")
    perm = np.random.default_rng(seed).permutation(n)
    assignments = np.empty(n, dtype=np.int64)
    assignments[perm] = np.arange(n) % k
    return FoldPlan(k=k, seed=seed, assignments=assignments)
