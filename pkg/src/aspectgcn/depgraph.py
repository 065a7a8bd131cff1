"""Word-level dependency adjacency and sub-word/word alignment.

Parser output (one head index per token) is turned into a symmetric binary
adjacency with self-loops.  Parses are cached to a TSV keyed by a content
hash of the token sequence, so repeated runs and CI never need the parser.
"""

from __future__ import annotations

import hashlib
import logging
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import AlignmentError, ConfigurationError, ParserUnavailableError

log = logging.getLogger(__name__)

ROOT = -1

ParserFn = Callable[[Sequence[str]], Sequence[int]]


def sentence_hash(tokens: Sequence[str]) -> str:
    return hashlib.sha256("\x1f".join(tokens).encode("utf-8")).hexdigest()


@dataclass(frozen=True, eq=False)
class DepGraph:
    """Binary word adjacency: symmetric, unit diagonal."""

    adjacency: np.ndarray

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]


def to_adjacency(heads: Sequence[int], n: int) -> DepGraph:
    """Bidirectionalize head links and add self-loops.

    Self-loops keep every row's degree positive even after aggressive edge
    pruning downstream; they are never removed.
    """
    if len(heads) != n:
        raise ValueError(f"{len(heads)} heads for {n} tokens")
    adj = np.zeros((n, n), dtype=np.int8)
    np.fill_diagonal(adj, 1)
    for i, head in enumerate(heads):
        if head == ROOT:
            continue
        if not 0 <= head < n:
            raise ValueError(f"head index {head} out of range for {n} tokens")
        adj[i, head] = 1
        adj[head, i] = 1
    return DepGraph(adjacency=adj)


def validate_tree(heads: Sequence[int]) -> None:
    """Require exactly one ROOT and no cycles."""
    roots = [i for i, h in enumerate(heads) if h == ROOT]
    if len(roots) != 1:
        raise ValueError(f"expected exactly one ROOT, found {len(roots)}")
    for start in range(len(heads)):
        seen = set()
        node = start
        while node != ROOT:
            if node in seen:
                raise ValueError(f"cycle through token {start}")
            seen.add(node)
            node = heads[node]


class ParseCache:
    """TSV parse cache with columns (sentence_hash, token_index, token, head_index)."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._heads: dict[str, list[int]] = {}
        self._tokens: dict[str, list[str]] = {}
        if self.path.exists():
            self._load()

    def _load(self) -> None:
        with open(self.path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                shash, idx, token, head = line.split("\t")
                self._heads.setdefault(shash, []).append(int(head))
                self._tokens.setdefault(shash, []).append(token)
                if int(idx) != len(self._heads[shash]) - 1:
                    raise ValueError(f"{self.path}: out-of-order rows for {shash}")

    def __len__(self) -> int:
        return len(self._heads)

    def get(self, tokens: Sequence[str]) -> list[int] | None:
        heads = self._heads.get(sentence_hash(tokens))
        if heads is None:
            return None
        if len(heads) != len(tokens):
            raise ValueError("cached parse length does not match token count")
        return list(heads)

    def put(self, tokens: Sequence[str], heads: Sequence[int]) -> None:
        self._heads[sentence_hash(tokens)] = list(heads)
        self._tokens[sentence_hash(tokens)] = list(tokens)

    def save(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=self.path.parent, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                for shash in sorted(self._heads):
                    tokens = self._tokens.get(shash, [""] * len(self._heads[shash]))
                    for idx, head in enumerate(self._heads[shash]):
                        fh.write(f"{shash}\t{idx}\t{tokens[idx]}\t{head}\n")
            os.replace(tmp, self.path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise


def parse_dependencies(
    tokens: Sequence[str],
    parser: ParserFn | None = None,
    cache: ParseCache | None = None,
) -> list[int]:
    """Head index per token (ROOT sentinel for the root), cache first."""
    if cache is not None:
        cached = cache.get(tokens)
        if cached is not None:
            return cached
    if parser is None:
        raise ParserUnavailableError(
            "no dependency parser configured and no cached parse for sentence "
            f"{' '.join(tokens[:8])!r}..."
        )
    heads = list(parser(tokens))
    if len(heads) != len(tokens):
        raise ValueError(
            f"parser returned {len(heads)} heads for {len(tokens)} tokens"
        )
    for head in heads:
        if head != ROOT and not 0 <= head < len(tokens):
            raise ValueError(f"parser returned head index {head} out of range")
    if cache is not None:
        cache.put(tokens, heads)
    return heads


class SpacyParser:
    """Adapter around a spaCy pipeline run on pre-tokenized words."""

    def __init__(self, model: str = "en_core_web_sm"):
        try:
            import spacy
        except ImportError as exc:
            raise ParserUnavailableError(
                "spacy is not installed; install the 'parse' extra or supply a parse cache"
            ) from exc
        try:
            self._nlp = spacy.load(model, exclude=["ner", "lemmatizer"])
        except OSError as exc:
            raise ParserUnavailableError(f"spacy model {model!r} is not available") from exc
        self._spacy = spacy

    def __call__(self, tokens: Sequence[str]) -> list[int]:
        doc = self._spacy.tokens.Doc(self._nlp.vocab, words=list(tokens))
        for _, proc in self._nlp.pipeline:
            doc = proc(doc)
        return [ROOT if tok.head.i == tok.i else tok.head.i for tok in doc]


def chain_parser(tokens: Sequence[str]) -> list[int]:
    """Degenerate left-to-right chain; parser-free fallback for smoke runs."""
    return [ROOT] + list(range(len(tokens) - 1))


def get_parser(name: str) -> ParserFn | None:
    if name == "none":
        return None
    if name == "chain":
        return chain_parser
    if name == "spacy" or name.startswith("spacy:"):
        model = name.partition(":")[2] or "en_core_web_sm"
        return SpacyParser(model)
    raise ConfigurationError(f"unknown parser adapter {name!r}")


@dataclass(frozen=True)
class SubwordAlignment:
    """Mapping between words and encoder piece positions.

    ``groups[i]`` lists the contiguous piece positions of word i inside the
    sentence segment; ``first_subword[i] == groups[i][0]``.  Delimiters and
    the appended aspect segment are in ``special_positions``.
    """

    first_subword: tuple[int, ...]
    groups: tuple[tuple[int, ...], ...]
    special_positions: frozenset[int]
    num_pieces: int

    @property
    def n(self) -> int:
        return len(self.groups)


def align_subwords(
    tokens: Sequence[str],
    pieces: Sequence[str],
    *,
    cls_token: str = "[CLS]",
    sep_token: str = "[SEP]",
    unk_token: str = "[UNK]",
    continuation: str = "##",
    word_start: str | None = None,
    normalize: Callable[[str], str] | None = None,
) -> SubwordAlignment:
    """Group template pieces back into the original words.

    The template is cls, sentence pieces, sep, aspect pieces, sep.  Matching
    is greedy: pieces are consumed until their concatenation (markers
    stripped) spells the normalized word.
    """
    norm = normalize or (lambda w: w)

    def piece_text(piece: str) -> str:
        if word_start and piece.startswith(word_start):
            return piece[len(word_start):]
        if continuation and piece.startswith(continuation):
            return piece[len(continuation):]
        return piece

    if not pieces or pieces[0] != cls_token:
        raise AlignmentError("template does not start with the sequence delimiter")
    pos = 1
    groups: list[tuple[int, ...]] = []
    for word in tokens:
        target = norm(word)
        acc = ""
        group: list[int] = []
        while True:
            if pos >= len(pieces) or pieces[pos] == sep_token:
                raise AlignmentError(f"cannot align word {word!r}: pieces exhausted")
            piece = pieces[pos]
            if piece == unk_token and not group:
                group.append(pos)
                pos += 1
                break
            acc += piece_text(piece)
            group.append(pos)
            pos += 1
            if acc == target:
                break
            if len(acc) >= len(target) or not target.startswith(acc):
                raise AlignmentError(
                    f"cannot align word {word!r}: pieces spell {acc!r}"
                )
        groups.append(tuple(group))
    if pos >= len(pieces) or pieces[pos] != sep_token:
        raise AlignmentError("sentence segment is not terminated by a delimiter")
    special = frozenset({0} | set(range(pos, len(pieces))))
    return SubwordAlignment(
        first_subword=tuple(g[0] for g in groups),
        groups=tuple(groups),
        special_positions=special,
        num_pieces=len(pieces),
    )
