"""Word-aligned hidden states and head-averaged attention from a
transformer encoder.

The encoder runs once per instance on the template
``[CLS] sentence [SEP] aspect [SEP]``.  For each selected layer the module
exposes an (n, hidden_size) matrix of word states (first sub-word
convention) and an (n, n) attention matrix: heads are averaged first, then
rows are taken at each word's first sub-word and columns summed over the
target word's sub-words, so attention mass onto split words is conserved.
Delimiters and the aspect segment are excluded from the word matrix.
"""

from __future__ import annotations

import hashlib
import logging
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import torch

from .corpus import Instance
from .depgraph import SubwordAlignment, align_subwords
from .errors import BackendUnavailableError, ConfigurationError, TruncationError

log = logging.getLogger(__name__)

DEFAULT_LAYERS = (1, 5, 9, 12)


@dataclass
class PlmFeatures:
    """Per-selected-layer word states and word-level attention."""

    layers: tuple[int, ...]
    hidden: dict[int, torch.Tensor]     # layer -> (n, hidden_size)
    attention: dict[int, torch.Tensor]  # layer -> (n, n)
    hidden_size: int
    num_heads: int


class EncoderBackend:
    """Common surface for pretrained (or stand-in) transformer encoders."""

    name: str = "base"
    hidden_size: int
    num_heads: int
    num_layers: int
    max_length: int = 512
    cls_token = "[CLS]"
    sep_token = "[SEP]"
    unk_token = "[UNK]"
    continuation = "##"
    word_start: str | None = None
    trainable: bool = False

    def normalize_word(self, word: str) -> str:
        return word

    def word_pieces(self, word: str) -> list[str]:
        raise NotImplementedError

    def run(self, pieces: Sequence[str]):
        """All-layer states and attentions for a piece sequence.

        Returns (states, attentions): states has num_layers + 1 entries of
        shape (T, hidden_size) with index 0 the embedding layer; attentions
        has num_layers entries of shape (num_heads, T, T).
        """
        raise NotImplementedError

    def trainable_parameters(self):
        return ()

    def template_pieces(
        self, sentence_tokens: Sequence[str], aspect_tokens: Sequence[str]
    ) -> list[str]:
        pieces = [self.cls_token]
        for word in sentence_tokens:
            pieces.extend(self.word_pieces(word))
        pieces.append(self.sep_token)
        for word in aspect_tokens:
            pieces.extend(self.word_pieces(word))
        pieces.append(self.sep_token)
        return pieces

    def align(
        self, sentence_tokens: Sequence[str], aspect_tokens: Sequence[str]
    ) -> tuple[list[str], SubwordAlignment]:
        pieces = self.template_pieces(sentence_tokens, aspect_tokens)
        alignment = align_subwords(
            sentence_tokens,
            pieces,
            cls_token=self.cls_token,
            sep_token=self.sep_token,
            unk_token=self.unk_token,
            continuation=self.continuation,
            word_start=self.word_start,
            normalize=self.normalize_word,
        )
        return pieces, alignment


def _piece_seed(piece: str, salt: int) -> int:
    digest = hashlib.sha256(piece.encode("utf-8")).digest()
    return (int.from_bytes(digest[:8], "little") ^ salt) & (2**63 - 1)


class StubEncoder(EncoderBackend):
    """Deterministic frozen stand-in for a pretrained encoder.

    Produces hidden states and softmax attention with the same shapes and
    row-sum property as a real transformer; all weights are fixed by `seed`
    and never trained.  Words longer than `piece_len` characters split into
    multiple pieces, which exercises the sub-word alignment path.
    """

    trainable = False

    def __init__(
        self,
        hidden_size: int = 32,
        num_heads: int = 4,
        num_layers: int = 12,
        seed: int = 0,
        piece_len: int = 4,
        max_length: int = 128,
    ):
        if num_heads < 1 or num_layers < 1:
            raise ConfigurationError("stub encoder needs at least one head and layer")
        self.hidden_size = hidden_size
        self.num_heads = num_heads
        self.num_layers = num_layers
        self.max_length = max_length
        self.piece_len = piece_len
        self.seed = seed
        self.name = f"stub-d{hidden_size}-h{num_heads}-l{num_layers}-s{seed}"
        gen = torch.Generator().manual_seed(seed)
        scale = hidden_size ** -0.5
        self._q = torch.randn(
            num_layers, num_heads, hidden_size, hidden_size, generator=gen
        ) * scale
        self._k = torch.randn(
            num_layers, num_heads, hidden_size, hidden_size, generator=gen
        ) * scale
        self._mix = torch.randn(num_layers, hidden_size, hidden_size, generator=gen) * scale

    def word_pieces(self, word: str) -> list[str]:
        chunks = [word[i : i + self.piece_len] for i in range(0, len(word), self.piece_len)]
        return [chunks[0]] + [self.continuation + c for c in chunks[1:]]

    def _piece_vector(self, piece: str) -> torch.Tensor:
        gen = torch.Generator().manual_seed(_piece_seed(piece, self.seed))
        return torch.randn(self.hidden_size, generator=gen)

    def run(self, pieces: Sequence[str]):
        with torch.no_grad():
            h = torch.stack([self._piece_vector(p) for p in pieces])
            states = [h]
            attentions = []
            inv_sqrt = 1.0 / math.sqrt(self.hidden_size)
            for layer in range(self.num_layers):
                q = torch.einsum("td,hde->hte", h, self._q[layer])
                k = torch.einsum("td,hde->hte", h, self._k[layer])
                scores = torch.einsum("hte,hse->hts", q, k) * inv_sqrt
                att = torch.softmax(scores, dim=-1)
                ctx = att.mean(dim=0) @ h
                h = torch.tanh(ctx @ self._mix[layer] + h)
                states.append(h)
                attentions.append(att)
        return states, attentions


class HuggingFaceEncoder(EncoderBackend):
    """Pretrained encoder via the transformers library.

    Weights come from a model name or a local directory (see the encoder
    directory environment override in config).  Fine-tuning toggles gradient
    flow through the encoder.
    """

    def __init__(self, model_name_or_dir: str, finetune: bool = False, device: str = "cpu"):
        try:
            from transformers import AutoModel, AutoTokenizer
        except ImportError as exc:
            raise BackendUnavailableError(
                "transformers is not installed; install the 'hf' extra"
            ) from exc
        self._tokenizer = AutoTokenizer.from_pretrained(model_name_or_dir)
        self._model = AutoModel.from_pretrained(model_name_or_dir).to(device)
        self._device = device
        cfg = self._model.config
        self.name = str(model_name_or_dir)
        self.hidden_size = cfg.hidden_size
        self.num_heads = cfg.num_attention_heads
        self.num_layers = cfg.num_hidden_layers
        limit = getattr(self._tokenizer, "model_max_length", 512)
        self.max_length = min(limit, getattr(cfg, "max_position_embeddings", limit))
        self.cls_token = self._tokenizer.cls_token or self._tokenizer.bos_token
        self.sep_token = self._tokenizer.sep_token or self._tokenizer.eos_token
        self.unk_token = self._tokenizer.unk_token or "[UNK]"
        # wordpiece marks continuations with ##; byte-BPE marks word starts
        if any(tok.startswith("Ġ") for tok in list(self._tokenizer.get_vocab())[:200]):
            self.word_start = "Ġ"
            self.continuation = ""
        self.trainable = finetune
        self._model.requires_grad_(finetune)
        if not finetune:
            self._model.eval()

    def normalize_word(self, word: str) -> str:
        if getattr(self._tokenizer, "do_lower_case", False):
            return word.lower()
        return word

    def word_pieces(self, word: str) -> list[str]:
        pieces = self._tokenizer.tokenize(word)
        return pieces if pieces else [self.unk_token]

    def trainable_parameters(self):
        return self._model.parameters() if self.trainable else ()

    def run(self, pieces: Sequence[str]):
        ids = self._tokenizer.convert_tokens_to_ids(list(pieces))
        input_ids = torch.tensor([ids], dtype=torch.long, device=self._device)
        out = self._model(
            input_ids=input_ids,
            output_hidden_states=True,
            output_attentions=True,
        )
        states = [layer[0] for layer in out.hidden_states]
        attentions = [layer[0] for layer in out.attentions]
        return states, attentions


def average_heads(raw: torch.Tensor) -> torch.Tensor:
    """Elementwise mean over the head dimension of an (h, T, T) tensor."""
    if raw.ndim != 3 or raw.shape[0] < 1:
        raise ValueError(f"expected an (h, T, T) tensor, got shape {tuple(raw.shape)}")
    return raw.mean(dim=0)


def word_attention(avg: torch.Tensor, alignment: SubwordAlignment) -> torch.Tensor:
    """Reduce a piece-level (T, T) matrix to word level.

    Row i is read at word i's first sub-word; column j sums over word j's
    sub-word positions.  Special positions carry the residual mass and are
    excluded.
    """
    n = alignment.n
    rows = avg[list(alignment.first_subword)]
    out = avg.new_zeros((n, n))
    for j, group in enumerate(alignment.groups):
        out[:, j] = rows[:, list(group)].sum(dim=1)
    return out


def encode(
    backend: EncoderBackend,
    instance: Instance,
    alignment: SubwordAlignment | None = None,
    layers: Sequence[int] = DEFAULT_LAYERS,
) -> PlmFeatures:
    """Run the encoder once and extract word-aligned features per layer."""
    pieces, fresh_alignment = backend.align(instance.tokens, instance.aspect_tokens)
    if alignment is None:
        alignment = fresh_alignment
    elif alignment.num_pieces != len(pieces):
        raise ValueError(
            "alignment does not match the backend tokenization of this instance"
        )
    if len(pieces) > backend.max_length:
        raise TruncationError(
            f"instance {instance.content_hash()[:12]} needs {len(pieces)} encoder "
            f"positions but the backend limit is {backend.max_length}"
        )
    for layer in layers:
        if not 1 <= layer <= backend.num_layers:
            raise ConfigurationError(
                f"layer {layer} outside the encoder's 1..{backend.num_layers} range"
            )
    states, attentions = backend.run(pieces)
    first = list(alignment.first_subword)
    hidden: dict[int, torch.Tensor] = {}
    attention: dict[int, torch.Tensor] = {}
    for layer in layers:
        hidden[layer] = states[layer][first]
        raw = attentions[layer - 1]
        row_sums = raw.detach().sum(dim=-1)
        if not torch.allclose(row_sums, torch.ones_like(row_sums), atol=1e-4):
            raise ValueError(f"layer {layer} attention rows are not distributions")
        attention[layer] = word_attention(average_heads(raw), alignment)
    return PlmFeatures(
        layers=tuple(layers),
        hidden=hidden,
        attention=attention,
        hidden_size=backend.hidden_size,
        num_heads=backend.num_heads,
    )


class FeatureCache:
    """Disk cache for frozen-backend features, keyed by
    (instance hash, backend id, layer set)."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, instance: Instance, backend_name: str, layers: Sequence[int]) -> Path:
        key = f"{instance.content_hash()}|{backend_name}|{','.join(map(str, layers))}"
        return self.directory / (hashlib.sha256(key.encode()).hexdigest() + ".pt")

    def load(
        self, instance: Instance, backend_name: str, layers: Sequence[int]
    ) -> PlmFeatures | None:
        path = self._path(instance, backend_name, layers)
        if not path.exists():
            return None
        payload = torch.load(path, weights_only=True)
        return PlmFeatures(
            layers=tuple(payload["layers"]),
            hidden={int(k): v for k, v in payload["hidden"].items()},
            attention={int(k): v for k, v in payload["attention"].items()},
            hidden_size=payload["hidden_size"],
            num_heads=payload["num_heads"],
        )

    def store(
        self,
        instance: Instance,
        backend_name: str,
        layers: Sequence[int],
        features: PlmFeatures,
    ) -> None:
        path = self._path(instance, backend_name, layers)
        payload = {
            "layers": list(features.layers),
            "hidden": {str(k): v.detach().cpu() for k, v in features.hidden.items()},
            "attention": {
                str(k): v.detach().cpu() for k, v in features.attention.items()
            },
            "hidden_size": features.hidden_size,
            "num_heads": features.num_heads,
        }
        fd, tmp = tempfile.mkstemp(dir=self.directory, suffix=".tmp")
        os.close(fd)
        try:
            torch.save(payload, tmp)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
