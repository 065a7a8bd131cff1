"""Trainable classification head.

Pipeline per instance: a BiLSTM contextualizes static word embeddings; each
GCN layer consumes a fusion of the matching encoder layer's projected word
states with the previous stage's output; aggregation is a degree-normalized
mean over the edited dependency neighborhood, optionally offset-aware via a
learned relative-position table; the aspect rows of the last layer are
mean-pooled and classified with a softmax.
"""

from __future__ import annotations

import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .graphsup import SupplementedGraph, position_index_matrix
from .plmfeat import PlmFeatures

CHECKPOINT_FORMAT = "aspectgcn-checkpoint/1"


@dataclass
class ForwardTrace:
    """Intermediate activations of one forward pass."""

    H: torch.Tensor              # (n, 2*hidden_dim) BiLSTM states
    R: list[torch.Tensor]        # per layer, (n, 2*hidden_dim) fused inputs
    O: list[torch.Tensor]        # per layer, (n, 2*hidden_dim) GCN outputs
    h_a: torch.Tensor            # pooled aspect vector
    logits: torch.Tensor         # (num_classes,)
    p: torch.Tensor              # (num_classes,) probability distribution


class AspectGcn(nn.Module):
    """GCN head over transformer features for aspect polarity.

    The number of GCN layers equals the number of selected encoder layers;
    the position table width equals the node width 2*hidden_dim because
    position rows are added directly onto node states.
    """

    def __init__(
        self,
        *,
        embed_dim: int,
        hidden_dim: int,
        encoder_dim: int,
        num_layers: int,
        window: int,
        num_classes: int = 3,
        dropout: float = 0.8,
        use_position: bool = True,
        use_attention_graph: bool = True,
        seed: int = 0,
        dtype: torch.dtype = torch.float32,
    ):
        super().__init__()
        if num_layers < 1:
            raise ValueError("need at least one GCN layer")
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.encoder_dim = encoder_dim
        self.num_layers = num_layers
        self.window = window
        self.num_classes = num_classes
        self.use_position = use_position
        self.use_attention_graph = use_attention_graph
        out_dim = 2 * hidden_dim

        self.bilstm = nn.LSTM(embed_dim, hidden_dim, bidirectional=True)
        self.fusion = nn.ParameterList(
            nn.Parameter(torch.empty(encoder_dim, out_dim)) for _ in range(num_layers)
        )
        self.gcn_weight = nn.ParameterList(
            nn.Parameter(torch.empty(out_dim, out_dim)) for _ in range(num_layers)
        )
        self.gcn_bias = nn.ParameterList(
            nn.Parameter(torch.empty(out_dim)) for _ in range(num_layers)
        )
        self.position = nn.Parameter(torch.empty(2 * window + 1, out_dim))
        self.classifier_weight = nn.Parameter(torch.empty(out_dim, num_classes))
        self.classifier_bias = nn.Parameter(torch.empty(num_classes))
        self.feature_dropout = nn.Dropout(dropout)
        self.reset_parameters(seed)
        self.to(dtype)

    @property
    def dtype(self) -> torch.dtype:
        return self.classifier_weight.dtype

    @property
    def device(self) -> torch.device:
        return self.classifier_weight.device

    def _pull(self, t: torch.Tensor) -> torch.Tensor:
        return t.to(device=self.device, dtype=self.dtype)

    def reset_parameters(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(seed)

        def xavier_(t: torch.Tensor) -> None:
            fan_in, fan_out = t.shape[0], t.shape[1]
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            with torch.no_grad():
                t.uniform_(-bound, bound, generator=gen)

        for w in self.fusion:
            xavier_(w)
        for w in self.gcn_weight:
            xavier_(w)
        for b in self.gcn_bias:
            with torch.no_grad():
                b.zero_()
        xavier_(self.classifier_weight)
        with torch.no_grad():
            self.classifier_bias.zero_()
            bound = 0.25 / math.sqrt(self.position.shape[1])
            self.position.uniform_(-bound, bound, generator=gen)
            stdv = 1.0 / math.sqrt(self.hidden_dim)
            for param in self.bilstm.parameters():
                param.uniform_(-stdv, stdv, generator=gen)

    def bilstm_encode(self, x: torch.Tensor) -> torch.Tensor:
        """(n, embed_dim) -> (n, 2*hidden_dim); forward and backward states
        concatenated per time step."""
        out, _ = self.bilstm(self._pull(x))
        return out

    def fuse(self, layer: int, g: torch.Tensor, prev: torch.Tensor) -> torch.Tensor:
        """relu(projected encoder states) + previous stage, elementwise."""
        w = self.fusion[layer]
        if g.shape[-1] != w.shape[0]:
            raise ValueError(
                f"encoder features have width {g.shape[-1]}, projection expects {w.shape[0]}"
            )
        if prev.shape != (g.shape[0], w.shape[1]):
            raise ValueError(
                f"carry-over has shape {tuple(prev.shape)}, expected {(g.shape[0], w.shape[1])}"
            )
        return torch.relu(self._pull(g) @ w) + prev

    def gcn_layer(self, layer: int, r: torch.Tensor, adjacency: torch.Tensor) -> torch.Tensor:
        """Degree-normalized neighborhood mean with optional position rows.

        adjacency must be binary with a unit diagonal, so every row degree
        is at least one.
        """
        w = self.gcn_weight[layer]
        b = self.gcn_bias[layer]
        adjacency = self._pull(adjacency)
        degree = adjacency.sum(dim=1, keepdim=True)
        agg = adjacency @ (r @ w.T)
        if self.use_position:
            n = r.shape[0]
            idx = torch.from_numpy(position_index_matrix(n, self.window)).to(self.device)
            pw = self.position @ w.T                     # (2w+1, out_dim)
            agg = agg + torch.einsum("ij,ijd->id", adjacency, pw[idx])
        return torch.relu(agg / degree + b)

    def aspect_pool(self, o_last: torch.Tensor, aspect_start: int, aspect_len: int) -> torch.Tensor:
        if aspect_len < 1 or aspect_start < 0 or aspect_start + aspect_len > o_last.shape[0]:
            raise IndexError(
                f"aspect span [{aspect_start}, {aspect_start + aspect_len}) out of "
                f"range for {o_last.shape[0]} rows"
            )
        return o_last[aspect_start : aspect_start + aspect_len].mean(dim=0)

    def classify(self, h_a: torch.Tensor) -> torch.Tensor:
        logits = h_a @ self.classifier_weight + self.classifier_bias
        return torch.softmax(logits, dim=-1)

    def forward(
        self,
        x: torch.Tensor,
        features: PlmFeatures,
        graphs: SupplementedGraph,
        aspect_start: int,
        aspect_len: int,
    ) -> ForwardTrace:
        if len(features.layers) != self.num_layers:
            raise ValueError(
                f"{len(features.layers)} encoder layers for {self.num_layers} GCN layers"
            )
        h = self.bilstm_encode(x)
        prev = h
        fused: list[torch.Tensor] = []
        outputs: list[torch.Tensor] = []
        for layer, enc_layer in enumerate(features.layers):
            g = self.feature_dropout(self._pull(features.hidden[enc_layer]))
            r = self.fuse(layer, g, prev)
            adjacency = (
                graphs.per_layer[layer] if self.use_attention_graph else graphs.original
            )
            o = self.gcn_layer(layer, r, torch.as_tensor(np.asarray(adjacency)))
            o = self.feature_dropout(o)
            fused.append(r)
            outputs.append(o)
            prev = o
        h_a = self.aspect_pool(outputs[-1], aspect_start, aspect_len)
        logits = h_a @ self.classifier_weight + self.classifier_bias
        return ForwardTrace(
            H=h, R=fused, O=outputs, h_a=h_a, logits=logits,
            p=torch.softmax(logits, dim=-1),
        )

    def hyper(self) -> dict:
        return {
            "embed_dim": self.embed_dim,
            "hidden_dim": self.hidden_dim,
            "encoder_dim": self.encoder_dim,
            "num_layers": self.num_layers,
            "window": self.window,
            "num_classes": self.num_classes,
            "dropout": self.feature_dropout.p,
            "use_position": self.use_position,
            "use_attention_graph": self.use_attention_graph,
        }


def parameter_l2(parameters: Iterable[torch.Tensor]) -> torch.Tensor:
    """Global 2-norm over all parameters, treated as one flat vector."""
    total = None
    for p in parameters:
        sq = p.square().sum()
        total = sq if total is None else total + sq
    if total is None:
        raise ValueError("no parameters given")
    return torch.sqrt(total)


def classification_loss(
    logits: torch.Tensor,
    labels: torch.Tensor,
    parameters: Iterable[torch.Tensor] = (),
    l2_coeff: float = 0.0,
) -> torch.Tensor:
    """Summed negative log-likelihood plus a weighted parameter 2-norm.

    Log-probabilities come from a log-sum-exp over logits, so a vanishing
    probability at the true label never hits log(0).
    """
    if logits.ndim == 1:
        logits = logits.unsqueeze(0)
        labels = labels.reshape(1)
    loss = F.cross_entropy(logits, labels, reduction="sum")
    if l2_coeff:
        loss = loss + l2_coeff * parameter_l2(parameters)
    return loss


def save_checkpoint(
    path: str | Path,
    model: AspectGcn,
    *,
    encoder_layers: Sequence[int],
    config: dict | None = None,
    config_hash: str | None = None,
    extra: dict | None = None,
) -> None:
    """Self-describing checkpoint; round-trips bit-exactly."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "state_dict": {k: v.detach().cpu() for k, v in model.state_dict().items()},
        "hyper": model.hyper(),
        "encoder_layers": list(encoder_layers),
        "config": config,
        "config_hash": config_hash,
        "extra": extra or {},
    }
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    os.close(fd)
    try:
        torch.save(payload, tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str | Path, dtype: torch.dtype = torch.float32):
    """Rebuild the model from a checkpoint; returns (model, payload)."""
    payload = torch.load(path, weights_only=True)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a recognized checkpoint")
    hyper = payload["hyper"]
    model = AspectGcn(dtype=dtype, **hyper)
    state = payload["state_dict"]
    model.load_state_dict({k: v.to(dtype) for k, v in state.items()})
    model.eval()
    return model, payload
