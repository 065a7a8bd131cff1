"""Shared independent oracles and a small pipeline builder for tests.

Oracles re-compute every operation with explicit per-element loops and
never call the implementation they check.
"""

from types import SimpleNamespace

import numpy as np
import torch

from aspectgcn.corpus import Instance, WordVectorTable, embed
from aspectgcn.depgraph import ROOT, to_adjacency
from aspectgcn.graphsup import build_supplemented
from aspectgcn.model import AspectGcn
from aspectgcn.plmfeat import StubEncoder, encode

WORDS = (
    "alpha bravo charlie delta echo foxtrot golf hotel india juliet kilo "
    "lima mike november oscar papa quebec romeo sierra tango".split()
)


def fuse_oracle(g, w, prev):
    g = np.asarray(g, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    prev = np.asarray(prev, dtype=np.float64)
    n, out_dim = prev.shape
    out = np.zeros_like(prev)
    for i in range(n):
        for d in range(out_dim):
            acc = 0.0
            for e in range(g.shape[1]):
                acc += g[i, e] * w[e, d]
            out[i, d] = max(0.0, acc) + prev[i, d]
    return out


def gcn_oracle(r, adjacency, w, b, position=None, window=0):
    """Per-node loop over neighbors, optional position rows added first."""
    r = np.asarray(r, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    adjacency = np.asarray(adjacency)
    n, out_dim = r.shape
    out = np.zeros((n, out_dim))
    for i in range(n):
        degree = int(adjacency[i].sum())
        acc = np.zeros(out_dim)
        for j in range(n):
            if adjacency[i, j]:
                rj = r[j].copy()
                if position is not None:
                    offset = max(-window, min(window, j - i)) + window
                    rj = rj + np.asarray(position, dtype=np.float64)[offset]
                acc += w @ rj
        out[i] = np.maximum(0.0, acc / degree + b)
    return out


def pool_oracle(rows):
    rows = np.asarray(rows, dtype=np.float64)
    acc = np.zeros(rows.shape[1])
    for row in rows:
        acc += row
    return acc / rows.shape[0]


def softmax_oracle(logits):
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max()
    exp = np.exp(shifted)
    return exp / exp.sum()


def classify_oracle(h_a, w, b):
    h_a = np.asarray(h_a, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    logits = np.zeros(w.shape[1])
    for c in range(w.shape[1]):
        for d in range(w.shape[0]):
            logits[c] += h_a[d] * w[d, c]
        logits[c] += b[c]
    return softmax_oracle(logits)


def loss_oracle(logits, labels, params=(), l2_coeff=0.0):
    logits = np.asarray(logits, dtype=np.float64)
    total = 0.0
    for row, y in zip(logits, labels):
        total += -np.log(softmax_oracle(row)[y])
    if l2_coeff:
        sq = 0.0
        for p in params:
            sq += float(np.square(np.asarray(p, dtype=np.float64)).sum())
        total += l2_coeff * np.sqrt(sq)
    return total


def fd_gradients(loss_fn, parameters, eps=1e-5):
    """Central finite differences of a scalar closure w.r.t. each tensor."""
    grads = []
    with torch.no_grad():
        for p in parameters:
            grad = torch.zeros_like(p)
            flat = p.view(-1)
            gflat = grad.view(-1)
            for idx in range(flat.numel()):
                orig = flat[idx].item()
                flat[idx] = orig + eps
                plus = float(loss_fn())
                flat[idx] = orig - eps
                minus = float(loss_fn())
                flat[idx] = orig
                gflat[idx] = (plus - minus) / (2.0 * eps)
            grads.append(grad)
    return grads


def max_relative_error(analytic, numeric, atol=1e-8):
    worst = 0.0
    for a, f in zip(analytic, numeric):
        denom = torch.maximum(a.abs(), f.abs()) + atol
        worst = max(worst, float(((a - f).abs() / denom).max()))
    return worst


def random_tree_heads(n, seed):
    rng = np.random.default_rng(seed)
    return [ROOT] + [int(rng.integers(0, i)) for i in range(1, n)]


def build_setup(
    n=6,
    embed_dim=8,
    hidden_dim=6,
    layers=(1, 2),
    window=2,
    seed=0,
    aspect_start=2,
    aspect_len=2,
    label="positive",
    use_position=True,
    use_attention_graph=True,
    dropout=0.0,
    alpha=0.25,
    beta=0.01,
    dtype=torch.float64,
    backend=None,
):
    """A full single-instance forward setup over the stub encoder."""
    rng = np.random.default_rng(seed)
    tokens = tuple(WORDS[int(rng.integers(len(WORDS)))] for _ in range(n))
    instance = Instance(
        tokens=tokens, aspect_start=aspect_start, aspect_len=aspect_len, label=label
    )
    backend = backend or StubEncoder(
        hidden_size=12, num_heads=2, num_layers=max(layers), seed=seed + 1
    )
    table = WordVectorTable(dim=embed_dim, entries={}, oov_policy="uniform_init",
                            oov_seed=seed)
    x = torch.from_numpy(embed(instance.tokens, table))
    dep = to_adjacency(random_tree_heads(n, seed + 2), n)
    _, alignment = backend.align(instance.tokens, instance.aspect_tokens)
    features = encode(backend, instance, alignment, layers)
    attention = [features.attention[l].numpy() for l in layers]
    graphs = build_supplemented(dep, attention, alpha, beta)
    model = AspectGcn(
        embed_dim=embed_dim,
        hidden_dim=hidden_dim,
        encoder_dim=backend.hidden_size,
        num_layers=len(layers),
        window=window,
        dropout=dropout,
        use_position=use_position,
        use_attention_graph=use_attention_graph,
        seed=seed + 3,
        dtype=dtype,
    )
    model.eval()
    return SimpleNamespace(
        instance=instance, backend=backend, table=table, x=x, dep=dep,
        alignment=alignment, features=features, graphs=graphs, model=model,
        layers=tuple(layers),
    )


def forward_loss(setup, l2_coeff=0.0):
    """Scalar loss closure for gradient checks."""
    from aspectgcn.model import classification_loss

    trace = setup.model(
        setup.x, setup.features, setup.graphs,
        setup.instance.aspect_start, setup.instance.aspect_len,
    )
    label = torch.tensor(setup.instance.label_index)
    return classification_loss(
        trace.logits, label, list(setup.model.parameters()), l2_coeff
    )
