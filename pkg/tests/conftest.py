import numpy as np
import pytest

from aspectgcn.config import RunConfig
from aspectgcn.corpus import Instance, WordVectorTable
from aspectgcn.depgraph import ROOT
from aspectgcn.plmfeat import StubEncoder

FIXTURES = __file__.rsplit("/", 1)[0] + "/fixtures"

# cue word left of the aspect decides the polarity; everything else is filler
CUES = {"positive": "glowing", "neutral": "plain", "negative": "awful"}
FILLER = (
    "the a this that quite very really rather somewhat unit gadget device "
    "thing item box review report note update entry".split()
)


@pytest.fixture(scope="session")
def stub_backend():
    return StubEncoder(hidden_size=16, num_heads=2, num_layers=4, seed=7)


@pytest.fixture(scope="session")
def small_table():
    return WordVectorTable(dim=16, entries={}, oov_policy="uniform_init", oov_seed=3)


@pytest.fixture
def small_config(tmp_path):
    return RunConfig(
        dataset="custom",
        embed_dim=16,
        encoder="stub",
        encoder_layers=(1, 3),
        stub_hidden_size=16,
        stub_heads=2,
        stub_layers=4,
        finetune_encoder=False,
        parser="chain",
        window=2,
        hidden_dim=8,
        dropout=0.0,
        lambda_l2=0.0,
        batch_size=8,
        epochs=2,
        folds=2,
        seed=11,
        cache_dir=str(tmp_path / "cache"),
        out_dir=str(tmp_path / "runs"),
    )


def make_synthetic_instances(count, seed=0, min_len=5, max_len=9):
    """Separable toy data: the token before the aspect names the polarity."""
    rng = np.random.default_rng(seed)
    labels = list(CUES)
    instances = []
    for idx in range(count):
        label = labels[idx % len(labels)]
        n = int(rng.integers(min_len, max_len + 1))
        tokens = [FILLER[int(rng.integers(len(FILLER)))] for _ in range(n)]
        aspect_pos = int(rng.integers(1, n))
        tokens[aspect_pos - 1] = CUES[label]
        tokens[aspect_pos] = "target"
        instances.append(
            Instance(
                tokens=tuple(tokens),
                aspect_start=aspect_pos,
                aspect_len=1,
                label=label,
            )
        )
    return instances


def chain_heads(n):
    return [ROOT] + list(range(n - 1))


@pytest.fixture
def synthetic_instances():
    return make_synthetic_instances(24, seed=5)
