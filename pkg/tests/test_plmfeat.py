import torch
import pytest

from aspectgcn.corpus import Instance
from aspectgcn.errors import ConfigurationError, TruncationError
from aspectgcn.plmfeat import (
    FeatureCache,
    StubEncoder,
    average_heads,
    encode,
    word_attention,
)


def make_instance(tokens, aspect_start=0, aspect_len=1, label="neutral"):
    return Instance(
        tokens=tuple(tokens), aspect_start=aspect_start, aspect_len=aspect_len,
        label=label,
    )


class TestAverageHeads:
    def test_single_head_identity(self):
        raw = torch.rand(1, 5, 5)
        torch.testing.assert_close(average_heads(raw), raw[0])

    def test_two_heads_mean(self):
        raw = torch.zeros(2, 1, 1)
        raw[0, 0, 0] = 0.2
        raw[1, 0, 0] = 0.4
        assert average_heads(raw)[0, 0].item() == pytest.approx(0.3)

    def test_matches_summation_oracle(self):
        torch.manual_seed(0)
        raw = torch.rand(7, 9, 9, dtype=torch.float64)
        got = average_heads(raw)
        expected = torch.zeros(9, 9, dtype=torch.float64)
        for h in range(7):
            expected += raw[h]
        expected /= 7
        assert torch.allclose(got, expected, atol=1e-7)

    def test_rejects_bad_rank(self):
        with pytest.raises(ValueError):
            average_heads(torch.rand(4, 4))


class TestWordAttention:
    def test_single_piece_words_submatrix(self, stub_backend):
        words = ["the", "cat", "sat"]
        _, alignment = stub_backend.align(words, ["cat"])
        avg = torch.rand(alignment.num_pieces, alignment.num_pieces)
        out = word_attention(avg, alignment)
        torch.testing.assert_close(out, avg[1:4, 1:4])

    def test_split_word_mass_summed(self, stub_backend):
        words = ["ok", "unreasonable"]  # second word splits into 3 pieces
        _, alignment = stub_backend.align(words, ["ok"])
        assert alignment.groups[1] == (2, 3, 4)
        avg = torch.zeros(alignment.num_pieces, alignment.num_pieces)
        avg[1, 2] = 0.1
        avg[1, 3] = 0.05
        out = word_attention(avg, alignment)
        assert out[0, 1].item() == pytest.approx(0.15)

    def test_row_mass_bounded_by_one(self, stub_backend):
        words = ["many", "reasonable", "words", "extraordinarily", "long"]
        _, alignment = stub_backend.align(words, ["words"])
        torch.manual_seed(1)
        avg = torch.softmax(torch.randn(alignment.num_pieces, alignment.num_pieces), dim=-1)
        out = word_attention(avg, alignment)
        assert out.min().item() >= 0.0
        assert out.max().item() <= 1.0
        assert out.sum(dim=1).max().item() <= 1.0 + 1e-6


class TestEncode:
    def test_shapes(self, stub_backend):
        inst = make_instance(["a", "b", "c", "d", "e", "f", "g"], 1, 2)
        feats = encode(stub_backend, inst, layers=(1, 2, 3, 4))
        assert feats.layers == (1, 2, 3, 4)
        for l in feats.layers:
            assert feats.hidden[l].shape == (7, stub_backend.hidden_size)
            assert feats.attention[l].shape == (7, 7)

    def test_first_subword_state_bit_exact(self, stub_backend):
        inst = make_instance(["short", "unreasonable"], 0, 1)
        pieces, alignment = stub_backend.align(inst.tokens, inst.aspect_tokens)
        states, _ = stub_backend.run(pieces)
        feats = encode(stub_backend, inst, alignment, layers=(2,))
        first = alignment.first_subword[1]
        assert torch.equal(feats.hidden[2][1], states[2][first])

    def test_deterministic(self, stub_backend):
        inst = make_instance(["the", "same", "sentence", "twice"], 1, 1)
        a = encode(stub_backend, inst, layers=(1, 4))
        b = encode(stub_backend, inst, layers=(1, 4))
        for l in (1, 4):
            assert torch.equal(a.hidden[l], b.hidden[l])
            assert torch.equal(a.attention[l], b.attention[l])

    def test_truncation_error(self):
        backend = StubEncoder(hidden_size=8, num_heads=1, num_layers=2, max_length=6)
        inst = make_instance(["one", "two", "three", "four", "five"], 0, 1)
        with pytest.raises(TruncationError):
            encode(backend, inst, layers=(1,))

    def test_layer_out_of_range(self, stub_backend):
        inst = make_instance(["hi"], 0, 1)
        with pytest.raises(ConfigurationError):
            encode(stub_backend, inst, layers=(99,))

    def test_backend_swap_keeps_contracts(self):
        # a different-width, different-head backend changes only the sizes
        inst = make_instance(["swap", "the", "backend"], 0, 1)
        for backend in (
            StubEncoder(hidden_size=8, num_heads=1, num_layers=3, seed=1),
            StubEncoder(hidden_size=24, num_heads=3, num_layers=3, seed=2),
        ):
            feats = encode(backend, inst, layers=(1, 3))
            assert feats.hidden_size == backend.hidden_size
            assert feats.num_heads == backend.num_heads
            for l in feats.layers:
                assert feats.hidden[l].shape == (3, backend.hidden_size)
                assert feats.attention[l].shape == (3, 3)
                row_mass = feats.attention[l].sum(dim=1)
                assert row_mass.max().item() <= 1.0 + 1e-6


class TestStubEncoder:
    def test_attention_rows_are_distributions(self, stub_backend):
        pieces = stub_backend.template_pieces(["a", "b", "c"], ["a"])
        _, atts = stub_backend.run(pieces)
        for att in atts:
            sums = att.sum(dim=-1)
            torch.testing.assert_close(sums, torch.ones_like(sums))

    def test_same_seed_same_outputs(self):
        a = StubEncoder(hidden_size=8, num_heads=2, num_layers=2, seed=5)
        b = StubEncoder(hidden_size=8, num_heads=2, num_layers=2, seed=5)
        pieces = a.template_pieces(["deterministic", "output"], ["output"])
        sa, aa = a.run(pieces)
        sb, ab = b.run(pieces)
        assert torch.equal(sa[-1], sb[-1])
        assert torch.equal(aa[-1], ab[-1])

    def test_long_word_splits(self, stub_backend):
        pieces = stub_backend.word_pieces("unreasonable")
        assert pieces == ["unre", "##ason", "##able"]


class TestFeatureCache:
    def test_store_and_load(self, tmp_path, stub_backend):
        cache = FeatureCache(tmp_path / "features")
        inst = make_instance(["cache", "me"], 0, 1)
        feats = encode(stub_backend, inst, layers=(1, 2))
        assert cache.load(inst, stub_backend.name, (1, 2)) is None
        cache.store(inst, stub_backend.name, (1, 2), feats)
        loaded = cache.load(inst, stub_backend.name, (1, 2))
        assert loaded is not None
        for l in (1, 2):
            assert torch.equal(loaded.hidden[l], feats.hidden[l])
            assert torch.equal(loaded.attention[l], feats.attention[l])
        # a different layer set is a different key
        assert cache.load(inst, stub_backend.name, (1, 3)) is None
