import numpy as np
import pytest

from qecontrast.corpus import SynthConfig, Vocabulary, assemble_sequence, generate_synthetic
from qecontrast.encoder import (
    EncoderConfig,
    MarkerReps,
    attention_rows,
    encode,
    encode_backward,
    init_params,
)
from qecontrast.errors import ConfigError, ContractError

from conftest import fd_check, random_coords


class TestInitParams:
    def test_deterministic(self):
        cfg = EncoderConfig(hidden_dim=16, layers=2, seed=9)
        a, b = init_params(cfg, 50), init_params(cfg, 50)
        for k in a.to_flat():
            assert np.array_equal(a.to_flat()[k], b.to_flat()[k])

    def test_mean_within_three_sigma(self):
        # oracle: direct sample statistics of the Gaussian init
        d = 64
        p = init_params(EncoderConfig(hidden_dim=d, layers=1, seed=4), 100)
        for name, arr in p.to_flat().items():
            sigma = (1.0 / np.sqrt(d)) / np.sqrt(arr.size)
            assert abs(arr.mean()) < 3 * sigma, name

    def test_odd_dim_rejected(self):
        with pytest.raises(ConfigError):
            EncoderConfig(hidden_dim=9)

    def test_tiny_dim_rejected(self):
        with pytest.raises(ConfigError):
            EncoderConfig(hidden_dim=2)


class TestEncode:
    def test_zero_layers_is_embedding_plus_positional(self, small_dataset):
        vocab = Vocabulary.from_instances(small_dataset)
        seq = assemble_sequence(small_dataset[0], vocab)
        p = init_params(EncoderConfig(hidden_dim=8, layers=0, max_len=64, seed=0), len(vocab))
        reps = encode(seq, p)
        rows = p.embed[np.asarray(seq.tokens)] + p.pos[: len(seq.tokens)]
        assert np.allclose(reps.q, rows[seq.question_marker_pos])
        assert np.allclose(reps.s, rows[seq.sentence_marker_pos])

    def test_deterministic(self, encoded_instance):
        _, seq, p, reps = encoded_instance
        again = encode(seq, p)
        assert np.array_equal(reps.q, again.q) and np.array_equal(reps.s, again.s)

    def test_contextual_wrt_distractor_tokens(self, encoded_instance):
        # permuting non-marker tokens must change the marker representations
        _, seq, p, reps = encoded_instance
        markers = {seq.question_marker_pos, *seq.sentence_marker_pos}
        others = [i for i in range(len(seq.tokens)) if i not in markers]
        tokens = list(seq.tokens)
        tokens[others[1]], tokens[others[-1]] = tokens[others[-1]], tokens[others[1]]
        assert tokens != seq.tokens, "pick a sequence with distinct distractors"
        from dataclasses import replace

        permuted = replace(seq, tokens=tokens)
        again = encode(permuted, p)
        assert not np.allclose(reps.s, again.s)

    def test_outputs_finite_random_sequences(self):
        ds = generate_synthetic(SynthConfig(1000, 5, 2, 400, 3, 0.5, seed=13))
        vocab = Vocabulary.from_instances(ds)
        p = init_params(EncoderConfig(hidden_dim=32, layers=2, max_len=128, seed=1), len(vocab))
        for inst in ds:
            reps = encode(assemble_sequence(inst, vocab), p)
            assert np.all(np.isfinite(reps.q)) and np.all(np.isfinite(reps.s))

    def test_too_long_rejected(self, small_dataset):
        vocab = Vocabulary.from_instances(small_dataset)
        seq = assemble_sequence(small_dataset[0], vocab)
        p = init_params(EncoderConfig(hidden_dim=8, layers=1, max_len=4, seed=0), len(vocab))
        with pytest.raises(ContractError):
            encode(seq, p)

    def test_attention_rows_normalized(self, encoded_instance):
        _, seq, p, _ = encoded_instance
        for attn in attention_rows(seq, p):
            assert np.all(attn >= 0)
            assert np.allclose(attn.sum(axis=-1), 1.0, atol=1e-12)


class TestEncodeBackward:
    def test_zero_cotangent(self, encoded_instance):
        _, seq, p, reps = encoded_instance
        grads = encode_backward(seq, p, MarkerReps(np.zeros_like(reps.q), np.zeros_like(reps.s)))
        assert all(np.all(g == 0) for g in grads.values())

    def test_unused_embedding_rows_zero_grad(self, encoded_instance):
        _, seq, p, reps = encoded_instance
        grads = encode_backward(seq, p, MarkerReps(np.ones_like(reps.q), np.ones_like(reps.s)))
        used = set(seq.tokens)
        unused = [i for i in range(p.embed.shape[0]) if i not in used]
        assert np.all(grads["enc.embed"][unused] == 0)

    @pytest.mark.parametrize("layers", [0, 1, 2])
    def test_finite_differences_sum_loss(self, layers, small_dataset):
        # oracle: central finite differences, step 1e-5, on sum of marker outputs
        vocab = Vocabulary.from_instances(small_dataset)
        seq = assemble_sequence(small_dataset[1], vocab)
        p = init_params(EncoderConfig(hidden_dim=8, layers=layers, max_len=64, seed=layers), len(vocab))
        up = MarkerReps(np.ones(8), np.ones((len(seq.sentence_marker_pos), 8)))
        grads = encode_backward(seq, p, up)

        def scalar():
            r = encode(seq, p)
            return r.q.sum() + r.s.sum()

        rng = np.random.default_rng(layers)
        for name, arr in p.to_flat().items():
            if name == "enc.embed":
                coords = [(tid, int(rng.integers(8))) for tid in list(set(seq.tokens))[:4]]
            else:
                coords = random_coords(rng, arr.shape, 6)
            assert fd_check(scalar, arr, grads[name], coords) < 1e-6, name

    def test_shape_mismatch_rejected(self, encoded_instance):
        _, seq, p, reps = encoded_instance
        bad = MarkerReps(np.zeros(4), np.zeros((1, 4)))
        with pytest.raises(ContractError):
            encode_backward(seq, p, bad)


def test_marker_attention_bias_flag_changes_output(small_dataset):
    vocab = Vocabulary.from_instances(small_dataset)
    seq = assemble_sequence(small_dataset[0], vocab)
    base = EncoderConfig(hidden_dim=8, layers=1, max_len=64, seed=5)
    biased = EncoderConfig(hidden_dim=8, layers=1, max_len=64, seed=5, marker_attention_bias=True)
    r0 = encode(seq, init_params(base, len(vocab)))
    r1 = encode(seq, init_params(biased, len(vocab)))
    assert not np.allclose(r0.s, r1.s)
