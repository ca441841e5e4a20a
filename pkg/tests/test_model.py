"""Encoder model tests: shapes, determinism, init bounds, checkpoints, gradients."""

import math

import numpy as np
import pytest

import kdlab.autodiff as ad
from kdlab.model import (
    TASK_SEQUENCE,
    TASK_TOKEN,
    EncoderModel,
    ModelConfig,
    forward,
    init_random,
    load_checkpoint,
    param_count,
    param_shapes,
    predict,
    save_checkpoint,
)

CFG = ModelConfig(n_layers=2, n_heads=2, hidden_dim=8, ffn_dim=16, vocab_size=32,
                  max_seq_len=8, n_classes=3)


def closed_form_param_count(cfg: ModelConfig) -> int:
    d, f = cfg.hidden_dim, cfg.ffn_dim
    per_layer = 4 * (d * d + d) + (d * f + f) + (f * d + d) + 4 * d
    return (cfg.vocab_size * d + cfg.max_seq_len * d
            + cfg.n_layers * per_layer
            + d * cfg.n_classes + cfg.n_classes)


class TestConfig:
    def test_head_divisibility(self):
        with pytest.raises(ValueError):
            ModelConfig(n_layers=1, n_heads=3, hidden_dim=8, ffn_dim=16, vocab_size=4,
                        max_seq_len=4, n_classes=2)

    def test_positive_dims(self):
        with pytest.raises(ValueError):
            ModelConfig(n_layers=0, n_heads=1, hidden_dim=4, ffn_dim=8, vocab_size=4,
                        max_seq_len=4, n_classes=2)

    def test_unknown_task(self):
        with pytest.raises(ValueError):
            ModelConfig(n_layers=1, n_heads=1, hidden_dim=4, ffn_dim=8, vocab_size=4,
                        max_seq_len=4, n_classes=2, task="regression")


class TestInitRandom:
    def test_deterministic(self):
        a = init_random(CFG, seed=42)
        b = init_random(CFG, seed=42)
        for (name, pa), (_, pb) in zip(a.parameters(), b.parameters()):
            assert np.array_equal(pa.data, pb.data), name

    def test_seed_changes_params(self):
        a = init_random(CFG, seed=0)
        b = init_random(CFG, seed=1)
        assert not np.array_equal(a.param("layer.0.attn.q").data, b.param("layer.0.attn.q").data)

    def test_glorot_bounds(self):
        model = init_random(CFG, seed=3)
        for name, shape in param_shapes(CFG).items():
            if len(shape) == 2 and not name.startswith("emb."):
                limit = math.sqrt(6.0 / (shape[0] + shape[1]))
                data = model.param(name).data
                assert np.all(np.abs(data) <= limit), name

    def test_norms_and_biases(self):
        model = init_random(CFG, seed=4)
        assert np.all(model.param("layer.0.norm.gamma1").data == 1.0)
        assert np.all(model.param("layer.1.norm.beta2").data == 0.0)
        assert np.all(model.param("layer.0.attn.q_b").data == 0.0)

    def test_param_count_closed_form(self):
        assert param_count(CFG) == closed_form_param_count(CFG)
        wide = ModelConfig(n_layers=3, n_heads=4, hidden_dim=16, ffn_dim=64, vocab_size=100,
                           max_seq_len=12, n_classes=7, task=TASK_TOKEN)
        assert param_count(wide) == closed_form_param_count(wide)


class TestForward:
    def test_trace_shapes(self):
        model = init_random(CFG, seed=0)
        trace = forward(model, [1, 2, 3, 4, 5])
        assert trace.emb_out.shape == (5, 8)
        assert len(trace.attn_scores) == 2 and all(a.shape == (2, 5, 5) for a in trace.attn_scores)
        assert len(trace.hidden) == 2 and all(h.shape == (5, 8) for h in trace.hidden)
        assert trace.logits.shape == (3,)

    def test_token_task_logits(self):
        cfg = ModelConfig(**{**CFG.__dict__, "task": TASK_TOKEN})
        trace = forward(init_random(cfg, 0), [1, 2, 3, 4])
        assert trace.logits.shape == (4, 3)

    def test_positions_matter(self):
        model = init_random(CFG, seed=0)
        a = forward(model, [3, 7, 9, 11]).logits.data
        b = forward(model, [3, 9, 7, 11]).logits.data
        assert not np.allclose(a, b)

    def test_deterministic(self):
        model = init_random(CFG, seed=0)
        t1 = forward(model, [1, 2, 3])
        t2 = forward(model, [1, 2, 3])
        assert np.array_equal(t1.logits.data, t2.logits.data)
        for a, b in zip(t1.attn_scores, t2.attn_scores):
            assert np.array_equal(a.data, b.data)

    def test_attention_scores_are_pre_softmax(self):
        # Scaled scores are unnormalized: rows of exp(scores) need not sum to 1.
        model = init_random(CFG, seed=0)
        scores = forward(model, [1, 2, 3]).attn_scores[0].data
        rowsums = np.exp(scores).sum(axis=-1)
        assert not np.allclose(rowsums, 1.0)

    def test_input_validation(self):
        model = init_random(CFG, seed=0)
        with pytest.raises(ValueError):
            forward(model, [])
        with pytest.raises(ValueError):
            forward(model, [32])
        with pytest.raises(ValueError):
            forward(model, list(range(9)))

    def test_dropout_needs_rng_and_perturbs(self):
        model = init_random(CFG, seed=0)
        with pytest.raises(ValueError):
            forward(model, [1, 2], dropout=0.5)
        rng = np.random.default_rng(0)
        a = forward(model, [1, 2, 3], dropout=0.5, rng=rng).logits.data
        b = forward(model, [1, 2, 3]).logits.data
        assert not np.allclose(a, b)


class TestPredict:
    def test_argmax_and_ties(self):
        assert int(np.argmax([0.1, 0.9, 0.3])) == 1
        assert int(np.argmax([0.5, 0.5])) == 0  # ties toward the lowest index

    def test_logit_shift_invariance(self):
        model = init_random(CFG, seed=1)
        tokens = [4, 9, 2]
        before = predict(model, tokens)
        model.param("head.b").data += 7.5
        assert predict(model, tokens) == before

    def test_token_task_length(self):
        cfg = ModelConfig(**{**CFG.__dict__, "task": TASK_TOKEN})
        tags = predict(init_random(cfg, 0), [1, 2, 3, 4])
        assert isinstance(tags, list) and len(tags) == 4


def test_gradients_flow_through_full_forward():
    model = init_random(CFG, seed=2)
    tokens = [1, 5, 9]

    def loss_fn(_):
        trace = forward(model, tokens)
        return ad.cross_entropy(trace.logits, [2])

    for name in ("layer.0.attn.k", "layer.1.ffn.w2", "emb.tok", "head.w", "layer.0.norm.gamma1"):
        err = ad.grad_check(loss_fn, model.param(name))
        assert err < 1e-4, f"{name}: {err}"


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    model = init_random(CFG, seed=5)
    path = tmp_path / "model.json"
    save_checkpoint(model, path)
    loaded = load_checkpoint(path)
    assert loaded.config == model.config
    for (name, p), (_, q) in zip(model.parameters(), loaded.parameters()):
        assert np.array_equal(p.data, q.data), name
    # and the file itself is stable across saves
    save_checkpoint(loaded, tmp_path / "again.json")
    assert (tmp_path / "model.json").read_bytes() == (tmp_path / "again.json").read_bytes()


def test_model_validates_param_set():
    params = {name: None for name in param_shapes(CFG)}
    params.pop("head.b")
    with pytest.raises(ValueError):
        EncoderModel(CFG, params)
