#!/usr/bin/env python3
"""
Tests for the numpy video transformer: geometry, forward pass and exact gradients.
"""

import math

import numpy as np
import pytest

from config.config import ModelConfig
from core.exceptions import CheckpointError, ConfigurationError
from core.vivit import (
    VideoTransformer, attention, backward, encoder_layer_forward, extract_tubelets, forward, forward_with_cache,
    init_parameters, load_checkpoint, mha_forward, param_shapes, predict_proba, save_checkpoint, softmax, tokenize,
)

# Small enough for a full finite-difference sweep
TINY = ModelConfig(frames=4, height=4, width=4, tubelet_t=2, patch_p=2,
                   hidden_dim=8, layers=2, heads=2, ffn_dim=12)
FD_STEP = 1e-6
FD_REL_TOL = 1e-4


def _tiny_params(seed: int = 0):
    # Larger weights than the default init so every gradient is well above rounding noise
    return init_parameters(TINY, seed=seed, dtype="float64", std=0.4)


def _tiny_input(batch: int = 2, seed: int = 1) -> np.ndarray:
    return np.random.default_rng(seed).uniform(-1.0, 1.0, size=(batch, 4, 4, 4, 3))


def test_token_count_formula():
    assert ModelConfig.desk().token_count == 64
    assert ModelConfig.base().token_count == 16 * 14 * 14
    rng = np.random.default_rng(0)
    for _ in range(100):
        t, p = int(rng.integers(1, 4)), int(rng.integers(1, 5))
        cfg = ModelConfig(frames=t * int(rng.integers(1, 5)), height=p * int(rng.integers(1, 5)),
                          width=p * int(rng.integers(1, 5)), tubelet_t=t, patch_p=p, hidden_dim=8, heads=2)
        assert cfg.token_count == (cfg.frames // t) * (cfg.height // p) * (cfg.width // p)
        assert extract_tubelets(np.zeros((1, cfg.frames, cfg.height, cfg.width, 3)), cfg).shape == \
            (1, cfg.token_count, t * p * p * 3)


def test_invalid_geometry_is_rejected():
    with pytest.raises(ConfigurationError):
        ModelConfig(frames=7, tubelet_t=2).validate()
    with pytest.raises(ConfigurationError):
        ModelConfig(hidden_dim=10, heads=4).validate()
    with pytest.raises(ConfigurationError):
        extract_tubelets(np.zeros((1, 4, 4, 4, 3)), ModelConfig.desk())


def test_tubelet_order():
    x = np.arange(4 * 4 * 4 * 3, dtype=float).reshape(1, 4, 4, 4, 3)
    tokens = extract_tubelets(x, TINY)
    assert tokens.shape == (1, 8, 24)
    assert np.array_equal(tokens[0, 0], x[0, 0:2, 0:2, 0:2].reshape(-1))
    # token 1 is the next column of patches, token 2 the next row, token 4 the next time slice
    assert np.array_equal(tokens[0, 1], x[0, 0:2, 0:2, 2:4].reshape(-1))
    assert np.array_equal(tokens[0, 2], x[0, 0:2, 2:4, 0:2].reshape(-1))
    assert np.array_equal(tokens[0, 4], x[0, 2:4, 0:2, 0:2].reshape(-1))


def test_init_parameters():
    params = init_parameters(ModelConfig.desk(), seed=3)
    shapes = param_shapes(ModelConfig.desk())
    assert list(params) == list(shapes)
    assert params["pos_embedding"].shape == (65, 64)
    assert params["layer0.ffn.w1"].shape == (256, 64)
    assert np.all(params["layer1.ln2.gamma"] == 1.0)
    assert not params["cls_token"].any() and not params["head.bias"].any()
    assert np.abs(params["patch_embedding"]).max() <= 2 * 0.02 + 1e-7
    again = init_parameters(ModelConfig.desk(), seed=3)
    assert all(np.array_equal(params[n], again[n]) for n in params)


def test_attention_matches_definition():
    rng = np.random.default_rng(0)
    q, k, v = (rng.normal(size=(3, 4)) for _ in range(3))
    expected = np.zeros((3, 4))
    for i in range(3):
        weights = np.array([math.exp(q[i] @ k[j] / 2.0) for j in range(3)])
        weights /= weights.sum()
        expected[i] = weights @ v
    assert np.allclose(attention(q, k, v, 4), expected)
    assert np.allclose(softmax(np.array([[1000.0, 1000.0]])), 0.5)


def _reference_forward(x: np.ndarray, params, cfg: ModelConfig) -> np.ndarray:
    """Straight-line single-clip forward pass written with explicit loops."""
    def layer_norm(v, gamma, beta):
        mu = v.mean()
        var = ((v - mu) ** 2).mean()
        return (v - mu) / math.sqrt(var + 1e-6) * gamma + beta

    def gelu(v):
        return 0.5 * v * (1.0 + np.tanh(math.sqrt(2.0 / math.pi) * (v + 0.044715 * v ** 3)))

    t, p = cfg.tubelet_t, cfg.patch_p
    tokens = [params["cls_token"]]
    for ti in range(0, cfg.frames, t):
        for yi in range(0, cfg.height, p):
            for xi in range(0, cfg.width, p):
                tubelet = x[ti:ti + t, yi:yi + p, xi:xi + p].reshape(-1)
                tokens.append(params["patch_embedding"] @ tubelet)
    z = np.array(tokens) + params["pos_embedding"]

    dh = cfg.hidden_dim // cfg.heads
    for layer in range(cfg.layers):
        pre = f"layer{layer}"
        h = np.array([layer_norm(row, params[f"{pre}.ln1.gamma"], params[f"{pre}.ln1.beta"]) for row in z])
        q, k, v = (h @ params[f"{pre}.attn.{w}"].T for w in ("wq", "wk", "wv"))
        context = np.zeros_like(z)
        for head in range(cfg.heads):
            cols = slice(head * dh, (head + 1) * dh)
            context[:, cols] = attention(q[:, cols], k[:, cols], v[:, cols], dh)
        z = z + context @ params[f"{pre}.attn.wo"].T
        out = []
        for row in z:
            h2 = layer_norm(row, params[f"{pre}.ln2.gamma"], params[f"{pre}.ln2.beta"])
            hidden = gelu(params[f"{pre}.ffn.w1"] @ h2 + params[f"{pre}.ffn.b1"])
            out.append(row + params[f"{pre}.ffn.w2"] @ hidden + params[f"{pre}.ffn.b2"])
        z = np.array(out)
    cls = layer_norm(z[0], params["final_ln.gamma"], params["final_ln.beta"])
    return params["head.weight"] @ cls + params["head.bias"]


def test_forward_matches_reference():
    params = _tiny_params()
    x = _tiny_input(batch=3)
    logits, probs = forward(x, params, TINY)
    assert logits.shape == (3, 2)
    assert np.allclose(probs.sum(axis=1), 1.0)
    for i in range(3):
        assert np.allclose(logits[i], _reference_forward(x[i], params, TINY), atol=1e-10)

    single_logits, single_probs = forward(x[0], params, TINY)
    assert single_logits.shape == (2,)
    assert np.allclose(single_logits, logits[0])
    assert np.allclose(predict_proba(params, x, TINY, batch_size=2), probs[:, 1])


def test_batch_items_are_independent():
    params = _tiny_params()
    x = _tiny_input(batch=2)
    together, _ = forward(x, params, TINY)
    alone, _ = forward(x[1:], params, TINY)
    assert np.allclose(together[1], alone[0])


def test_gradients_match_finite_differences():
    params = _tiny_params(seed=5)
    x = _tiny_input(batch=2, seed=6)
    upstream = np.random.default_rng(7).normal(size=(2, 2))

    def loss(p):
        logits, _ = forward(x, p, TINY)
        return float(np.sum(logits * upstream))

    _, _, cache = forward_with_cache(x, params, TINY)
    grads = backward(upstream, cache, params, TINY)
    assert list(grads) == list(params)

    rng = np.random.default_rng(8)
    for name, value in params.items():
        assert grads[name].shape == value.shape
        flat_indices = rng.choice(value.size, size=min(6, value.size), replace=False)
        for flat in flat_indices:
            index = np.unravel_index(flat, value.shape)
            original = value[index]
            value[index] = original + FD_STEP
            up = loss(params)
            value[index] = original - FD_STEP
            down = loss(params)
            value[index] = original
            numeric = (up - down) / (2 * FD_STEP)
            analytic = grads[name][index]
            scale = max(abs(numeric), abs(analytic), 1e-3)
            assert abs(numeric - analytic) / scale < FD_REL_TOL, (name, index, numeric, analytic)


def test_video_transformer_wrapper():
    model = VideoTransformer(TINY, seed=2, dtype="float64")
    x = _tiny_input(batch=2)
    logits, probs, cache = model(x)
    grads = model.backward(np.ones_like(logits), cache)
    assert set(grads) == set(model.params)
    assert model.parameter_count == sum(int(np.prod(s)) for s in param_shapes(TINY).values())
    assert model.predict_proba(x).shape == (2,)


def test_checkpoint_roundtrip(tmp_path):
    params = _tiny_params()
    path = tmp_path / "ckpt" / "model.npz"
    save_checkpoint(path, params, TINY)
    loaded, config = load_checkpoint(path, TINY)
    assert config == TINY
    assert list(loaded) == list(params)
    assert all(np.array_equal(loaded[n], params[n]) for n in params)


def test_checkpoint_errors(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.npz")

    path = tmp_path / "model.npz"
    save_checkpoint(path, _tiny_params(), TINY)
    with pytest.raises(CheckpointError):
        load_checkpoint(path, ModelConfig.desk())

    garbage = tmp_path / "garbage.npz"
    garbage.write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        load_checkpoint(garbage)

    params = _tiny_params()
    params.pop("head.bias")
    with pytest.raises(CheckpointError):
        save_checkpoint(tmp_path / "bad.npz", params, TINY)


def test_attention_weights_are_row_stochastic():
    rng = np.random.default_rng(4)
    q, k, v = (rng.normal(size=(2, 3, 5, 4)) for _ in range(3))
    out, weights = attention(q, k, v, 4, return_weights=True)
    assert weights.shape == (2, 3, 5, 5)
    assert np.all(weights >= 0.0)
    assert np.allclose(weights.sum(axis=-1), 1.0)
    assert np.allclose(out, attention(q, k, v, 4))

    _, cache = mha_forward(rng.normal(size=(2, 5, 8)), _tiny_params(), "layer0.attn", TINY.heads)
    assert np.allclose(cache["probs"].sum(axis=-1), 1.0)


def test_attention_with_constant_keys_averages_values():
    rng = np.random.default_rng(5)
    q, v = rng.normal(size=(6, 4)), rng.normal(size=(6, 4))
    out = attention(q, np.zeros((6, 4)), v, 4)
    assert np.allclose(out, np.broadcast_to(v.mean(axis=0), (6, 4)))


def test_attention_is_permutation_equivariant():
    rng = np.random.default_rng(6)
    q, k, v = (rng.normal(size=(7, 4)) for _ in range(3))
    perm = rng.permutation(7)
    assert np.allclose(attention(q[perm], k[perm], v[perm], 4), attention(q, k, v, 4)[perm])

    params = _tiny_params()
    z = rng.normal(size=(2, 7, TINY.hidden_dim))
    out, _ = encoder_layer_forward(z, params, 0, TINY.heads)
    permuted, _ = encoder_layer_forward(z[:, perm], params, 0, TINY.heads)
    assert np.allclose(permuted, out[:, perm], atol=1e-12)


def test_encoder_layer_without_output_projections_is_identity():
    params = _tiny_params()
    for name in ("layer1.attn.wo", "layer1.ffn.w2", "layer1.ffn.b2"):
        params[name] = np.zeros_like(params[name])
    z = np.random.default_rng(7).normal(size=(3, TINY.token_count + 1, TINY.hidden_dim))
    out, _ = encoder_layer_forward(z, params, 1, TINY.heads)
    assert np.array_equal(out, z)


def test_blank_embeddings_leave_only_positions():
    params = _tiny_params()
    params["patch_embedding"] = np.zeros_like(params["patch_embedding"])
    params["cls_token"] = np.zeros_like(params["cls_token"])
    z0, _ = tokenize(_tiny_input(batch=3), params, TINY)
    assert z0.shape == (3, TINY.token_count + 1, TINY.hidden_dim)
    for item in z0:
        assert np.array_equal(item, params["pos_embedding"])


def test_zero_head_is_undecided():
    params = _tiny_params()
    params["head.weight"] = np.zeros_like(params["head.weight"])
    params["head.bias"] = np.zeros_like(params["head.bias"])
    logits, probs = forward(_tiny_input(batch=4), params, TINY)
    assert np.array_equal(logits, np.zeros((4, 2)))
    assert np.allclose(probs, 0.5)
