#!/usr/bin/env python3
"""
Video vision transformer in numpy with hand-written gradients.

Tubelet tokens plus a classification token pass through pre-norm encoder
layers (multi-head self-attention, GELU feed-forward), a final LayerNorm
and a linear head. Every forward helper returns (output, cache); the
matching backward helper consumes the cache and returns gradients.

Weights follow the (out_features, in_features) convention: y = x @ W.T + b.
"""

import io
import json
from collections import OrderedDict
from dataclasses import asdict
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
from scipy.stats import truncnorm

from config.config import CHECKPOINT_VERSION, ModelConfig
from core.exceptions import CheckpointError, ConfigurationError, NumericError
from utils.io_utils import atomic_write_bytes

Params = dict[str, np.ndarray]
Cache = dict[str, Any]

LN_EPS = 1e-6
INIT_STD = 0.02
_GELU_C = np.sqrt(2.0 / np.pi)
_GELU_K = 0.044715


def param_shapes(config: ModelConfig) -> "OrderedDict[str, tuple[int, ...]]":
    """Name -> shape of every model parameter, in canonical order."""
    d, f = config.hidden_dim, config.ffn_width
    shapes = OrderedDict()
    shapes["patch_embedding"] = (d, config.patch_dim)
    shapes["cls_token"] = (d,)
    shapes["pos_embedding"] = (config.token_count + 1, d)
    for layer in range(config.layers):
        p = f"layer{layer}"
        shapes[f"{p}.ln1.gamma"] = (d,)
        shapes[f"{p}.ln1.beta"] = (d,)
        for w in ("wq", "wk", "wv", "wo"):
            shapes[f"{p}.attn.{w}"] = (d, d)
        shapes[f"{p}.ln2.gamma"] = (d,)
        shapes[f"{p}.ln2.beta"] = (d,)
        shapes[f"{p}.ffn.w1"] = (f, d)
        shapes[f"{p}.ffn.b1"] = (f,)
        shapes[f"{p}.ffn.w2"] = (d, f)
        shapes[f"{p}.ffn.b2"] = (d,)
    shapes["final_ln.gamma"] = (d,)
    shapes["final_ln.beta"] = (d,)
    shapes["head.weight"] = (config.classes, d)
    shapes["head.bias"] = (config.classes,)
    return shapes


def init_parameters(config: ModelConfig, seed: int = 0, dtype: Union[str, np.dtype] = "float32",
                    std: float = INIT_STD) -> Params:
    """
    Fresh parameters for training from scratch.

    Projections and embeddings draw from a normal truncated at two standard
    deviations; biases, LayerNorm shifts and the cls token start at zero and
    LayerNorm scales at one.
    """
    config.validate()
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".gamma"):
            value = np.ones(shape)
        elif name.endswith((".beta", ".b1", ".b2", "head.bias")) or name == "cls_token":
            value = np.zeros(shape)
        else:
            value = truncnorm.rvs(-2.0, 2.0, scale=std, size=shape, random_state=rng)
        params[name] = np.asarray(value, dtype=dtype)
    return params


def zero_like(params: Params) -> Params:
    return {name: np.zeros_like(value) for name, value in params.items()}


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------

def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def attention(q: np.ndarray, k: np.ndarray, v: np.ndarray, d_k: int, return_weights: bool = False):
    """
    Scaled dot-product attention softmax(QK^T / sqrt(d_k)) V over the last two axes.

    With return_weights, returns (output, attention weights).
    """
    scores = np.matmul(q, np.swapaxes(k, -1, -2)) / np.sqrt(d_k)
    weights = softmax(scores, axis=-1)
    out = np.matmul(weights, v)
    if return_weights:
        return out, weights
    return out


def linear_forward(x: np.ndarray, weight: np.ndarray, bias: Optional[np.ndarray] = None):
    out = np.matmul(x, weight.T)
    if bias is not None:
        out = out + bias
    return out, {"x": x}


def linear_backward(grad_out: np.ndarray, cache: Cache, weight: np.ndarray):
    """Returns (grad_x, grad_weight, grad_bias)."""
    x = cache["x"]
    out_dim, in_dim = weight.shape
    grad_x = np.matmul(grad_out, weight)
    grad_w = np.matmul(grad_out.reshape(-1, out_dim).T, x.reshape(-1, in_dim))
    grad_b = grad_out.reshape(-1, out_dim).sum(axis=0)
    return grad_x, grad_w, grad_b


def layer_norm_forward(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = LN_EPS):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * rstd
    return xhat * gamma + beta, {"xhat": xhat, "rstd": rstd, "gamma": gamma}


def layer_norm_backward(grad_out: np.ndarray, cache: Cache):
    """Returns (grad_x, grad_gamma, grad_beta)."""
    xhat, rstd, gamma = cache["xhat"], cache["rstd"], cache["gamma"]
    d = xhat.shape[-1]
    grad_gamma = (grad_out * xhat).reshape(-1, d).sum(axis=0)
    grad_beta = grad_out.reshape(-1, d).sum(axis=0)
    dxhat = grad_out * gamma
    grad_x = rstd * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return grad_x, grad_gamma, grad_beta


def gelu_forward(x: np.ndarray):
    """GELU, tanh approximation."""
    t = np.tanh(_GELU_C * (x + _GELU_K * x ** 3))
    return 0.5 * x * (1.0 + t), {"x": x, "t": t}


def gelu_backward(grad_out: np.ndarray, cache: Cache) -> np.ndarray:
    x, t = cache["x"], cache["t"]
    du = _GELU_C * (1.0 + 3.0 * _GELU_K * x ** 2)
    return grad_out * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t ** 2) * du)


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    b, s, d = x.shape
    return x.reshape(b, s, heads, d // heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, h, s, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, s, h * dh)


def mha_forward(h: np.ndarray, params: Params, prefix: str, heads: int):
    """Multi-head self-attention without projection biases."""
    wq, wk, wv, wo = (params[f"{prefix}.{w}"] for w in ("wq", "wk", "wv", "wo"))
    q = _split_heads(np.matmul(h, wq.T), heads)
    k = _split_heads(np.matmul(h, wk.T), heads)
    v = _split_heads(np.matmul(h, wv.T), heads)
    heads_out, probs = attention(q, k, v, q.shape[-1], return_weights=True)
    context = _merge_heads(heads_out)
    out = np.matmul(context, wo.T)
    return out, {"h": h, "q": q, "k": k, "v": v, "probs": probs, "context": context}


def mha_backward(grad_out: np.ndarray, cache: Cache, params: Params, prefix: str, heads: int):
    """Returns (grad_h, {param name: grad})."""
    wq, wk, wv, wo = (params[f"{prefix}.{w}"] for w in ("wq", "wk", "wv", "wo"))
    h, q, k, v, probs, context = (cache[n] for n in ("h", "q", "k", "v", "probs", "context"))
    d = h.shape[-1]
    d_k = q.shape[-1]

    grads = {f"{prefix}.wo": np.matmul(grad_out.reshape(-1, d).T, context.reshape(-1, d))}
    d_context = _split_heads(np.matmul(grad_out, wo), heads)

    d_probs = np.matmul(d_context, np.swapaxes(v, -1, -2))
    d_v = np.matmul(np.swapaxes(probs, -1, -2), d_context)
    d_scores = probs * (d_probs - np.sum(d_probs * probs, axis=-1, keepdims=True)) / np.sqrt(d_k)
    d_q = np.matmul(d_scores, k)
    d_k_ = np.matmul(np.swapaxes(d_scores, -1, -2), q)

    grad_h = np.zeros_like(h)
    h_flat = h.reshape(-1, d)
    for name, w, dproj in (("wq", wq, d_q), ("wk", wk, d_k_), ("wv", wv, d_v)):
        dproj = _merge_heads(dproj)
        grads[f"{prefix}.{name}"] = np.matmul(dproj.reshape(-1, d).T, h_flat)
        grad_h += np.matmul(dproj, w)
    return grad_h, grads


def encoder_layer_forward(z: np.ndarray, params: Params, layer: int, heads: int):
    """Pre-norm block: z + MSA(LN(z)), then + FFN(LN(.))."""
    p = f"layer{layer}"
    h1, c_ln1 = layer_norm_forward(z, params[f"{p}.ln1.gamma"], params[f"{p}.ln1.beta"])
    a, c_attn = mha_forward(h1, params, f"{p}.attn", heads)
    z1 = z + a
    h2, c_ln2 = layer_norm_forward(z1, params[f"{p}.ln2.gamma"], params[f"{p}.ln2.beta"])
    f1, c_fc1 = linear_forward(h2, params[f"{p}.ffn.w1"], params[f"{p}.ffn.b1"])
    g, c_gelu = gelu_forward(f1)
    f2, c_fc2 = linear_forward(g, params[f"{p}.ffn.w2"], params[f"{p}.ffn.b2"])
    return z1 + f2, {"ln1": c_ln1, "attn": c_attn, "ln2": c_ln2,
                     "fc1": c_fc1, "gelu": c_gelu, "fc2": c_fc2}


def encoder_layer_backward(grad_out: np.ndarray, cache: Cache, params: Params, layer: int, heads: int):
    p = f"layer{layer}"
    grads = {}
    dg, grads[f"{p}.ffn.w2"], grads[f"{p}.ffn.b2"] = linear_backward(grad_out, cache["fc2"], params[f"{p}.ffn.w2"])
    df1 = gelu_backward(dg, cache["gelu"])
    dh2, grads[f"{p}.ffn.w1"], grads[f"{p}.ffn.b1"] = linear_backward(df1, cache["fc1"], params[f"{p}.ffn.w1"])
    dz1_ln, grads[f"{p}.ln2.gamma"], grads[f"{p}.ln2.beta"] = layer_norm_backward(dh2, cache["ln2"])
    dz1 = grad_out + dz1_ln

    dh1, attn_grads = mha_backward(dz1, cache["attn"], params, f"{p}.attn", heads)
    grads.update(attn_grads)
    dz_ln, grads[f"{p}.ln1.gamma"], grads[f"{p}.ln1.beta"] = layer_norm_backward(dh1, cache["ln1"])
    return dz1 + dz_ln, grads


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------

def extract_tubelets(x: np.ndarray, config: ModelConfig) -> np.ndarray:
    """
    Cut a batch of clips into flattened non-overlapping tubelets.

    Args:
        x: (B, T, H, W, C) normalized input

    Returns:
        (B, token_count, tubelet_t * patch_p * patch_p * C), tokens ordered by
        (time, row, column) and each tubelet flattened in (t, y, x, c) order
    """
    expected = (config.frames, config.height, config.width, config.channels)
    if x.ndim != 5 or tuple(x.shape[1:]) != expected:
        raise ConfigurationError(f"Input shape {x.shape[1:]} does not match model input {expected}")
    b = x.shape[0]
    nt, nh, nw = config.grid
    t, p, c = config.tubelet_t, config.patch_p, config.channels
    x = x.reshape(b, nt, t, nh, p, nw, p, c)
    x = x.transpose(0, 1, 3, 5, 2, 4, 6, 7)
    return x.reshape(b, nt * nh * nw, t * p * p * c)


def tokenize(x: np.ndarray, params: Params, config: ModelConfig):
    """Project tubelets, prepend the cls token and add positional embeddings."""
    patches = extract_tubelets(x, config)
    emb = np.matmul(patches, params["patch_embedding"].T)
    cls = np.broadcast_to(params["cls_token"], (emb.shape[0], 1, emb.shape[2]))
    z0 = np.concatenate([cls, emb], axis=1) + params["pos_embedding"]
    return z0, {"patches": patches}


def _as_batch(x: np.ndarray, params: Params) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=params["patch_embedding"].dtype)
    if x.ndim == 4:
        return x[None], True
    return x, False


def forward_with_cache(x: np.ndarray, params: Params, config: ModelConfig):
    """
    Full forward pass keeping every activation needed by backward().

    Returns:
        (logits (B, classes), probabilities (B, classes), cache)
    """
    x, _ = _as_batch(x, params)
    z, c_tok = tokenize(x, params, config)
    layer_caches = []
    for layer in range(config.layers):
        z, cache = encoder_layer_forward(z, params, layer, config.heads)
        layer_caches.append(cache)
    cls_out, c_ln = layer_norm_forward(z[:, 0], params["final_ln.gamma"], params["final_ln.beta"])
    logits, c_head = linear_forward(cls_out, params["head.weight"], params["head.bias"])
    if not np.all(np.isfinite(logits)):
        raise NumericError("forward pass")
    probs = softmax(logits, axis=-1)
    cache = {"tokens": c_tok, "layers": layer_caches, "final_ln": c_ln,
             "head": c_head, "seq_len": z.shape[1]}
    return logits, probs, cache


def forward(x: np.ndarray, params: Params, config: ModelConfig) -> tuple[np.ndarray, np.ndarray]:
    """
    Class logits and probabilities for one clip (T, H, W, C) or a batch.

    Probabilities are softmax(head(finalLN(cls token))); the risky
    probability is column 1.
    """
    single = np.asarray(x).ndim == 4
    logits, probs, _ = forward_with_cache(x, params, config)
    if single:
        return logits[0], probs[0]
    return logits, probs


def backward(grad_logits: np.ndarray, cache: Cache, params: Params, config: ModelConfig) -> Params:
    """
    Exact gradients of every parameter given dLoss/dlogits.

    Gradients are summed over the batch.
    """
    grad_logits = np.asarray(grad_logits, dtype=params["head.weight"].dtype)
    if grad_logits.ndim == 1:
        grad_logits = grad_logits[None]
    grads: Params = {}
    d_cls, grads["head.weight"], grads["head.bias"] = linear_backward(
        grad_logits, cache["head"], params["head.weight"])
    d_cls, grads["final_ln.gamma"], grads["final_ln.beta"] = layer_norm_backward(d_cls, cache["final_ln"])

    b = grad_logits.shape[0]
    dz = np.zeros((b, cache["seq_len"], config.hidden_dim), dtype=d_cls.dtype)
    dz[:, 0] = d_cls
    for layer in reversed(range(config.layers)):
        dz, layer_grads = encoder_layer_backward(dz, cache["layers"][layer], params, layer, config.heads)
        grads.update(layer_grads)

    patches = cache["tokens"]["patches"]
    grads["pos_embedding"] = dz.sum(axis=0)
    grads["cls_token"] = dz[:, 0].sum(axis=0)
    d_emb = dz[:, 1:]
    grads["patch_embedding"] = np.matmul(
        d_emb.reshape(-1, config.hidden_dim).T, patches.reshape(-1, config.patch_dim))
    return {name: grads[name] for name in params}


def predict_proba(params: Params, inputs: np.ndarray, config: ModelConfig,
                  batch_size: int = 16) -> np.ndarray:
    """Risky-class probability for every clip of an (N, T, H, W, C) array."""
    inputs = np.asarray(inputs)
    out = np.empty(len(inputs), dtype=np.float64)
    for start in range(0, len(inputs), batch_size):
        _, probs = forward(inputs[start:start + batch_size], params, config)
        out[start:start + batch_size] = probs[:, 1]
    return out


class VideoTransformer:
    """Parameter holder with the forward/backward calling convention of the helpers above."""

    def __init__(self, config: ModelConfig, params: Optional[Params] = None,
                 seed: int = 0, dtype: str = "float32"):
        self.config = config
        self.params = params if params is not None else init_parameters(config, seed, dtype)
        check_parameters(self.params, config)

    def __call__(self, x: np.ndarray):
        return forward_with_cache(x, self.params, self.config)

    def backward(self, grad_logits: np.ndarray, cache: Cache) -> Params:
        return backward(grad_logits, cache, self.params, self.config)

    def predict_proba(self, inputs: np.ndarray, batch_size: int = 16) -> np.ndarray:
        return predict_proba(self.params, inputs, self.config, batch_size)

    def copy_params(self) -> Params:
        return {name: value.copy() for name, value in self.params.items()}

    @property
    def parameter_count(self) -> int:
        return int(sum(v.size for v in self.params.values()))


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def check_parameters(params: Params, config: ModelConfig) -> None:
    """Raise CheckpointError unless params has exactly the shapes config implies."""
    shapes = param_shapes(config)
    missing = [n for n in shapes if n not in params]
    extra = [n for n in params if n not in shapes]
    if missing or extra:
        raise CheckpointError(f"Parameter names mismatch (missing {missing[:3]}, unexpected {extra[:3]})")
    for name, shape in shapes.items():
        if tuple(params[name].shape) != shape:
            raise CheckpointError(f"{name} has shape {params[name].shape}, expected {shape}")


def save_checkpoint(path: Union[str, Path], params: Params, config: ModelConfig) -> None:
    """Store named tensors, the model config and a format version in one .npz archive."""
    check_parameters(params, config)
    buffer = io.BytesIO()
    meta = json.dumps({"version": CHECKPOINT_VERSION, "model": asdict(config)}, sort_keys=True)
    np.savez(buffer, __meta__=np.array(meta), **params)
    atomic_write_bytes(path, buffer.getvalue())


def load_checkpoint(path: Union[str, Path],
                    config: Optional[ModelConfig] = None) -> tuple[Params, ModelConfig]:
    """
    Load a checkpoint written by save_checkpoint().

    Raises:
        CheckpointError: missing file, unknown version or shape mismatch
    """
    try:
        with np.load(path, allow_pickle=False) as archive:
            meta = json.loads(str(archive["__meta__"]))
            params = {name: archive[name] for name in archive.files if name != "__meta__"}
    except FileNotFoundError as e:
        raise CheckpointError(f"Checkpoint not found: {path}") from e
    except (KeyError, ValueError, OSError) as e:
        raise CheckpointError(f"Unreadable checkpoint {path}: {e}") from e

    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"Unsupported checkpoint version {meta.get('version')} in {path}")
    stored = ModelConfig(**meta["model"])
    if config is not None and config != stored:
        raise CheckpointError(f"Checkpoint {path} was trained with a different model config")
    check_parameters(params, stored)
    ordered = {name: params[name] for name in param_shapes(stored)}
    return ordered, stored
