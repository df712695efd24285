"""Layer functions built on the tensor ops, plus parameter initializers."""
from __future__ import annotations

import numpy as np

from .params import ParamStore
from .tensor import (Tensor, concat, layer_norm, linear, lstm_cell, matmul, relu,
                     reshape, softmax, swap_last, transpose)

__all__ = [
    "linear", "softmax", "layer_norm", "lstm_cell", "multi_head_attention", "project_kv",
    "attend", "pffn",
    "concat", "causal_mask", "positional_encoding", "init_linear", "init_layer_norm",
    "init_lstm", "init_attention", "init_pffn",
]


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, n, d = x.shape
    return transpose(reshape(x, (*lead, n, heads, d // heads)),
                     (*range(len(lead)), len(lead) + 1, len(lead), len(lead) + 2))


def _merge_heads(x: Tensor) -> Tensor:
    *lead, heads, n, dh = x.shape
    k = len(lead)
    x = transpose(x, (*range(k), k + 1, k, k + 2))
    return reshape(x, (*lead, n, heads * dh))


def project_kv(kv_in, params: dict, heads: int = 4) -> tuple[Tensor, Tensor]:
    """Head-split key and value projections of ``kv_in`` (..., n_k, d)."""
    return (_split_heads(linear(kv_in, params["Wk"], params["bk"]), heads),
            _split_heads(linear(kv_in, params["Wv"], params["bv"]), heads))


def attend(q_in, k: Tensor, v: Tensor, params: dict, heads: int = 4, mask=None) -> Tensor:
    """Attention of ``q_in`` over already-projected keys/values from ``project_kv``."""
    d = q_in.shape[-1]
    q = _split_heads(linear(q_in, params["Wq"], params["bq"]), heads)
    scores = matmul(q, swap_last(k)) * (1.0 / np.sqrt(d // heads))
    weights = softmax(scores, axis=-1, mask=mask)
    return linear(_merge_heads(matmul(weights, v)), params["Wo"], params["bo"])


def multi_head_attention(q_in, kv_in, params: dict, heads: int = 4, mask=None) -> Tensor:
    """Scaled dot-product attention with ``heads`` heads.

    ``q_in`` is (..., n_q, d), ``kv_in`` is (..., n_k, d). ``params`` holds
    ``Wq, bq, Wk, bk, Wv, bv, Wo, bo``. ``mask`` is a boolean array
    broadcastable to (..., heads, n_q, n_k); True entries are blocked.
    """
    d = q_in.shape[-1]
    if kv_in.shape[-1] != d:
        raise ValueError(f"attention: query width {d} != key width {kv_in.shape[-1]}")
    if d % heads:
        raise ValueError(f"attention: model dim {d} not divisible by {heads} heads")
    k, v = project_kv(kv_in, params, heads)
    return attend(q_in, k, v, params, heads, mask)


def pffn(x, params: dict) -> Tensor:
    """Position-wise feed-forward block: ``relu(x W1 + b1) W2 + b2``."""
    return linear(relu(linear(x, params["W1"], params["b1"])), params["W2"], params["b2"])


def causal_mask(n: int) -> np.ndarray:
    return np.triu(np.ones((n, n), dtype=bool), k=1)


def positional_encoding(n: int, d: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


# ---------------------------------------------------------------- initializers
# weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero

def _uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_linear(store: ParamStore, name: str, fan_in: int, fan_out: int, rng) -> dict:
    return {
        "W": store.add(f"{name}/W", _uniform(rng, fan_in, (fan_in, fan_out))),
        "b": store.add(f"{name}/b", np.zeros(fan_out)),
    }


def init_layer_norm(store: ParamStore, name: str, d: int) -> dict:
    return {"gain": store.add(f"{name}/gain", np.ones(d)),
            "bias": store.add(f"{name}/bias", np.zeros(d))}


def init_lstm(store: ParamStore, name: str, n_in: int, hidden: int, rng) -> dict:
    return {
        "W_x": store.add(f"{name}/W_x", _uniform(rng, n_in, (n_in, 4 * hidden))),
        "W_h": store.add(f"{name}/W_h", _uniform(rng, hidden, (hidden, 4 * hidden))),
        "b": store.add(f"{name}/b", np.zeros(4 * hidden)),
    }


def init_attention(store: ParamStore, name: str, d: int, rng) -> dict:
    out = {}
    for key in "qkvo":
        lin = init_linear(store, f"{name}/{key}", d, d, rng)
        out[f"W{key}"], out[f"b{key}"] = lin["W"], lin["b"]
    return out


def init_pffn(store: ParamStore, name: str, d: int, inner: int, rng) -> dict:
    l1 = init_linear(store, f"{name}/1", d, inner, rng)
    l2 = init_linear(store, f"{name}/2", inner, d, rng)
    return {"W1": l1["W"], "b1": l1["b"], "W2": l2["W"], "b2": l2["b"]}

