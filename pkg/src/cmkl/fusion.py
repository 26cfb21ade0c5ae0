"""Combining the three per-entity modality vectors into one embedding."""
from __future__ import annotations

import numpy as np

from cmkl.numcore import TensorSpec
from cmkl.numcore import tape as T

MODALITIES = ("structural", "text", "molecular")
EMBEDDING_FUSIONS = ("moe", "concat", "gated")
# query <- source modality index pairs for gated cross-attention
ATTN_PAIRS = ((0, 1), (0, 2), (1, 0), (2, 0))
LAYERNORM_EPS = 1e-5


def router_specs(dim: int, hidden: int | None = None) -> list[TensorSpec]:
    g = "fusion-decoder"
    if hidden is None:
        return [TensorSpec(g, "router.W", (3, 3 * dim)), TensorSpec(g, "router.b", (3,), init="zeros")]
    return [
        TensorSpec(g, "router.W1", (hidden, 3 * dim)),
        TensorSpec(g, "router.b1", (hidden,), init="zeros"),
        TensorSpec(g, "router.W", (3, hidden)),
        TensorSpec(g, "router.b", (3,), init="zeros"),
    ]


def concat_specs(dim: int) -> list[TensorSpec]:
    g = "fusion-decoder"
    return [TensorSpec(g, "concat.W", (dim, 3 * dim)), TensorSpec(g, "concat.b", (dim,), init="zeros")]


def gated_specs(dim: int, heads: int = 4) -> list[TensorSpec]:
    if dim % heads:
        raise ValueError(f"embedding dim {dim} is not divisible by {heads} heads")
    g = "fusion-decoder"
    specs = []
    for i, j in ATTN_PAIRS:
        for proj in ("Q", "K", "V"):
            specs.append(TensorSpec(g, f"gated.{i}{j}.{proj}", (dim, dim)))
    specs += [
        TensorSpec(g, "gated.fuse.W1", (dim, 5 * dim)),
        TensorSpec(g, "gated.fuse.b1", (dim,), init="zeros"),
        TensorSpec(g, "gated.fuse.W2", (dim, dim)),
        TensorSpec(g, "gated.fuse.b2", (dim,), init="zeros"),
        TensorSpec(g, "gated.ln.gamma", (dim,), init="ones"),
        TensorSpec(g, "gated.ln.beta", (dim,), init="zeros"),
    ]
    return specs


def router_weights(hs: T.Node, ht: T.Node, hm: T.Node, p: dict[str, T.Node]) -> T.Node:
    x = T.concat([hs, ht, hm], axis=1)
    if "router.W1" in p:
        x = T.relu(x @ p["router.W1"].T + p["router.b1"])
    return T.softmax(x @ p["router.W"].T + p["router.b"], axis=1)


def moe_fuse(hs: T.Node, ht: T.Node, hm: T.Node, p: dict[str, T.Node]) -> tuple[T.Node, T.Node]:
    """Router-weighted sum of the experts; returns ``(fused, weights)``."""
    w = router_weights(hs, ht, hm, p)
    experts = T.stack([hs, ht, hm], axis=1)
    return T.einsum("nk,nkd->nd", w, experts), w


def load_balance_loss(weights: T.Node) -> T.Node:
    """Mean squared deviation of batch-mean router weights from uniform."""
    return T.mean(T.square(T.mean(weights, axis=0) - 1.0 / 3.0))


def concat_fuse(hs: T.Node, ht: T.Node, hm: T.Node, p: dict[str, T.Node]) -> T.Node:
    return T.concat([hs, ht, hm], axis=1) @ p["concat.W"].T + p["concat.b"]


def layer_norm(x: T.Node, gamma: T.Node, beta: T.Node, eps: float = LAYERNORM_EPS) -> T.Node:
    centered = x - T.mean(x, axis=1, keepdims=True)
    var = T.mean(T.square(centered), axis=1, keepdims=True)
    return centered / T.sqrt(var + eps) * gamma + beta


def cross_attend(query: T.Node, source: T.Node, wq: T.Node, wk: T.Node, wv: T.Node, heads: int, softmax_over: str) -> T.Node:
    """Multi-head attention of one query token on one source token.

    ``softmax_over="token"`` normalises over the (single) key token, so each head
    returns its value projection. ``"key-dim"`` normalises the per-head
    elementwise query-key products over the head dimension and gates the value
    elementwise.
    """
    n, dim = query.shape
    dh = dim // heads
    q = T.reshape(query @ wq.T, (n, heads, dh))
    k = T.reshape(source @ wk.T, (n, heads, dh))
    v = T.reshape(source @ wv.T, (n, heads, dh))
    if softmax_over == "token":
        logits = T.sum_(q * k, axis=2, keepdims=True) / np.sqrt(dh)
        attn = T.softmax(logits, axis=2)
    elif softmax_over == "key-dim":
        attn = T.softmax(q * k / np.sqrt(dh), axis=2)
    else:
        raise ValueError(f"unknown attention normalisation {softmax_over!r}")
    return T.reshape(attn * v, (n, dim))


def gated_attn_fuse(
    hs: T.Node, ht: T.Node, hm: T.Node, p: dict[str, T.Node], heads: int = 4, softmax_over: str = "token"
) -> T.Node:
    tokens = (hs, ht, hm)
    attended = [
        cross_attend(tokens[i], tokens[j], p[f"gated.{i}{j}.Q"], p[f"gated.{i}{j}.K"], p[f"gated.{i}{j}.V"], heads, softmax_over)
        for i, j in ATTN_PAIRS
    ]
    c = T.concat([hs] + attended, axis=1)
    hidden = T.relu(c @ p["gated.fuse.W1"].T + p["gated.fuse.b1"])
    mlp = hidden @ p["gated.fuse.W2"].T + p["gated.fuse.b2"]
    return layer_norm(mlp + hs, p["gated.ln.gamma"], p["gated.ln.beta"])


def forced_route(hs: T.Node, ht: T.Node, hm: T.Node, which: str) -> T.Node:
    try:
        return (hs, ht, hm)[MODALITIES.index(which)]
    except ValueError:
        raise ValueError(f"unknown modality {which!r}; expected one of {MODALITIES}") from None
