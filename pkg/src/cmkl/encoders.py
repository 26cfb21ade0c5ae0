"""Structural (R-GCN), textual (frozen-vector projection) and molecular (MLP) encoders.

Each forward returns an ``(n_entities, D)`` node; entities lacking a feature get
the modality's learned default row, so every encoder covers every entity.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cmkl.numcore import TensorSpec
from cmkl.numcore import tape as T

N_LAYERS = 2


@dataclass(frozen=True)
class Graph:
    """Directed message-passing structure: messages flow head -> tail."""

    n_entities: int
    src: np.ndarray
    rel: np.ndarray
    dst: np.ndarray
    norm: np.ndarray

    @classmethod
    def from_triples(cls, triples: np.ndarray, n_entities: int) -> "Graph":
        triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        src, rel, dst = triples[:, 0], triples[:, 1], triples[:, 2]
        if len(triples):
            # |N_v^r| counts in-edges of v under r (multi-edges count separately)
            keys = dst * (int(rel.max()) + 1) + rel
            _, inverse, counts = np.unique(keys, return_inverse=True, return_counts=True)
            norm = 1.0 / counts[inverse]
        else:
            norm = np.zeros(0)
        return cls(n_entities, src.copy(), rel.copy(), dst.copy(), norm.astype(np.float64))

    @property
    def n_edges(self) -> int:
        return len(self.src)


def structural_specs(n_entities: int, n_relations: int, dim: int, n_bases: int) -> list[TensorSpec]:
    specs = [TensorSpec("structural", "E0", (n_entities, dim))]
    for layer in range(N_LAYERS):
        specs += [
            TensorSpec("structural", f"rgcn{layer}.basis", (n_bases, dim, dim), fan_in=dim, fan_out=dim),
            TensorSpec("structural", f"rgcn{layer}.coef", (n_relations, n_bases), fan_in=n_bases, fan_out=1),
            TensorSpec("structural", f"rgcn{layer}.self", (dim, dim)),
        ]
    return specs


def text_specs(d_text: int, dim: int) -> list[TensorSpec]:
    return [
        TensorSpec("text", "text.W", (dim, d_text)),
        TensorSpec("text", "text.b", (dim,), init="zeros"),
        TensorSpec("text", "text.default", (dim,), fan_in=dim, fan_out=dim),
    ]


def mol_specs(d_mol: int, dim: int) -> list[TensorSpec]:
    return [
        TensorSpec("molecular", "mol.W1", (dim, d_mol)),
        TensorSpec("molecular", "mol.b1", (dim,), init="zeros"),
        TensorSpec("molecular", "mol.W2", (dim, dim)),
        TensorSpec("molecular", "mol.b2", (dim,), init="zeros"),
        TensorSpec("molecular", "mol.default", (dim,), fan_in=dim, fan_out=dim),
    ]


def rgcn_layer(h: T.Node, graph: Graph, basis: T.Node, coef: T.Node, self_loop: T.Node) -> T.Node:
    out = h @ self_loop.T
    if graph.n_edges:
        # per-basis transforms of every entity: (B, N, D)
        hb = T.einsum("nj,bij->bni", h, basis)
        hb_src = T.take(hb, graph.src, axis=1)
        a_e = T.take(coef, graph.rel, axis=0)
        msg = T.einsum("eb,bed->ed", a_e, hb_src) * graph.norm[:, None]
        out = out + T.segment_sum(msg, graph.dst, graph.n_entities)
    return T.relu(out)


def rgcn_forward(graph: Graph, p: dict[str, T.Node]) -> T.Node:
    h = p["E0"]
    for layer in range(N_LAYERS):
        h = rgcn_layer(h, graph, p[f"rgcn{layer}.basis"], p[f"rgcn{layer}.coef"], p[f"rgcn{layer}.self"])
    return h


def _with_default(values: T.Node, present: np.ndarray, default: T.Node) -> T.Node:
    mask = present.astype(np.float64)[:, None]
    return values * mask + T.reshape(default, (1, -1)) * (1.0 - mask)


def text_forward(x_text: np.ndarray, has_text: np.ndarray, p: dict[str, T.Node]) -> T.Node:
    proj = T.as_node(x_text) @ p["text.W"].T + p["text.b"]
    return _with_default(proj, has_text, p["text.default"])


def mol_forward(x_mol: np.ndarray, has_mol: np.ndarray, p: dict[str, T.Node]) -> T.Node:
    hidden = T.relu(T.as_node(x_mol) @ p["mol.W1"].T + p["mol.b1"])
    out = hidden @ p["mol.W2"].T + p["mol.b2"]
    return _with_default(out, has_mol, p["mol.default"])
