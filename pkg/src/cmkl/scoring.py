"""DistMult scoring, negative sampling, margin ranking and the type classifier."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cmkl.numcore import TensorSpec
from cmkl.numcore import tape as T

SCORE_FUSION_MODALITIES = ("struct", "text", "mol")


@dataclass(frozen=True)
class MarginLossConfig:
    margin: float = 1.0
    n_neg: int = 8

    def __post_init__(self):
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.n_neg < 1:
            raise ValueError("n_neg must be >= 1")


@dataclass(frozen=True)
class ScoreFusionConfig:
    alpha_text: float = 0.5
    alpha_mol: float = 0.3

    def __post_init__(self):
        if self.alpha_text < 0 or self.alpha_mol < 0:
            raise ValueError("score-fusion weights must be nonnegative")


def relation_specs(n_relations: int, dim: int, score_fusion: bool = False) -> list[TensorSpec]:
    g = "fusion-decoder"
    specs = [TensorSpec(g, "rel", (n_relations, dim))]
    if score_fusion:
        specs += [TensorSpec(g, "rel.text", (n_relations, dim)), TensorSpec(g, "rel.mol", (n_relations, dim))]
    return specs


def classifier_specs(n_types: int, dim: int) -> list[TensorSpec]:
    g = "fusion-decoder"
    return [TensorSpec(g, "cls.W", (n_types, dim)), TensorSpec(g, "cls.b", (n_types,), init="zeros")]


def distmult_score(h, rel_rows, t) -> T.Node:
    """Sum over dimensions of head * relation * tail; broadcasts over leading axes."""
    # head*tail first so swapping them is bit-exact
    return T.sum_(T.as_node(h) * t * rel_rows, axis=-1)


def distmult_score_np(h: np.ndarray, r: np.ndarray, t: np.ndarray) -> np.ndarray:
    return np.sum(h * t * r, axis=-1)


def sample_negatives(pos: np.ndarray, pool: np.ndarray, n_neg: int, rng: np.random.Generator) -> np.ndarray:
    """``(n, n_neg, 3)`` head-or-tail corruptions; the replacement differs from the original.

    Negatives are not filtered against known positives.
    """
    pos = np.asarray(pos, dtype=np.int64).reshape(-1, 3)
    pool = np.unique(np.asarray(pool, dtype=np.int64))
    if len(pool) < 2:
        raise ValueError("negative sampling needs an entity pool of at least 2")
    n = len(pos)
    corrupt_tail = rng.random((n, n_neg)) < 0.5
    orig = np.where(corrupt_tail, pos[:, 2:3], pos[:, 0:1])
    loc = np.searchsorted(pool, orig)
    in_pool = (loc < len(pool)) & (pool[np.minimum(loc, len(pool) - 1)] == orig)
    draw_excl = rng.integers(0, len(pool) - 1, size=(n, n_neg))
    draw_any = rng.integers(0, len(pool), size=(n, n_neg))
    # skip over the original's slot when it is in the pool
    idx = np.where(in_pool, draw_excl + (draw_excl >= loc), draw_any)
    repl = pool[idx]
    neg = np.repeat(pos[:, None, :], n_neg, axis=1)
    neg[..., 2] = np.where(corrupt_tail, repl, neg[..., 2])
    neg[..., 0] = np.where(corrupt_tail, neg[..., 0], repl)
    return neg


def margin_loss(pos_scores, neg_scores, margin: float) -> T.Node:
    """Mean over (positive, negative) pairs of max(0, margin + s_neg - s_pos)."""
    pos_scores, neg_scores = T.as_node(pos_scores), T.as_node(neg_scores)
    return T.mean(T.relu(neg_scores + margin - T.reshape(pos_scores, (-1, 1))))


def score_fusion_score(h_mods, rel_tables, t_mods, config: ScoreFusionConfig) -> T.Node:
    """``s_struct + alpha_text * s_text + alpha_mol * s_mol`` with per-modality relation tables.

    ``h_mods`` / ``t_mods`` / ``rel_tables`` are (structural, text, molecular) triples
    of already-gathered rows.
    """
    s = distmult_score(h_mods[0], rel_tables[0], t_mods[0])
    s = s + config.alpha_text * distmult_score(h_mods[1], rel_tables[1], t_mods[1])
    return s + config.alpha_mol * distmult_score(h_mods[2], rel_tables[2], t_mods[2])


def classify_entity(h, p: dict[str, T.Node]) -> T.Node:
    return T.softmax(T.as_node(h) @ p["cls.W"].T + p["cls.b"], axis=-1)


def classification_loss(h, labels: np.ndarray, p: dict[str, T.Node]) -> T.Node:
    """Mean cross-entropy of the linear type head."""
    logp = T.log_softmax(T.as_node(h) @ p["cls.W"].T + p["cls.b"], axis=-1)
    onehot = np.zeros(logp.shape)
    onehot[np.arange(len(labels)), labels] = 1.0
    return -T.mean(T.sum_(logp * onehot, axis=1))
