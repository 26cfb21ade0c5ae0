"""The full multimodal KG embedding model: encoders -> fusion -> DistMult / type head."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cmkl import encoders, fusion, scoring
from cmkl.encoders import Graph
from cmkl.kgdata import FeatureStore
from cmkl.numcore import ParamSet, TensorSpec, init_params
from cmkl.numcore import tape as T

FUSIONS = ("moe", "concat", "gated", "score", "structural", "text", "molecular")


@dataclass
class ModelConfig:
    dim: int = 256
    n_bases: int = 30
    # None lets the experiment method pick its default
    fusion: str | None = None
    router_hidden: int | None = None
    attn_heads: int = 4
    attn_softmax: str = "token"
    alpha_text: float = 0.5
    alpha_mol: float = 0.3
    load_balance: float = 0.0

    def __post_init__(self):
        if self.fusion is not None and self.fusion not in FUSIONS:
            raise ValueError(f"fusion must be one of {FUSIONS}, got {self.fusion!r}")
        if self.dim <= 0 or self.n_bases < 1:
            raise ValueError("dim must be positive and n_bases >= 1")


@dataclass
class Embeddings:
    structural: T.Node
    text: T.Node
    molecular: T.Node
    fused: T.Node | None
    weights: T.Node | None

    def modality(self, i: int) -> T.Node:
        return (self.structural, self.text, self.molecular)[i]


class CMKLModel:
    def __init__(self, config: ModelConfig, n_entities: int, n_relations: int, n_types: int, features: FeatureStore, seed: int):
        if config.fusion is None:
            raise ValueError("model fusion must be resolved before building the model")
        self.config = config
        self.n_entities = n_entities
        self.n_relations = n_relations
        self.n_types = n_types
        self.x_text, self.has_text, self.x_mol, self.has_mol = features.dense(n_entities)
        self.score_cfg = scoring.ScoreFusionConfig(config.alpha_text, config.alpha_mol)
        self.params = init_params(self.tensor_specs(), seed)

    def tensor_specs(self) -> list[TensorSpec]:
        c = self.config
        specs = encoders.structural_specs(self.n_entities, self.n_relations, c.dim, c.n_bases)
        specs += encoders.text_specs(self.x_text.shape[1], c.dim)
        specs += encoders.mol_specs(self.x_mol.shape[1], c.dim)
        if c.fusion == "moe":
            specs += fusion.router_specs(c.dim, c.router_hidden)
        elif c.fusion == "concat":
            specs += fusion.concat_specs(c.dim)
        elif c.fusion == "gated":
            specs += fusion.gated_specs(c.dim, c.attn_heads)
        specs += scoring.relation_specs(self.n_relations, c.dim, score_fusion=c.fusion == "score")
        if self.n_types > 0:
            specs += scoring.classifier_specs(self.n_types, c.dim)
        return specs

    # ------------------------------------------------------------ forward

    def constants(self, params: ParamSet | None = None) -> dict[str, T.Node]:
        params = params or self.params
        return {n: T.Node(v) for _, n, v in params.items()}

    def encode(self, p: dict[str, T.Node], graph: Graph) -> tuple[T.Node, T.Node, T.Node]:
        hs = encoders.rgcn_forward(graph, p)
        ht = encoders.text_forward(self.x_text, self.has_text, p)
        hm = encoders.mol_forward(self.x_mol, self.has_mol, p)
        return hs, ht, hm

    def fuse(self, hs: T.Node, ht: T.Node, hm: T.Node, p: dict[str, T.Node]) -> Embeddings:
        c = self.config
        weights = None
        if c.fusion == "moe":
            fused, weights = fusion.moe_fuse(hs, ht, hm, p)
        elif c.fusion == "concat":
            fused = fusion.concat_fuse(hs, ht, hm, p)
        elif c.fusion == "gated":
            fused = fusion.gated_attn_fuse(hs, ht, hm, p, c.attn_heads, c.attn_softmax)
        elif c.fusion == "score":
            fused = None
        else:
            fused = fusion.forced_route(hs, ht, hm, c.fusion)
        return Embeddings(hs, ht, hm, fused, weights)

    def embed(self, p: dict[str, T.Node], graph: Graph) -> Embeddings:
        return self.fuse(*self.encode(p, graph), p)

    def score_triples(self, p: dict[str, T.Node], emb: Embeddings, triples: np.ndarray) -> T.Node:
        """Scores shaped like ``triples.shape[:-1]``."""
        triples = np.asarray(triples, dtype=np.int64)
        lead = triples.shape[:-1]
        flat = triples.reshape(-1, 3)
        h_idx, r_idx, t_idx = flat[:, 0], flat[:, 1], flat[:, 2]
        if self.config.fusion == "score":
            tables = (p["rel"], p["rel.text"], p["rel.mol"])
            h_mods = [T.take(emb.modality(i), h_idx) for i in range(3)]
            t_mods = [T.take(emb.modality(i), t_idx) for i in range(3)]
            rels = [T.take(tab, r_idx) for tab in tables]
            s = scoring.score_fusion_score(h_mods, rels, t_mods, self.score_cfg)
        else:
            s = scoring.distmult_score(T.take(emb.fused, h_idx), T.take(p["rel"], r_idx), T.take(emb.fused, t_idx))
        return T.reshape(s, lead)

    def margin_loss(self, p, emb: Embeddings, pos: np.ndarray, neg: np.ndarray, margin: float) -> T.Node:
        s_pos = self.score_triples(p, emb, pos)
        s_neg = self.score_triples(p, emb, neg)
        return scoring.margin_loss(s_pos, s_neg, margin)

    def regularizer(self, emb: Embeddings) -> T.Node | None:
        if emb.weights is not None and self.config.load_balance > 0:
            return fusion.load_balance_loss(emb.weights) * self.config.load_balance
        return None

    def class_representation(self, emb: Embeddings) -> T.Node:
        if emb.fused is None:
            raise ValueError("score-level fusion has no fused entity embedding for classification")
        return emb.fused

    def classification_loss(self, p, emb: Embeddings, entities: np.ndarray, labels: np.ndarray) -> T.Node:
        h = T.take(self.class_representation(emb), entities)
        return scoring.classification_loss(h, labels, p)

    # ------------------------------------------------------------ inference

    def frozen_embeddings(self, graph: Graph, params: ParamSet | None = None) -> Embeddings:
        return self.embed(self.constants(params), graph)

    def scorer(self, graph: Graph, params: ParamSet | None = None) -> "EmbeddingScorer":
        params = params or self.params
        emb = self.frozen_embeddings(graph, params)
        if self.config.fusion == "score":
            reps = [emb.structural.value, emb.text.value, emb.molecular.value]
            rels = [params["rel"], params["rel.text"], params["rel.mol"]]
            weights = [1.0, self.config.alpha_text, self.config.alpha_mol]
        else:
            reps, rels, weights = [emb.fused.value], [params["rel"]], [1.0]
        return EmbeddingScorer(reps, rels, weights)

    def predict_types(self, graph: Graph, entities: np.ndarray, params: ParamSet | None = None) -> np.ndarray:
        p = self.constants(params)
        emb = self.embed(p, graph)
        probs = scoring.classify_entity(T.take(self.class_representation(emb), entities), p)
        return probs.value.argmax(axis=1)


class EmbeddingScorer:
    """Scores every candidate entity for batched head/tail queries."""

    def __init__(self, reps: list[np.ndarray], rels: list[np.ndarray], weights: list[float]):
        self.reps, self.rels, self.weights = reps, rels, weights

    def score_tails(self, heads: np.ndarray, rels: np.ndarray) -> np.ndarray:
        out = None
        for e, r, w in zip(self.reps, self.rels, self.weights):
            s = (e[heads] * r[rels]) @ e.T
            out = s if out is None else out + w * s
        return out

    def score_heads(self, rels: np.ndarray, tails: np.ndarray) -> np.ndarray:
        out = None
        for e, r, w in zip(self.reps, self.rels, self.weights):
            s = (e[tails] * r[rels]) @ e.T
            out = s if out is None else out + w * s
        return out
