"""Finite-difference verification of the full training objective on a toy model."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cmkl.continual import EWCConfig, FisherAnchor, ewc_penalty, total_loss
from cmkl.encoders import Graph
from cmkl.kgdata import FeatureStore
from cmkl.model import CMKLModel, ModelConfig
from cmkl.numcore import TensorReport, analytic_grads, grad_check
from cmkl.scoring import sample_negatives

GRADCHECK_FUSIONS = ("moe", "concat", "gated", "score")
LOSS_TERMS = ("task", "ewc", "replay", "full")
TOL = 1e-4
STEP = 1e-5


@dataclass
class ToyProblem:
    model: CMKLModel
    graph: Graph
    replay_graph: Graph
    pos: np.ndarray
    neg: np.ndarray
    replay_pos: np.ndarray
    replay_neg: np.ndarray
    anchor: FisherAnchor
    ewc: EWCConfig
    entities: np.ndarray
    labels: np.ndarray


def toy_problem(
    fusion: str = "moe",
    seed: int = 0,
    dim: int = 8,
    n_entities: int = 20,
    n_relations: int = 2,
    **model_kw,
) -> ToyProblem:
    rng = np.random.default_rng(seed)
    d_text, d_mol = 5, 6
    features = FeatureStore(d_text=d_text, d_mol=d_mol)
    for e in range(n_entities):
        if e % 3:
            features.text[e] = rng.standard_normal(d_text)
        if e % 4 == 0:
            features.mol[e] = (rng.random(d_mol) < 0.5).astype(float)
    cfg = ModelConfig(dim=dim, n_bases=3, fusion=fusion, **model_kw)
    model = CMKLModel(cfg, n_entities, n_relations, 3, features, seed)
    # O(1) activations keep every gradient coordinate well above the
    # central-difference roundoff floor (~ulp(L) / 2h)
    for _, name, value in model.params.items():
        if name.endswith((".b", ".b1", ".b2", ".beta")) or name.endswith("default"):
            value[...] = 0.5 * rng.standard_normal(value.shape)
        elif name == "E0":
            value[...] = rng.standard_normal(value.shape)

    def triples(n):
        h = rng.integers(0, n_entities, n)
        t = (h + rng.integers(1, n_entities, n)) % n_entities
        return np.stack([h, rng.integers(0, n_relations, n), t], axis=1)

    edges = triples(40)
    pos = triples(12)
    replay_pos = triples(6)
    neg = sample_negatives(pos, np.arange(n_entities), 3, rng)
    replay_neg = sample_negatives(replay_pos, np.arange(n_entities), 3, rng)

    # kept small so the penalty stays O(1); a large loss raises the roundoff floor
    fisher = {n: 0.1 * rng.random(v.shape) for _, n, v in model.params.items()}
    theta = {n: v + 0.05 * rng.standard_normal(v.shape) for _, n, v in model.params.items()}
    groups = {n: g for g, n, _ in model.params.items()}
    return ToyProblem(
        model,
        Graph.from_triples(edges, n_entities),
        Graph.from_triples(np.concatenate([edges, replay_pos]), n_entities),
        pos,
        neg,
        replay_pos,
        replay_neg,
        FisherAnchor(fisher, theta, groups),
        EWCConfig(),
        np.arange(n_entities),
        rng.integers(0, 3, n_entities),
    )


def objective(problem: ToyProblem, terms: str, track: str = "link-prediction", alpha: float = 1.0, margin: float = 1.0):
    """Loss closure over parameter leaves for the requested term combination."""
    use_ewc = terms in ("ewc", "full")
    use_replay = terms in ("replay", "full")
    graph = problem.replay_graph if use_replay else problem.graph
    m = problem.model

    def loss_fn(p):
        emb = m.embed(p, graph)
        if track == "classification":
            task = m.classification_loss(p, emb, problem.entities, problem.labels)
            replay = m.classification_loss(p, emb, problem.entities[::2], problem.labels[::2])
        else:
            task = m.margin_loss(p, emb, problem.pos, problem.neg, margin)
            replay = m.margin_loss(p, emb, problem.replay_pos, problem.replay_neg, margin)
        ewc = ewc_penalty(p, problem.anchor, problem.ewc) if use_ewc else 0.0
        loss = total_loss(task, ewc, replay if use_replay else 0.0, alpha, task_index=2)
        reg = m.regularizer(emb)
        return loss if reg is None else loss + reg

    return loss_fn


def run_gradcheck(
    fusion: str = "moe",
    terms: str = "full",
    track: str = "link-prediction",
    seed: int = 0,
    h: float = STEP,
    corrupt: str | None = None,
    **model_kw,
) -> list[TensorReport]:
    """Per-tensor max relative error of the analytic gradient.

    ``corrupt`` names a tensor whose analytic gradient is deliberately scaled by 1.5
    (negative control).
    """
    problem = toy_problem(fusion, seed, **model_kw)
    loss_fn = objective(problem, terms, track)
    grads = analytic_grads(loss_fn, problem.model.params)
    if corrupt is not None:
        if corrupt not in grads:
            raise KeyError(f"no tensor named {corrupt!r}")
        grads[corrupt] = grads[corrupt] * 1.5 + 1e-3
    return grad_check(loss_fn, problem.model.params, h=h, grads=grads)


def format_reports(reports: list[TensorReport], tol: float = TOL) -> str:
    lines = [f"{'tensor':<22} {'group':<15} {'max rel err':>12} {'kinks':>5}  status"]
    for r in reports:
        lines.append(f"{r.name:<22} {r.group:<15} {r.max_rel_error:12.3e} {r.kinks:>5}  {'ok' if r.passed(tol) else 'FAIL'}")
    return "\n".join(lines)
