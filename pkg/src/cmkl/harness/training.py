"""Sequential training over a task sequence, with per-task evaluation."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from cmkl.continual import EWCState, ReplayBuffer, compute_fisher, rebalance_buffer, sample_replay, total_loss
from cmkl.encoders import Graph
from cmkl.evalharness import CLMetrics, FilterIndex, cl_metrics, evaluate_lp, evaluate_nc
from cmkl.harness.config import ExperimentConfig, canonical_json, resolve
from cmkl.kgdata import FeatureStore, TaskSequence, generate_synthetic, load_dataset, split_entities
from cmkl.model import CMKLModel
from cmkl.numcore import AdamState, adam_step, grads_from_leaves
from cmkl.numcore import tape as T
from cmkl.scoring import sample_negatives

log = logging.getLogger(__name__)


def prepare_data(cfg: ExperimentConfig) -> tuple[TaskSequence, FeatureStore]:
    if cfg.data.source == "synthetic":
        return generate_synthetic(cfg.data.synthetic, cfg.data.seed)
    return load_dataset(cfg.data.path, seed=cfg.data.seed)


@dataclass
class RunResult:
    R: np.ndarray
    metrics: CLMetrics
    payload: dict
    model: CMKLModel
    buffer: ReplayBuffer
    events: list[tuple[int, str]] = field(default_factory=list)
    router_rows: list[tuple[int, int, float, float, float]] = field(default_factory=list)


class SequenceRunner:
    """One (config, seed) cell."""

    def __init__(self, cfg: ExperimentConfig, seed: int, data: tuple[TaskSequence, FeatureStore] | None = None, trace: bool = False):
        self.cfg = cfg
        self.seed = seed
        self.resolved = resolve(cfg)
        self.seq, self.features = data if data is not None else prepare_data(cfg)
        self.trace = trace
        self.events: list[tuple[int, str]] = []

        # independent streams so disabling one mechanism never shifts another's draws
        streams = np.random.SeedSequence(seed).spawn(6)
        init_seed = int(streams[0].generate_state(1)[0])
        self.rng_batch, self.rng_neg, self.rng_replay, self.rng_fisher, self.rng_kmeans = (
            np.random.default_rng(s) for s in streams[1:]
        )

        model_cfg = dataclasses.replace(cfg.model, fusion=self.resolved.fusion)
        n_types = self.seq.n_types if cfg.track == "classification" else 0
        self.model = CMKLModel(model_cfg, self.seq.n_entities, self.seq.n_relations, n_types, self.features, init_seed)
        self.adam = AdamState(lr=cfg.train.lr)
        self.ewc = EWCState(self.resolved.ewc)
        self.buffer = ReplayBuffer(self.resolved.buffer_size)
        self.filter = FilterIndex(self.seq.all_triples())
        self.pool = np.arange(self.seq.n_entities)
        self.entity_split = split_entities(self.seq.entity_types, seed=cfg.data.seed)
        self.eval_graphs = {t.task_id: Graph.from_triples(t.train, self.seq.n_entities) for t in self.seq.tasks}
        self.router_rows: list[tuple[int, int, float, float, float]] = []

    def _event(self, k: int, name: str) -> None:
        if self.trace:
            self.events.append((k, name))

    # ------------------------------------------------------------ per-track pieces

    @property
    def classification(self) -> bool:
        return self.cfg.track == "classification"

    def _nc_entities(self, triples: np.ndarray, split: int) -> np.ndarray:
        ents = np.unique(np.concatenate([triples[:, 0], triples[:, 2]])) if len(triples) else np.zeros(0, dtype=np.int64)
        labels = self.seq.entity_types[ents]
        return ents[(labels >= 0) & (self.entity_split[ents] == split)]

    def _training_items(self, task_triples: np.ndarray) -> np.ndarray:
        return self._nc_entities(task_triples, 0) if self.classification else task_triples

    def _item_loss(self, p, emb, items: np.ndarray, rng: np.random.Generator):
        if self.classification:
            return self.model.classification_loss(p, emb, items, self.seq.entity_types[items])
        neg = sample_negatives(items, self.pool, self.cfg.train.n_neg, rng)
        return self.model.margin_loss(p, emb, items, neg, self.cfg.train.margin)

    def _replay_loss(self, p, emb):
        batch = sample_replay(self.buffer, self.cfg.train.batch_size, self.rng_replay)
        if self.classification:
            batch = self._nc_entities(batch, 0)
        if len(batch) == 0:
            return 0.0
        return self._item_loss(p, emb, batch, self.rng_replay)

    # ------------------------------------------------------------ training

    def _graph(self, k: int, task_train: np.ndarray) -> Graph:
        edges = task_train
        if k > 1 and self.resolved.uses_replay and len(self.buffer):
            edges = np.concatenate([task_train, self.buffer.triples])
        return Graph.from_triples(edges, self.seq.n_entities)

    def _step(self, k: int, items: np.ndarray, graph: Graph) -> float:
        p = self.model.params.leaves()
        hs, ht, hm = self.model.encode(p, graph)
        self._event(k, "encode")
        emb = self.model.fuse(hs, ht, hm, p)
        self._event(k, "fuse")
        task = self._item_loss(p, emb, items, self.rng_neg)
        self._event(k, "task_loss")
        ewc = replay = 0.0
        if k > 1:
            if self.resolved.uses_ewc:
                ewc = self.ewc.penalty(p)
                self._event(k, "ewc")
            if self.resolved.uses_replay:
                replay = self._replay_loss(p, emb)
                self._event(k, "replay")
        loss = total_loss(task, ewc, replay, self.resolved.alpha, k)
        reg = self.model.regularizer(emb)
        if reg is not None:
            loss = loss + reg
        T.backward(loss)
        adam_step(self.model.params, grads_from_leaves(self.model.params, p), self.adam)
        self._event(k, "update")
        return float(loss.value)

    def _epoch_batches(self, items: np.ndarray) -> list[np.ndarray]:
        tpe = self.cfg.train.triples_per_epoch
        if tpe is not None and not self.classification:
            order = self.rng_batch.integers(0, len(items), size=tpe)
        else:
            order = self.rng_batch.permutation(len(items))
        bs = self.cfg.train.batch_size
        return [items[order[i : i + bs]] for i in range(0, len(order), bs)]

    def train_task(self, k: int, task_train: np.ndarray, epochs: int) -> None:
        items = self._training_items(task_train)
        if len(items) == 0:
            log.warning("task %d has no training items; skipping", k)
            return
        graph = self._graph(k, task_train)
        for epoch in range(epochs):
            for batch in self._epoch_batches(items):
                loss = self._step(k, batch, graph)
            log.debug("task %d epoch %d loss %.5f", k, epoch + 1, loss)
        self._log_router(k, graph, task_train)
        if self.resolved.uses_ewc:
            self._consolidate(k, items, graph)
        if self.resolved.uses_replay:
            self._rebalance(k, task_train, graph)

    def _consolidate(self, k: int, items: np.ndarray, graph: Graph) -> None:
        def batch_grads():
            for _ in range(self.cfg.train.fisher_batches):
                batch = items[self.rng_fisher.integers(0, len(items), size=min(self.cfg.train.batch_size, len(items)))]
                p = self.model.params.leaves()
                emb = self.model.embed(p, graph)
                T.backward(self._item_loss(p, emb, batch, self.rng_fisher))
                yield grads_from_leaves(self.model.params, p)

        self.ewc.consolidate(compute_fisher(self.model.params, batch_grads()))
        self._event(k, "fisher")

    def _rebalance(self, k: int, task_train: np.ndarray, graph: Graph) -> None:
        hs = self.model.frozen_embeddings(graph).structural.value
        self.buffer = rebalance_buffer(self.buffer, task_train, k, hs, k, self.rng_kmeans)
        self._event(k, "rebalance")

    def _log_router(self, k: int, graph: Graph, task_train: np.ndarray) -> None:
        emb = self.model.frozen_embeddings(graph)
        if emb.weights is None:
            return
        ents = np.unique(np.concatenate([task_train[:, 0], task_train[:, 2]]))
        w = emb.weights.value
        for e in ents:
            self.router_rows.append((k, int(e), float(w[e, 0]), float(w[e, 1]), float(w[e, 2])))

    # ------------------------------------------------------------ evaluation

    def evaluate(self, task_index: int) -> float:
        task = self.seq.tasks[task_index - 1]
        graph = self.eval_graphs[task.task_id]
        if self.classification:
            ents = self._nc_entities(task.all_triples, 2)
            return evaluate_nc(lambda e: self.model.predict_types(graph, e), ents, self.seq.entity_types[ents])
        return evaluate_lp(self.model.scorer(graph), task.test, self.filter)

    def run(self) -> np.ndarray:
        K = len(self.seq.tasks)
        R = np.full((K, K), np.nan)
        self.R = R
        epochs = self.cfg.train.epochs
        if self.resolved.joint:
            union = np.concatenate([t.train for t in self.seq.tasks])
            self.train_task(1, union, epochs * K)
            for i in range(1, K + 1):
                R[K - 1, i - 1] = self.evaluate(i)
            self._event(1, "evaluate")
            return R
        for k, task in enumerate(self.seq.tasks, start=1):
            self.train_task(k, task.train, epochs)
            for i in range(1, k + 1):
                R[k - 1, i - 1] = self.evaluate(i)
            self._event(k, "evaluate")
            log.info("task %d/%d done: %s", k, K, np.round(R[k - 1, :k], 4).tolist())
        return R


def _nan_to_none(x):
    if isinstance(x, float) and math.isnan(x):
        return None
    if isinstance(x, list):
        return [_nan_to_none(v) for v in x]
    if isinstance(x, dict):
        return {k: _nan_to_none(v) for k, v in x.items()}
    return x


def build_payload(cfg: ExperimentConfig, seed: int, runner: SequenceRunner, R: np.ndarray, status: str = "ok", error: str | None = None) -> dict:
    metrics = cl_metrics(R) if np.isfinite(R).any() else None
    router = {}
    for k, _, ws, wt, wm in runner.router_rows:
        router.setdefault(k, []).append((ws, wt, wm))
    router_summary = {str(k): np.mean(v, axis=0).tolist() for k, v in sorted(router.items())}
    body = {
        "name": cfg.name,
        "method": cfg.method,
        "track": cfg.track,
        "fusion": runner.resolved.fusion,
        "seed": seed,
        "status": status,
        "error": error,
        "config_hash": cfg.digest(seed),
        "R": _nan_to_none(R.tolist()),
        "metrics": _nan_to_none(metrics.as_dict()) if metrics else None,
        "router_weights": router_summary,
        "buffer_counts": {str(k): v for k, v in runner.buffer.per_task_counts().items()},
        "config": cfg.to_dict(),
    }
    body["content_hash"] = hashlib.sha256(canonical_json(body).encode()).hexdigest()
    return body


def results_path(out_dir: str | Path, cfg: ExperimentConfig, seed: int) -> Path:
    return Path(out_dir) / f"{cfg.name}__{cfg.method}__seed{seed}.json"


def write_results(payload: dict, path: str | Path, elapsed: float | None = None) -> None:
    out = dict(payload)
    out["meta"] = {"timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"), "elapsed_sec": elapsed}
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(out, indent=2, sort_keys=True), encoding="utf-8")


def run_sequence(
    cfg: ExperimentConfig,
    seed: int,
    out_dir: str | Path | None = None,
    data: tuple[TaskSequence, FeatureStore] | None = None,
    trace: bool = False,
) -> RunResult:
    """Train and evaluate one (config, seed) cell; optionally write its results file."""
    start = time.perf_counter()
    runner = SequenceRunner(cfg, seed, data=data, trace=trace)
    try:
        R = runner.run()
    except Exception as exc:
        if out_dir is not None:
            partial = getattr(runner, "R", np.full((1, 1), np.nan))
            write_results(build_payload(cfg, seed, runner, partial, "failed", repr(exc)), results_path(out_dir, cfg, seed))
        raise
    payload = build_payload(cfg, seed, runner, R)
    if out_dir is not None:
        out_dir = Path(out_dir)
        write_results(payload, results_path(out_dir, cfg, seed), time.perf_counter() - start)
        if cfg.output.analysis:
            stem = results_path(out_dir, cfg, seed).with_suffix("")
            runner.buffer.to_csv(f"{stem}.buffer.csv")
            with open(f"{stem}.router.csv", "w", encoding="utf-8") as fh:
                fh.write("task,entity,w_s,w_t,w_m\n")
                for row in runner.router_rows:
                    fh.write("{},{},{!r},{!r},{!r}\n".format(*row))
    return RunResult(R, cl_metrics(R), payload, runner.model, runner.buffer, runner.events, runner.router_rows)
