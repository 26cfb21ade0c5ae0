from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from cmkl.continual.kmeans import kmeans, nearest_to_centroids
from cmkl.kgdata import empty_triples


@dataclass
class ReplayBuffer:
    capacity: int = 1000
    triples: np.ndarray = field(default_factory=empty_triples)
    tasks: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self) -> int:
        return len(self.triples)

    def per_task_counts(self) -> dict[int, int]:
        ids, counts = np.unique(self.tasks, return_counts=True)
        return {int(i): int(c) for i, c in zip(ids, counts)}

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("task,head,rel,tail\n")
            for task, (h, r, t) in zip(self.tasks, self.triples):
                fh.write(f"{task},{h},{r},{t}\n")


def select_exemplars(triples: np.ndarray, head_embeds: np.ndarray, quota: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of ``quota`` diverse triples: nearest-to-centroid per K-means cluster.

    Clustering runs on the head embeddings of ``triples``. When clusters come back
    empty (coincident embeddings), the shortfall is filled uniformly from the rest.
    """
    n = len(triples)
    if quota <= 0:
        return np.zeros(0, dtype=np.int64)
    if n <= quota:
        return np.arange(n)
    result = kmeans(head_embeds, quota, rng)
    picks = nearest_to_centroids(head_embeds, result)
    if len(picks) < quota:
        rest = np.setdiff1d(np.arange(n), picks)
        picks += [int(i) for i in rng.choice(rest, size=quota - len(picks), replace=False)]
    return np.array(picks, dtype=np.int64)


def rebalance_buffer(
    buffer: ReplayBuffer,
    new_triples: np.ndarray,
    new_task: int,
    struct_embeds: np.ndarray,
    k: int,
    rng: np.random.Generator,
) -> ReplayBuffer:
    """Re-cluster ``buffer`` plus the finished task's training triples.

    Each source task keeps ``capacity // k`` exemplars (all of them when it has
    fewer), chosen on the structural embeddings of head entities.
    """
    if buffer.capacity <= 0:
        return ReplayBuffer(buffer.capacity)
    pool = np.concatenate([buffer.triples, np.asarray(new_triples, dtype=np.int64).reshape(-1, 3)])
    pool_tasks = np.concatenate([buffer.tasks, np.full(len(new_triples), new_task, dtype=np.int64)])
    quota = buffer.capacity // k
    kept_triples, kept_tasks = [], []
    for task in np.unique(pool_tasks):
        members = np.flatnonzero(pool_tasks == task)
        chosen = members[select_exemplars(pool[members], struct_embeds[pool[members, 0]], quota, rng)]
        kept_triples.append(pool[chosen])
        kept_tasks.append(pool_tasks[chosen])
    triples = np.concatenate(kept_triples) if kept_triples else empty_triples()
    tasks = np.concatenate(kept_tasks) if kept_tasks else np.zeros(0, dtype=np.int64)
    return ReplayBuffer(buffer.capacity, triples, tasks)


def sample_replay(buffer: ReplayBuffer, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draws with replacement; empty buffer gives an empty batch."""
    if len(buffer) == 0 or batch_size <= 0:
        return empty_triples()
    return buffer.triples[rng.integers(0, len(buffer), size=batch_size)]
