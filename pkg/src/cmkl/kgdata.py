"""Knowledge-graph data model, file ingestion, splitting and synthetic benchmarks.

Triples are held as ``(n, 3)`` int64 arrays of ``(head, rel, tail)`` ids. Ids are
dense and assigned in first-seen order by :class:`Vocab`.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

log = logging.getLogger(__name__)

SPLIT_RATIOS = (0.7, 0.1, 0.2)


class ParseError(ValueError):
    def __init__(self, path, lineno: int, msg: str):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.path = path
        self.lineno = lineno


class Triple(NamedTuple):
    head: int
    rel: int
    tail: int


class Vocab:
    """Bidirectional name <-> dense id table."""

    def __init__(self, names: Iterable[str] = ()):
        self.names: list[str] = []
        self.ids: dict[str, int] = {}
        for n in names:
            self.add(n)

    def add(self, name: str) -> int:
        idx = self.ids.get(name)
        if idx is None:
            idx = len(self.names)
            self.ids[name] = idx
            self.names.append(name)
        return idx

    def __len__(self) -> int:
        return len(self.names)

    def __contains__(self, name: str) -> bool:
        return name in self.ids

    def __getitem__(self, name: str) -> int:
        return self.ids[name]

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.names == other.names

    def to_dict(self) -> dict[str, int]:
        return dict(self.ids)


def empty_triples() -> np.ndarray:
    return np.zeros((0, 3), dtype=np.int64)


@dataclass
class TaskDataset:
    task_id: int
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray

    @property
    def all_triples(self) -> np.ndarray:
        return np.concatenate([self.train, self.valid, self.test])

    @property
    def entities(self) -> np.ndarray:
        t = self.all_triples
        return np.unique(np.concatenate([t[:, 0], t[:, 2]]))

    @property
    def relations(self) -> np.ndarray:
        return np.unique(self.all_triples[:, 1])

    def sizes(self) -> tuple[int, int, int]:
        return len(self.train), len(self.valid), len(self.test)


@dataclass
class TaskSequence:
    tasks: list[TaskDataset]
    entity_vocab: Vocab
    relation_vocab: Vocab
    # type index per entity id, -1 when unlabeled
    entity_types: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    type_names: list[str] = field(default_factory=list)

    @property
    def n_entities(self) -> int:
        return len(self.entity_vocab)

    @property
    def n_relations(self) -> int:
        return len(self.relation_vocab)

    @property
    def n_types(self) -> int:
        return len(self.type_names)

    def __len__(self) -> int:
        return len(self.tasks)

    def all_triples(self) -> np.ndarray:
        return np.concatenate([t.all_triples for t in self.tasks]) if self.tasks else empty_triples()

    def validate(self) -> None:
        for k, task in enumerate(self.tasks, start=1):
            if task.task_id != k:
                raise ValueError(f"task ids must run 1..K in order, got {task.task_id} at position {k}")
            t = task.all_triples
            if len(t) and (t[:, [0, 2]].max() >= self.n_entities or t[:, 1].max() >= self.n_relations or t.min() < 0):
                raise ValueError(f"task {k} references ids outside the vocabularies")


@dataclass
class FeatureStore:
    """Partial per-entity text vectors and molecular bit vectors."""

    text: dict[int, np.ndarray] = field(default_factory=dict)
    mol: dict[int, np.ndarray] = field(default_factory=dict)
    d_text: int = 0
    d_mol: int = 0

    def dense(self, n_entities: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """``(X_text, has_text, X_mol, has_mol)`` with zero rows where absent."""
        x_text = np.zeros((n_entities, max(self.d_text, 1)))
        has_text = np.zeros(n_entities, dtype=bool)
        for e, v in self.text.items():
            x_text[e] = v
            has_text[e] = True
        x_mol = np.zeros((n_entities, max(self.d_mol, 1)))
        has_mol = np.zeros(n_entities, dtype=bool)
        for e, v in self.mol.items():
            x_mol[e] = v
            has_mol[e] = True
        return x_text, has_text, x_mol, has_mol


# ---------------------------------------------------------------- file formats


def load_triples(path: str | Path, entity_vocab: Vocab, relation_vocab: Vocab) -> np.ndarray:
    """Read ``head<TAB>rel<TAB>tail`` lines, extending both vocabularies in place."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(path, lineno, f"expected 3 tab-separated fields, got {len(parts)}")
            h, r, t = parts
            rows.append((entity_vocab.add(h), relation_vocab.add(r), entity_vocab.add(t)))
    return np.array(rows, dtype=np.int64).reshape(-1, 3)


def write_triples(path: str | Path, triples: np.ndarray, entity_vocab: Vocab, relation_vocab: Vocab) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for h, r, t in triples:
            fh.write(f"{entity_vocab.names[h]}\t{relation_vocab.names[r]}\t{entity_vocab.names[t]}\n")


def load_features(path: str | Path, kind: str, entity_vocab: Vocab) -> dict[int, np.ndarray]:
    """Read ``name,v1,...,vd`` rows. Unknown entity names are skipped with a warning."""
    if kind not in ("text", "mol"):
        raise ValueError(f"feature kind must be 'text' or 'mol', got {kind!r}")
    out: dict[int, np.ndarray] = {}
    width = None
    skipped = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            name, *raw = line.split(",")
            if width is None:
                width = len(raw)
            elif len(raw) != width:
                raise ParseError(path, lineno, f"row width {len(raw)} != {width}")
            try:
                vec = np.array([float(x) for x in raw])
            except ValueError as exc:
                raise ParseError(path, lineno, str(exc)) from None
            if kind == "mol" and not np.all((vec == 0.0) | (vec == 1.0)):
                raise ParseError(path, lineno, "molecular features must be binary")
            if name not in entity_vocab:
                skipped += 1
                continue
            out[entity_vocab[name]] = vec
    if skipped:
        warnings.warn(f"{path}: skipped {skipped} rows with unknown entity names", stacklevel=2)
    return out


def write_features(path: str | Path, features: dict[int, np.ndarray], entity_vocab: Vocab, binary: bool = False) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in sorted(features):
            vals = features[e]
            body = ",".join(str(int(v)) for v in vals) if binary else ",".join(repr(float(v)) for v in vals)
            fh.write(f"{entity_vocab.names[e]},{body}\n")


def load_type_labels(path: str | Path, entity_vocab: Vocab) -> tuple[np.ndarray, list[str]]:
    """Read ``name,type-name`` rows; entities are added to the vocabulary in file order."""
    type_vocab = Vocab()
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise ParseError(path, lineno, "expected name,type-name")
            pairs.append((entity_vocab.add(parts[0]), type_vocab.add(parts[1])))
    types = np.full(len(entity_vocab), -1, dtype=np.int64)
    for e, t in pairs:
        types[e] = t
    return types, type_vocab.names


# ---------------------------------------------------------------- splitting


def split_sizes(n: int, ratios=SPLIT_RATIOS) -> tuple[int, int, int]:
    """Floor-allocated valid/test sizes with the remainder to train.

    When the remainder would push train more than one item past its share, one
    item goes to whichever of valid/test has the larger fractional part, so every
    split stays within one item of its ratio.
    """
    exact = [ratios[1] * n, ratios[2] * n]
    n_valid, n_test = (int(np.floor(x + 1e-9)) for x in exact)
    if n - n_valid - n_test - ratios[0] * n > 1.0 + 1e-9:
        if exact[0] - n_valid >= exact[1] - n_test:
            n_valid += 1
        else:
            n_test += 1
    return n - n_valid - n_test, n_valid, n_test


def split_task(triples: np.ndarray, task_id: int = 1, ratios=SPLIT_RATIOS, seed: int = 0) -> TaskDataset:
    """Seeded shuffle into train/valid/test with sizes from :func:`split_sizes`."""
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {ratios}")
    n = len(triples)
    if n == 0:
        raise ValueError("cannot split an empty triple collection")
    if n < 3:
        warnings.warn(f"task {task_id}: only {n} triples, all assigned to train", stacklevel=2)
        return TaskDataset(task_id, triples.copy(), empty_triples(), empty_triples())
    order = np.random.default_rng(seed).permutation(n)
    n_train, n_valid, n_test = split_sizes(n, ratios)
    shuffled = triples[order]
    return TaskDataset(
        task_id,
        shuffled[:n_train],
        shuffled[n_train : n_train + n_valid],
        shuffled[n_train + n_valid :],
    )


def split_entities(labels: np.ndarray, ratios=SPLIT_RATIOS, seed: int = 0) -> np.ndarray:
    """Per-entity split code (0 train, 1 valid, 2 test; -1 unlabeled) for the classification track."""
    labels = np.asarray(labels, dtype=np.int64)
    out = np.full(len(labels), -1, dtype=np.int64)
    labeled = np.flatnonzero(labels >= 0)
    order = labeled[np.random.default_rng(seed).permutation(len(labeled))]
    n_train, n_valid, n_test = split_sizes(len(order), ratios)
    out[order[:n_train]] = 0
    out[order[n_train : n_train + n_valid]] = 1
    out[order[n_train + n_valid :]] = 2
    return out


# ---------------------------------------------------------------- dataset directories

SPLITS = ("train", "valid", "test")


def save_dataset(seq: TaskSequence, features: FeatureStore, root: str | Path) -> None:
    """Write a dataset directory readable by :func:`load_dataset`."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    (root / "entities.txt").write_text("".join(f"{n}\n" for n in seq.entity_vocab.names), encoding="utf-8")
    (root / "relations.txt").write_text("".join(f"{n}\n" for n in seq.relation_vocab.names), encoding="utf-8")
    if seq.type_names:
        with open(root / "types.csv", "w", encoding="utf-8") as fh:
            for e, t in enumerate(seq.entity_types):
                if t >= 0:
                    fh.write(f"{seq.entity_vocab.names[e]},{seq.type_names[t]}\n")
    for task in seq.tasks:
        d = root / f"task_{task.task_id}"
        d.mkdir(exist_ok=True)
        for split in SPLITS:
            write_triples(d / f"{split}.tsv", getattr(task, split), seq.entity_vocab, seq.relation_vocab)
    if features.text:
        write_features(root / "text_features.csv", features.text, seq.entity_vocab)
    if features.mol:
        write_features(root / "mol_features.csv", features.mol, seq.entity_vocab, binary=True)


def _read_names(path: Path) -> list[str]:
    return [line.rstrip("\n") for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


def load_dataset(root: str | Path, seed: int = 0) -> tuple[TaskSequence, FeatureStore]:
    """Load ``task_<k>/{train,valid,test}.tsv`` dirs or unsplit ``task_<k>.tsv`` files.

    Optional ``entities.txt`` / ``relations.txt`` fix the id order; otherwise ids
    follow first-seen order across the files.
    """
    root = Path(root)
    ents = Vocab(_read_names(root / "entities.txt")) if (root / "entities.txt").exists() else Vocab()
    rels = Vocab(_read_names(root / "relations.txt")) if (root / "relations.txt").exists() else Vocab()
    types, type_names = (np.zeros(0, dtype=np.int64), [])
    if (root / "types.csv").exists():
        types, type_names = load_type_labels(root / "types.csv", ents)

    tasks = []
    k = 1
    while True:
        d, f = root / f"task_{k}", root / f"task_{k}.tsv"
        if d.is_dir():
            parts = [load_triples(d / f"{s}.tsv", ents, rels) if (d / f"{s}.tsv").exists() else empty_triples() for s in SPLITS]
            tasks.append(TaskDataset(k, *parts))
        elif f.exists():
            tasks.append(split_task(load_triples(f, ents, rels), task_id=k, seed=seed + k))
        else:
            break
        k += 1
    if not tasks:
        raise FileNotFoundError(f"{root}: no task_<k> directories or task_<k>.tsv files")

    full_types = np.full(len(ents), -1, dtype=np.int64)
    full_types[: len(types)] = types
    seq = TaskSequence(tasks, ents, rels, full_types, list(type_names))
    seq.validate()

    fs = FeatureStore()
    if (root / "text_features.csv").exists():
        fs.text = load_features(root / "text_features.csv", "text", ents)
        fs.d_text = len(next(iter(fs.text.values()))) if fs.text else 0
    if (root / "mol_features.csv").exists():
        fs.mol = load_features(root / "mol_features.csv", "mol", ents)
        fs.d_mol = len(next(iter(fs.mol.values()))) if fs.mol else 0
    return seq, fs


# ---------------------------------------------------------------- synthetic benchmark


@dataclass
class SynthConfig:
    n_types: int = 3
    entities_per_type: int = 30
    n_tasks: int = 3
    n_relations: int = 4
    triples_per_task: int = 300
    d_text: int = 16
    d_mol: int = 32
    mol_coverage: float = 0.5
    text_coverage: float = 1.0
    text_noise: float = 0.1
    latent_dim: int = 8
    # weight of the per-type mean in the latent entity factors
    type_signal: float = 1.0
    mol_type: int = 0


def generate_synthetic(config: SynthConfig, seed: int) -> tuple[TaskSequence, FeatureStore]:
    """Latent-factor KG whose tasks group triples by head-entity type.

    Every head of a task's type contributes the same number of triples: its
    top-scoring ``(rel, tail)`` pairs under a ground-truth diagonal bilinear
    model, so a DistMult decoder can fit the data.
    """
    c = config
    if c.n_types <= 0 or c.entities_per_type <= 0:
        raise ValueError("synthetic config needs at least one type and one entity per type")
    if c.n_tasks <= 0 or c.n_tasks > c.n_types:
        raise ValueError(f"n_tasks must be in 1..n_types, got {c.n_tasks} for {c.n_types} types")
    if c.n_relations <= 0:
        raise ValueError("n_relations must be positive")

    root = np.random.SeedSequence(seed)
    rng_latent, rng_split, rng_text, rng_mol = (np.random.default_rng(s) for s in root.spawn(4))

    n = c.n_types * c.entities_per_type
    types = np.repeat(np.arange(c.n_types), c.entities_per_type)
    ents = Vocab(f"t{types[e]}_e{e % c.entities_per_type}" for e in range(n))
    rels = Vocab(f"rel{r}" for r in range(c.n_relations))
    type_names = [f"type{t}" for t in range(c.n_types)]

    type_means = rng_latent.standard_normal((c.n_types, c.latent_dim))
    z = c.type_signal * type_means[types] + rng_latent.standard_normal((n, c.latent_dim))
    rho = rng_latent.standard_normal((c.n_relations, c.latent_dim))
    # score[h, r, t]
    score = np.einsum("hd,rd,td->hrt", z, rho, z)
    score[np.arange(n), :, np.arange(n)] = -np.inf

    tasks = []
    for k in range(c.n_tasks):
        heads = np.flatnonzero(types % c.n_tasks == k)
        per_head = max(1, c.triples_per_task // len(heads))
        rows = []
        for h in heads:
            flat = score[h].ravel()
            top = np.argsort(-flat, kind="stable")[:per_head]
            r, t = np.unravel_index(top, score[h].shape)
            rows.extend((int(h), int(ri), int(ti)) for ri, ti in zip(r, t))
        triples = np.array(rows, dtype=np.int64)
        tasks.append(split_task(triples, task_id=k + 1, seed=int(rng_split.integers(2**31))))

    fs = FeatureStore(d_text=c.d_text, d_mol=c.d_mol)
    text_mask = rng_text.random(n) < c.text_coverage
    noise = rng_text.standard_normal((n, c.d_text))
    for e in range(n):
        if text_mask[e]:
            centroid = np.zeros(c.d_text)
            centroid[types[e] % c.d_text] = 1.0
            fs.text[e] = centroid + c.text_noise * noise[e]
    mol_cands = np.flatnonzero(types == c.mol_type)
    mol_mask = rng_mol.random(len(mol_cands)) < c.mol_coverage
    bits = (rng_mol.random((len(mol_cands), c.d_mol)) < 0.5).astype(np.float64)
    for e, keep, b in zip(mol_cands, mol_mask, bits):
        if keep:
            fs.mol[int(e)] = b
    seq = TaskSequence(tasks, ents, rels, types.astype(np.int64), type_names)
    seq.validate()
    return seq, fs
