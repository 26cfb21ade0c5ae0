import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cmkl.kgdata import (
    FeatureStore,
    ParseError,
    SynthConfig,
    TaskSequence,
    Vocab,
    generate_synthetic,
    load_dataset,
    load_features,
    load_triples,
    save_dataset,
    split_entities,
    split_task,
)


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_load_triples_first_seen_ids(tmp_path):
    ents, rels = Vocab(), Vocab()
    t = load_triples(write(tmp_path, "t.tsv", "a\tR\tb\nb\tR\tc\n"), ents, rels)
    assert t.tolist() == [[0, 0, 1], [1, 0, 2]]
    assert ents.to_dict() == {"a": 0, "b": 1, "c": 2}
    assert rels.to_dict() == {"R": 0}


def test_load_triples_empty_file(tmp_path):
    ents, rels = Vocab(["x"]), Vocab()
    t = load_triples(write(tmp_path, "t.tsv", ""), ents, rels)
    assert t.shape == (0, 3)
    assert ents.names == ["x"] and len(rels) == 0


def test_load_triples_malformed_line(tmp_path):
    with pytest.raises(ParseError) as exc:
        load_triples(write(tmp_path, "t.tsv", "a\tR\n"), Vocab(), Vocab())
    assert exc.value.lineno == 1


def test_load_triples_skips_blank_lines_and_reports_later_line(tmp_path):
    with pytest.raises(ParseError) as exc:
        load_triples(write(tmp_path, "t.tsv", "a\tR\tb\n\na\tR\tb\textra\n"), Vocab(), Vocab())
    assert exc.value.lineno == 3


def test_load_features_text(tmp_path):
    ents = Vocab(["a"])
    f = load_features(write(tmp_path, "f.csv", "a,0.5,-1.0\n"), "text", ents)
    assert list(f) == [0]
    np.testing.assert_array_equal(f[0], [0.5, -1.0])


def test_load_features_mol(tmp_path):
    f = load_features(write(tmp_path, "f.csv", "a,1,0,1\n"), "mol", Vocab(["a"]))
    np.testing.assert_array_equal(f[0], [1, 0, 1])


def test_load_features_mol_rejects_non_binary(tmp_path):
    with pytest.raises(ParseError):
        load_features(write(tmp_path, "f.csv", "a,1,0.5\n"), "mol", Vocab(["a"]))


def test_load_features_width_mismatch(tmp_path):
    with pytest.raises(ParseError) as exc:
        load_features(write(tmp_path, "f.csv", "a,1,2\nb,1\n"), "text", Vocab(["a", "b"]))
    assert exc.value.lineno == 2


def test_load_features_unknown_entity_warns(tmp_path):
    with pytest.warns(UserWarning, match="skipped 1"):
        f = load_features(write(tmp_path, "f.csv", "a,1\nzz,2\n"), "text", Vocab(["a"]))
    assert list(f) == [0]


def test_split_sizes_floor_allocation():
    t = np.arange(30).reshape(10, 3)
    assert split_task(t, seed=1).sizes() == (7, 1, 2)


def test_split_deterministic():
    t = np.arange(60).reshape(20, 3)
    a, b = split_task(t, seed=5), split_task(t, seed=5)
    np.testing.assert_array_equal(a.train, b.train)
    np.testing.assert_array_equal(a.test, b.test)


def test_split_tiny_collection_warns():
    with pytest.warns(UserWarning):
        d = split_task(np.arange(6).reshape(2, 3))
    assert d.sizes() == (2, 0, 0)


def test_split_empty_raises():
    with pytest.raises(ValueError):
        split_task(np.zeros((0, 3), dtype=np.int64))


@settings(max_examples=60, deadline=None)
@given(n=st.integers(3, 400), seed=st.integers(0, 2**31 - 1))
def test_split_properties(n, seed):
    t = np.stack([np.arange(n), np.zeros(n, dtype=int), np.arange(n) + 1], axis=1)
    d = split_task(t, seed=seed)
    tr, va, te = d.sizes()
    assert tr + va + te == n
    assert abs(va - 0.1 * n) <= 1 and abs(te - 0.2 * n) <= 1 and abs(tr - 0.7 * n) <= 1
    rows = {tuple(r) for r in d.all_triples.tolist()}
    assert len(rows) == n


def test_split_entities_codes():
    labels = np.array([0, 1, -1, 2, 0, 1, 2, 0, 1, 2, 0])
    codes = split_entities(labels, seed=0)
    assert codes[2] == -1
    assert sorted(np.unique(codes[labels >= 0]).tolist()) == [0, 1, 2]
    assert np.count_nonzero(codes == 0) == 7


def test_synthetic_shape_contract():
    seq, _ = generate_synthetic(SynthConfig(n_types=2, entities_per_type=10, n_tasks=2, triples_per_task=40), seed=0)
    assert isinstance(seq, TaskSequence)
    assert len(seq.tasks) == 2 and seq.n_entities == 20
    assert set(seq.entity_types.tolist()) == {0, 1}


def test_synthetic_tasks_group_by_head_type():
    seq, _ = generate_synthetic(SynthConfig(n_types=3, n_tasks=3), seed=2)
    for k, task in enumerate(seq.tasks):
        assert set(seq.entity_types[task.all_triples[:, 0]].tolist()) == {k}


def test_synthetic_zero_noise_text_identical_within_type():
    seq, fs = generate_synthetic(SynthConfig(text_noise=0.0), seed=1)
    for t in range(seq.n_types):
        vecs = [fs.text[e] for e in np.flatnonzero(seq.entity_types == t)]
        assert all(np.array_equal(vecs[0], v) for v in vecs)


def test_synthetic_mol_only_on_designated_type():
    seq, fs = generate_synthetic(SynthConfig(mol_type=1, mol_coverage=0.5), seed=3)
    assert fs.mol and all(seq.entity_types[e] == 1 for e in fs.mol)
    assert all(set(np.unique(v).tolist()) <= {0.0, 1.0} for v in fs.mol.values())


def test_synthetic_rejects_empty():
    with pytest.raises(ValueError):
        generate_synthetic(SynthConfig(n_types=0), seed=0)
    with pytest.raises(ValueError):
        generate_synthetic(SynthConfig(entities_per_type=0), seed=0)


def _dir_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_synthetic_byte_identical(tmp_path):
    for name in ("a", "b"):
        seq, fs = generate_synthetic(SynthConfig(), seed=11)
        save_dataset(seq, fs, tmp_path / name)
    assert _dir_bytes(tmp_path / "a") == _dir_bytes(tmp_path / "b")


def test_dataset_round_trip(tmp_path):
    seq, fs = generate_synthetic(SynthConfig(n_tasks=2, n_types=2), seed=4)
    save_dataset(seq, fs, tmp_path)
    seq2, fs2 = load_dataset(tmp_path)
    assert seq2.entity_vocab == seq.entity_vocab and seq2.relation_vocab == seq.relation_vocab
    for a, b in zip(seq.tasks, seq2.tasks):
        np.testing.assert_array_equal(a.train, b.train)
        np.testing.assert_array_equal(a.test, b.test)
    np.testing.assert_array_equal(seq.entity_types, seq2.entity_types)
    assert fs2.d_text == fs.d_text and set(fs2.text) == set(fs.text)
    for e in fs.text:
        np.testing.assert_array_equal(fs.text[e], fs2.text[e])
    assert {e: v.tolist() for e, v in fs.mol.items()} == {e: v.tolist() for e, v in fs2.mol.items()}


def test_load_dataset_unsplit_files(tmp_path):
    lines = "".join(f"e{i}\tR\te{i + 1}\n" for i in range(20))
    write(tmp_path, "task_1.tsv", lines)
    seq, fs = load_dataset(tmp_path, seed=0)
    assert len(seq.tasks) == 1 and seq.tasks[0].sizes() == (14, 2, 4)
    assert fs.text == {} and seq.n_types == 0


def test_load_dataset_missing(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path)


def test_feature_store_dense_masks():
    fs = FeatureStore(text={1: np.array([1.0, 2.0])}, d_text=2, d_mol=3)
    xt, ht, xm, hm = fs.dense(3)
    assert ht.tolist() == [False, True, False] and not hm.any()
    assert xt.shape == (3, 2) and xm.shape == (3, 3)


def test_validate_rejects_out_of_vocab():
    from cmkl.kgdata import TaskDataset, empty_triples

    seq = TaskSequence([TaskDataset(1, np.array([[0, 0, 5]]), empty_triples(), empty_triples())], Vocab(["a"]), Vocab(["R"]))
    with pytest.raises(ValueError):
        seq.validate()


def test_split_sizes_remainder_rebalanced():
    from cmkl.kgdata import split_sizes

    # plain floor allocation would give (20, 2, 5): train 1.1 over its share
    assert split_sizes(27) == (19, 3, 5)
    assert split_sizes(10) == (7, 1, 2)
    assert split_sizes(100) == (70, 10, 20)
