import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cmkl.continual import (
    EWCConfig,
    EWCState,
    ReplayBuffer,
    compute_fisher,
    ewc_penalty,
    kmeans,
    nearest_to_centroids,
    rebalance_buffer,
    sample_replay,
    total_loss,
)
from cmkl.numcore import GROUPS, NonFiniteGradient, ParamSet
from cmkl.numcore import tape as T


def one_param(value=0.0, group="structural", name="x"):
    p = ParamSet()
    p.add(group, name, np.atleast_1d(np.asarray(value, dtype=float)))
    return p


# ---------------------------------------------------------------- Fisher / EWC


def test_fisher_mean_of_squares():
    a = compute_fisher(one_param(), [{"x": np.array([2.0])}, {"x": np.array([4.0])}])
    assert a.fisher["x"].tolist() == [10.0]


def test_fisher_zero_gradients_zero_penalty_forever():
    a = compute_fisher(one_param(1.0), [{"x": np.zeros(1)}] * 3)
    assert a.fisher["x"].tolist() == [0.0]
    assert float(ewc_penalty({"x": np.array([1e6])}, a, EWCConfig()).value) == 0.0


def test_fisher_rejects_non_finite_and_empty():
    with pytest.raises(NonFiniteGradient):
        compute_fisher(one_param(), [{"x": np.array([np.inf])}])
    with pytest.raises(ValueError):
        compute_fisher(one_param(), [])


@settings(max_examples=60, deadline=None)
@given(g=arrays(np.float64, (4, 3), elements=st.floats(-1e3, 1e3)), d=arrays(np.float64, (3,), elements=st.floats(-1e3, 1e3)))
def test_fisher_and_penalty_nonnegative(g, d):
    p = one_param(np.zeros(3))
    a = compute_fisher(p, [{"x": row} for row in g])
    assert np.all(a.fisher["x"] >= 0)
    assert float(ewc_penalty({"x": d}, a, EWCConfig()).value) >= 0


def test_penalty_zero_at_anchor():
    p = one_param([0.3, -1.2])
    a = compute_fisher(p, [{"x": np.array([1.0, 2.0])}])
    assert float(ewc_penalty(p, a, EWCConfig()).value) == 0.0


def test_penalty_hand_evaluated():
    a = compute_fisher(one_param(0.0), [{"x": np.array([np.sqrt(3.0)])}])
    a.fisher["x"][...] = 3.0
    cfg = EWCConfig(lambdas={"structural": 2.0, "text": 0.0, "molecular": 0.0, "fusion-decoder": 0.0})
    assert float(ewc_penalty({"x": np.array([0.5])}, a, cfg).value) == 1.5


def _four_group_anchor():
    p = ParamSet()
    rng = np.random.default_rng(0)
    for g in GROUPS:
        p.add(g, g + ".w", rng.standard_normal(3))
    a = compute_fisher(p, [{n: rng.standard_normal(3) for n in p.names()} for _ in range(2)])
    moved = {n: v + rng.standard_normal(3) for _, n, v in p.items()}
    return a, moved


@pytest.mark.parametrize("group", GROUPS)
@pytest.mark.parametrize("c", [2.0, 4.0])
def test_penalty_linear_in_each_lambda(group, c):
    a, moved = _four_group_anchor()
    base = EWCConfig()
    only = {g: (base.lambdas[g] if g == group else 0.0) for g in GROUPS}
    contrib = float(ewc_penalty(moved, a, EWCConfig(lambdas=only)).value)
    bumped = dict(base.lambdas, **{group: base.lambdas[group] * c})
    delta = float(ewc_penalty(moved, a, EWCConfig(lambdas=bumped)).value) - float(ewc_penalty(moved, a, base).value)
    assert delta == pytest.approx((c - 1) * contrib, rel=1e-12)
    scaled_only = float(ewc_penalty(moved, a, EWCConfig(lambdas={g: v * c for g, v in only.items()})).value)
    assert scaled_only == c * contrib


def test_ewc_modes():
    a, moved = _four_group_anchor()
    per_group = float(ewc_penalty(moved, a, EWCConfig()).value)
    uniform = float(ewc_penalty(moved, a, EWCConfig(mode="uniform")).value)
    off = float(ewc_penalty(moved, a, EWCConfig(mode="off")).value)
    raw = sum(float(np.sum(a.fisher[n] * (moved[n] - a.theta[n]) ** 2)) for n in moved)
    assert off == 0.0
    assert uniform == pytest.approx(10.0 * raw, rel=1e-12)
    assert per_group != uniform


def test_penalty_shape_mismatch():
    a = compute_fisher(one_param([0.0, 0.0]), [{"x": np.ones(2)}])
    with pytest.raises(ValueError):
        ewc_penalty({"x": np.zeros(3)}, a, EWCConfig())


def test_ewc_config_validation():
    with pytest.raises(ValueError):
        EWCConfig(mode="both")
    with pytest.raises(ValueError):
        EWCConfig(lambdas={"structural": 1.0})
    with pytest.raises(ValueError):
        EWCConfig(lambdas={g: -1.0 for g in GROUPS})


@pytest.mark.parametrize("mode,anchors,fisher", [("sum", 1, 5.0), ("replace", 1, 4.0), ("multi", 2, None)])
def test_ewc_state_accumulation(mode, anchors, fisher):
    s = EWCState(EWCConfig(accumulate=mode))
    s.consolidate(compute_fisher(one_param(0.0), [{"x": np.array([1.0])}]))
    s.consolidate(compute_fisher(one_param(1.0), [{"x": np.array([2.0])}]))
    assert len(s.anchors) == anchors
    assert s.anchors[-1].theta["x"].tolist() == [1.0]
    if fisher is not None:
        assert s.anchors[0].fisher["x"].tolist() == [fisher]
    assert float(s.penalty({"x": np.array([1.0])}).value) == (10.0 if mode == "multi" else 0.0)


# ---------------------------------------------------------------- K-means


def brute_force_kmeans(points, k):
    best = None
    for labels in itertools.product(range(k), repeat=len(points)):
        labels = np.array(labels)
        if len(set(labels.tolist())) < k:
            continue
        cents = np.array([points[labels == c].mean(axis=0) for c in range(k)])
        inertia = float(((points - cents[labels]) ** 2).sum())
        if best is None or inertia < best[0] - 1e-9:
            best = (inertia, labels, cents)
    return best


def _separated(seed, n, k):
    rng = np.random.default_rng(seed)
    centres = rng.standard_normal((k, 2)) * 20
    return centres[np.arange(n) % k] + rng.standard_normal((n, 2)) * 0.5


@pytest.mark.parametrize("seed", range(8))
@pytest.mark.parametrize("k", [2, 3])
def test_kmeans_matches_brute_force(seed, k):
    pts = _separated(seed, 8 if k == 2 else 7, k)
    inertia, labels, cents = brute_force_kmeans(pts, k)
    res = kmeans(pts, k, np.random.default_rng(seed))
    assert res.inertia == pytest.approx(inertia, rel=1e-9)
    expect = set()
    for c in range(k):
        m = np.flatnonzero(labels == c)
        expect.add(int(m[((pts[m] - cents[c]) ** 2).sum(1).argmin()]))
    assert set(nearest_to_centroids(pts, res)) == expect


def test_kmeans_deterministic_and_validates_k():
    pts = np.random.default_rng(0).standard_normal((30, 3))
    a, b = kmeans(pts, 4, np.random.default_rng(5)), kmeans(pts, 4, np.random.default_rng(5))
    np.testing.assert_array_equal(a.centroids, b.centroids)
    with pytest.raises(ValueError):
        kmeans(pts, 31, np.random.default_rng())


def test_kmeans_coincident_points():
    res = kmeans(np.zeros((5, 2)), 3, np.random.default_rng(0))
    assert res.inertia == 0.0


# ---------------------------------------------------------------- buffer


def test_rebalance_k_equals_point_count_keeps_all():
    triples = np.array([[0, 0, 4], [1, 0, 4], [2, 0, 4], [3, 0, 4]])
    emb = np.arange(10, dtype=float).reshape(5, 2)
    buf = rebalance_buffer(ReplayBuffer(4), triples, 1, emb, 1, np.random.default_rng(0))
    assert sorted(map(tuple, buf.triples.tolist())) == sorted(map(tuple, triples.tolist()))


def test_rebalance_per_task_floor():
    rng = np.random.default_rng(0)
    emb = rng.standard_normal((20, 3))
    t1 = np.array([[i, 0, 10 + i] for i in range(4)])
    t2 = np.array([[4 + i, 1, 10 + i] for i in range(6)])
    buf = rebalance_buffer(ReplayBuffer(4), t1, 1, emb, 1, rng)
    buf = rebalance_buffer(buf, t2, 2, emb, 2, rng)
    assert len(buf) <= 4
    assert buf.per_task_counts() == {1: 2, 2: 2}


def test_rebalance_one_per_spatial_group():
    emb = np.array([[0, 0], [0, 1], [10, 0], [10, 1], [5, 5]], dtype=float)
    triples = np.array([[0, 0, 4], [1, 0, 4], [2, 0, 4], [3, 0, 4]])
    for seed in range(5):
        buf = rebalance_buffer(ReplayBuffer(2), triples, 1, emb, 1, np.random.default_rng(seed))
        heads = sorted(buf.triples[:, 0].tolist())
        assert len(heads) == 2 and heads[0] in (0, 1) and heads[1] in (2, 3)


def test_rebalance_supply_short_task_keeps_everything():
    emb = np.random.default_rng(1).standard_normal((10, 2))
    buf = rebalance_buffer(ReplayBuffer(10), np.array([[0, 0, 1], [2, 0, 3]]), 1, emb, 1, np.random.default_rng(0))
    assert len(buf) == 2


def test_rebalance_zero_capacity():
    buf = rebalance_buffer(ReplayBuffer(0), np.array([[0, 0, 1]]), 1, np.zeros((2, 2)), 1, np.random.default_rng())
    assert len(buf) == 0


def test_buffer_csv(tmp_path):
    buf = ReplayBuffer(5, np.array([[1, 2, 3]]), np.array([1]))
    buf.to_csv(tmp_path / "b.csv")
    assert (tmp_path / "b.csv").read_text() == "task,head,rel,tail\n1,1,2,3\n"


def test_replay_single_entry_copies():
    out = sample_replay(ReplayBuffer(3, np.array([[1, 2, 3]]), np.array([1])), 5, np.random.default_rng(0))
    assert out.tolist() == [[1, 2, 3]] * 5


def test_replay_empty_buffer():
    assert sample_replay(ReplayBuffer(3), 8, np.random.default_rng(0)).shape == (0, 3)


def test_replay_uniform_within_three_sigma():
    n, draws = 10, 100_000
    buf = ReplayBuffer(n, np.stack([np.arange(n)] * 3, axis=1), np.ones(n, dtype=np.int64))
    counts = np.bincount(sample_replay(buf, draws, np.random.default_rng(3))[:, 0], minlength=n)
    sigma = np.sqrt(draws * (1 / n) * (1 - 1 / n))
    assert np.all(np.abs(counts - draws / n) < 3 * sigma)


# ---------------------------------------------------------------- objective


def test_total_loss_first_task_is_task_loss():
    assert total_loss(2.0, 0.5, 1.0, 1.0, 1) == 2.0


def test_total_loss_alpha_zero():
    assert total_loss(2.0, 0.5, 1.0, 0.0, 2) == 2.5


def test_total_loss_sum():
    assert total_loss(2.0, 0.5, 1.0, 1.0, 2) == 3.5


def test_total_loss_on_nodes():
    out = total_loss(T.as_node(2.0), T.as_node(0.5), T.as_node(1.0), 2.0, 3)
    assert float(out.value) == 4.5
