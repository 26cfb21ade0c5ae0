import json

import numpy as np
import pytest
import yaml

from cmkl.harness.cli import EXIT_CONFIG, EXIT_GRADCHECK, EXIT_OK, EXIT_RUNTIME, main
from cmkl.harness.config import ConfigError, config_from_dict, load_config, resolve, with_overrides
from cmkl.harness.gradcheck import run_gradcheck
from cmkl.harness.matrix import cell_overrides, load_sweep, run_matrix
from cmkl.harness.report import build_report
from cmkl.harness.training import run_sequence

TINY = {
    "name": "tiny",
    "seeds": [1, 2],
    "data": {"synthetic": {"n_types": 2, "entities_per_type": 8, "n_tasks": 2, "triples_per_task": 40, "d_text": 4, "d_mol": 6}},
    "model": {"dim": 4, "n_bases": 2},
    "train": {"lr": 0.01, "epochs": 2, "batch_size": 16, "n_neg": 2, "fisher_batches": 2},
    "cl": {"buffer_size": 10},
}


def tiny(**overrides):
    cfg = config_from_dict(TINY)
    return with_overrides(cfg, overrides) if overrides else cfg


# ---------------------------------------------------------------- config


def test_config_rejects_unknown_keys_and_values():
    with pytest.raises(ConfigError, match="unknown keys"):
        config_from_dict({"modle": {}})
    with pytest.raises(ConfigError):
        config_from_dict({"method": "magic"})
    with pytest.raises(ConfigError):
        config_from_dict({"train": {"lr": -1}})
    with pytest.raises(ConfigError):
        config_from_dict({"model": {"fusion": "telepathy"}})


def test_config_gated_heads_and_score_track():
    with pytest.raises(ConfigError, match="divisible"):
        config_from_dict({"model": {"fusion": "gated", "dim": 6, "attn_heads": 4}})
    with pytest.raises(ConfigError, match="score-level"):
        config_from_dict({"track": "classification", "model": {"fusion": "score"}})


def test_config_file_and_override(tmp_path):
    (tmp_path / "c.yaml").write_text(yaml.safe_dump(TINY))
    cfg = load_config(tmp_path / "c.yaml")
    assert cfg.model.dim == 4
    assert with_overrides(cfg, {"cl.buffer_size": 3}).cl.buffer_size == 3
    with pytest.raises(ConfigError):
        with_overrides(cfg, {"cl.nope": 1})
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")


def test_partial_lambdas_fill_defaults():
    cfg = config_from_dict({"cl": {"lambdas": {"text": 2}}})
    assert cfg.cl.lambdas == {"structural": 10.0, "text": 2.0, "molecular": 1.0, "fusion-decoder": 5.0}


@pytest.mark.parametrize(
    "method,fusion,ewc_mode,buffer",
    [
        ("cmkl", "moe", "per-group", 10),
        ("naive", "structural", "off", 0),
        ("joint", "structural", "off", 0),
        ("ewc-only", "structural", "uniform", 0),
        ("ewc-uniform", "moe", "uniform", 10),
        ("struct-only", "structural", "per-group", 10),
        ("text-only", "text", "per-group", 10),
    ],
)
def test_method_resolution(method, fusion, ewc_mode, buffer):
    r = resolve(tiny(method=method))
    assert (r.fusion, r.ewc.mode, r.buffer_size) == (fusion, ewc_mode, buffer)


def test_shipped_configs_load():
    from pathlib import Path

    root = Path(__file__).resolve().parents[1] / "configs"
    for p in sorted(root.glob("*.yaml")):
        if p.name.startswith("sweep"):
            load_sweep(p)
        else:
            load_config(p)


# ---------------------------------------------------------------- training loop


def test_training_event_order():
    res = run_sequence(tiny(), 1, trace=True)
    ev = res.events
    step1 = [n for k, n in ev if k == 1]
    step2 = [n for k, n in ev if k == 2]
    assert step1[:4] == ["encode", "fuse", "task_loss", "update"]
    assert "ewc" not in step1 and "replay" not in step1
    assert step1[-3:] == ["fisher", "rebalance", "evaluate"]
    assert step2[:6] == ["encode", "fuse", "task_loss", "ewc", "replay", "update"]
    assert step2[-3:] == ["fisher", "rebalance", "evaluate"]
    # every training step keeps the same internal order
    per_step = "".join(n[0] for n in step2[:-3])
    assert per_step == "efteru" * (len(step2[:-3]) // 6)
    assert [k for k, _ in ev] == sorted(k for k, _ in ev)


def test_naive_trace_has_no_cl_events():
    names = {n for _, n in run_sequence(tiny(method="naive"), 1, trace=True).events}
    assert names == {"encode", "fuse", "task_loss", "update", "evaluate"}


def test_single_task_gives_one_by_one_matrix():
    res = run_sequence(tiny(**{"data.synthetic": {**TINY["data"]["synthetic"], "n_tasks": 1}}), 1)
    assert res.R.shape == (1, 1)
    assert res.metrics.ap == res.R[0, 0] and res.metrics.af is None


def test_joint_reports_undefined_forgetting():
    res = run_sequence(tiny(method="joint"), 1)
    assert np.isnan(res.R[0, 0]) and np.isfinite(res.R[1]).all()
    assert res.metrics.af is None and res.metrics.bwt is None and res.metrics.rem is None
    assert res.payload["metrics"]["AF"] is None


def test_classification_track_runs():
    res = run_sequence(tiny(track="classification"), 1)
    assert np.all((res.R[np.tril_indices(2)] >= 0) & (res.R[np.tril_indices(2)] <= 1))


def test_router_weights_on_simplex_in_logs():
    res = run_sequence(tiny(), 2)
    w = np.array([row[2:] for row in res.router_rows])
    assert len(w) and np.all(w >= 0)
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-6)


def test_results_file_deterministic(tmp_path):
    cfg = tiny()
    run_sequence(cfg, 1, out_dir=tmp_path / "a")
    run_sequence(cfg, 1, out_dir=tmp_path / "b")
    a, b = (json.loads(next((tmp_path / d).glob("*.json")).read_text()) for d in "ab")
    a.pop("meta"), b.pop("meta")
    assert a == b


def test_analysis_dumps(tmp_path):
    run_sequence(tiny(**{"output.analysis": True}), 1, out_dir=tmp_path)
    stem = "tiny__cmkl__seed1"
    assert (tmp_path / f"{stem}.buffer.csv").read_text().startswith("task,head,rel,tail\n")
    assert (tmp_path / f"{stem}.router.csv").read_text().startswith("task,entity,w_s,w_t,w_m\n")


# ---------------------------------------------------------------- matrix


def fake_run(cfg, seed, out_dir):
    if cfg.cl.alpha == 0.5:
        raise RuntimeError("boom")
    return {"metrics": {"AP": cfg.cl.lambdas["structural"] + seed, "AF": 0.1, "BWT": -0.1, "REM": 0.9}}


def test_matrix_counts_cells_and_runs():
    rep = run_matrix(tiny(), {"lambda_scale": [1, 2]}, seeds=[1, 2], run_fn=fake_run)
    assert rep.n_runs == 4 and len(rep.cells) == 2
    assert [c.summary("AP") for c in rep.cells] == [(11.5, pytest.approx(0.7071067811865476)), (21.5, pytest.approx(0.7071067811865476))]


def test_matrix_failed_cell_isolated(tmp_path):
    rep = run_matrix(tiny(), {"alpha": [1.0, 0.5]}, seeds=[1], run_fn=fake_run)
    assert [c.failed for c in rep.cells] == [False, True]
    rows = rep.rows()
    assert rows[0]["status"] == "ok" and rows[0]["AP_mean"] == "11.000000"
    assert rows[1]["status"] == "failed" and "boom" in rows[1]["error"]
    assert rep.write_csv(tmp_path / "m.csv").read_text().count("\n") == 3


def test_matrix_bad_axis_fails_cell_not_sweep():
    rep = run_matrix(tiny(), {"model.fusion": ["moe", "telepathy"]}, seeds=[1], run_fn=fake_run)
    assert [c.failed for c in rep.cells] == [False, True]


def test_cell_overrides_aliases():
    cfg = tiny()
    o = cell_overrides(cfg, {"fusion": "score-fusion", "lambda_scale": 2, "buffer_size": 5})
    assert o["model.fusion"] == "score" and o["cl.buffer_size"] == 5
    assert o["cl.lambdas"]["structural"] == 20.0 and o["cl.uniform_lambda"] == 20.0
    with pytest.raises(ConfigError):
        cell_overrides(cfg, {"mystery": 1})


def test_load_sweep(tmp_path):
    (tmp_path / "base.yaml").write_text(yaml.safe_dump(TINY))
    (tmp_path / "s.yaml").write_text(yaml.safe_dump({"base": "base.yaml", "sweep": {"buffer_size": [0, 5]}, "seeds": [3]}))
    base, axes, seeds = load_sweep(tmp_path / "s.yaml")
    assert base.name == "tiny" and axes == {"buffer_size": [0, 5]} and seeds == [3]


# ---------------------------------------------------------------- report


def test_report_outputs(tmp_path):
    for seed in (1, 2):
        run_sequence(tiny(), seed, out_dir=tmp_path / "res")
    run_sequence(tiny(method="naive"), 1, out_dir=tmp_path / "res")
    written = {p.name for p in build_report([tmp_path / "res"], tmp_path / "rep")}
    assert {"runs.csv", "summary.csv", "forgetting.png", "router_weights.png"} <= written
    assert any(n.startswith("R__") for n in written)
    summary = (tmp_path / "rep" / "summary.csv").read_text().splitlines()
    assert len(summary) == 3


def test_report_rejects_non_results(tmp_path):
    (tmp_path / "x.json").write_text("[1, 2]")
    with pytest.raises(ValueError):
        build_report([tmp_path / "x.json"], tmp_path / "rep")


# ---------------------------------------------------------------- gradcheck


def test_gradcheck_negative_control_names_tensor():
    reports = run_gradcheck("moe", "task", corrupt="router.W")
    bad = [r.name for r in reports if not r.passed(1e-4)]
    assert bad == ["router.W"]


def test_gradcheck_classification_track():
    assert all(r.passed(1e-4) for r in run_gradcheck("gated", "full", track="classification"))


# ---------------------------------------------------------------- CLI


def test_cli_exit_codes(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump(TINY))
    assert main(["run", str(cfg), "--seed", "1", "--out", str(tmp_path / "r")]) == EXIT_OK
    assert main(["run", str(cfg), "--set", "model.fusion=telepathy"]) == EXIT_CONFIG
    assert main(["run", str(tmp_path / "nope.yaml")]) == EXIT_CONFIG
    assert main(["report", str(tmp_path / "missing")]) == EXIT_RUNTIME
    assert main(["gradcheck", "--fusion", "concat", "--terms", "task"]) == EXIT_OK
    assert main(["gradcheck", "--fusion", "concat", "--terms", "task", "--tol", "1e-30"]) == EXIT_GRADCHECK
    assert main(["gen-synthetic", str(tmp_path / "d"), "--set", "n_tasks=2"]) == EXIT_OK
    assert (tmp_path / "d" / "task_2").exists() or any((tmp_path / "d").iterdir())
    assert main(["report", str(tmp_path / "r"), "--out", str(tmp_path / "rep"), "--no-figures"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "seed 1: AP=" in out and "[PASS] fusion=concat" in out


def test_cli_matrix_reports_failed_cell(tmp_path):
    (tmp_path / "base.yaml").write_text(yaml.safe_dump({**TINY, "seeds": [1]}))
    (tmp_path / "s.yaml").write_text(yaml.safe_dump({"base": "base.yaml", "sweep": {"fusion": ["concat", "telepathy"]}}))
    assert main(["matrix", str(tmp_path / "s.yaml"), "--out", str(tmp_path / "r")]) == EXIT_RUNTIME
    table = (tmp_path / "r" / "tiny__matrix.csv").read_text()
    assert "ok" in table and "failed" in table
