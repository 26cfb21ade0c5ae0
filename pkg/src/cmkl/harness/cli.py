"""Command-line entry point: ``cmkl run | matrix | gradcheck | gen-synthetic | report``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

import yaml

from cmkl.harness.config import ConfigError, ExperimentConfig, load_config, with_overrides

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_GRADCHECK = 0, 1, 2, 3
# mirrors cmkl.harness.gradcheck.TOL without importing the model stack at parse time
GRADCHECK_TOL = 1e-4

log = logging.getLogger("cmkl")


def _parse_sets(items: list[str] | None) -> dict:
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = yaml.safe_load(value)
    return out


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if not args.config:
        cfg.validate()
    sets = _parse_sets(getattr(args, "set", None))
    return with_overrides(cfg, sets) if sets else cfg


def cmd_run(args) -> int:
    from cmkl.harness.training import prepare_data, results_path, run_sequence

    cfg = _config(args)
    seeds = args.seed or cfg.seeds
    out_dir = Path(args.out or cfg.output.dir)
    data = prepare_data(cfg)
    for seed in seeds:
        t0 = time.perf_counter()
        res = run_sequence(cfg, seed, out_dir=out_dir, data=data)
        m = res.metrics
        ap = f"{m.ap:.4f}"
        af = "undefined" if m.af is None else f"{m.af:.4f}"
        print(f"seed {seed}: AP={ap} AF={af} ({time.perf_counter() - t0:.1f}s) -> {results_path(out_dir, cfg, seed)}")
    return EXIT_OK


def cmd_matrix(args) -> int:
    from cmkl.harness.matrix import load_sweep, run_matrix

    base, axes, seeds = load_sweep(args.sweep)
    if args.seed:
        seeds = args.seed
    out_dir = Path(args.out or base.output.dir)
    report = run_matrix(base, axes, seeds=seeds, out_dir=out_dir)
    table = report.write_csv(args.table or out_dir / f"{base.name}__matrix.csv")
    failed = [c for c in report.cells if c.failed]
    print(f"{len(report.cells)} cells, {report.n_runs} runs, {len(failed)} failed -> {table}")
    for c in failed:
        print(f"  FAILED {c.params}: {'; '.join(c.errors)}", file=sys.stderr)
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_gradcheck(args) -> int:
    from cmkl.harness.gradcheck import GRADCHECK_FUSIONS, LOSS_TERMS, STEP, format_reports, run_gradcheck

    model_kw = {}
    if args.config:
        m = load_config(args.config).model
        model_kw = {"router_hidden": m.router_hidden, "attn_softmax": m.attn_softmax, "load_balance": m.load_balance}
        if args.fusion is None and m.fusion in GRADCHECK_FUSIONS:
            args.fusion = [m.fusion]
    fusions = args.fusion or list(GRADCHECK_FUSIONS)
    terms = args.terms or list(LOSS_TERMS)
    ok = True
    for f in fusions:
        track = args.track
        for t in terms:
            reports = run_gradcheck(f, t, track=track, seed=args.seed, h=STEP, **model_kw)
            worst = max(reports, key=lambda r: r.max_rel_error)
            passed = all(r.passed(args.tol) for r in reports)
            ok &= passed
            print(f"[{'PASS' if passed else 'FAIL'}] fusion={f} terms={t} track={track} worst={worst.max_rel_error:.3e} ({worst.name})")
            if args.verbose or not passed:
                print(format_reports(reports, args.tol))
    return EXIT_OK if ok else EXIT_GRADCHECK


def cmd_gen_synthetic(args) -> int:
    from cmkl.kgdata import SynthConfig, generate_synthetic, save_dataset

    if args.config:
        cfg = load_config(args.config)
        synth, seed = cfg.data.synthetic, cfg.data.seed
    else:
        synth, seed = SynthConfig(), 0
    sets = _parse_sets(args.set)
    if sets:
        known = {f.name for f in dataclasses.fields(SynthConfig)}
        bad = set(sets) - known
        if bad:
            raise ConfigError(f"unknown synthetic keys {sorted(bad)}")
        synth = dataclasses.replace(synth, **sets)
    if args.seed is not None:
        seed = args.seed
    seq, feats = generate_synthetic(synth, seed)
    save_dataset(seq, feats, args.out)
    sizes = [t.sizes() for t in seq.tasks]
    print(f"wrote {len(seq.tasks)} tasks, {seq.n_entities} entities, {seq.n_relations} relations to {args.out}")
    print(json.dumps({"task_sizes": sizes}))
    return EXIT_OK


def cmd_report(args) -> int:
    from cmkl.harness.report import build_report

    written = build_report(args.inputs, args.out, figures=not args.no_figures)
    for p in written:
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cmkl", description="Continual multimodal KG embedding engine and benchmark harness.")
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = ap.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("run", help="train and evaluate one experiment across its seeds")
    p.add_argument("config", nargs="?", help="YAML experiment config (defaults apply when omitted)")
    p.add_argument("--seed", type=int, action="append", help="run only this seed (repeatable)")
    p.add_argument("--out", help="results directory (default: output.dir)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted config override, e.g. cl.buffer_size=200")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("matrix", help="run a sweep file and collate mean/std per cell")
    p.add_argument("sweep", help="YAML sweep file")
    p.add_argument("--seed", type=int, action="append", help="override the seed list (repeatable)")
    p.add_argument("--out", help="results directory (default: output.dir of the base config)")
    p.add_argument("--table", help="collated CSV path (default: <out>/<name>__matrix.csv)")
    p.set_defaults(func=cmd_matrix)

    p = sub.add_parser("gradcheck", help="finite-difference check of the training objective on a toy model")
    p.add_argument("--config", help="take fusion/router/attention settings from this config")
    p.add_argument("--fusion", action="append", choices=("moe", "concat", "gated", "score"))
    p.add_argument("--terms", action="append", choices=("task", "ewc", "replay", "full"))
    p.add_argument("--track", default="link-prediction", choices=("link-prediction", "classification"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=GRADCHECK_TOL)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("gen-synthetic", help="write a synthetic task-sequence dataset directory")
    p.add_argument("out", help="output directory")
    p.add_argument("--config", help="take data.synthetic and data.seed from this config")
    p.add_argument("--seed", type=int)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="synthetic generator field, e.g. n_tasks=5")
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("report", help="collate results files to CSV and figures")
    p.add_argument("inputs", nargs="+", help="results JSON files or directories")
    p.add_argument("--out", default="report", help="output directory")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        log.debug("failure", exc_info=True)
        print(f"error: {exc!r}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
