"""Command-line entry point: ``arprotect <command> [options]``.

Exit status is 0 on success, 1 on an operational failure and 2 on a usage
error. Failures print one line to stderr starting with ``ERROR <kind>:``.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import classify, corpus, fuzzy, mrmr, pipeline, relaybaseline as relay
from .config import PipelineConfig, load_config, save_config
from .detector import AnnotatedRecord, tune_beta
from .features import FEATURE_NAMES, extract, read_feature_csv, write_feature_csv
from .waveform import save_csv, window_from

log = logging.getLogger("arprotect")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(f"ERROR usage: {message}", file=sys.stderr)
        raise SystemExit(2)


# ---------------------------------------------------------------- helpers

def _config(args, fallback: Path | None = None) -> PipelineConfig:
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    elif fallback is not None and fallback.exists():
        cfg = load_config(fallback)
    else:
        cfg = PipelineConfig()
    over = {}
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "end_mode", None):
        over["end_mode"] = args.end_mode
    if getattr(args, "window_cycles", None) is not None:
        over["window_cycles"] = args.window_cycles
    return replace(cfg, **over) if over else cfg


def _cases(args) -> list[corpus.Case]:
    if not args.manifest:
        raise UsageError("--manifest is required")
    return corpus.read_manifest(args.manifest)


def _out(args) -> Path:
    if not args.out:
        raise UsageError("--out is required")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_case(job):
    case, root = job
    paths = {}
    for end in ("w", "g"):
        rel = f"records/{case.case_id}_{end}.csv"
        save_csv(case.record(end), root / rel)
        paths[f"path_{end}"] = rel
    return replace(case, **paths)


# ---------------------------------------------------------------- commands

def cmd_generate(args) -> int:
    if args.grid:
        grid = corpus.load_grid(args.grid)
    elif args.preset == "desk":
        grid = corpus.desk_grid()
    else:
        raise UsageError("give a grid file or --preset desk")
    if args.seed is not None:
        grid = replace(grid, seed=args.seed)
    out = _out(args)
    (out / "records").mkdir(exist_ok=True)
    cases = grid.cases()
    jobs = [(c, out) for c in cases]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            written = list(pool.map(_write_case, jobs, chunksize=16))
    else:
        written = [_write_case(j) for j in jobs]
    corpus.write_manifest(written, out / "manifest.csv")
    (out / "grid.ini").write_text(corpus.dumps_grid(grid))
    print(f"generated {len(written)} cases -> {out / 'manifest.csv'}")
    return 0


def _annotated(cases, cfg) -> list[AnnotatedRecord]:
    items = []
    for case in cases:
        for rec in pipeline.load_records(case, cfg).values():
            onset = None
            if case.spec.kind != "steady":
                onset = int(round((case.spec.onset_time(rec.f0) - rec.t0) * rec.fs))
            items.append(AnnotatedRecord(rec, onset))
    return items


def cmd_detect(args) -> int:
    cfg = _config(args)
    cases = _cases(args)
    out = _out(args)
    if args.tune_beta:
        cfg = replace(cfg, beta=tune_beta(_annotated(cases, cfg), cfg.gwo))
        save_config(cfg, out / "config.ini")
        print(f"tuned beta = {cfg.beta!r}")
    with (out / "detections.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["case_id", "end", "event_time", "dd_peak"])
        for case in cases:
            for end, rec in pipeline.load_records(case, cfg).items():
                for t, peak in pipeline.record_events(rec, cfg.beta):
                    w.writerow([case.case_id, end, repr(t), repr(peak)])
    return 0


def _write_case_features(rows, cfg, path):
    names = pipeline.feature_names(cfg)
    fz_names = [f"fuzzy_{n}" for n in fuzzy.FuzzyTemplate.per_phase().input_names]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["case_id", "triggered", "anchor_time", *names, *fz_names])
        for r in rows:
            if r.detected:
                w.writerow([r.case_id, 1, repr(r.anchor_time), *map(repr, r.x.tolist()),
                            *map(repr, r.fuzzy_x.tolist())])
            else:
                w.writerow([r.case_id, 0, "", *[""] * (len(names) + len(fz_names))])


def cmd_extract(args) -> int:
    cfg = _config(args)
    cases = _cases(args)
    out = _out(args)
    rows = pipeline.extract_all(cases, cfg, args.jobs)
    _write_case_features(rows, cfg, out / "features.csv")
    if args.catalog:
        table = []
        for case, row in zip(cases, rows):
            if not row.detected:
                continue
            rec = pipeline.load_records(case, cfg)["w"]
            start = int(round((row.anchor_time - rec.t0) * rec.fs))
            win = window_from(rec, min(start, rec.n - round(cfg.window_cycles * rec.fs / rec.f0)), cfg.window_cycles)
            for ph, vec in extract(win).items():
                table.append((case.case_id, ph, vec))
        write_feature_csv(out / "catalog.csv", table)
    print(f"extracted {sum(r.detected for r in rows)}/{len(rows)} triggered cases")
    return 0


def cmd_select(args) -> int:
    if not args.features:
        raise UsageError("--features (a catalog CSV from extract --catalog) is required")
    cases = {c.case_id: c for c in _cases(args)}
    out = _out(args)
    keys, names, values = read_feature_csv(args.features)
    if list(names) != list(FEATURE_NAMES):
        raise ValueError("catalog columns do not match the feature registry")
    try:
        target = np.array([cases[cid].labels[args.task] for cid, _ in keys])
    except KeyError as exc:
        raise ValueError(f"case {exc} not in manifest") from None
    keep = target != ""
    values = np.nan_to_num(values[keep], nan=0.0)
    ranking = mrmr.rank(mrmr.FeatureMatrix(values, target[keep], names), args.k)
    mrmr.write_ranking_csv(ranking, out / "ranking.csv")
    for r, f, rel, red, sc in ranking.rows():
        print(f"{r:3d} {f:24s} rel={rel:.4f} red={red:.4f} score={sc:.4f}")
    return 0


def _split_rows(cases, cfg, jobs):
    rows = pipeline.extract_all(cases, cfg, jobs)
    train_idx, test_idx = pipeline.split_cases(cases, cfg)
    return rows, train_idx, test_idx


def cmd_tune_fuzzy(args) -> int:
    cfg = _config(args)
    out = _out(args)
    rows, train_idx, _ = _split_rows(_cases(args), cfg, args.jobs)
    seen = [rows[i] for i in train_idx if rows[i].detected]
    x = np.stack([r.fuzzy_x for r in seen])
    y = np.array([r.labels["detection"] == "fault" for r in seen])
    res = fuzzy.ga_run(x, y, fuzzy.FuzzyTemplate.per_phase(), cfg.ga)
    fuzzy.save_system(res.system, out / "fuzzy.txt")
    (out / "ga_history.csv").write_text("generation,best_fitness\n"
                                        + "".join(f"{g},{f!r}\n" for g, f in enumerate(res.history)))
    print(f"balanced accuracy {res.fitness:.4f}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    out = _out(args)
    rows, train_idx, _ = _split_rows(_cases(args), cfg, args.jobs)
    models = pipeline.train_models([rows[i] for i in train_idx], cfg)
    pipeline.save_models(models, out)
    save_config(cfg, out / "config.ini")
    print(f"trained {sum(len(v) for v in models.stages.values())} models -> {out}")
    return 0


def cmd_evaluate(args) -> int:
    if not args.models:
        raise UsageError("--models is required")
    cfg = _config(args, Path(args.models) / "config.ini")
    out = _out(args)
    cases = _cases(args)
    models = pipeline.load_models(args.models)
    pipeline.check_models(models, cfg)
    if models.config_hash != cfg.hash:
        log.warning("config %s differs from the training config %s", cfg.hash, models.config_hash)
    rows, _, test_idx = _split_rows(cases, cfg, args.jobs)
    test_rows = [rows[i] for i in test_idx]
    reports, decisions, e2e = pipeline.evaluate_rows(test_rows, models, cfg)
    counts = {"cases": len(cases), "train": len(cases) - len(test_rows), "test": len(test_rows),
              "triggered": int(sum(r.detected for r in rows))}
    result = pipeline.ExperimentResult(cfg, reports, decisions, e2e, counts)
    pipeline.write_reports(result, out)
    _print_summary(result)
    return 0


def cmd_relay(args) -> int:
    out = _out(args)
    line = relay.LineConstants()
    wf = relay.slip_fault_scenario(d=args.d, f_slip=args.slip_hz, fs=args.fs)
    fixed = relay.impedance_trajectory(wf, line, "fixed")
    tracked = relay.impedance_trajectory(wf, line, "tracked")
    relay.write_trajectory_csv(fixed, out / "trajectory_fixed.csv")
    relay.write_trajectory_csv(tracked, out / "trajectory_tracked.csv")
    dev = relay.trajectory_deviation(fixed, tracked)
    summary = {"d": args.d, "slip_hz": args.slip_hz, "fs": args.fs, "max_rel_deviation": dev,
               "true_z": [line.z1_at(args.slip_hz).real * args.d, line.z1_at(args.slip_hz).imag * args.d],
               "fixed_in_zone_fraction": float(np.mean([p.in_zone for p in fixed])),
               "tracked_in_zone_fraction": float(np.mean([p.in_zone for p in tracked]))}
    (out / "relay_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"fixed vs tracked max |Z| deviation: {100 * dev:.1f}%")
    return 0


def _print_summary(result: pipeline.ExperimentResult) -> None:
    print(f"config {result.config.hash}")
    for task, rep in result.reports.items():
        print(f"{task:10s} n={rep.n:5d} accuracy={100 * rep.accuracy:6.2f}% "
              f"CI=[{100 * rep.ci[0]:.2f}, {100 * rep.ci[1]:.2f}]")


def cmd_report(args) -> int:
    cfg = _config(args)
    out = _out(args)
    result, models = pipeline.run_experiment(_cases(args), cfg, args.jobs)
    pipeline.write_reports(result, out)
    pipeline.save_models(models, out / "models")
    save_config(cfg, out / "config.ini")
    _print_summary(result)
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline INI file")
    common.add_argument("--manifest", help="manifest CSV")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="master seed override")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")
    common.add_argument("--end-mode", choices=("single", "double"))
    common.add_argument("--window-cycles", type=float)
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="arprotect", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", parents=[common], help="synthesize a corpus from a grid")
    g.add_argument("grid", nargs="?", help="grid INI file")
    g.add_argument("--preset", choices=("desk",))
    g.set_defaults(func=cmd_generate)

    d = sub.add_parser("detect", parents=[common], help="run the disturbance detector")
    d.add_argument("--tune-beta", action="store_true", help="grey-wolf tune the threshold first")
    d.set_defaults(func=cmd_detect)

    e = sub.add_parser("extract", parents=[common], help="extract per-case features")
    e.add_argument("--catalog", action="store_true", help="also write the full 144-feature catalog")
    e.set_defaults(func=cmd_extract)

    s = sub.add_parser("select", parents=[common], help="mRMR ranking of catalog features")
    s.add_argument("--features", help="catalog CSV")
    s.add_argument("--task", default="detection", choices=corpus.TASKS)
    s.add_argument("--k", type=int, default=10)
    s.set_defaults(func=cmd_select)

    t = sub.add_parser("tune-fuzzy", parents=[common], help="GA-tune the fuzzy detector")
    t.set_defaults(func=cmd_tune_fuzzy)

    tr = sub.add_parser("train", parents=[common], help="train the staged models")
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("evaluate", parents=[common], help="evaluate a trained bundle on the test split")
    ev.add_argument("--models", help="model bundle directory")
    ev.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("relay", parents=[common], help="distance-relay slip scenario")
    r.add_argument("--d", type=float, default=0.5, help="fault position as a fraction of the line")
    r.add_argument("--slip-hz", type=float, default=72.0)
    r.add_argument("--fs", type=float, default=relay.REF_FS)
    r.set_defaults(func=cmd_relay)

    rp = sub.add_parser("report", parents=[common], help="train and evaluate end to end")
    rp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "jobs", 1) < 1:
        print("ERROR usage: --jobs must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"ERROR usage: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, RuntimeError, KeyError) as exc:
        detail = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"ERROR {type(exc).__name__}: {detail}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
