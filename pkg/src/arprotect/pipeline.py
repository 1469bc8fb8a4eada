"""Staged protection pipeline: detect, extract, train, decide and evaluate.

Stage order is detection, region, then location, phase set and fault type.
A non-fault verdict stops the chain, and only internal faults set the trip flag.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import classify, fuzzy
from .classify import Dataset
from .config import PipelineConfig
from .corpus import TASKS, Case, cell_seed
from .detector import DetectorConfig, dd_series, detect, event_peaks, group_events
from .features import ar_features, extract, feature_name, fuzzy_inputs
from .waveform import PHASES, Record3Ph, add_noise, butterworth_lp, window_from, window_length

log = logging.getLogger(__name__)

STAGES = TASKS[1:]
BUNDLE_FORMAT = "arprotect-bundle"
PREFILTER_SETTLE_CYCLES = 2.0


class PipelineError(RuntimeError):
    pass


def ends_for(cfg: PipelineConfig) -> tuple[str, ...]:
    return ("w", "g") if cfg.end_mode == "double" else ("w",)


def feature_names(cfg: PipelineConfig) -> tuple[str, ...]:
    return tuple(f"{end}_{ph}_{feature_name(fid)}" for end in ends_for(cfg) for ph in PHASES
                 for fid in cfg.feature_ids)


@dataclass
class CaseFeatures:
    case_id: str
    labels: dict
    detected: bool
    anchor_time: float | None = None
    x: np.ndarray | None = None
    fuzzy_x: np.ndarray | None = None


def record_events(rec: Record3Ph, beta: float) -> list[tuple[float, float]]:
    """(start time, DD peak) for every any-phase event in ``rec``."""
    dcfg = DetectorConfig.for_record(rec, beta)
    dd = dd_series(rec, dcfg)
    starts = group_events(detect(rec, dcfg), dcfg.holdoff)
    peaks = event_peaks(dd, starts, dcfg.holdoff)
    return [(rec.t0 + s / rec.fs, float(p)) for s, p in zip(starts, peaks)]


def choose_anchor(events_by_end: Sequence[list[tuple[float, float]]], f0: float) -> float | None:
    """Anchor on the strongest event.

    Each end contributes its own dominant event; the earliest of those lying
    within one cycle of the overall strongest gives the anchor time.
    """
    dominant = [min(evs, key=lambda e: (-e[1], e[0])) for evs in events_by_end if evs]
    if not dominant:
        return None
    t_best = min(dominant, key=lambda e: (-e[1], e[0]))[0]
    return min(t for t, _ in dominant if abs(t - t_best) <= 1.0 / f0)


def _window_features(rec: Record3Ph, start: int, cfg: PipelineConfig) -> np.ndarray:
    win = window_from(rec, start, cfg.window_cycles)
    ks = [fid - 2 for fid in cfg.feature_ids]
    if all(1 <= k <= cfg.ar_lag for k in ks) and all(3 <= fid <= 12 for fid in cfg.feature_ids):
        return ar_features(win, ks, cfg.ar_lag).ravel()
    vecs = extract(win, cfg.feature_ids)
    return np.array([vecs[ph].get(fid, impute=0.0) for ph in PHASES for fid in cfg.feature_ids])


def load_records(case: Case, cfg: PipelineConfig) -> dict[str, Record3Ph]:
    recs = {}
    for k, end in enumerate(ends_for(cfg)):
        rec = case.record(end)
        if cfg.snr_db is not None:
            rec = add_noise(rec, cfg.snr_db, cell_seed(case.seed, 1000 + k))
        if cfg.prefilter_hz is not None:
            # drop the filter's start-up transient so it cannot trigger the detector
            settle = int(round(PREFILTER_SETTLE_CYCLES * rec.fs / rec.f0))
            filt = butterworth_lp(rec, 5, cfg.prefilter_hz)
            rec = filt.with_data(filt.data[:, settle:], t0=filt.t0 + settle / filt.fs)
        recs[end] = rec
    return recs


def case_features(case: Case, cfg: PipelineConfig) -> CaseFeatures:
    """Trigger on every configured end, anchor on the dominant event, extract windows there."""
    recs = load_records(case, cfg)
    anchor = choose_anchor([record_events(r, cfg.beta) for r in recs.values()], cfg.f0)
    if anchor is None:
        return CaseFeatures(case.case_id, case.labels, False)
    parts, fz = [], None
    for end, rec in recs.items():
        w = window_length(cfg.window_cycles, rec.fs, rec.f0)
        span = w * max(cfg.fuzzy_windows, 1)
        start = int(round((anchor - rec.t0) * rec.fs))
        start = min(max(start, 0), rec.n - span)
        if start < 0:
            raise PipelineError(f"{case.case_id}: record too short for {span}-sample analysis")
        parts.append(_window_features(rec, start, cfg))
        if end == "w":
            wins = [window_from(rec, start + j * w, cfg.window_cycles) for j in range(cfg.fuzzy_windows)]
            fz = fuzzy_inputs(wins, cfg.ar_lag).ravel()
    return CaseFeatures(case.case_id, case.labels, True, anchor, np.concatenate(parts), fz)


def _features_job(args):
    case, cfg = args
    return case_features(case, cfg)


def extract_all(cases: Sequence[Case], cfg: PipelineConfig, jobs: int = 1) -> list[CaseFeatures]:
    """Per-case features in manifest order; ``jobs > 1`` spreads cases over processes."""
    if jobs <= 1:
        return [case_features(c, cfg) for c in cases]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_features_job, [(c, cfg) for c in cases], chunksize=16))


# ---------------------------------------------------------------- training

@dataclass
class PipelineModels:
    feature_names: tuple[str, ...]
    fuzzy_system: fuzzy.FuzzySystem | None
    stages: dict = field(default_factory=dict)  # task -> list[TrainedModel]
    config_hash: str = ""


def _dataset(rows: Sequence[CaseFeatures], task: str, names) -> Dataset:
    return Dataset(np.stack([r.x for r in rows]), [r.labels[task] for r in rows], task, names)


def train_models(rows: Sequence[CaseFeatures], cfg: PipelineConfig) -> PipelineModels:
    """Fit the fuzzy detector and one classifier ensemble per stage on triggered rows."""
    names = feature_names(cfg)
    seen = [r for r in rows if r.detected]
    if not seen:
        raise PipelineError("no triggered cases to train on")
    y_fault = np.array([r.labels["detection"] == "fault" for r in seen])
    fsys = None
    if cfg.detection_mode != "supervisor":
        template = fuzzy.FuzzyTemplate.per_phase()
        fsys = fuzzy.ga_tune(np.stack([r.fuzzy_x for r in seen]), y_fault, template, cfg.ga)
    models = PipelineModels(names, fsys, {}, cfg.hash)
    faults = [r for r in seen if r.labels["detection"] == "fault"]
    for k, task in enumerate(TASKS):
        subset = seen if task == "detection" else faults
        d = _dataset(subset, task, names)
        if cfg.smote:
            d = classify.smote(d, cfg.smote_k, cfg.seed + 101 * k)
        models.stages[task] = classify.train_ensemble(cfg.kinds, d, cfg.seed + 1000 * k, cfg.bootstrap)
    return models


# ---------------------------------------------------------------- decisions

@dataclass
class Decision:
    case_id: str
    detection: str
    triggered: bool
    fuzzy_score: float | None = None
    supervisor_p: float | None = None
    region: str = ""
    location: str = ""
    phase: str = ""
    faulttype: str = ""
    trip: bool = False

    def as_row(self) -> dict:
        return {
            "case_id": self.case_id, "triggered": int(self.triggered), "detection": self.detection,
            "fuzzy_score": "" if self.fuzzy_score is None else repr(self.fuzzy_score),
            "supervisor_p": "" if self.supervisor_p is None else repr(self.supervisor_p),
            "region": self.region, "trip": int(self.trip), "location": self.location,
            "phase": self.phase, "faulttype": self.faulttype,
        }


def _stage(models: PipelineModels, task: str):
    try:
        return models.stages[task]
    except KeyError:
        raise PipelineError(f"missing model for stage {task!r}") from None


def staged_pipeline(row: CaseFeatures, models: PipelineModels, cfg: PipelineConfig,
                    fuzzy_score: float | None = None) -> Decision:
    """Run the stage chain on one triggered case.

    ``fuzzy_score`` lets a caller pass a precomputed (batched) fuzzy output.
    """
    if not row.detected:
        return Decision(row.case_id, "no_fault", False)
    x = row.x[None, :]
    names = models.feature_names
    det_models = _stage(models, "detection")
    p_fault = float(classify.ensemble_proba(det_models, x, names)[0, det_models[0].labels.index("fault")])
    f_score = fuzzy_score
    if cfg.detection_mode != "supervisor" and f_score is None:
        if models.fuzzy_system is None:
            raise PipelineError("missing fuzzy system")
        f_score, _ = fuzzy.infer(models.fuzzy_system, row.fuzzy_x)
    if cfg.detection_mode == "fuzzy":
        score = f_score
    elif cfg.detection_mode == "supervisor":
        score = p_fault
    else:
        score = 0.5 * (f_score + p_fault)
    dec = Decision(row.case_id, "fault" if score >= 0.5 else "no_fault", True, f_score, p_fault)
    if dec.detection == "no_fault":
        return dec
    for task in STAGES:
        setattr(dec, task, str(classify.ensemble_predict(_stage(models, task), x, names)[0]))
    dec.trip = dec.region == "internal"
    return dec


# ---------------------------------------------------------------- experiments

@dataclass
class ExperimentResult:
    config: PipelineConfig
    reports: dict  # task -> EvalReport
    decisions: list
    end_to_end: dict
    counts: dict

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config.hash,
            "counts": self.counts,
            "end_to_end": self.end_to_end,
            "stages": {t: r.to_dict() for t, r in self.reports.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def accuracy(self, task: str) -> float:
        return self.reports[task].accuracy


def evaluate_rows(rows: Sequence[CaseFeatures], models: PipelineModels, cfg: PipelineConfig):
    """Detection is scored on every row (untriggered rows count as ``no_fault``).

    Later stages are scored per stage on the triggered true faults, each head
    seeing the same inputs. ``end_to_end`` counts rows whose whole decision
    record is right.
    """
    scores = [None] * len(rows)
    seen = [k for k, r in enumerate(rows) if r.detected]
    if seen and cfg.detection_mode != "supervisor" and models.fuzzy_system is not None:
        batch = fuzzy.infer_batch(models.fuzzy_system, np.stack([rows[k].fuzzy_x for k in seen])).scores
        for k, s in zip(seen, batch):
            scores[k] = float(s)
    decisions = [staged_pipeline(r, models, cfg, s) for r, s in zip(rows, scores)]
    reports = {"detection": classify.report_from_predictions(
        "detection", [r.labels["detection"] for r in rows], [d.detection for d in decisions])}
    faults = [r for r in rows if r.detected and r.labels["detection"] == "fault"]
    if faults:
        X = np.stack([r.x for r in faults])
        for task in STAGES:
            pred = classify.ensemble_predict(_stage(models, task), X, models.feature_names)
            reports[task] = classify.report_from_predictions(task, [r.labels[task] for r in faults], pred)
    good = 0
    for r, d in zip(rows, decisions):
        ok = d.detection == r.labels["detection"]
        if ok and d.detection == "fault":
            ok = all(getattr(d, t) == r.labels[t] for t in STAGES)
        good += ok
    n = len(rows)
    e2e = {"n": n, "correct": good, "accuracy": good / n if n else math.nan,
           "trip_correct": sum(d.trip == (r.labels["region"] == "internal") for r, d in zip(rows, decisions))}
    return reports, decisions, e2e


def split_cases(cases: Sequence[Case], cfg: PipelineConfig):
    train_idx, test_idx = classify.stratified_split([c.stratum for c in cases], cfg.test_fraction, cfg.seed)
    return train_idx, test_idx


def run_experiment(cases: Sequence[Case], cfg: PipelineConfig, jobs: int = 1,
                   rows: Sequence[CaseFeatures] | None = None) -> tuple[ExperimentResult, PipelineModels]:
    """Extract, split 70/30 by stratum, train on the training part and score the held-out part."""
    if rows is None:
        rows = extract_all(cases, cfg, jobs)
    train_idx, test_idx = split_cases(cases, cfg)
    models = train_models([rows[i] for i in train_idx], cfg)
    test_rows = [rows[i] for i in test_idx]
    reports, decisions, e2e = evaluate_rows(test_rows, models, cfg)
    counts = {"cases": len(cases), "train": int(train_idx.size), "test": int(test_idx.size),
              "triggered": int(sum(r.detected for r in rows))}
    return ExperimentResult(cfg, reports, decisions, e2e, counts), models


def write_reports(result: ExperimentResult, out_dir) -> list[Path]:
    """report.json, one confusion CSV per stage, a summary table and the decision log."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "report.json"]
    written[0].write_text(result.to_json() + "\n")
    for task, rep in result.reports.items():
        p = out / f"confusion_{task}.csv"
        rep.write_confusion_csv(p)
        written.append(p)
    p = out / "summary.csv"
    with p.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stage", "n", "accuracy_pct", "ci_low_pct", "ci_high_pct"])
        for task, rep in result.reports.items():
            w.writerow([task, rep.n, f"{100 * rep.accuracy:.1f}", f"{100 * rep.ci[0]:.1f}", f"{100 * rep.ci[1]:.1f}"])
    written.append(p)
    p = out / "decisions.csv"
    with p.open("w", newline="") as fh:
        rows = [d.as_row() for d in result.decisions]
        w = csv.DictWriter(fh, fieldnames=list(Decision("", "", False).as_row()), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    written.append(p)
    return written


# ---------------------------------------------------------------- model bundles

def save_models(models: PipelineModels, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    index = {"format": BUNDLE_FORMAT, "version": 1, "config_hash": models.config_hash,
             "feature_names": list(models.feature_names), "fuzzy": None, "stages": {}}
    if models.fuzzy_system is not None:
        fuzzy.save_system(models.fuzzy_system, out / "fuzzy.txt")
        index["fuzzy"] = "fuzzy.txt"
    for task, ms in models.stages.items():
        index["stages"][task] = []
        for q, m in enumerate(ms):
            name = f"{task}_{q}_{m.kind}.json"
            classify.save_model(m, out / name)
            index["stages"][task].append(name)
    (out / "bundle.json").write_text(json.dumps(index, indent=2, sort_keys=True) + "\n")


def load_models(in_dir) -> PipelineModels:
    root = Path(in_dir)
    try:
        index = json.loads((root / "bundle.json").read_text())
    except FileNotFoundError:
        raise PipelineError(f"{root}: no bundle.json") from None
    if index.get("format") != BUNDLE_FORMAT:
        raise PipelineError(f"{root}: not a model bundle")
    fsys = fuzzy.load_system(root / index["fuzzy"]) if index["fuzzy"] else None
    stages = {t: [classify.load_model(root / n) for n in names] for t, names in index["stages"].items()}
    return PipelineModels(tuple(index["feature_names"]), fsys, stages, index["config_hash"])


def check_models(models: PipelineModels, cfg: PipelineConfig) -> None:
    if tuple(models.feature_names) != feature_names(cfg):
        raise classify.SchemaMismatchError("model bundle features do not match the configuration")


__all__ = ["CaseFeatures", "Decision", "ExperimentResult", "PipelineModels", "PipelineError",
           "case_features", "extract_all", "train_models", "staged_pipeline", "evaluate_rows",
           "run_experiment", "write_reports", "save_models", "load_models", "split_cases", "feature_names"]
