"""Acceptance criteria 1-11, each recorded as one PASS/FAIL line in the terminal summary."""
import math
import time
from dataclasses import replace

import numpy as np
import pytest

import oracles
from catalog_check import compare_to_oracle
from arprotect.classify import wald_ci
from arprotect.config import PipelineConfig
from arprotect.corpus import desk_grid
from arprotect.detector import DetectorConfig, GwoConfig, dd_series, gwo_minimize
from arprotect.features import ar_fit
from arprotect.fuzzy import (
    NO_FAULT, FAULT, FuzzySystem, FuzzyTemplate, FuzzyVariable, GaConfig, Rule, Trapezoid, ga_run, infer,
)
from arprotect.mrmr import FeatureMatrix, rank
from arprotect.pipeline import run_experiment, write_reports
from arprotect.relaybaseline import (
    LineConstants, fault_phasors, impedance_trajectory, loop_impedances, slip_fault_scenario, track_frequency,
    trajectory_deviation,
)
from arprotect.waveform import Record3Ph

FS, F0 = 7680.0, 60.0


# ---------------------------------------------------------------- 1. AR recovery

def _ar_sequence(coeffs, n, sigma, seed):
    rng = np.random.default_rng(seed)
    p = len(coeffs)
    x = list(rng.uniform(-1, 1, p))
    for _ in range(n):
        x.append(sum(c * x[-k - 1] for k, c in enumerate(coeffs)) + sigma * rng.standard_normal())
    return np.asarray(x)


def test_criterion_01_ar_recovery(acceptance):
    t0 = time.perf_counter()
    cases = {1: [0.9], 2: [1.2, -0.5],
             10: [0.3, -0.2, 0.15, 0.1, -0.1, 0.05, 0.05, -0.05, 0.02, 0.01]}
    errs = {}
    for p, coeffs in cases.items():
        x = _ar_sequence(coeffs, 400, 1e-6, seed=p)
        errs[p] = float(np.max(np.abs(ar_fit(x, p).coeffs - coeffs)))
    w = 2 * math.pi * F0 / FS
    c = ar_fit(np.cos(w * np.arange(64)), 2).coeffs
    sin_err = max(abs(c[0] - 2 * math.cos(w)), abs(c[1] + 1.0))
    elapsed = time.perf_counter() - t0
    ok = max(errs.values()) < 1e-3 and sin_err < 1e-6 and elapsed < 1.0
    acceptance(1, ok, f"max coeff err {max(errs.values()):.2e}, sinusoid err {sin_err:.2e}, {elapsed:.3f} s")
    assert ok


# ---------------------------------------------------------------- 2. DD closed form

def test_criterion_02_dd_closed_form(acceptance):
    h = 64
    t = np.arange(int(8 * FS / F0)) / FS
    phases = [np.sin(2 * np.pi * F0 * t + s) for s in (0.0, -2.1, 2.1)]
    steady = Record3Ph(*[x.copy() for x in phases], fs=FS)
    k = 4 * 128
    for x in phases:
        x[k:] *= 2.0
    dd = dd_series(Record3Ph(*phases, fs=FS), DetectorConfig(0.05, h))
    step_err = float(np.max(np.abs(dd[:, k + h - 1] - 0.5)))
    steady_max = float(np.nanmax(np.abs(dd_series(steady, DetectorConfig(0.05, h)))))
    ok = step_err <= 1e-6 and steady_max < 1e-6
    acceptance(2, ok, f"|DD - 0.5| = {step_err:.2e} after step, steady max |DD| = {steady_max:.2e}")
    assert ok


# ---------------------------------------------------------------- 3. GWO

def test_criterion_03_gwo(acceptance):
    sphere = gwo_minimize(lambda x: float(x @ x), GwoConfig(dim=5, lower=-10.0, upper=10.0))
    shifted = gwo_minimize(lambda x: float(np.sum((x - 0.3) ** 2)), GwoConfig(dim=2, lower=-1.0, upper=1.0))
    monotone = all(np.all(np.diff(r.trace) <= 0.0) for r in (sphere, shifted))
    ok = sphere.best_f < 1e-4 and shifted.best_f < 1e-4 and monotone
    acceptance(3, ok, f"sphere {sphere.best_f:.2e}, shifted {shifted.best_f:.2e}, monotone trace {monotone}")
    assert ok


# ---------------------------------------------------------------- 4. mRMR

def test_criterion_04_mrmr(acceptance):
    y = np.array([0, 0, 1, 1] * 25)
    f3 = np.array([0, 1, 0, 1] * 25, float)
    m = FeatureMatrix(np.column_stack([y, y, f3]).astype(float), y, ["f1", "f2", "f3"])
    r = rank(m, 3, bins=2)
    ln2 = math.log(2.0)
    scores_ok = np.allclose(r.scores, [ln2, 0.0, ln2 / 2], atol=1e-12)
    ok = r.features == ["f1", "f3", "f2"] and scores_ok
    acceptance(4, ok, f"order {r.features}, scores {[round(s, 6) for s in r.scores]}")
    assert ok


# ---------------------------------------------------------------- 5. CI formula

def test_criterion_05_ci(acceptance):
    lo, hi = wald_ci(0.9, 100)
    exact = abs((hi - 0.9) - 0.0588) < 1e-12 and abs((0.9 - lo) - 0.0588) < 1e-12
    n_t = 1.96 ** 2 * 0.996 * 0.004 / 0.003 ** 2
    half = wald_ci(0.996, 1700)[1] - 0.996
    table = round(100 * half, 1) == 0.3 and abs(half - oracles.wald_half_width(0.996, 1700)) < 1e-15
    ok = exact and table and int(n_t) == 1700
    acceptance(5, ok, f"0.9 +/- {hi - 0.9:.4f}; N_t = {n_t:.1f} gives +/- {100 * half:.4f}%")
    assert ok


# ---------------------------------------------------------------- 6. feature oracle

def test_criterion_06_feature_oracle(acceptance):
    rng = np.random.default_rng(2024)
    windows = []
    for _ in range(1000):
        n = int(rng.integers(20, 65))
        windows.append(rng.standard_normal((3, n)) * rng.uniform(0.1, 10.0) + rng.uniform(-2, 2, (3, 1)))
    t0 = time.perf_counter()
    bad = []
    for x in windows:
        bad += compare_to_oracle(x)
    elapsed = time.perf_counter() - t0
    ok = not bad and elapsed < 30.0
    acceptance(6, ok, f"{len(bad)} mismatches over 1000 windows x 144 features, {elapsed:.1f} s")
    assert ok, bad[:10]


# ---------------------------------------------------------------- 7. fuzzy engine

def test_criterion_07_fuzzy(acceptance):
    ramp = FuzzyVariable("x", 0.0, 1.0, ("low", "high"), (Trapezoid(0, 0, 0, 1), Trapezoid(0, 1, 1, 1)))
    out = FuzzyVariable("y", 0.0, 1.0, (NO_FAULT, FAULT), (Trapezoid(0, 0, 0.2, 0.4), Trapezoid(0.6, 0.8, 1, 1)))
    sym = FuzzySystem((ramp,), out, (Rule(("low",), NO_FAULT), Rule(("high",), FAULT)))
    s_sym, _ = infer(sym, [0.5])
    clip_out = FuzzyVariable("y", 0.0, 1.0, ("o",), (Trapezoid(0.1, 0.5, 0.6, 0.7),))
    single = FuzzySystem((ramp,), clip_out, (Rule(("high",), "o"),))
    s_clip, _ = infer(single, [0.6])
    exact = oracles.clipped_trapezoid_centroid(0.1, 0.5, 0.6, 0.7, 0.6)
    x = np.random.default_rng(0).uniform(0, 1, (200, 1))
    res = ga_run(x, x[:, 0] > 0.5, FuzzyTemplate.single_input(), GaConfig(generations=50, seed=1))
    ok = abs(s_sym - 0.5) <= 1e-3 and abs(s_clip - exact) <= 1e-3 and res.fitness == 1.0
    gen = next(i for i, f in enumerate(res.history) if f == res.fitness)
    acceptance(7, ok, f"symmetric {s_sym:.6f}, clipped {s_clip:.6f} vs {exact:.6f}, "
                      f"GA fitness {res.fitness} at generation {gen}")
    assert ok


# ---------------------------------------------------------------- 8, 9, 11: desk corpus

@pytest.fixture(scope="module")
def desk():
    cases = desk_grid().cases()
    cfg = PipelineConfig()
    t0 = time.perf_counter()
    result, _ = run_experiment(cases, cfg)
    return cases, cfg, result, time.perf_counter() - t0


def test_criterion_08_desk_scale(desk, acceptance):
    cases, cfg, result, elapsed = desk
    n_fault = sum(c.spec.kind == "fault" for c in cases)
    acc = {t: result.accuracy(t) for t in ("detection", "region", "phase")}
    ok = (n_fault == 1080 and len(cases) - n_fault == 600 and cfg.smote and len(cfg.kinds) == 3
          and acc["detection"] >= 0.95 and acc["region"] >= 0.90 and acc["phase"] >= 0.90 and elapsed < 300.0)
    acceptance(8, ok, ", ".join(f"{t} {100 * a:.1f}%" for t, a in acc.items()) + f", {elapsed:.0f} s")
    assert ok


def test_criterion_09_noise_ordering(desk, acceptance):
    cases, cfg, _, _ = desk
    acc = {}
    for label, over in (("40 dB double", dict(snr_db=40.0)), ("20 dB double", dict(snr_db=20.0)),
                        ("20 dB single", dict(snr_db=20.0, end_mode="single"))):
        result, _ = run_experiment(cases, replace(cfg, **over))
        acc[label] = result.accuracy("detection")
    ok = acc["40 dB double"] >= acc["20 dB double"] and acc["20 dB double"] >= acc["20 dB single"]
    acceptance(9, ok, ", ".join(f"{k} {100 * v:.1f}%" for k, v in acc.items()))
    assert ok


# ---------------------------------------------------------------- 10. relay baseline

def test_criterion_10_relay(acceptance):
    line = LineConstants()
    v, i = fault_phasors(0.5, line, "ag")
    z = loop_impedances(v, i, line.k0)[0].z
    loop_err = abs(z - 0.5 * line.z1) / abs(0.5 * line.z1)
    fs = 1920.0
    track_err = max(abs(track_frequency(np.cos(2 * np.pi * f * np.arange(96) / fs + 0.3), fs) - f)
                    for f in np.arange(42.0, 78.01, 0.5))
    wf = slip_fault_scenario(0.5, 72.0)
    dev = trajectory_deviation(impedance_trajectory(wf, line, "fixed"), impedance_trajectory(wf, line, "tracked"))
    ok = loop_err <= 1e-3 and track_err < 0.1 and dev > 0.05
    acceptance(10, ok, f"loop err {100 * loop_err:.2e}%, tracker err {track_err:.3f} Hz, "
                       f"slip deviation {100 * dev:.1f}%")
    assert ok


# ---------------------------------------------------------------- 11. determinism

def test_criterion_11_determinism(desk, acceptance, tmp_path):
    cases, cfg, result, _ = desk
    again, _ = run_experiment(cases, cfg)
    write_reports(result, tmp_path / "first")
    written = write_reports(again, tmp_path / "second")
    differ = [p.name for p in written if p.read_bytes() != (tmp_path / "first" / p.name).read_bytes()]
    ok = not differ
    acceptance(11, ok, f"{len(written)} report files compared, {len(differ)} differ")
    assert ok, differ
