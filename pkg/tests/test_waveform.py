import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from arprotect.waveform import (
    CsvFormatError, EventSpec, NonUniformSamplingError, Record3Ph, WaveformError, add_noise,
    apply_sync_delay, butterworth_gain, butterworth_lp, load_csv, measured_snr_db, save_csv,
    synthesize, window_at, window_from,
)

FS, F0 = 7680.0, 60.0
# |H(j 2 pi f)| of the 5th-order 480 Hz design at fs = 7680, from the prewarped analog prototype (40-digit oracle)
GAIN_60 = 0.99999999959015150205
GAIN_3000 = 1.8261873682423571188e-6


def tone(f, cycles=20, fs=FS, amp=1.0, phase=0.0):
    t = np.arange(int(round(cycles * fs / F0))) / fs
    x = amp * np.cos(2 * np.pi * f * t + phase)
    return Record3Ph(x, x, x, fs=fs)


def write(path, rows, header="t,ia,ib,ic"):
    path.write_text(header + "\n" + "\n".join(",".join(map(repr, r)) for r in rows) + "\n")
    return path


# ---------------------------------------------------------------- load_csv

def test_load_csv_infers_fs(tmp_path):
    rows = [(k / 7680.0, 1.0 * k, 2.0, 3.0) for k in range(4)]
    rec = load_csv(write(tmp_path / "r.csv", rows))
    assert rec.fs == 7680.0
    assert rec.n == 4
    np.testing.assert_array_equal(rec.samples_a, [0.0, 1.0, 2.0, 3.0])


def test_load_csv_rejects_jitter(tmp_path):
    rows = [(k / 7680.0 * (1.0 + (1e-3 if k == 2 else 0.0)), 0.0, 0.0, 0.0) for k in range(6)]
    with pytest.raises(NonUniformSamplingError):
        load_csv(write(tmp_path / "j.csv", rows))


def test_load_csv_missing_column_named(tmp_path):
    with pytest.raises(CsvFormatError, match="'ic'"):
        load_csv(write(tmp_path / "m.csv", [(0.0, 1.0, 2.0), (1e-3, 1.0, 2.0)], header="t,ia,ib"))


def test_load_csv_bad_value_reports_line(tmp_path):
    p = tmp_path / "b.csv"
    p.write_text("t,ia,ib,ic\n0,1,2,3\n0.001,x,2,3\n")
    with pytest.raises(CsvFormatError, match="line 3"):
        load_csv(p)


def test_load_csv_too_short(tmp_path):
    with pytest.raises(CsvFormatError):
        load_csv(write(tmp_path / "s.csv", [(0.0, 1.0, 1.0, 1.0)]))


def test_csv_round_trip(tmp_path):
    rec = synthesize(EventSpec("fault", "abg"), FS, 10 / F0, seed=3)
    save_csv(rec, tmp_path / "x.csv")
    back = load_csv(tmp_path / "x.csv")
    assert back.fs == rec.fs
    np.testing.assert_array_equal(back.data, rec.data)


# ---------------------------------------------------------------- synthesize

def test_steady_is_pure_sinusoid():
    rec = synthesize(EventSpec("steady"), FS, 10 / F0, seed=1)
    per = int(FS / F0)
    np.testing.assert_allclose(rec.samples_a[per:2 * per], rec.samples_a[5 * per:6 * per], atol=1e-9)


def test_single_phase_fault_leaves_other_phases():
    steady = synthesize(EventSpec("steady"), FS, 10 / F0, seed=5)
    fault = synthesize(EventSpec("fault", "ag"), FS, 10 / F0, seed=5)
    np.testing.assert_array_equal(fault.samples_b, steady.samples_b)
    np.testing.assert_array_equal(fault.samples_c, steady.samples_c)
    assert not np.array_equal(fault.samples_a, steady.samples_a)


@pytest.mark.parametrize("kind", ["fault", "capacitor_switch", "load_switch", "high_impedance_fault",
                                  "power_swing", "steady"])
def test_synthesize_deterministic(kind):
    spec = EventSpec(kind, "bc", inception_angle=45.0, location=5)
    a = synthesize(spec, FS, 10 / F0, seed=11)
    b = synthesize(spec, FS, 10 / F0, seed=11)
    assert a.data.tobytes() == b.data.tobytes()


def test_synthesize_rejects_short_duration():
    with pytest.raises(WaveformError):
        synthesize(EventSpec("fault"), FS, 6 / F0, seed=0)


def test_event_spec_validation():
    with pytest.raises(WaveformError):
        EventSpec("meteor")
    with pytest.raises(WaveformError):
        EventSpec("fault", inception_angle=360.0)
    with pytest.raises(WaveformError):
        EventSpec("fault", off_nominal_hz=80.0)
    with pytest.raises(WaveformError):
        EventSpec("fault", dc_decay_tau=0.0)


def test_capacitor_burst_is_high_frequency():
    spec = EventSpec("capacitor_switch", location=5)
    rec = synthesize(spec, FS, 10 / F0, seed=2)
    steady = synthesize(EventSpec("steady"), FS, 10 / F0, seed=2)
    diff = rec.samples_a - steady.samples_a
    spectrum = np.abs(np.fft.rfft(diff))
    freqs = np.fft.rfftfreq(diff.size, 1 / FS)
    # the event also adds a leading fundamental; the burst is the strongest line above it
    above = freqs > 200.0
    assert freqs[above][np.argmax(spectrum[above])] >= 600.0


def test_grid_end_sync_delay_shortens_record():
    spec = EventSpec("fault", sync_delay_ms=1.0)
    w = synthesize(spec, FS, 10 / F0, seed=4, end="w")
    g = synthesize(spec, FS, 10 / F0, seed=4, end="g")
    assert w.n - g.n == 8


# ---------------------------------------------------------------- filtering

def test_butterworth_passband_amplitude():
    out = butterworth_lp(tone(60.0), 5, 480.0)
    settled = out.samples_a[out.n // 2:]
    assert abs(np.max(np.abs(settled)) - GAIN_60) < 0.005


def test_butterworth_stopband_amplitude():
    out = butterworth_lp(tone(3000.0), 5, 480.0)
    assert np.max(np.abs(out.samples_a[out.n // 2:])) < 0.01


def test_butterworth_gain_matches_oracle():
    assert butterworth_gain(60.0, 5, 480.0, FS) == pytest.approx(GAIN_60, rel=1e-12)
    assert butterworth_gain(3000.0, 5, 480.0, FS) == pytest.approx(GAIN_3000, rel=1e-9)


def test_butterworth_dc_gain():
    rec = Record3Ph(np.ones(4000), np.ones(4000), np.ones(4000), fs=FS)
    assert abs(butterworth_lp(rec).samples_a[-1] - 1.0) < 1e-6


def test_butterworth_zero_in_zero_out():
    z = np.zeros(100)
    assert not np.any(butterworth_lp(Record3Ph(z, z, z, fs=FS)).data)


def test_butterworth_cutoff_range():
    with pytest.raises(WaveformError):
        butterworth_lp(tone(60.0), 5, FS / 2)


@given(st.floats(-5, 5), st.floats(-5, 5), st.integers(0, 2**32 - 1))
def test_butterworth_linear(a, b, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((3, 256))
    y = rng.standard_normal((3, 256))
    fx = butterworth_lp(Record3Ph.from_array(x, FS)).data
    fy = butterworth_lp(Record3Ph.from_array(y, FS)).data
    fxy = butterworth_lp(Record3Ph.from_array(a * x + b * y, FS)).data
    scale = max(1.0, float(np.max(np.abs(fxy))))
    assert np.max(np.abs(fxy - (a * fx + b * fy))) <= 1e-9 * scale


# ---------------------------------------------------------------- noise

def test_noise_snr_20db():
    rec = synthesize(EventSpec("steady"), FS, 10 / F0, seed=0)
    noisy = add_noise(rec, 20.0, seed=1)
    snr = measured_snr_db(rec.data, noisy.data)
    assert np.all(np.abs(snr - 20.0) < 0.5)


def test_noise_snr_converges_long_record():
    rec = tone(60.0, cycles=100)
    noisy = add_noise(rec, 30.0, seed=9)
    assert np.all(np.abs(measured_snr_db(rec.data, noisy.data) - 30.0) < 0.1)


def test_noise_infinite_is_identity():
    rec = tone(60.0)
    assert add_noise(rec, math.inf, seed=0) is rec


def test_noise_zero_signal_rejected():
    z = np.zeros(64)
    with pytest.raises(WaveformError):
        add_noise(Record3Ph(z, z, z, fs=FS), 20.0, seed=0)


# ---------------------------------------------------------------- delay & windows

def test_sync_delay_one_ms():
    rec = tone(60.0)
    out = apply_sync_delay(rec, 1.0)
    assert rec.n - out.n == 8
    assert out.t0 == pytest.approx(8 / FS)


def test_sync_delay_zero_identity():
    rec = tone(60.0)
    assert apply_sync_delay(rec, 0.0) is rec


def test_sync_delay_too_long():
    with pytest.raises(WaveformError):
        apply_sync_delay(tone(60.0, cycles=2), 1000.0)


def test_window_half_cycle_is_64_samples():
    assert window_at(tone(60.0), 0.0, 0.5).length == 64


def test_window_one_cycle_at_1920():
    rec = tone(60.0, fs=1920.0)
    assert window_at(rec, 0.0, 1.0).length == 32


def test_window_beyond_record():
    rec = tone(60.0, cycles=2)
    with pytest.raises(WaveformError):
        window_at(rec, 1.0, 0.5)


@given(st.integers(1, 6), st.integers(0, 40))
def test_adjacent_windows_concatenate(k, start):
    rec = synthesize(EventSpec("fault", "ca"), FS, 10 / F0, seed=7)
    wins = [window_from(rec, start + j * 64, 0.5) for j in range(k)]
    joined = np.concatenate([w.data for w in wins], axis=1)
    np.testing.assert_array_equal(joined, rec.data[:, start:start + 64 * k])


def test_record_invariants():
    with pytest.raises(WaveformError):
        Record3Ph([1.0, 2.0], [1.0], [1.0, 2.0], fs=FS)
    with pytest.raises(WaveformError):
        Record3Ph([1.0], [1.0], [1.0], fs=FS)
    with pytest.raises(WaveformError):
        Record3Ph([1.0, 2.0], [1.0, 2.0], [1.0, 2.0], fs=100.0)
