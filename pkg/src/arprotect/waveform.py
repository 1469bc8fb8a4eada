"""Three-phase current records: ingest, synthesis, filtering, corruption, windowing."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal

PHASES = ("a", "b", "c")
PHASE_SHIFT = {"a": 0.0, "b": -2.0 * math.pi / 3.0, "c": 2.0 * math.pi / 3.0}

EVENT_KINDS = ("fault", "capacitor_switch", "load_switch", "high_impedance_fault", "power_swing", "steady")
FAULT_TYPES = ("ag", "bg", "cg", "ab", "bc", "ca", "abg", "bcg", "cag", "abcg")
RESISTANCE_SCALE = {"low": 1.0, "mid": 0.6, "high": 0.3}
# resistive faults: smaller loop angle, faster DC decay
RESISTANCE_ANGLE_DROP = {"low": 0.0, "mid": 25.0, "high": 45.0}
RESISTANCE_TAU_SCALE = {"low": 1.0, "mid": 0.6, "high": 0.35}

LINE_ANGLE_DEG = 88.0
LOAD_PEAK_A = 500.0
MIN_WINDOW = 12


class WaveformError(ValueError):
    """Invalid record, window, or waveform operation."""


class CsvFormatError(WaveformError):
    pass


class NonUniformSamplingError(WaveformError):
    pass


@dataclass(frozen=True, eq=False)
class Record3Ph:
    """Uniformly sampled three-phase current record (amperes)."""

    samples_a: np.ndarray
    samples_b: np.ndarray
    samples_c: np.ndarray
    fs: float
    f0: float = 60.0
    t0: float = 0.0

    def __post_init__(self):
        arrs = []
        for name in ("samples_a", "samples_b", "samples_c"):
            arr = np.array(getattr(self, name), dtype=float)
            if arr.ndim != 1:
                raise WaveformError(f"{name} must be one-dimensional")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
            arrs.append(arr)
        n = arrs[0].shape[0]
        if any(a.shape[0] != n for a in arrs):
            raise WaveformError("phase arrays differ in length")
        if n < 2:
            raise WaveformError("record needs at least 2 samples")
        if not (self.fs > 2.0 * self.f0 > 0.0):
            raise WaveformError(f"need fs > 2*f0 (fs={self.fs}, f0={self.f0})")

    @classmethod
    def from_array(cls, data, fs, f0=60.0, t0=0.0):
        data = np.asarray(data, dtype=float)
        return cls(data[0], data[1], data[2], fs=fs, f0=f0, t0=t0)

    @property
    def n(self) -> int:
        return self.samples_a.shape[0]

    @property
    def data(self) -> np.ndarray:
        return np.stack([self.samples_a, self.samples_b, self.samples_c])

    def phase(self, ph: str) -> np.ndarray:
        return getattr(self, f"samples_{ph}")

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.n) / self.fs

    @property
    def samples_per_cycle(self) -> float:
        return self.fs / self.f0

    def with_data(self, data, t0=None) -> "Record3Ph":
        return Record3Ph.from_array(data, self.fs, self.f0, self.t0 if t0 is None else t0)

    def scaled(self, c: float) -> "Record3Ph":
        return self.with_data(self.data * c)


@dataclass(frozen=True, eq=False)
class SampleWindow:
    """A W-sample view into a record starting at ``start``."""

    record: Record3Ph
    start: int
    length: int
    window_cycles: float

    @property
    def data(self) -> np.ndarray:
        return self.record.data[:, self.start:self.start + self.length]

    def phase(self, ph: str) -> np.ndarray:
        return self.record.phase(ph)[self.start:self.start + self.length]

    @property
    def t_start(self) -> float:
        return self.record.t0 + self.start / self.record.fs

    @property
    def fs(self) -> float:
        return self.record.fs

    @property
    def f0(self) -> float:
        return self.record.f0

    @property
    def key(self) -> tuple:
        return (id(self.record), self.start, self.length)


@dataclass(frozen=True)
class EventSpec:
    """Scenario parameters for one synthesized event.

    ``location`` (1..8) selects the per-end signal profile of a fault;
    ``rating`` (1..4) scales switching events; ``wind_scale`` is the wind-farm
    output fraction multiplying the slip-frequency share; ``transformer``
    ``"yd"`` traps zero-sequence current at the wind-farm end.
    """

    kind: str = "steady"
    fault_type: str = "ag"
    inception_angle: float = 0.0
    fault_resistance_class: str = "low"
    off_nominal_hz: float = 60.0
    dc_decay_tau: float = 0.03
    snr_db: float | None = None
    ct_sat_level: float | None = None
    sync_delay_ms: float | None = None
    location: int = 4
    transformer: str = "yy"
    rating: int = 1
    wind_scale: float = 1.0
    onset_cycles: float = 4.0

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise WaveformError(f"unknown event kind {self.kind!r}")
        if self.fault_type not in FAULT_TYPES:
            raise WaveformError(f"unknown fault type {self.fault_type!r}")
        if not 0.0 <= self.inception_angle < 360.0:
            raise WaveformError("inception_angle must lie in [0, 360)")
        if self.fault_resistance_class not in RESISTANCE_SCALE:
            raise WaveformError(f"unknown resistance class {self.fault_resistance_class!r}")
        if not 42.0 <= self.off_nominal_hz <= 78.0:
            raise WaveformError("off_nominal_hz must lie in [42, 78]")
        if not self.dc_decay_tau > 0.0:
            raise WaveformError("dc_decay_tau must be positive")
        if self.transformer not in ("yy", "yd"):
            raise WaveformError(f"unknown transformer connection {self.transformer!r}")

    @property
    def faulted_phases(self) -> tuple[str, ...]:
        return tuple(ch for ch in self.fault_type if ch in PHASES)

    @property
    def grounded(self) -> bool:
        return self.fault_type.endswith("g")

    def onset_time(self, f0: float) -> float:
        return (self.onset_cycles + self.inception_angle / 360.0) / f0


# ---------------------------------------------------------------- I/O

def load_csv(path) -> Record3Ph:
    """Read a ``t,ia,ib,ic`` CSV file; ``fs`` comes from the median step."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise CsvFormatError(f"{path}: line 1: empty file") from None
        cols = {}
        for name in ("t", "ia", "ib", "ic"):
            if name not in header:
                raise CsvFormatError(f"{path}: line 1: missing column {name!r}")
            cols[name] = header.index(name)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rows.append([float(row[cols[k]]) for k in ("t", "ia", "ib", "ic")])
            except (ValueError, IndexError) as exc:
                raise CsvFormatError(f"{path}: line {lineno}: {exc}") from None
    if len(rows) < 2:
        raise CsvFormatError(f"{path}: fewer than 2 samples")
    arr = np.asarray(rows)
    if not np.all(np.isfinite(arr)):
        raise CsvFormatError(f"{path}: non-finite value")
    dt = np.diff(arr[:, 0])
    step = float(np.median(dt))
    if step <= 0.0:
        raise NonUniformSamplingError(f"{path}: time column is not increasing")
    worst = float(np.max(np.abs(dt - step)) / step)
    if worst > 1e-4:
        raise NonUniformSamplingError(f"{path}: sample spacing deviates by {worst:.3%} (limit 0.01%)")
    fs = 1.0 / step
    if abs(fs - round(fs)) <= 1e-6 * fs:
        fs = float(round(fs))
    return Record3Ph(arr[:, 1], arr[:, 2], arr[:, 3], fs=fs, t0=float(arr[0, 0]))


def save_csv(rec: Record3Ph, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write("t,ia,ib,ic\n")
        for t, a, b, c in zip(rec.times.tolist(), rec.samples_a.tolist(),
                              rec.samples_b.tolist(), rec.samples_c.tolist()):
            fh.write(f"{t!r},{a!r},{b!r},{c!r}\n")


# ---------------------------------------------------------------- synthesis

# Per-location, per-end fault signatures:
# (current gain x load, slip-frequency share, 3rd harmonic, 5th harmonic, DC tau scale, direction sign)
# Locations 1-3 lie behind the wind-farm end, 4-5 on the protected line, 6-8 beyond the grid end.
FAULT_PROFILES = {
    1: {"w": (6.0, 0.06, 0.020, 0.010, 1.0, -1), "g": (5.0, 0.02, 0.010, 0.005, 1.3, 1)},
    2: {"w": (7.0, 0.08, 0.025, 0.012, 1.0, -1), "g": (5.5, 0.03, 0.012, 0.006, 1.2, 1)},
    3: {"w": (8.0, 0.10, 0.030, 0.015, 1.0, -1), "g": (6.0, 0.04, 0.015, 0.008, 1.1, 1)},
    4: {"w": (12.0, 0.30, 0.050, 0.030, 1.0, 1), "g": (14.0, 0.10, 0.020, 0.010, 1.4, 1)},
    5: {"w": (10.0, 0.35, 0.050, 0.030, 1.0, 1), "g": (16.0, 0.12, 0.020, 0.010, 1.5, 1)},
    6: {"w": (6.0, 0.55, 0.080, 0.050, 1.0, 1), "g": (4.5, 0.45, 0.060, 0.040, 0.8, -1)},
    7: {"w": (5.5, 0.60, 0.090, 0.050, 1.0, 1), "g": (5.0, 0.50, 0.070, 0.040, 0.8, -1)},
    8: {"w": (5.0, 0.65, 0.100, 0.060, 1.0, 1), "g": (5.5, 0.55, 0.080, 0.050, 0.8, -1)},
}
# Distance (km) from each terminal to the fault; sets the reflection ringing frequency.
LOCATION_KM = {1: (60.0, 160.0), 2: (40.0, 140.0), 3: (20.0, 120.0), 4: (25.0, 75.0),
               5: (75.0, 25.0), 6: (120.0, 20.0), 7: (140.0, 40.0), 8: (160.0, 60.0)}
WAVE_SPEED_KM_S = 2.9e5
SOURCE_KM = 40.0
RING_TAU = 0.002
RING_SHARE = 0.3
LOCATION_TAU = {1: 0.030, 2: 0.026, 3: 0.022, 4: 0.040, 5: 0.034, 6: 0.016, 7: 0.013, 8: 0.010}
CAPACITOR_BURST_HZ = {5: 660.0, 8: 900.0, 9: 1140.0}


def ringing_hz(location: int, end: str) -> float:
    """Quarter-wave reflection frequency seen at ``end`` for a fault at ``location``."""
    d = LOCATION_KM[location][0 if end == "w" else 1]
    return WAVE_SPEED_KM_S / (4.0 * (d + SOURCE_KM))


def _streams(seed: int):
    base, event, noise = np.random.SeedSequence(seed).spawn(3)
    return np.random.default_rng(base), np.random.default_rng(event), noise


def _fault_increment(spec, end, t, t_on, f0):
    gain, share, h3, h5, tau_scale, sign = FAULT_PROFILES[spec.location][end]
    f_ring = ringing_hz(spec.location, end)
    rclass = spec.fault_resistance_class
    mag = gain * RESISTANCE_SCALE[rclass] * LOAD_PEAK_A
    theta = math.radians(LINE_ANGLE_DEG - RESISTANCE_ANGLE_DROP[rclass])
    tau = spec.dc_decay_tau * tau_scale * RESISTANCE_TAU_SCALE[rclass]
    share = min(share * spec.wind_scale, 0.95)
    w0 = 2.0 * math.pi * f0
    wf = 2.0 * math.pi * spec.off_nominal_hz
    post = t >= t_on
    tau_t = np.where(post, t - t_on, 0.0)

    wr = 2.0 * math.pi * f_ring
    ring_env = RING_SHARE * RESISTANCE_SCALE[rclass] * np.exp(-tau_t / RING_TAU)

    def one(phi):
        ph0 = w0 * t_on + phi - theta
        arg = w0 * t + phi - theta
        # reflections scale with the pre-fault voltage at inception
        v_on = 0.5 + 0.5 * abs(math.sin(w0 * t_on + phi))
        inc = ((1.0 - share) * np.sin(arg)
               + v_on * ring_env * np.sin(wr * tau_t)
               + share * np.sin(wf * tau_t + ph0)
               - math.sin(ph0) * np.exp(-tau_t / tau)
               + h3 * np.sin(3.0 * arg) + h5 * np.sin(5.0 * arg))
        return sign * mag * np.where(post, inc, 0.0)

    inc = {ph: np.zeros_like(t) for ph in PHASES}
    phases = spec.faulted_phases
    if len(phases) == 2 and not spec.grounded:
        x, y = phases
        loop = one(PHASE_SHIFT[x] + math.pi / 6.0)
        inc[x] = loop
        inc[y] = -loop
    else:
        for ph in phases:
            inc[ph] = one(PHASE_SHIFT[ph])
    if spec.transformer == "yd" and end == "w" and spec.grounded:
        zero = (inc["a"] + inc["b"] + inc["c"]) / 3.0
        inc = {ph: v - zero for ph, v in inc.items()}
    return inc


def _apply_event(spec, end, t, base, load_angle, rng, f0, fs):
    t_on = spec.onset_time(f0)
    t_on = round(t_on * fs) / fs
    w0 = 2.0 * math.pi * f0
    post = t >= t_on
    tau_t = np.where(post, t - t_on, 0.0)
    out = {ph: base[ph].copy() for ph in PHASES}
    end_gain = 1.0 if end == "w" else 0.7
    if spec.kind == "fault":
        inc = _fault_increment(spec, end, t, t_on, f0)
        for ph in PHASES:
            out[ph] += inc[ph]
    elif spec.kind == "capacitor_switch":
        f_b = CAPACITOR_BURST_HZ.get(spec.location, 780.0)
        amp = (0.3 + 0.25 * spec.rating) * LOAD_PEAK_A * end_gain
        lead = 0.04 * spec.rating * LOAD_PEAK_A
        for ph in PHASES:
            phi = PHASE_SHIFT[ph]
            burst = amp * np.exp(-tau_t / 0.003) * np.sin(2 * math.pi * f_b * tau_t + w0 * t_on + phi)
            shift = lead * np.cos(w0 * t + phi)
            out[ph] += np.where(post, burst + shift, 0.0)
    elif spec.kind == "load_switch":
        ramp_time = 1.0 / f0
        frac = np.clip(tau_t / ramp_time, 0.0, 1.0)
        smooth = np.where(post, 0.5 - 0.5 * np.cos(math.pi * frac), 0.0)
        gain = 1.0 + 0.1 * spec.rating * smooth
        dphi = math.radians(3.0 * spec.rating) * smooth
        amp = base["amp"]
        for ph in PHASES:
            arg = w0 * t + PHASE_SHIFT[ph] - load_angle - dphi
            out[ph] = base["sign"] * amp * gain * np.sin(arg)
    elif spec.kind == "high_impedance_fault":
        ph = spec.faulted_phases[0]
        block = np.floor(tau_t / 0.002).astype(int)
        n_blocks = int(block.max()) + 1
        levels = rng.uniform(0.05, 0.15, size=n_blocks) * LOAD_PEAK_A * end_gain
        arg = w0 * t + PHASE_SHIFT[ph]
        a_k = levels[block]
        hif = a_k * (np.sin(arg) + 0.3 * np.sin(3.0 * arg))
        out[ph] = out[ph] + np.where(post, hif, 0.0)
    elif spec.kind == "power_swing":
        f_s = 2.0
        amp_mod = 1.0 + 0.3 * np.sin(2 * math.pi * f_s * tau_t)
        ph_mod = 0.2 * np.sin(2 * math.pi * f_s * tau_t)
        amp = base["amp"]
        for ph in PHASES:
            arg = w0 * t + PHASE_SHIFT[ph] - load_angle + np.where(post, ph_mod, 0.0)
            out[ph] = base["sign"] * amp * np.where(post, amp_mod, 1.0) * np.sin(arg)
    return out


def synthesize(spec: EventSpec, fs: float, duration: float, seed: int, f0: float = 60.0,
               end: str = "w") -> Record3Ph:
    """Phenomenological three-phase current record for one event.

    The pre-event signal is a balanced sinusoid at ``f0``. ``end`` picks the
    wind-farm (``"w"``) or grid (``"g"``) terminal; the grid end sees the load
    current reversed, its own fault profile, and ``spec.sync_delay_ms``.
    Identical arguments give bit-identical records.
    """
    if end not in ("w", "g"):
        raise WaveformError(f"unknown line end {end!r}")
    n = int(round(duration * fs))
    t = np.arange(n) / fs
    if spec.kind != "steady":
        need = spec.onset_time(f0) + 4.0 / f0
        if duration + 0.5 / fs < need:
            raise WaveformError(
                f"duration {duration:.4f}s too short: event at {spec.onset_time(f0):.4f}s needs 4 post-event cycles")
    elif duration + 0.5 / fs < 8.0 / f0:
        raise WaveformError("duration must cover at least 8 cycles")

    base_rng, event_rng, noise_seq = _streams(seed)
    amp = LOAD_PEAK_A * (1.0 + 0.05 * base_rng.uniform(-1.0, 1.0))
    load_angle = math.radians(20.0 + 5.0 * base_rng.uniform(-1.0, 1.0))
    sign = 1.0 if end == "w" else -1.0
    w0 = 2.0 * math.pi * f0
    base = {ph: sign * amp * np.sin(w0 * t + PHASE_SHIFT[ph] - load_angle) for ph in PHASES}
    base["amp"] = amp
    base["sign"] = sign

    if spec.kind == "steady":
        phases = {ph: base[ph] for ph in PHASES}
    else:
        phases = _apply_event(spec, end, t, base, load_angle, event_rng, f0, fs)
    data = np.stack([phases[ph] for ph in PHASES])

    if spec.ct_sat_level is not None:
        level = spec.ct_sat_level * amp
        data = level * np.tanh(data / level)
    rec = Record3Ph.from_array(data, fs, f0)
    if spec.snr_db is not None:
        stream = noise_seq.spawn(2)[0 if end == "w" else 1]
        rec = add_noise(rec, spec.snr_db, stream)
    if end == "g" and spec.sync_delay_ms:
        rec = apply_sync_delay(rec, spec.sync_delay_ms)
    return rec


# ---------------------------------------------------------------- processing

def butterworth_lp(rec: Record3Ph, order: int = 5, fc: float = 480.0) -> Record3Ph:
    """Low-pass each phase with a digital Butterworth as cascaded biquads.

    The design is the bilinear-transform Butterworth (prewarped at ``fc``),
    factored into second-order sections and run with zero initial state, so
    the DC gain is exactly the product of unit-gain sections.
    """
    if not 0.0 < fc < rec.fs / 2.0:
        raise WaveformError(f"cut-off {fc} Hz outside (0, fs/2={rec.fs / 2.0})")
    if order < 1:
        raise WaveformError("filter order must be >= 1")
    sos = signal.butter(order, fc, btype="low", fs=rec.fs, output="sos")
    return rec.with_data(signal.sosfilt(sos, rec.data, axis=1))


def butterworth_gain(f, order: int, fc: float, fs: float):
    """Magnitude response of the filter used by :func:`butterworth_lp`."""
    ratio = np.tan(np.pi * np.asarray(f) / fs) / np.tan(np.pi * fc / fs)
    return 1.0 / np.sqrt(1.0 + ratio ** (2 * order))


def add_noise(rec: Record3Ph, snr_db: float, seed) -> Record3Ph:
    """Add white Gaussian noise at ``snr_db`` per phase.

    Noise is scaled so its empirical power matches P_signal / 10**(snr/10)
    exactly on each phase. ``snr_db=inf`` returns the record unchanged.
    """
    if math.isinf(snr_db) and snr_db > 0:
        return rec
    data = rec.data
    if not np.all(np.isfinite(data)):
        raise WaveformError("record contains non-finite samples")
    power = np.mean(data ** 2, axis=1)
    if np.any(power == 0.0):
        raise WaveformError("zero-power phase: SNR undefined")
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(data.shape)
    noise -= noise.mean(axis=1, keepdims=True)
    target = power / 10.0 ** (snr_db / 10.0)
    noise *= np.sqrt(target / np.mean(noise ** 2, axis=1))[:, None]
    return rec.with_data(data + noise)


def measured_snr_db(clean, noisy) -> np.ndarray:
    clean = np.asarray(clean, dtype=float)
    diff = np.asarray(noisy, dtype=float) - clean
    return 10.0 * np.log10(np.mean(clean ** 2, axis=-1) / np.mean(diff ** 2, axis=-1))


def apply_sync_delay(rec: Record3Ph, delay_ms: float) -> Record3Ph:
    """Delay a record by a whole number of samples.

    Sample k of the output holds input sample k at time ``t0 + d/fs``; the
    first ``d`` time slots have no data and are dropped, so the record
    shortens by ``d = round(delay_ms*fs/1000)`` samples.
    """
    shift = int(round(delay_ms * rec.fs / 1000.0))
    if shift < 0:
        raise WaveformError("negative delay")
    if shift == 0:
        return rec
    if shift > rec.n - 2:
        raise WaveformError(f"delay of {shift} samples exceeds record length {rec.n}")
    return rec.with_data(rec.data[:, :rec.n - shift], t0=rec.t0 + shift / rec.fs)


def window_length(cycles: float, fs: float, f0: float) -> int:
    return int(round(cycles * fs / f0))


def window_at(rec: Record3Ph, t: float, cycles: float) -> SampleWindow:
    """Window of ``round(cycles*fs/f0)`` samples starting nearest to time ``t``."""
    w = window_length(cycles, rec.fs, rec.f0)
    if w < 1:
        raise WaveformError("window is empty")
    start = int(round((t - rec.t0) * rec.fs))
    if start < 0 or start + w > rec.n:
        raise WaveformError(f"window [{t:.6f}s, +{cycles} cycles] outside record")
    return SampleWindow(rec, start, w, cycles)


def window_from(rec: Record3Ph, start: int, cycles: float) -> SampleWindow:
    w = window_length(cycles, rec.fs, rec.f0)
    if start < 0 or start + w > rec.n:
        raise WaveformError(f"window at sample {start} (+{w}) outside record")
    return SampleWindow(rec, start, w, cycles)
