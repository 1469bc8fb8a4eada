"""Conventional distance-relay comparator.

One-cycle DFT phasors, zero-crossing frequency tracking with a variable
window, six impedance loops and a quadrilateral zone-1 characteristic.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

F_MIN, F_MAX = 42.0, 78.0
REF_FS = 1920.0
REF_WINDOW = (22, 38)
LOOPS = ("AG", "BG", "CG", "AB", "BC", "CA")
_PAIRS = {"AB": (0, 1), "BC": (1, 2), "CA": (2, 0)}


class RelayError(ValueError):
    pass


@dataclass(frozen=True)
class LineConstants:
    """Whole-line sequence impedances (ohm) at the nominal frequency."""

    z1: complex = complex(0.96, 31.18)
    z0: complex = complex(33.6, 112.9)
    length_km: float = 100.0
    kv: float = 230.0
    f0: float = 60.0

    @property
    def k0(self) -> complex:
        return (self.z0 - self.z1) / (3.0 * self.z1)

    def z1_at(self, f: float) -> complex:
        """Positive-sequence impedance with the reactance scaled to frequency ``f``."""
        return complex(self.z1.real, self.z1.imag * f / self.f0)


@dataclass(frozen=True)
class PhasorEstimate:
    phasor: np.ndarray  # complex peak amplitude per channel
    tracked_freq: float
    window_len: int

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.phasor)

    @property
    def angle_deg(self) -> np.ndarray:
        return np.degrees(np.angle(self.phasor))


def dft_phasor(x, fs: float, f_est: float, window_len: int | None = None) -> PhasorEstimate:
    """Full-cycle DFT phasor over the last ``round(fs/f_est)`` samples.

    Returns (2/N) sum x[n] exp(-j 2 pi f_est n / fs) with n counted from the
    window start, so ``cos(w n / fs + theta)`` maps to ``exp(j theta)``.
    ``x`` may be one channel or (channels, samples); ``window_len`` overrides
    the window length (the tracker's clamped value).
    """
    x = np.asarray(x, dtype=float)
    n = int(round(fs / f_est)) if window_len is None else int(window_len)
    if n < 2 or x.shape[-1] < n:
        raise RelayError(f"window of {x.shape[-1]} samples holds less than one cycle ({n}) of {f_est} Hz")
    seg = x[..., -n:]
    kernel = np.exp(-2j * math.pi * f_est * np.arange(n) / fs)
    return PhasorEstimate(2.0 / n * (seg @ kernel), float(f_est), n)


def zero_crossings(x) -> np.ndarray:
    """Fractional sample positions of rising zero crossings (linear interpolation)."""
    x = np.asarray(x, dtype=float)
    i = np.flatnonzero((x[:-1] <= 0.0) & (x[1:] > 0.0))
    return i + (-x[i]) / (x[i + 1] - x[i])


def track_frequency(x, fs: float) -> float:
    """Mean frequency from rising zero-crossing intervals, clamped to [42, 78] Hz."""
    tz = zero_crossings(x)
    if tz.size < 2:
        raise RelayError(f"found {tz.size} rising zero crossing(s); need at least 2")
    f = fs * (tz.size - 1) / (tz[-1] - tz[0])
    return float(min(max(f, F_MIN), F_MAX))


def tracking_window(f: float, fs: float) -> int:
    """DFT length ``round(fs/f)`` clamped to [22, 38] samples scaled by fs/1920."""
    lo = int(round(REF_WINDOW[0] * fs / REF_FS))
    hi = int(round(REF_WINDOW[1] * fs / REF_FS))
    return int(min(max(round(fs / f), lo), hi))


# ---------------------------------------------------------------- impedance loops

@dataclass(frozen=True)
class LoopImpedance:
    loop: str
    z: complex
    k0: complex
    indeterminate: bool = False


def loop_impedances(v, i, k0: complex, tol: float = 1e-6) -> list[LoopImpedance]:
    """Six loop impedances from phase phasors ``v`` and ``i`` (a, b, c).

    Ground loops: V_x / (I_x + k0 * 3 I_0). Phase loops: (V_x - V_y) / (I_x - I_y).
    A denominator below ``tol`` times the largest phase current is flagged
    indeterminate and reported as NaN.
    """
    v = np.asarray(v, dtype=complex)
    i = np.asarray(i, dtype=complex)
    if v.shape != (3,) or i.shape != (3,):
        raise RelayError("need three voltage and three current phasors")
    if not (np.all(np.isfinite(v)) and np.all(np.isfinite(i))):
        raise RelayError("non-finite phasor")
    scale = float(np.max(np.abs(i)))
    floor = tol * scale if scale > 0.0 else math.inf
    residual = k0 * i.sum()  # k0 * 3 I0
    out = []
    for k, name in enumerate(LOOPS[:3]):
        den = i[k] + residual
        out.append(_loop(name, v[k], den, k0, floor))
    for name in LOOPS[3:]:
        x, y = _PAIRS[name]
        out.append(_loop(name, v[x] - v[y], i[x] - i[y], k0, floor))
    return out


def _loop(name, num, den, k0, floor):
    if abs(den) < floor:
        return LoopImpedance(name, complex(math.nan, math.nan), k0, True)
    return LoopImpedance(name, complex(num / den), k0)


@dataclass(frozen=True)
class ZoneQuad:
    x1: float
    r1: float
    angle_lo: float = -15.0
    angle_hi: float = 115.0

    def __post_init__(self):
        if not (self.x1 > 0.0 and self.r1 > 0.0):
            raise RelayError("reaches must be positive")

    @classmethod
    def from_line(cls, line: LineConstants = LineConstants(), reach: float = 0.8,
                  r_factor: float = 4.0) -> "ZoneQuad":
        """Zone 1 at ``reach`` of the line; resistive reach ``r_factor`` times the reach resistance."""
        zr = reach * line.z1
        return cls(x1=zr.imag, r1=r_factor * zr.real)


def zone1_check(z: LoopImpedance | complex, q: ZoneQuad) -> bool:
    """Inclusive quadrilateral test: 0 < X <= X1, |R| <= R1, angle within the directional bounds."""
    if isinstance(z, LoopImpedance):
        if z.indeterminate:
            return False
        z = z.z
    z = complex(z)
    if not (math.isfinite(z.real) and math.isfinite(z.imag)):
        return False
    ang = math.degrees(math.atan2(z.imag, z.real))
    return (0.0 < z.imag <= q.x1 and abs(z.real) <= q.r1 and q.angle_lo <= ang <= q.angle_hi)


# ---------------------------------------------------------------- scenarios

def fault_phasors(d: float, line: LineConstants = LineConstants(), fault: str = "ag",
                  i_mag: float = 2000.0) -> tuple[np.ndarray, np.ndarray]:
    """Relay-point phasors for a metallic fault at fraction ``d`` of the line.

    Voltages satisfy the faulted loop equation exactly: V_x = d Z1 (I_x + k0 3 I0)
    for ground faults and V_x - V_y = d Z1 (I_x - I_y) for phase faults.
    """
    rot = np.exp(-2j * math.pi / 3.0 * np.arange(3))
    if fault == "ag":
        i = np.array([i_mag * np.exp(-1j * math.radians(80.0)), 0.0, 0.0], dtype=complex)
        v_nom = line.kv * 1e3 / math.sqrt(3.0) * math.sqrt(2.0) * rot
        v = v_nom.copy()
        v[0] = d * line.z1 * (i[0] + line.k0 * i.sum())
        return v, i
    if fault == "abc":
        i = i_mag * np.exp(-1j * math.radians(80.0)) * rot
        return d * line.z1 * i, i
    raise RelayError(f"unsupported constructed fault {fault!r}")


def load_phasors(line: LineConstants = LineConstants(), mw: float = 150.0, pf: float = 0.95):
    """Balanced load-flow phasors at the relay point."""
    rot = np.exp(-2j * math.pi / 3.0 * np.arange(3))
    v_peak = line.kv * 1e3 / math.sqrt(3.0) * math.sqrt(2.0)
    i_rms = mw * 1e6 / (math.sqrt(3.0) * line.kv * 1e3 * pf)
    i = i_rms * math.sqrt(2.0) * np.exp(-1j * math.acos(pf)) * rot
    return v_peak * rot, i


@dataclass(frozen=True)
class Waveforms:
    v: np.ndarray  # (3, n)
    i: np.ndarray  # (3, n)
    fs: float


def slip_fault_scenario(d: float = 0.5, f_slip: float = 72.0, fs: float = REF_FS, duration: float = 0.2,
                        line: LineConstants = LineConstants(), i_peak: float = 2000.0) -> Waveforms:
    """Balanced metallic fault at fraction ``d`` fed by an off-nominal ``f_slip`` current.

    The relay-point voltage is the line drop d Z1(f) I at the slip frequency,
    so the correct loop impedance is d Z1(f_slip).
    """
    t = np.arange(int(round(duration * fs))) / fs
    shifts = -2.0 * math.pi / 3.0 * np.arange(3)
    z = d * line.z1_at(f_slip)
    w = 2.0 * math.pi * f_slip
    i = i_peak * np.cos(w * t[None, :] + shifts[:, None] - math.radians(80.0))
    v = abs(z) * i_peak * np.cos(w * t[None, :] + shifts[:, None] - math.radians(80.0) + np.angle(z))
    return Waveforms(v, i, fs)


@dataclass(frozen=True)
class TrajectoryPoint:
    t: float
    loop: str
    z: complex
    in_zone: bool


def impedance_trajectory(wf: Waveforms, line: LineConstants = LineConstants(), mode: str = "tracked",
                         quad: ZoneQuad | None = None, history_cycles: float = 3.0,
                         step: int = 1) -> list[TrajectoryPoint]:
    """Loop impedances at every ``step`` samples once ``history_cycles`` nominal cycles are available.

    ``mode="fixed"`` uses a nominal-frequency window; ``"tracked"`` estimates
    the frequency from the current with the largest RMS over the history and
    sizes the window with :func:`tracking_window`.
    """
    if mode not in ("fixed", "tracked"):
        raise RelayError(f"unknown trajectory mode {mode!r}")
    quad = quad or ZoneQuad.from_line(line)
    hist = int(round(history_cycles * wf.fs / line.f0))
    n = wf.i.shape[1]
    if n < hist:
        raise RelayError("record shorter than the tracking history")
    ref = int(np.argmax(np.sqrt(np.mean(wf.i ** 2, axis=1))))
    out = []
    for end in range(hist, n + 1, step):
        if mode == "fixed":
            f, n_win = line.f0, None
        else:
            f = track_frequency(wf.i[ref, end - hist:end], wf.fs)
            n_win = tracking_window(f, wf.fs)
        pv = dft_phasor(wf.v[:, :end], wf.fs, f, n_win).phasor
        pi = dft_phasor(wf.i[:, :end], wf.fs, f, n_win).phasor
        t = (end - 1) / wf.fs
        for lz in loop_impedances(pv, pi, line.k0):
            out.append(TrajectoryPoint(t, lz.loop, lz.z, zone1_check(lz, quad)))
    return out


def trajectory_deviation(fixed: Sequence[TrajectoryPoint], tracked: Sequence[TrajectoryPoint]) -> float:
    """Largest relative |Z| difference of the fixed trajectory from the tracked one."""
    ref = {(p.t, p.loop): abs(p.z) for p in tracked if math.isfinite(abs(p.z))}
    dev = [abs(abs(p.z) - ref[(p.t, p.loop)]) / ref[(p.t, p.loop)]
           for p in fixed if (p.t, p.loop) in ref and math.isfinite(abs(p.z))]
    if not dev:
        raise RelayError("trajectories share no determinate points")
    return float(max(dev))


def write_trajectory_csv(points: Sequence[TrajectoryPoint], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "loop", "re_z", "im_z", "in_zone"])
        for p in points:
            w.writerow([repr(p.t), p.loop, repr(p.z.real), repr(p.z.imag), int(p.in_zone)])
