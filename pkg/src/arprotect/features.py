"""Per-phase window features, centred on least-squares AR coefficients.

The catalog holds 144 ids. Id layout:

====== =========================================================
1      abs_energy
2      abs_sum_changes
3-12   ar_coeff_1 .. ar_coeff_10 (lag p=10)
13     mean_abs_change
14     std (population)
15-19  autocorr_lag_1 .. autocorr_lag_5
20     kurtosis
21-100 fft_k_{real,imag,abs,angle} for k = 0..19, coefficient-major
101-130 ricker_w{5,10,20}_c0 .. c9, width-major
131    sample_entropy (m=2, r=0.2 std)
132    first_max, 133 last_max (index / (N-1))
134-138 min, q25, median, q75, max
139    skewness
140    variation_coeff (std / mean)
141    cid_complexity
142-144 seq_zero, seq_pos, seq_neg (one-cycle phasor magnitudes)
====== =========================================================
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import _kernels
from .waveform import PHASES, SampleWindow

AR_LAG = 10
FFT_COEFFS = 20
FFT_PARTS = ("real", "imag", "abs", "angle")
RICKER_WIDTHS = (5, 10, 20)
RICKER_CENTERS = 10
SAMPEN_M = 2
SAMPEN_R = 0.2


def _build_registry() -> tuple[str, ...]:
    names = ["abs_energy", "abs_sum_changes"]
    names += [f"ar_coeff_{k}" for k in range(1, AR_LAG + 1)]
    names += ["mean_abs_change", "std"]
    names += [f"autocorr_lag_{l}" for l in range(1, 6)]
    names += ["kurtosis"]
    names += [f"fft_{k}_{part}" for k in range(FFT_COEFFS) for part in FFT_PARTS]
    names += [f"ricker_w{w}_c{j}" for w in RICKER_WIDTHS for j in range(RICKER_CENTERS)]
    names += ["sample_entropy", "first_max", "last_max", "min", "q25", "median", "q75", "max",
              "skewness", "variation_coeff", "cid_complexity", "seq_zero", "seq_pos", "seq_neg"]
    return tuple(names)


FEATURE_NAMES = _build_registry()
assert len(FEATURE_NAMES) == 144
FEATURE_IDS = {name: i + 1 for i, name in enumerate(FEATURE_NAMES)}
ALL_IDS = tuple(range(1, 145))


class FeatureError(ValueError):
    pass


def feature_name(fid: int) -> str:
    if not 1 <= fid <= len(FEATURE_NAMES):
        raise FeatureError(f"unknown feature id {fid}")
    return FEATURE_NAMES[fid - 1]


def feature_id(name: str) -> int:
    try:
        return FEATURE_IDS[name]
    except KeyError:
        raise FeatureError(f"unknown feature {name!r}") from None


def ar_id(k: int) -> int:
    """Registry id of AR coefficient A_k."""
    return 2 + k


# ---------------------------------------------------------------- AR model

@dataclass(frozen=True)
class ArModel:
    p: int
    coeffs: np.ndarray  # coeffs[k-1] multiplies s_{t-k}
    residual_var: float
    rank: int

    def predict_next(self, history) -> float:
        h = np.asarray(history, float)
        return float(self.coeffs @ h[::-1][: self.p])


def lagged_design(x, p: int) -> tuple[np.ndarray, np.ndarray]:
    """Rows [s_{t-1}, ..., s_{t-p}] with targets s_t for t = p..K."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    cols = [x[p - k: n - k] for k in range(1, p + 1)]
    return np.column_stack(cols), x[p:]


def ar_fit(x, p: int = AR_LAG) -> ArModel:
    """Least-squares AR(p) fit without intercept.

    Solves min ||S A - s|| over the lagged design via SVD, which yields the
    minimum-norm solution when S is rank deficient (constant or pure-tone
    windows, or fewer equations than lags).
    """
    x = np.asarray(x, dtype=float)
    if p < 1:
        raise FeatureError("AR lag must be >= 1")
    if x.ndim != 1 or x.shape[0] < p + 2:
        raise FeatureError(f"AR({p}) needs at least {p + 2} samples, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise FeatureError("non-finite sample in AR input")
    design, target = lagged_design(x, p)
    coeffs, _, rank, _ = np.linalg.lstsq(design, target, rcond=None)
    resid = design @ coeffs - target
    return ArModel(p, coeffs, float(resid @ resid / target.shape[0]), int(rank))


# ---------------------------------------------------------------- catalog

@dataclass(frozen=True)
class FeatureVector:
    phase: str
    values: dict
    undefined: frozenset = field(default_factory=frozenset)
    window_ref: tuple = ()

    def get(self, fid: int, impute: float | None = None) -> float:
        if fid in self.undefined:
            if impute is None:
                raise FeatureError(f"feature {feature_name(fid)} undefined for this window")
            return impute
        return self.values[fid]


def ricker(points: np.ndarray, width: float) -> np.ndarray:
    """Mexican-hat wavelet evaluated at offsets ``points``."""
    amp = 2.0 / (math.sqrt(3.0 * width) * math.pi ** 0.25)
    q = (points / width) ** 2
    return amp * (1.0 - q) * np.exp(-q / 2.0)


def ricker_centers(n: int) -> np.ndarray:
    return np.rint(np.linspace(0.0, n - 1, RICKER_CENTERS)).astype(int)


def cycle_phasor(x, fs: float, f0: float) -> complex:
    """One-cycle DFT phasor (peak amplitude, cosine reference) of the first cycle."""
    n = int(round(fs / f0))
    seg = np.asarray(x, float)[:n]
    k = np.arange(n)
    return complex(2.0 / n * np.sum(seg * np.exp(-2j * np.pi * k / n)))


def sequence_components(ia: complex, ib: complex, ic: complex) -> tuple[float, float, float]:
    """Zero, positive and negative sequence magnitudes (Fortescue)."""
    alpha = complex(math.cos(2 * math.pi / 3), math.sin(2 * math.pi / 3))
    i0 = (ia + ib + ic) / 3.0
    i1 = (ia + alpha * ib + alpha ** 2 * ic) / 3.0
    i2 = (ia + alpha ** 2 * ib + alpha * ic) / 3.0
    return abs(i0), abs(i1), abs(i2)


def _phase_features(s: np.ndarray, want: set) -> tuple[dict, set]:
    n = s.shape[0]
    vals: dict[int, float] = {}
    undef: set[int] = set()
    diff = np.diff(s)
    mu = float(np.mean(s))
    dev = s - mu
    var = float(np.mean(dev ** 2))
    sigma = math.sqrt(var)

    def put(fid, value):
        if fid in want:
            if value is None or not np.isfinite(value):
                undef.add(fid)
                vals[fid] = math.nan
            else:
                vals[fid] = float(value)

    put(1, float(s @ s))
    put(2, float(np.sum(np.abs(diff))))
    if want.intersection(range(3, 13)):
        try:
            coeffs = ar_fit(s, AR_LAG).coeffs
        except FeatureError:
            coeffs = [None] * AR_LAG
        for k in range(AR_LAG):
            put(3 + k, coeffs[k])
    put(13, float(np.mean(np.abs(diff))) if n > 1 else None)
    put(14, sigma)
    for lag in range(1, 6):
        if sigma > 0.0 and n > lag:
            put(14 + lag, float(dev[:-lag] @ dev[lag:]) / ((n - 1) * var))
        else:
            put(14 + lag, None)
    put(20, float(np.mean(dev ** 4)) / var ** 2 if sigma > 0.0 else None)

    if want.intersection(range(21, 101)):
        spec = np.fft.fft(s)
        for k in range(FFT_COEFFS):
            base = 21 + 4 * k
            if k < n:
                c = spec[k]
                put(base, c.real)
                put(base + 1, c.imag)
                put(base + 2, abs(c))
                put(base + 3, math.atan2(c.imag, c.real))
            else:
                for off in range(4):
                    put(base + off, None)

    if want.intersection(range(101, 131)):
        idx = np.arange(n)
        centers = ricker_centers(n)
        for wi, width in enumerate(RICKER_WIDTHS):
            kernel = ricker(idx[None, :] - centers[:, None], float(width))
            resp = kernel @ s
            for j in range(RICKER_CENTERS):
                put(101 + wi * RICKER_CENTERS + j, resp[j])

    if 131 in want:
        put(131, _kernels.sample_entropy(np.ascontiguousarray(s), SAMPEN_M, SAMPEN_R * sigma))
    put(132, int(np.argmax(s)) / (n - 1) if n > 1 else 0.0)
    put(133, (n - 1 - int(np.argmax(s[::-1]))) / (n - 1) if n > 1 else 0.0)
    if want.intersection(range(134, 139)):
        q = np.quantile(s, [0.0, 0.25, 0.5, 0.75, 1.0])
        for j in range(5):
            put(134 + j, q[j])
    put(139, float(np.mean(dev ** 3)) / sigma ** 3 if sigma > 0.0 else None)
    put(140, sigma / mu if mu != 0.0 else None)
    put(141, math.sqrt(float(diff @ diff)))
    return vals, undef


def extract(win: SampleWindow, which: Iterable[int] | None = None) -> dict[str, FeatureVector]:
    """Compute the requested catalog features for each phase of a window."""
    want = set(ALL_IDS if which is None else which)
    bad = [f for f in want if not (isinstance(f, (int, np.integer)) and 1 <= f <= 144)]
    if bad:
        raise FeatureError(f"unknown feature ids {sorted(map(str, bad))}")
    if win.length < 1:
        raise FeatureError("empty window")
    data = win.data
    seq = None
    if want.intersection({142, 143, 144}):
        if win.length >= int(round(win.fs / win.f0)):
            phasors = [cycle_phasor(data[k], win.fs, win.f0) for k in range(3)]
            seq = sequence_components(*phasors)
    out = {}
    for k, ph in enumerate(PHASES):
        vals, undef = _phase_features(data[k], want)
        for j, fid in enumerate((142, 143, 144)):
            if fid in want:
                if seq is None:
                    vals[fid] = math.nan
                    undef.add(fid)
                else:
                    vals[fid] = float(seq[j])
        out[ph] = FeatureVector(ph, vals, frozenset(undef), win.key)
    return out


def ar_features(win: SampleWindow, ks: Sequence[int] = (2, 5, 6), p: int = AR_LAG) -> np.ndarray:
    """AR coefficients A_k for each phase, shape (3, len(ks)); a fast path for classifiers."""
    data = win.data
    out = np.empty((3, len(ks)))
    for i in range(3):
        coeffs = ar_fit(data[i], p).coeffs
        out[i] = [coeffs[k - 1] for k in ks]
    return out


def fuzzy_inputs(windows: Sequence[SampleWindow], p: int = AR_LAG) -> np.ndarray:
    """Per-phase (max A_2, max A_5) over a list of half-cycle windows, shape (3, 2)."""
    if not windows:
        raise FeatureError("fuzzy_inputs needs at least one window")
    stacked = np.stack([ar_features(w, (2, 5), p) for w in windows])
    return stacked.max(axis=0)


# ---------------------------------------------------------------- interchange

def write_feature_csv(path, rows: Sequence[tuple[str, str, FeatureVector]], ids: Sequence[int] = ALL_IDS):
    """Write ``case_id,phase,<feature names>``; undefined values are left empty."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["case_id", "phase"] + [feature_name(i) for i in ids])
        for case_id, phase, vec in rows:
            cells = ["" if i in vec.undefined else repr(vec.values[i]) for i in ids]
            w.writerow([case_id, phase] + cells)


def read_feature_csv(path):
    """Return (keys, names, values) with undefined cells as NaN."""
    with Path(path).open(newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        keys, vals = [], []
        for row in r:
            keys.append((row[0], row[1]))
            vals.append([float(c) if c else math.nan for c in row[2:]])
    return keys, header[2:], np.asarray(vals, dtype=float)
