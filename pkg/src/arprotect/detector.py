"""Half-cycle cumulative-sum disturbance detector and grey wolf threshold tuning."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from . import _kernels
from .waveform import PHASES, Record3Ph

log = logging.getLogger(__name__)


class DetectorError(ValueError):
    pass


@dataclass(frozen=True)
class DetectorConfig:
    beta: float = 0.05
    half_cycle_samples: int = 64

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise DetectorError(f"beta must lie in (0, 1), got {self.beta}")
        if self.half_cycle_samples < 6:
            raise DetectorError("half_cycle_samples must be >= 6")

    @classmethod
    def for_record(cls, rec: Record3Ph, beta: float = 0.05) -> "DetectorConfig":
        return cls(beta=beta, half_cycle_samples=int(round(rec.fs / rec.f0 / 2.0)))

    @property
    def holdoff(self) -> int:
        """Re-arm delay after a trigger: one cycle."""
        return 2 * self.half_cycle_samples


@dataclass(frozen=True)
class Detection:
    phase: str
    sample_index: int
    dd_value: float


def dd_series(rec: Record3Ph, cfg: DetectorConfig) -> np.ndarray:
    """Per-phase DD(t) series, shape (3, n).

    DD(t) = (S_cur - S_prev) / S_cur with S_cur the sum of |i| over the H
    samples ending at t and S_prev the H samples before those. Entries with
    t < 2H - 1 have no complete history and are NaN; S_cur = 0 gives 0.
    """
    h = cfg.half_cycle_samples
    if rec.n < 2 * h:
        raise DetectorError(f"record of {rec.n} samples shorter than one cycle ({2 * h})")
    return np.stack([_kernels.dd_series(rec.phase(ph), h) for ph in PHASES])


def _detections_from_dd(dd: np.ndarray, beta: float, holdoff: int) -> list[Detection]:
    found = []
    for k, ph in enumerate(PHASES):
        row = np.ascontiguousarray(dd[k])
        for i in _kernels.threshold_crossings(row, beta, holdoff):
            found.append(Detection(ph, int(i), float(row[i])))
    found.sort(key=lambda d: (d.sample_index, d.phase))
    return found


def detect(rec: Record3Ph, cfg: DetectorConfig) -> list[Detection]:
    """Per-phase triggers where DD >= beta, each phase re-arming one cycle later.

    Sorted by sample index. Use :func:`group_events` for any-phase events.
    """
    return _detections_from_dd(dd_series(rec, cfg), cfg.beta, cfg.holdoff)


def group_events(detections: Sequence[Detection], holdoff: int) -> list[int]:
    """Collapse per-phase detections into events (any phase triggers).

    An event starts at the earliest detection not already covered by an
    earlier event's one-cycle span; returns the event start samples.
    """
    starts: list[int] = []
    for d in sorted(detections, key=lambda d: d.sample_index):
        if not starts or d.sample_index >= starts[-1] + holdoff:
            starts.append(d.sample_index)
    return starts


def event_peaks(dd: np.ndarray, starts: Sequence[int], holdoff: int) -> np.ndarray:
    """Largest DD across phases within each event's one-cycle span."""
    clean = np.nan_to_num(dd, nan=-np.inf)
    return np.array([float(clean[:, s:s + holdoff].max()) for s in starts])


def first_event(detections: Sequence[Detection]) -> Detection | None:
    return min(detections, key=lambda d: (d.sample_index, d.phase)) if detections else None


# ---------------------------------------------------------------- grey wolf

@dataclass(frozen=True)
class GwoConfig:
    population: int = 30
    dim: int = 1
    lower: float | Sequence[float] = 0.0
    upper: float | Sequence[float] = 1.0
    max_iter: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.population < 3:
            raise DetectorError("GWO needs at least 3 wolves")
        if np.any(np.asarray(self.lower, float) >= np.asarray(self.upper, float)):
            raise DetectorError("lower bound must be below upper bound")
        if self.dim < 1 or self.max_iter < 0:
            raise DetectorError("dim >= 1 and max_iter >= 0 required")


class GwoResult(NamedTuple):
    best_x: np.ndarray
    best_f: float
    trace: np.ndarray  # best-so-far fitness after init and after each iteration


def _evaluate(objective, pos):
    vals = np.empty(pos.shape[0])
    for i, x in enumerate(pos):
        v = float(objective(x))
        if not np.isfinite(v):
            raise DetectorError(f"objective returned {v} at x={x.tolist()}")
        vals[i] = v
    return vals


def gwo_minimize(objective: Callable[[np.ndarray], float], cfg: GwoConfig) -> GwoResult:
    """Minimize ``objective`` over a box with the canonical grey wolf optimizer.

    Wolves move toward the three best positions (alpha, beta, delta) with the
    exploration coefficient ``a`` falling linearly from 2 to 0. Ties in
    fitness keep the first-found position.
    """
    rng = np.random.default_rng(cfg.seed)
    lo = np.broadcast_to(np.asarray(cfg.lower, float), (cfg.dim,))
    hi = np.broadcast_to(np.asarray(cfg.upper, float), (cfg.dim,))
    n = cfg.population
    pos = lo + rng.random((n, cfg.dim)) * (hi - lo)
    fit = _evaluate(objective, pos)

    order = np.argsort(fit, kind="stable")
    leaders = pos[order[:3]].copy()
    leader_f = fit[order[:3]].copy()
    best_x, best_f = leaders[0].copy(), float(leader_f[0])
    trace = [best_f]

    for it in range(cfg.max_iter):
        a = 2.0 - 2.0 * it / cfg.max_iter
        new = np.zeros_like(pos)
        for leader in leaders:
            r1 = rng.random((n, cfg.dim))
            r2 = rng.random((n, cfg.dim))
            big_a = 2.0 * a * r1 - a
            big_c = 2.0 * r2
            dist = np.abs(big_c * leader - pos)
            new += leader - big_a * dist
        pos = np.clip(new / 3.0, lo, hi)
        fit = _evaluate(objective, pos)

        # merge current pack with standing leaders; stable sort keeps earlier finds on ties
        pool_x = np.vstack([leaders, pos])
        pool_f = np.concatenate([leader_f, fit])
        order = np.argsort(pool_f, kind="stable")
        leaders = pool_x[order[:3]].copy()
        leader_f = pool_f[order[:3]].copy()
        if leader_f[0] < best_f:
            best_f = float(leader_f[0])
            best_x = leaders[0].copy()
        trace.append(best_f)
    return GwoResult(best_x, best_f, np.asarray(trace))


# ---------------------------------------------------------------- beta tuning

@dataclass(frozen=True)
class AnnotatedRecord:
    """A record with the sample index of its event onset (None for steady)."""

    record: Record3Ph
    onset_index: int | None


def beta_objective(corpus: Sequence[AnnotatedRecord], half_cycle_samples: int | None = None):
    """Build the tuning objective 1 - (in-zone events / all events).

    The zone is one cycle starting at the annotated onset. An annotated event
    with no event starting in its zone adds one miss to the denominator, so
    thresholds above every transient are not free. A corpus with no events
    and no detections scores 0. DD series are computed once and reused.
    """
    if not corpus:
        raise DetectorError("empty tuning corpus")
    prepared = []
    for item in corpus:
        rec = item.record
        h = half_cycle_samples or int(round(rec.fs / rec.f0 / 2.0))
        cfg = DetectorConfig(0.05, h)
        prepared.append((dd_series(rec, cfg), cfg.holdoff, item.onset_index))

    def objective(x) -> float:
        beta = float(np.ravel(x)[0])
        inside = total = 0
        for dd, holdoff, onset in prepared:
            events = group_events(_detections_from_dd(dd, beta, holdoff), holdoff)
            total += len(events)
            if onset is not None:
                hit = sum(onset <= s <= onset + holdoff for s in events)
                inside += hit
                total += hit == 0
        return 0.0 if total == 0 else 1.0 - inside / total

    return objective


def tune_beta(corpus: Sequence[AnnotatedRecord], gwo: GwoConfig = GwoConfig()) -> float:
    """Grey-wolf search for the detector threshold on an annotated corpus."""
    objective = beta_objective(corpus)
    res = gwo_minimize(objective, gwo)
    beta = float(np.clip(res.best_x[0], 1e-9, 1.0 - 1e-9))
    log.info("tuned beta=%.6f objective=%.6f", beta, res.best_f)
    return beta
