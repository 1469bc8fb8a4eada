"""Trapezoidal Mamdani inference, genetic tuning and the adaptive re-tune trigger."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels

log = logging.getLogger(__name__)

FORMAT_HEADER = "arprotect-fuzzy 1"
N_GRID = 1001
FAULT, NO_FAULT = "fault", "no_fault"


class FuzzyError(ValueError):
    pass


@dataclass(frozen=True)
class Trapezoid:
    a: float
    b: float
    c: float
    d: float

    def __post_init__(self):
        if not (self.a <= self.b <= self.c <= self.d):
            raise FuzzyError(f"trapezoid breakpoints out of order: {self.params}")

    @property
    def params(self) -> tuple[float, float, float, float]:
        return (self.a, self.b, self.c, self.d)

    def membership(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        mu = np.zeros_like(x)
        mu[(x >= self.b) & (x <= self.c)] = 1.0
        if self.b > self.a:
            rise = (x >= self.a) & (x < self.b)
            mu[rise] = (x[rise] - self.a) / (self.b - self.a)
        if self.d > self.c:
            fall = (x > self.c) & (x <= self.d)
            mu[fall] = (self.d - x[fall]) / (self.d - self.c)
        return mu


@dataclass(frozen=True)
class FuzzyVariable:
    name: str
    lo: float
    hi: float
    labels: tuple[str, ...]
    sets: tuple[Trapezoid, ...]

    def __post_init__(self):
        if not self.lo < self.hi:
            raise FuzzyError(f"{self.name}: empty universe")
        if len(self.labels) != len(self.sets) or not self.labels:
            raise FuzzyError(f"{self.name}: labels and sets differ")
        if len(set(self.labels)) != len(self.labels):
            raise FuzzyError(f"{self.name}: duplicate labels")

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise FuzzyError(f"{self.name}: no set labelled {label!r}") from None

    def memberships(self, x) -> np.ndarray:
        return np.stack([s.membership(x) for s in self.sets], axis=-1)

    def covered(self, n: int = N_GRID) -> bool:
        grid = np.linspace(self.lo, self.hi, n)
        return bool(np.all(self.memberships(grid).max(axis=-1) >= 0.5 - 1e-12))


@dataclass(frozen=True)
class Rule:
    antecedent: tuple[str | None, ...]  # None = input not used
    consequent: str


@dataclass(frozen=True)
class FuzzySystem:
    """Mamdani system: min-AND, min implication, max aggregation, centroid."""

    inputs: tuple[FuzzyVariable, ...]
    output: FuzzyVariable
    rules: tuple[Rule, ...]
    check_coverage: bool = field(default=True, compare=False)

    def __post_init__(self):
        if not self.rules:
            raise FuzzyError("fuzzy system needs at least one rule")
        for r in self.rules:
            if len(r.antecedent) != len(self.inputs):
                raise FuzzyError("rule arity does not match input count")
            for var, lab in zip(self.inputs, r.antecedent):
                if lab is not None:
                    var.index(lab)
            self.output.index(r.consequent)
        if self.check_coverage:
            for var in self.inputs:
                if not var.covered():
                    raise FuzzyError(f"input {var.name} universe not covered at level 0.5")


@dataclass
class Inference:
    scores: np.ndarray
    no_rule: np.ndarray
    clamped: int = 0


def infer_batch(sys: FuzzySystem, x) -> Inference:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != len(sys.inputs):
        raise FuzzyError(f"expected {len(sys.inputs)} inputs, got {x.shape[1]}")
    lo = np.array([v.lo for v in sys.inputs])
    hi = np.array([v.hi for v in sys.inputs])
    clipped = np.clip(x, lo, hi)
    n_clamped = int(np.count_nonzero(clipped != x))
    if n_clamped:
        log.warning("clamped %d input value(s) into declared universes", n_clamped)
    member = [var.memberships(clipped[:, j]) for j, var in enumerate(sys.inputs)]
    n = x.shape[0]
    label_strength = np.zeros((n, len(sys.output.labels)))
    for rule in sys.rules:
        s = np.ones(n)
        for j, (var, lab) in enumerate(zip(sys.inputs, rule.antecedent)):
            if lab is not None:
                s = np.minimum(s, member[j][:, var.index(lab)])
        k = sys.output.index(rule.consequent)
        label_strength[:, k] = np.maximum(label_strength[:, k], s)
    out_params = np.array([t.params for t in sys.output.sets], dtype=float)
    # output sets live on [0, 1]; rescale if the declared output universe differs
    span = sys.output.hi - sys.output.lo
    unit = (out_params - sys.output.lo) / span
    scores, fired = _kernels.mamdani_centroid(np.ascontiguousarray(label_strength), np.ascontiguousarray(unit), N_GRID)
    scores = sys.output.lo + span * np.asarray(scores)
    return Inference(scores, ~np.asarray(fired, dtype=bool), n_clamped)


def infer(sys: FuzzySystem, inputs) -> tuple[float, bool]:
    """Defuzzified score for one input vector and a no-rule-fired flag.

    When no rule fires the score is 0.5 (maximal uncertainty).
    """
    res = infer_batch(sys, np.asarray(inputs, dtype=float)[None, :])
    return float(res.scores[0]), bool(res.no_rule[0])


def phase_inputs(max_a2, max_a5) -> np.ndarray:
    """Interleave per-phase inputs as [A2_a, A5_a, A2_b, A5_b, A2_c, A5_c]."""
    return np.column_stack([np.asarray(max_a2, float), np.asarray(max_a5, float)]).ravel()


def decide(sys: FuzzySystem, max_a2, max_a5) -> str:
    score, _ = infer(sys, phase_inputs(max_a2, max_a5))
    return FAULT if score >= 0.5 else NO_FAULT


def decide_batch(sys: FuzzySystem, x) -> np.ndarray:
    return infer_batch(sys, x).scores >= 0.5


# ---------------------------------------------------------------- template & encoding

@dataclass(frozen=True)
class FuzzyTemplate:
    """Structure the GA fills in: labels per variable and rule antecedents.

    Input partitions are strong (memberships sum to one), which keeps every
    universe covered at level 0.5 for any breakpoints.
    """

    input_names: tuple[str, ...]
    antecedents: tuple[tuple[str | None, ...], ...]
    input_labels: tuple[str, ...] = ("low", "medium", "high")
    output_labels: tuple[str, ...] = (NO_FAULT, FAULT)
    output_name: str = "fault_score"
    universes: tuple[tuple[float, float], ...] | None = None

    @classmethod
    def per_phase(cls, phases=("a", "b", "c"), coeffs=("A2", "A5")) -> "FuzzyTemplate":
        names = tuple(f"{ph}_{c}" for ph in phases for c in coeffs)
        labels = ("low", "medium", "high")
        rules = []
        for p in range(len(phases)):
            for l1 in labels:
                for l2 in labels:
                    ante = [None] * len(names)
                    ante[2 * p], ante[2 * p + 1] = l1, l2
                    rules.append(tuple(ante))
        return cls(names, tuple(rules))

    @classmethod
    def single_input(cls, name: str = "x") -> "FuzzyTemplate":
        labels = ("low", "medium", "high")
        return cls((name,), tuple((lab,) for lab in labels))

    def with_universes(self, universes) -> "FuzzyTemplate":
        return replace(self, universes=tuple((float(lo), float(hi)) for lo, hi in universes))

    @property
    def n_gaps_in(self) -> int:
        return 2 * (len(self.input_labels) - 1) + 1

    @property
    def n_gaps_out(self) -> int:
        return 2 * (len(self.output_labels) - 1) + 1

    @property
    def genome_size(self) -> int:
        return len(self.input_names) * self.n_gaps_in + self.n_gaps_out + len(self.antecedents)


def _partition(lo: float, hi: float, gaps, labels) -> tuple[Trapezoid, ...]:
    g = np.maximum(np.abs(np.asarray(gaps, float)), 1e-9)
    pts = lo + np.cumsum(g / g.sum())[:-1] * (hi - lo)
    pts = np.minimum(pts, hi)
    ext = [lo, lo, *pts.tolist(), hi, hi]
    return tuple(Trapezoid(ext[2 * i], ext[2 * i + 1], ext[2 * i + 2], ext[2 * i + 3]) for i in range(len(labels)))


def _gaps(var: FuzzyVariable) -> np.ndarray:
    pts = [var.lo]
    for i, t in enumerate(var.sets):
        if i > 0:
            pts += [t.a, t.b]
    pts.append(var.hi)
    return np.diff(pts) / (var.hi - var.lo)


def decode(genome, template: FuzzyTemplate) -> FuzzySystem:
    if template.universes is None:
        raise FuzzyError("template has no universes; call with_universes first")
    genome = np.asarray(genome, dtype=float)
    if genome.shape != (template.genome_size,):
        raise FuzzyError(f"genome length {genome.shape} != {template.genome_size}")
    pos = 0
    inputs = []
    for name, (lo, hi) in zip(template.input_names, template.universes):
        gaps = genome[pos:pos + template.n_gaps_in]
        pos += template.n_gaps_in
        inputs.append(FuzzyVariable(name, lo, hi, template.input_labels,
                                    _partition(lo, hi, gaps, template.input_labels)))
    out_gaps = genome[pos:pos + template.n_gaps_out]
    pos += template.n_gaps_out
    output = FuzzyVariable(template.output_name, 0.0, 1.0, template.output_labels,
                           _partition(0.0, 1.0, out_gaps, template.output_labels))
    n_out = len(template.output_labels)
    rules = []
    for ante, g in zip(template.antecedents, genome[pos:]):
        k = min(int(np.clip(g, 0.0, 1.0) * n_out), n_out - 1)
        rules.append(Rule(tuple(ante), template.output_labels[k]))
    return FuzzySystem(tuple(inputs), output, tuple(rules), check_coverage=False)


def encode(sys: FuzzySystem, template: FuzzyTemplate) -> np.ndarray:
    parts = [_gaps(v) for v in sys.inputs]
    parts.append(_gaps(sys.output))
    n_out = len(template.output_labels)
    parts.append(np.array([(template.output_labels.index(r.consequent) + 0.5) / n_out for r in sys.rules]))
    return np.concatenate(parts)


# ---------------------------------------------------------------- genetic tuning

@dataclass(frozen=True)
class GaConfig:
    population: int = 30
    generations: int = 40
    crossover_rate: float = 0.9
    mutation_rate: float = 0.15
    elitism_count: int = 2
    seed: int = 0
    gap_sigma: float = 0.25
    rule_sigma: float = 0.3

    def __post_init__(self):
        if self.population < 4:
            raise FuzzyError("GA population must be >= 4")
        if not (0.0 <= self.crossover_rate <= 1.0 and 0.0 <= self.mutation_rate <= 1.0):
            raise FuzzyError("GA rates must lie in [0, 1]")
        if not 0 <= self.elitism_count < self.population:
            raise FuzzyError("elitism_count must be in [0, population)")
        if self.generations < 0:
            raise FuzzyError("generations must be >= 0")


@dataclass
class GaResult:
    system: FuzzySystem
    fitness: float
    history: list = field(default_factory=list)
    genome: np.ndarray | None = None


def balanced_accuracy(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    y_true = np.asarray(y_true, bool)
    y_pred = np.asarray(y_pred, bool)
    tpr = np.mean(y_pred[y_true]) if y_true.any() else 1.0
    tnr = np.mean(~y_pred[~y_true]) if (~y_true).any() else 1.0
    return float((tpr + tnr) / 2.0)


def data_universes(x: np.ndarray, margin: float = 0.05):
    lo = x.min(axis=0)
    hi = x.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return list(zip(lo - margin * span, hi + margin * span))


def ga_run(x, y, template: FuzzyTemplate, cfg: GaConfig = GaConfig()) -> GaResult:
    """Tune membership breakpoints and rule consequents for balanced accuracy.

    ``y`` is boolean (True = fault). Tournament selection of size 3,
    one-point crossover, Gaussian mutation and elitism; deterministic per seed.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=bool)
    if y.all() or not y.any():
        raise FuzzyError("GA tuning needs both fault and non-fault examples")
    if template.universes is None:
        template = template.with_universes(data_universes(x))
    rng = np.random.default_rng(cfg.seed)
    n_in = len(template.input_names) * template.n_gaps_in + template.n_gaps_out
    size = template.genome_size

    def random_genome():
        g = np.empty(size)
        g[:n_in] = rng.uniform(0.2, 1.0, n_in)
        g[n_in:] = rng.uniform(0.0, 1.0, size - n_in)
        return g

    def fitness(g):
        return balanced_accuracy(y, decide_batch(decode(g, template), x))

    pop = np.stack([random_genome() for _ in range(cfg.population)])
    fit = np.array([fitness(g) for g in pop])
    history = [float(fit.max())]

    def tournament():
        idx = rng.integers(0, cfg.population, 3)
        return pop[idx[np.argmax(fit[idx])]]

    for _ in range(cfg.generations):
        order = np.argsort(-fit, kind="stable")
        children = [pop[i].copy() for i in order[:cfg.elitism_count]]
        while len(children) < cfg.population:
            p1, p2 = tournament(), tournament()
            if rng.random() < cfg.crossover_rate:
                cut = int(rng.integers(1, size))
                child = np.concatenate([p1[:cut], p2[cut:]])
            else:
                child = p1.copy()
            mask = rng.random(size) < cfg.mutation_rate
            noise = rng.standard_normal(size)
            child[:n_in] += np.where(mask[:n_in], cfg.gap_sigma * noise[:n_in], 0.0)
            child[:n_in] = np.maximum(np.abs(child[:n_in]), 1e-3)
            child[n_in:] = np.clip(child[n_in:] + np.where(mask[n_in:], cfg.rule_sigma * noise[n_in:], 0.0), 0.0, 1.0)
            children.append(child)
        pop = np.stack(children)
        fit = np.array([fitness(g) for g in pop])
        history.append(float(fit.max()))

    best = int(np.argmax(fit))
    return GaResult(decode(pop[best], template), float(fit[best]), history, pop[best].copy())


def ga_tune(x, y, template: FuzzyTemplate, cfg: GaConfig = GaConfig()) -> FuzzySystem:
    return ga_run(x, y, template, cfg).system


# ---------------------------------------------------------------- adaptive trigger

@dataclass(frozen=True)
class AdaptiveState:
    a_min: tuple | None = None
    a_max: tuple | None = None

    def __post_init__(self):
        if (self.a_min is None) != (self.a_max is None):
            raise FuzzyError("a_min and a_max must both be set or both be empty")
        if self.a_min is not None and np.any(np.asarray(self.a_min) > np.asarray(self.a_max)):
            raise FuzzyError("a_min exceeds a_max")


def adaptive_check(state: AdaptiveState, frame) -> tuple[bool, AdaptiveState]:
    """Compare the frame's coefficient extremes with the previous frame's.

    ``frame`` is (N_h, k): one row of tracked coefficients per transient
    half-cycle. Re-tuning is needed when a new minimum undercuts or a new
    maximum exceeds the previous frame's; the first frame always triggers.
    """
    frame = np.atleast_2d(np.asarray(frame, dtype=float))
    if frame.shape[0] < 1:
        raise FuzzyError("frame must hold at least one half-cycle")
    cur_min = frame.min(axis=0)
    cur_max = frame.max(axis=0)
    new_state = AdaptiveState(tuple(cur_min.tolist()), tuple(cur_max.tolist()))
    if state.a_min is None:
        return True, new_state
    retune = bool(np.any(cur_min < np.asarray(state.a_min)) or np.any(cur_max > np.asarray(state.a_max)))
    return retune, new_state


class AdaptiveFuzzy:
    """Fuzzy detector that re-runs GA tuning on its accumulated buffer when triggered."""

    def __init__(self, template: FuzzyTemplate, cfg: GaConfig = GaConfig(), system: FuzzySystem | None = None):
        self.template = template
        self.cfg = cfg
        self.system = system
        self.state = AdaptiveState()
        self._x: list[np.ndarray] = []
        self._y: list[bool] = []
        self.retunes = 0

    def observe(self, frame, x_rows, y_rows) -> bool:
        """Buffer labelled rows, run the trigger on ``frame``; returns True if re-tuned."""
        self._x.extend(np.atleast_2d(np.asarray(x_rows, float)))
        self._y.extend(np.atleast_1d(np.asarray(y_rows, bool)).tolist())
        needed, self.state = adaptive_check(self.state, frame)
        y = np.asarray(self._y)
        if needed and y.any() and not y.all():
            x = np.stack(self._x)
            self.system = ga_tune(x, y, replace(self.template, universes=None), self.cfg)
            self.retunes += 1
            return True
        return False


# ---------------------------------------------------------------- text format

def _fmt(v: float) -> str:
    return repr(float(v))


def dumps_system(sys: FuzzySystem) -> str:
    lines = [FORMAT_HEADER]
    for kind, var in [("input", v) for v in sys.inputs] + [("output", sys.output)]:
        lines.append(f"{kind} {var.name} {_fmt(var.lo)} {_fmt(var.hi)}")
        for lab, t in zip(var.labels, var.sets):
            lines.append(f"  set {lab} " + " ".join(_fmt(p) for p in t.params))
    for r in sys.rules:
        ante = " ".join("*" if a is None else a for a in r.antecedent)
        lines.append(f"rule {ante} -> {r.consequent}")
    return "\n".join(lines) + "\n"


def loads_system(text: str) -> FuzzySystem:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.strip().startswith("#")]
    if not lines or lines[0] != FORMAT_HEADER:
        raise FuzzyError("not an arprotect fuzzy system (bad header)")
    variables: list[tuple[str, str, float, float, list, list]] = []
    rules = []
    for ln in lines[1:]:
        tok = ln.split()
        if tok[0] in ("input", "output"):
            variables.append((tok[0], tok[1], float(tok[2]), float(tok[3]), [], []))
        elif tok[0] == "set":
            if not variables:
                raise FuzzyError("set before any variable")
            variables[-1][4].append(tok[1])
            variables[-1][5].append(Trapezoid(*map(float, tok[2:6])))
        elif tok[0] == "rule":
            arrow = tok.index("->")
            ante = tuple(None if a == "*" else a for a in tok[1:arrow])
            rules.append(Rule(ante, tok[arrow + 1]))
        else:
            raise FuzzyError(f"unrecognised line: {ln}")
    inputs = tuple(FuzzyVariable(n, lo, hi, tuple(l), tuple(s)) for k, n, lo, hi, l, s in variables if k == "input")
    outputs = [FuzzyVariable(n, lo, hi, tuple(l), tuple(s)) for k, n, lo, hi, l, s in variables if k == "output"]
    if len(outputs) != 1:
        raise FuzzyError("exactly one output variable required")
    return FuzzySystem(inputs, outputs[0], tuple(rules))


def save_system(sys: FuzzySystem, path) -> None:
    Path(path).write_text(dumps_system(sys))


def load_system(path) -> FuzzySystem:
    return loads_system(Path(path).read_text())
