"""Scenario grids, labelled cases and the CSV manifest that binds records to labels."""
from __future__ import annotations

import configparser
import csv
import itertools
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .classify import TASK_LABELS, phase_set_of, region_of
from .waveform import EventSpec, Record3Ph, load_csv, synthesize

TASKS = tuple(TASK_LABELS)
# wind speed (m/s) -> generator slip, and the wind-farm output fraction
WIND_SPEEDS = (8.0, 9.0, 11.0, 22.0)
WIND_SLIP = (0.2, 0.0, -0.2, -0.2)
WIND_OUTPUT = (0.5, 0.7, 1.0, 1.0)


class CorpusError(ValueError):
    pass


def wind_to_spec_fields(speed: float, f0: float = 60.0) -> dict:
    """Slip frequency ``f0 (1 - s)`` and output fraction for a wind speed (clamped interpolation)."""
    slip = float(np.interp(speed, WIND_SPEEDS, WIND_SLIP))
    return {"off_nominal_hz": f0 * (1.0 - slip), "wind_scale": float(np.interp(speed, WIND_SPEEDS, WIND_OUTPUT))}


def labels_for(spec: EventSpec) -> dict[str, str]:
    """Per-task labels; stages past detection are empty for non-faults."""
    if spec.kind != "fault":
        return {"detection": "no_fault", "region": "", "location": "", "phase": "", "faulttype": ""}
    return {
        "detection": "fault",
        "region": region_of(spec.location),
        "location": str(spec.location),
        "phase": phase_set_of(spec.fault_type),
        "faulttype": spec.fault_type,
    }


@dataclass(frozen=True)
class Case:
    """One labelled event: its scenario, synthesis seed and optional record files."""

    case_id: str
    spec: EventSpec
    seed: int
    fs: float = 7680.0
    duration: float = 10.0 / 60.0
    path_w: str = ""
    path_g: str = ""

    @property
    def labels(self) -> dict[str, str]:
        return labels_for(self.spec)

    def record(self, end: str = "w") -> Record3Ph:
        path = self.path_w if end == "w" else self.path_g
        if path:
            return load_csv(path)
        return synthesize(self.spec, self.fs, self.duration, self.seed, end=end)

    @property
    def stratum(self) -> str:
        lab = self.labels
        return f"{lab['region']}|{lab['faulttype']}" if lab["detection"] == "fault" else self.spec.kind


# ---------------------------------------------------------------- grid files

_SPEC_FIELDS = {f.name: f for f in fields(EventSpec)}
_GRID_AXES = set(_SPEC_FIELDS) - {"kind"} | {"wind_speed"}


def _parse_value(name: str, text: str):
    text = text.strip()
    if name in ("fault_type", "fault_resistance_class", "transformer"):
        return text
    if name in ("location", "rating"):
        return int(text)
    if text.lower() == "none":
        return None
    return float(text)


@dataclass(frozen=True)
class Grid:
    """Per-kind Cartesian products of scenario axes."""

    blocks: tuple[tuple[str, tuple[tuple[str, tuple], ...]], ...]
    seed: int = 0
    fs: float = 7680.0
    duration_cycles: float = 10.0
    f0: float = 60.0

    def cells(self) -> list[EventSpec]:
        out = []
        for kind, axes in self.blocks:
            names = [a for a, _ in axes]
            for combo in itertools.product(*[v for _, v in axes]):
                kw = dict(zip(names, combo))
                if "wind_speed" in kw:
                    kw.update(wind_to_spec_fields(kw.pop("wind_speed"), self.f0))
                try:
                    out.append(EventSpec(kind=kind, **kw))
                except ValueError as exc:
                    raise CorpusError(f"grid.{kind}: {exc}") from None
        return out

    def cases(self) -> list[Case]:
        specs = self.cells()
        duration = self.duration_cycles / self.f0
        out = []
        for idx, spec in enumerate(specs):
            seed = cell_seed(self.seed, idx)
            out.append(Case(f"case{idx:05d}", spec, seed, self.fs, duration))
        return out


def cell_seed(master: int, index: int) -> int:
    return int(np.random.SeedSequence([int(master), int(index)]).generate_state(1)[0])


def loads_grid(text: str) -> Grid:
    """Parse a grid INI: ``[grid]`` settings plus one ``[grid.<kind>]`` section per event kind.

    Every key in a kind section is an axis with comma-separated values.
    """
    cp = configparser.ConfigParser()
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise CorpusError(str(exc).splitlines()[0]) from None
    head = cp["grid"] if cp.has_section("grid") else {}
    blocks = []
    for sect in cp.sections():
        if not sect.startswith("grid."):
            continue
        kind = sect[len("grid."):]
        axes = []
        for key, val in cp[sect].items():
            if key not in _GRID_AXES:
                raise CorpusError(f"[{sect}] unknown axis {key!r}")
            items = [t for t in (s.strip() for s in val.split(",")) if t]
            if not items:
                raise CorpusError(f"[{sect}] axis {key!r} is empty")
            try:
                axes.append((key, tuple(_parse_value(key, t) for t in items)))
            except ValueError as exc:
                raise CorpusError(f"[{sect}] {key}: {exc}") from None
        blocks.append((kind, tuple(axes)))
    if not blocks:
        raise CorpusError("grid defines no [grid.<kind>] sections")
    try:
        grid = Grid(tuple(blocks), seed=int(head.get("seed", 0)), fs=float(head.get("fs", 7680.0)),
                    duration_cycles=float(head.get("duration_cycles", 10.0)), f0=float(head.get("f0", 60.0)))
    except ValueError as exc:
        raise CorpusError(f"[grid] {exc}") from None
    grid.cells()
    return grid


def load_grid(path) -> Grid:
    return loads_grid(Path(path).read_text())


def desk_grid(seed: int = 0, fault_locations: Sequence[int] = (2, 4, 7)) -> Grid:
    """1080 faults (10 types x 3 resistances x 6 angles x 2 winds x 3 locations) plus 600 switching events."""
    angles = tuple(float(a) for a in range(0, 360, 60))
    switch_angles = tuple(float(a) for a in np.linspace(0.0, 360.0, 25, endpoint=False))
    fault = (("fault_type", ("ag", "bg", "cg", "ab", "bc", "ca", "abg", "bcg", "cag", "abcg")),
             ("fault_resistance_class", ("low", "mid", "high")),
             ("inception_angle", angles),
             ("transformer", ("yy",)),
             ("wind_speed", (8.0, 11.0)),
             ("location", tuple(fault_locations)))
    switching = (("location", (5, 8, 9)), ("inception_angle", switch_angles),
                 ("wind_speed", (8.0, 11.0)), ("rating", (1, 2)))
    return Grid((("fault", fault), ("capacitor_switch", switching), ("load_switch", switching)), seed=seed)


def dumps_grid(grid: Grid) -> str:
    lines = ["[grid]", f"seed = {grid.seed}", f"fs = {grid.fs!r}", f"duration_cycles = {grid.duration_cycles!r}",
             f"f0 = {grid.f0!r}", ""]
    for kind, axes in grid.blocks:
        lines.append(f"[grid.{kind}]")
        for name, vals in axes:
            lines.append(f"{name} = " + ", ".join(repr(v) if isinstance(v, float) else str(v) for v in vals))
        lines.append("")
    return "\n".join(lines)


# ---------------------------------------------------------------- manifest

SPEC_COLUMNS = tuple(_SPEC_FIELDS)
MANIFEST_COLUMNS = ("case_id", "path_w", "path_g", "seed", "fs", "duration") + SPEC_COLUMNS + TASKS


def _fmt(v) -> str:
    if v is None:
        return ""
    return repr(v) if isinstance(v, float) else str(v)


def write_manifest(cases: Iterable[Case], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_COLUMNS)
        for c in cases:
            spec = asdict(c.spec)
            lab = c.labels
            w.writerow([c.case_id, c.path_w, c.path_g, c.seed, _fmt(c.fs), _fmt(c.duration)]
                       + [_fmt(spec[k]) for k in SPEC_COLUMNS] + [lab[t] for t in TASKS])


def read_manifest(path, check_files: bool = True) -> list[Case]:
    """Read a manifest; relative record paths resolve against the manifest directory."""
    path = Path(path)
    cases, seen = [], set()
    with path.open(newline="") as fh:
        r = csv.DictReader(fh)
        missing = [c for c in MANIFEST_COLUMNS if c not in (r.fieldnames or [])]
        if missing:
            raise CorpusError(f"{path}: line 1: missing columns {missing}")
        for lineno, row in enumerate(r, start=2):
            try:
                kw = {}
                for k in SPEC_COLUMNS:
                    txt = row[k]
                    if txt == "":
                        kw[k] = None
                    elif k == "kind":
                        kw[k] = txt
                    else:
                        kw[k] = _parse_value(k, txt)
                spec = EventSpec(**kw)
                case = Case(row["case_id"], spec, int(row["seed"]), float(row["fs"]), float(row["duration"]),
                            row["path_w"], row["path_g"])
            except (ValueError, TypeError) as exc:
                raise CorpusError(f"{path}: line {lineno}: {exc}") from None
            if case.case_id in seen:
                raise CorpusError(f"{path}: line {lineno}: duplicate case_id {case.case_id}")
            seen.add(case.case_id)
            lab = case.labels
            for t in TASKS:
                if row[t] != lab[t]:
                    raise CorpusError(f"{path}: line {lineno}: {t} label {row[t]!r} disagrees with scenario ({lab[t]!r})")
            resolved = {}
            for end in ("path_w", "path_g"):
                p = getattr(case, end)
                if p:
                    full = Path(p) if Path(p).is_absolute() else path.parent / p
                    if check_files and not full.exists():
                        raise CorpusError(f"{path}: line {lineno}: record {p} not found")
                    resolved[end] = str(full)
            cases.append(replace(case, **resolved) if resolved else case)
    return cases
