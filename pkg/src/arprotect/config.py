"""Pipeline configuration stored as a plain ``key = value`` INI file."""
from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .classify import KINDS
from .detector import GwoConfig
from .features import feature_id, feature_name
from .fuzzy import GaConfig


class ConfigError(ValueError):
    pass


DETECTION_MODES = ("fuzzy", "supervisor", "fuzzy+supervisor")


@dataclass(frozen=True)
class PipelineConfig:
    fs: float = 7680.0
    f0: float = 60.0
    window_cycles: float = 0.5
    beta: float = 0.05
    ar_lag: int = 10
    feature_ids: tuple[int, ...] = (4, 7, 8)
    end_mode: str = "double"
    seed: int = 0
    smote: bool = True
    smote_k: int = 5
    kinds: tuple[str, ...] = KINDS
    bootstrap: bool = True
    test_fraction: float = 0.3
    fuzzy_windows: int = 2
    detection_mode: str = "fuzzy+supervisor"
    snr_db: float | None = None
    prefilter_hz: float | None = None
    ga: GaConfig = field(default_factory=GaConfig)
    gwo: GwoConfig = field(default_factory=GwoConfig)

    def __post_init__(self):
        if not self.fs > 2.0 * self.f0 > 0.0:
            raise ConfigError("need fs > 2*f0 > 0")
        w = round(self.window_cycles * self.fs / self.f0)
        if w < self.ar_lag + 2:
            raise ConfigError(f"window of {w} samples too short for AR({self.ar_lag})")
        for fid in self.feature_ids:
            feature_name(fid)
        if not self.feature_ids:
            raise ConfigError("feature_ids is empty")
        if self.end_mode not in ("single", "double"):
            raise ConfigError(f"end_mode must be single or double, got {self.end_mode!r}")
        bad = [k for k in self.kinds if k not in KINDS]
        if bad or not self.kinds:
            raise ConfigError(f"unknown classifier kinds {bad}")
        if self.detection_mode not in DETECTION_MODES:
            raise ConfigError(f"detection_mode must be one of {DETECTION_MODES}")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("test_fraction must lie in (0, 1)")
        if not 0.0 < self.beta < 1.0:
            raise ConfigError("beta must lie in (0, 1)")
        if self.prefilter_hz is not None and not 0.0 < self.prefilter_hz < self.fs / 2.0:
            raise ConfigError("prefilter_hz must lie in (0, fs/2)")
        if self.fuzzy_windows < 1:
            raise ConfigError("fuzzy_windows must be >= 1")

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        main = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in ("ga", "gwo"):
                continue
            if f.name == "feature_ids":
                main[f.name] = ", ".join(feature_name(i) for i in v)
            elif isinstance(v, tuple):
                main[f.name] = ", ".join(str(x) for x in v)
            elif v is None:
                main[f.name] = "none"
            else:
                main[f.name] = repr(v) if isinstance(v, float) else str(v)
        cp["pipeline"] = main
        cp["ga"] = {k: repr(v) if isinstance(v, float) else str(v) for k, v in asdict(self.ga).items()}
        cp["gwo"] = {k: repr(v) if isinstance(v, float) else str(v) for k, v in asdict(self.gwo).items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.to_ini().encode()).hexdigest()[:16]


def _coerce(name, text, proto):
    text = text.strip()
    try:
        if name == "feature_ids":
            return tuple(int(t) if t.strip().isdigit() else feature_id(t.strip()) for t in text.split(","))
        if name == "kinds":
            return tuple(t.strip() for t in text.split(",") if t.strip())
        if name in ("snr_db", "prefilter_hz"):
            return None if text.lower() in ("none", "") else float(text)
        if isinstance(proto, bool):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if isinstance(proto, int):
            return int(text)
        if isinstance(proto, float):
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from None


def loads_config(text: str) -> PipelineConfig:
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc).splitlines()[0]) from None
    base = PipelineConfig()
    kw = {}
    if cp.has_section("pipeline"):
        known = {f.name for f in fields(PipelineConfig)} - {"ga", "gwo"}
        for key, val in cp["pipeline"].items():
            if key not in known:
                raise ConfigError(f"unknown pipeline key {key!r}")
            kw[key] = _coerce(key, val, getattr(base, key))
    for sect, cls in (("ga", GaConfig), ("gwo", GwoConfig)):
        if cp.has_section(sect):
            proto = getattr(base, sect)
            sub = {}
            for key, val in cp[sect].items():
                if not hasattr(proto, key):
                    raise ConfigError(f"unknown {sect} key {key!r}")
                sub[key] = _coerce(key, val, getattr(proto, key))
            try:
                kw[sect] = cls(**{**asdict(proto), **sub})
            except ValueError as exc:
                raise ConfigError(f"[{sect}] {exc}") from None
    try:
        return replace(base, **kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> PipelineConfig:
    return loads_config(Path(path).read_text())


def save_config(cfg: PipelineConfig, path) -> None:
    Path(path).write_text(cfg.to_ini())
