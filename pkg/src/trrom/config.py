"""JSON run configuration with strict key checking.

A config file is a JSON object with the optional sections ``fom``, ``pod``,
``rom``, ``sweep``, ``study`` and ``paths`` plus a top-level ``seed``.  Sweep
axes accept either an explicit list or ``{"geomspace": [lo, hi, n]}``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

from .fom import FomConfig
from .integrate import SCHEMES, SEMI_IMPLICIT
from .operators import CONVECTION_FORMS, SKEW
from .study import METRICS


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PodSection:
    R: int | None = None


@dataclass(frozen=True)
class RomSection:
    r: int = 4
    dt: float = 2e-3
    chi: float = 0.0
    delta: float = 0.0
    scheme: str = SEMI_IMPLICIT
    form: str = SKEW
    tol: float = 1e-10
    max_iter: int = 50
    n_steps: int | None = None  # default: cover the snapshot window
    newton: bool = False
    initial: str = "projection"  # or "zero"


@dataclass(frozen=True)
class SweepSection:
    r_values: tuple[int, ...] = ()
    deltas: tuple[float, ...] = ()
    chis: tuple[float, ...] = ()
    workers: int = 1
    record_wall_time: bool = False


@dataclass(frozen=True)
class StudySection:
    metric: str = "eps_h10"
    tolerance: float = 0.05
    anchors: tuple[float, ...] = ()  # anchor deltas for chi extrapolation
    targets: tuple[float, ...] = ()  # held-out deltas
    N: float = 128.0
    k: float = 1.0
    s: float = 0.0
    c_sr: float | None = None  # default ||u^0||^2 from the snapshot file


@dataclass(frozen=True)
class PathsSection:
    snapshots: str = "snapshots.trrm"
    basis: str = "basis.trrm"
    trajectory: str = "trajectory.trrm"
    results: str = "results.csv"
    tails: str | None = None
    stability: str | None = None
    report: str | None = None


@dataclass(frozen=True)
class RunConfig:
    fom: FomConfig = field(default_factory=FomConfig)
    pod: PodSection = field(default_factory=PodSection)
    rom: RomSection = field(default_factory=RomSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    study: StudySection = field(default_factory=StudySection)
    paths: PathsSection = field(default_factory=PathsSection)
    seed: int = 0

    def resolve(self, base: Path) -> "RunConfig":
        """Make relative output paths relative to ``base``."""
        kw = {}
        for f in fields(PathsSection):
            val = getattr(self.paths, f.name)
            kw[f.name] = None if val is None else str((base / val) if not Path(val).is_absolute() else val)
        return RunConfig(self.fom, self.pod, self.rom, self.sweep, self.study, PathsSection(**kw), self.seed)


def _axis(name: str, value: Any) -> tuple[float, ...]:
    if isinstance(value, dict):
        if set(value) != {"geomspace"}:
            raise ConfigError(f"{name}: only {{'geomspace': [lo, hi, n]}} is supported")
        lo, hi, n = value["geomspace"]
        if not (lo > 0 and hi >= lo and int(n) == n and n >= 1):
            raise ConfigError(f"{name}: geomspace needs 0 < lo <= hi and integer n >= 1")
        return tuple(float(x) for x in np.geomspace(lo, hi, int(n)))
    if isinstance(value, list):
        return tuple(value)
    raise ConfigError(f"{name}: expected a list or a geomspace object")


def _section(cls, data: Any, name: str, convert=None):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"section {name!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {name!r}: {', '.join(unknown)}")
    kw = dict(data)
    if convert:
        kw = convert(kw)
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {name!r} section: {exc}") from exc


def from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    allowed = {"fom", "pod", "rom", "sweep", "study", "paths", "seed"}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    seed = data.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    fom_data = data.get("fom") or {}
    if "seed" in fom_data:
        raise ConfigError("set the random seed at top level, not inside 'fom'")
    fom = _section(FomConfig, {**fom_data, "seed": seed}, "fom")

    def sweep_conv(kw):
        for axis in ("r_values", "deltas", "chis"):
            if axis in kw:
                kw[axis] = _axis(f"sweep.{axis}", kw[axis])
        return kw

    def study_conv(kw):
        for key in ("anchors", "targets"):
            if key in kw:
                kw[key] = _axis(f"study.{key}", kw[key])
        return kw

    cfg = RunConfig(
        fom=fom,
        pod=_section(PodSection, data.get("pod"), "pod"),
        rom=_section(RomSection, data.get("rom"), "rom"),
        sweep=_section(SweepSection, data.get("sweep"), "sweep", sweep_conv),
        study=_section(StudySection, data.get("study"), "study", study_conv),
        paths=_section(PathsSection, data.get("paths"), "paths"),
        seed=seed,
    )
    validate(cfg)
    return cfg


def _num(name, v, *, positive=False, nonneg=False, integer=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{name} must be a number")
    if integer and int(v) != v:
        raise ConfigError(f"{name} must be an integer")
    if positive and not v > 0:
        raise ConfigError(f"{name} must be positive")
    if nonneg and not v >= 0:
        raise ConfigError(f"{name} must be non-negative")


def validate(cfg: RunConfig) -> None:
    pod, rom, sw, st = cfg.pod, cfg.rom, cfg.sweep, cfg.study
    if pod.R is not None:
        _num("pod.R", pod.R, nonneg=True, integer=True)
    _num("rom.r", rom.r, nonneg=True, integer=True)
    _num("rom.dt", rom.dt, positive=True)
    _num("rom.chi", rom.chi, nonneg=True)
    _num("rom.delta", rom.delta, nonneg=True)
    _num("rom.tol", rom.tol, positive=True)
    _num("rom.max_iter", rom.max_iter, positive=True, integer=True)
    if rom.n_steps is not None:
        _num("rom.n_steps", rom.n_steps, nonneg=True, integer=True)
    if rom.scheme not in SCHEMES:
        raise ConfigError(f"rom.scheme must be one of {SCHEMES}")
    if rom.form not in CONVECTION_FORMS:
        raise ConfigError(f"rom.form must be one of {CONVECTION_FORMS}")
    if rom.initial not in ("projection", "zero"):
        raise ConfigError("rom.initial must be 'projection' or 'zero'")
    if not isinstance(rom.newton, bool):
        raise ConfigError("rom.newton must be a boolean")
    stride = cfg.fom.dt_sample / rom.dt
    if abs(stride - round(stride)) > 1e-9 * max(1.0, stride):
        raise ConfigError("fom.dt_sample must be an integer multiple of rom.dt")
    for r in sw.r_values:
        _num("sweep.r_values[]", r, nonneg=True, integer=True)
    for d in sw.deltas:
        _num("sweep.deltas[]", d, nonneg=True)
    for c in sw.chis:
        _num("sweep.chis[]", c, nonneg=True)
    _num("sweep.workers", sw.workers, positive=True, integer=True)
    if not isinstance(sw.record_wall_time, bool):
        raise ConfigError("sweep.record_wall_time must be a boolean")
    if st.metric not in METRICS:
        raise ConfigError(f"study.metric must be one of {METRICS}")
    _num("study.tolerance", st.tolerance, nonneg=True)
    for name in ("N",):
        _num(f"study.{name}", getattr(st, name), positive=True)
    for name in ("k", "s"):
        _num(f"study.{name}", getattr(st, name), nonneg=True)
    if st.c_sr is not None:
        _num("study.c_sr", st.c_sr, nonneg=True)
    for d in st.anchors + st.targets:
        _num("study.anchors/targets[]", d, nonneg=True)


def load_config(path: str | Path) -> RunConfig:
    p = Path(path)
    try:
        data = json.loads(p.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {p}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return from_dict(data).resolve(p.parent)


def rom_steps(cfg: RunConfig) -> int:
    """Steps needed to cover the snapshot window unless set explicitly."""
    if cfg.rom.n_steps is not None:
        return int(cfg.rom.n_steps)
    return int(round((cfg.fom.t_end - cfg.fom.t_start) / cfg.rom.dt))
