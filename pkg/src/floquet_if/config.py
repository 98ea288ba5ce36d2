"""Run configuration: one YAML file with nested sections, all energies in units of Omega."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .errors import InputError

MODELS = ("single-spin", "two-spin")
DRIVES = ("longitudinal", "transversal")
SECTORS = ("triplet", "full")
INITIAL_STATES = ("up", "down", "00", "11", "singlet", "ground")


class ConfigError(InputError):
    """Invalid configuration value; ``field`` is the dotted path of the culprit."""

    def __init__(self, field_name, message):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class BathSection:
    alpha: float = 0.1
    omega_c: float = 2.5
    temperature: float = 0.0
    n_terms: int = 4
    window: float | None = None
    refine: str | None = "minimax"
    max_error: float | None = None
    cutoff: int = 6
    depth: int | None = 3


@dataclass
class SystemSection:
    model: str = "single-spin"
    omega: float = 1.0
    drive: str = "transversal"
    eps: float = 0.0
    omega_d: float = 1.0
    phase: float = 0.0
    sector: str = "triplet"
    initial: str = "up"


@dataclass
class GridSection:
    dt: float = 0.05
    n_steps: int = 600
    tau_max: float = 40.0
    substeps: int = 4
    magnus_order: int = 4
    decay_threshold: float = 1e-3


@dataclass
class SweepSection:
    omega_d: list = field(default_factory=list)
    eps: list = field(default_factory=list)


@dataclass
class HeatSection:
    omega_max: float = 40.0
    n_omega: int = 4000
    n_max: int = 8


@dataclass
class BenchmarkSection:
    dt_me: float = 0.005
    t_final: float = 30.0


@dataclass
class SpectralSection:
    n_scan: int = 64
    condition_threshold: float = 1e10
    positivity_tol: float = 1e-6


@dataclass
class OutputSection:
    directory: str = "out"
    formats: list = field(default_factory=lambda: ["csv"])


@dataclass
class CacheSection:
    path: str = ".floquet-if-cache"
    enabled: bool = True


@dataclass
class RunConfig:
    bath: BathSection = field(default_factory=BathSection)
    system: SystemSection = field(default_factory=SystemSection)
    grid: GridSection = field(default_factory=GridSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    heat: HeatSection = field(default_factory=HeatSection)
    benchmark: BenchmarkSection = field(default_factory=BenchmarkSection)
    spectral: SpectralSection = field(default_factory=SpectralSection)
    output: OutputSection = field(default_factory=OutputSection)
    cache: CacheSection = field(default_factory=CacheSection)

    def to_dict(self) -> dict:
        return asdict(self)


_SECTIONS = {f.name: f.default_factory for f in fields(RunConfig)}


def _coerce(value, default, name):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(name, f"expected true/false, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(name, f"expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(name, f"expected a number, got {value!r}")
        return float(value)
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(name, f"expected a list, got {value!r}")
        return list(value)
    return value


def from_dict(data: dict | None) -> RunConfig:
    """Build and validate a RunConfig; unknown keys are errors."""
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError("<root>", "configuration must be a mapping")
    sections = {}
    for key, value in data.items():
        if key not in _SECTIONS:
            raise ConfigError(key, "unknown section")
        if value is None:
            value = {}
        if not isinstance(value, dict):
            raise ConfigError(key, "section must be a mapping")
        obj = _SECTIONS[key]()
        names = {f.name for f in fields(obj)}
        for k, v in value.items():
            if k not in names:
                raise ConfigError(f"{key}.{k}", "unknown field")
            default = getattr(obj, k)
            if v is not None and default is not None:
                v = _coerce(v, default, f"{key}.{k}")
            setattr(obj, k, v)
        sections[key] = obj
    cfg = RunConfig(**sections)
    validate(cfg)
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"invalid YAML: {exc}") from None
    return from_dict(data)


def _finite(name, v, positive=False, nonneg=False):
    if v is None or isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(name, f"must be a finite number, got {v!r}")
    if positive and not v > 0:
        raise ConfigError(name, f"must be positive, got {v!r}")
    if nonneg and v < 0:
        raise ConfigError(name, f"must be non-negative, got {v!r}")


def _monotone(name, grid):
    for i, v in enumerate(grid):
        _finite(f"{name}[{i}]", v, positive=name.endswith("omega_d"))
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ConfigError(name, "grid must be strictly increasing")


def validate(cfg: RunConfig) -> None:
    b, s, g = cfg.bath, cfg.system, cfg.grid
    _finite("bath.alpha", b.alpha, nonneg=True)
    _finite("bath.omega_c", b.omega_c, positive=True)
    _finite("bath.temperature", b.temperature, nonneg=True)
    if b.n_terms < 1:
        raise ConfigError("bath.n_terms", "must be >= 1")
    if b.window is not None:
        _finite("bath.window", b.window, positive=True)
    if b.max_error is not None:
        _finite("bath.max_error", b.max_error, positive=True)
    if b.refine not in ("minimax", "lsq", None):
        raise ConfigError("bath.refine", f"must be minimax, lsq or null, got {b.refine!r}")
    if b.cutoff < 1:
        raise ConfigError("bath.cutoff", "must be >= 1")
    if b.depth is not None and b.depth < 0:
        raise ConfigError("bath.depth", "must be >= 0")
    if s.model not in MODELS:
        raise ConfigError("system.model", f"must be one of {MODELS}, got {s.model!r}")
    if s.drive not in DRIVES:
        raise ConfigError("system.drive", f"must be one of {DRIVES}, got {s.drive!r}")
    if s.sector not in SECTORS:
        raise ConfigError("system.sector", f"must be one of {SECTORS}, got {s.sector!r}")
    if s.initial not in INITIAL_STATES:
        raise ConfigError("system.initial", f"must be one of {INITIAL_STATES}")
    _finite("system.omega", s.omega)
    _finite("system.eps", s.eps)
    _finite("system.omega_d", s.omega_d, positive=True)
    _finite("system.phase", s.phase)
    _finite("grid.dt", g.dt, positive=True)
    _finite("grid.tau_max", g.tau_max, positive=True)
    _finite("grid.decay_threshold", g.decay_threshold, positive=True)
    if g.n_steps < 0:
        raise ConfigError("grid.n_steps", "must be >= 0")
    if g.substeps < 1:
        raise ConfigError("grid.substeps", "must be >= 1")
    if g.magnus_order not in (2, 4):
        raise ConfigError("grid.magnus_order", "must be 2 or 4")
    _monotone("sweep.omega_d", cfg.sweep.omega_d)
    _monotone("sweep.eps", cfg.sweep.eps)
    _finite("heat.omega_max", cfg.heat.omega_max, positive=True)
    if cfg.heat.n_omega < 2:
        raise ConfigError("heat.n_omega", "must be >= 2")
    _finite("benchmark.dt_me", cfg.benchmark.dt_me, positive=True)
    _finite("benchmark.t_final", cfg.benchmark.t_final, positive=True)
    bad = [f for f in cfg.output.formats if f != "csv"]
    if bad:
        raise ConfigError("output.formats", f"unsupported formats {bad}; only csv is written")
