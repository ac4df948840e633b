"""Experiment configuration: INI parsing, validation and named presets.

Config files are INI with sections ``[experiment]``, ``[disorder]``,
``[geometry]``, ``[time]``, ``[sweep]`` and ``[critical]``. Angles accept
plain floats or multiples of pi written as ``0.2pi`` or ``-pi/8``.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import asdict, dataclass, fields, replace
from typing import Optional

import numpy as np

from .disorder import APPENDIX_SET_A, DISORDER_KINDS, DisorderSpec
from .scatter import DEFAULT_T_MAX
from .spectral import BLOCKS, DEFAULT_BLOCK_CAP

__all__ = ["EXPERIMENTS", "PRESETS", "ConfigError", "ExperimentConfig", "load_config", "parse_angle", "validate"]

EXPERIMENTS = ("evolve", "scatter", "spectrum", "critical", "binary-sweep")
EVOLVE_MODES = ("quantum", "stochastic", "time_dependent")
ETA_METHODS = ("autocorrelation", "fractal", "return")


class ConfigError(ValueError):
    """Invalid configuration; ``field`` is the ``section.key`` path."""

    def __init__(self, field_path: str, message: str):
        super().__init__(f"{field_path}: {message}")
        self.field = field_path
        self.message = message


_ANGLE = re.compile(r"^\s*([+-]?)\s*([0-9.eE+-]*)\s*\*?\s*pi\s*(?:/\s*([0-9.]+))?\s*$")


def parse_angle(text) -> float:
    """``"0.2pi"``, ``"-pi/8"``, ``"0.25*pi"`` or a plain float, in radians."""
    if isinstance(text, (int, float)):
        return float(text)
    s = str(text).strip()
    m = _ANGLE.match(s)
    if m is None:
        return float(s)
    sign = -1.0 if m.group(1) == "-" else 1.0
    coef = float(m.group(2)) if m.group(2) not in ("", "+", "-") else 1.0
    div = float(m.group(3)) if m.group(3) else 1.0
    return sign * coef * np.pi / div


@dataclass(frozen=True)
class ExperimentConfig:
    """Every knob of every experiment family; unused fields are ignored."""

    experiment: str = "evolve"
    seed: int = 0
    realizations: int = 1
    workers: int = 1
    # disorder
    kind: str = "phase"
    theta1: float = 0.2 * np.pi
    theta2: float = 0.4 * np.pi
    alpha1: float = 0.0
    alpha2: float = 0.0
    beta1: float = 0.0
    beta2: float = 0.0
    binary_a: tuple = APPENDIX_SET_A
    binary_b: tuple = (APPENDIX_SET_A[0] - np.pi / 2, APPENDIX_SET_A[1] + np.pi / 2)
    p_a: float = 0.5
    # geometry
    extents: tuple = (101, 101)
    L_x: int = 19
    L_y: int = 30
    cuts: tuple = ("none",)
    block: str = "square-ee"
    sizes: tuple = ()
    # time
    t_max: Optional[int] = None
    snapshots: tuple = ()
    mode: str = "quantum"
    # sweeps
    theta1_grid: tuple = ()
    theta2_grid: tuple = ()
    theta_sum: Optional[float] = None
    p_a_grid: tuple = ()
    dtheta_grid: tuple = ()
    spread_extents: tuple = (200, 200)
    spread_steps: int = 170
    spread_realizations: int = 100
    # critical
    methods: tuple = ETA_METHODS
    eig_count: int = 20
    return_extents: tuple = (161, 161)
    return_realizations: int = 200

    def disorder_spec(self, seed: Optional[int] = None) -> DisorderSpec:
        return DisorderSpec(
            self.kind,
            (self.theta1, self.theta2, self.alpha1, self.alpha2, self.beta1, self.beta2),
            tuple(self.binary_a) + tuple(self.binary_b) + (self.p_a,),
            self.seed if seed is None else int(seed),
        )

    def resolved_t_max(self) -> int:
        if self.t_max is not None:
            return int(self.t_max)
        if self.experiment in ("scatter", "binary-sweep"):
            return DEFAULT_T_MAX.get((self.L_x, self.L_y), 50 * (self.L_x + 1))
        if self.experiment == "critical":
            return 2048
        return 1024

    def theta_points(self) -> list:
        """``(theta1, theta2)`` pairs of a sweep: product grid, or a line at fixed sum."""
        if not self.theta1_grid:
            return [(self.theta1, self.theta2)]
        if self.theta2_grid:
            return [(a, b) for a in self.theta1_grid for b in self.theta2_grid]
        return [(a, self.theta_sum - a) for a in self.theta1_grid]

    def to_dict(self) -> dict:
        out = {}
        for k, v in asdict(self).items():
            out[k] = list(v) if isinstance(v, tuple) else v
        out["t_max"] = self.resolved_t_max()
        return out


SECTIONS = {
    "experiment": ("experiment", "seed", "realizations", "workers"),
    "disorder": ("kind", "theta1", "theta2", "alpha1", "alpha2", "beta1", "beta2", "binary_a", "binary_b", "p_a"),
    "geometry": ("extents", "L_x", "L_y", "cuts", "block", "sizes"),
    "time": ("t_max", "snapshots", "mode"),
    "sweep": ("theta1_grid", "theta2_grid", "theta_sum", "p_a_grid", "dtheta_grid", "spread_extents", "spread_steps",
              "spread_realizations"),
    "critical": ("methods", "eig_count", "return_extents", "return_realizations"),
}
_SECTION_OF = {k: s for s, keys in SECTIONS.items() for k in keys}
_ANGLE_FIELDS = {"theta1", "theta2", "alpha1", "alpha2", "beta1", "beta2"}
_ANGLE_TUPLES = {"binary_a", "binary_b", "theta1_grid", "theta2_grid", "dtheta_grid"}
_INT_TUPLES = {"extents", "snapshots", "spread_extents", "return_extents"}
_STR_TUPLES = {"cuts", "methods"}


def _items(text: str) -> list:
    return [t for t in re.split(r"[,\s]+", text.strip()) if t]


def _convert(name: str, raw: str):
    path = f"{_SECTION_OF[name]}.{name}"
    try:
        if name in _ANGLE_FIELDS:
            return parse_angle(raw)
        if name in _ANGLE_TUPLES:
            return tuple(parse_angle(t) for t in _items(raw))
        if name in _INT_TUPLES:
            return tuple(int(t) for t in _items(raw))
        if name in _STR_TUPLES:
            return tuple(_items(raw))
        if name == "sizes":
            # "19x30, 39x60"
            return tuple(tuple(int(v) for v in t.lower().split("x")) for t in _items(raw))
        if name == "p_a_grid":
            return tuple(float(t) for t in _items(raw))
        if name == "theta_sum":
            return None if raw.strip().lower() in ("", "none") else parse_angle(raw)
        if name == "t_max":
            return None if raw.strip().lower() in ("", "auto", "none") else int(raw)
        if name == "p_a":
            return float(raw)
        kind = {f.name: f.type for f in fields(ExperimentConfig)}[name]
        return int(raw) if kind == "int" else raw.strip()
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, f"cannot parse {raw!r}: {exc}") from None


def from_mapping(mapping: dict, base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    """Apply ``{section: {key: text}}`` on top of ``base``."""
    updates = {}
    for section, items in mapping.items():
        if section not in SECTIONS:
            raise ConfigError(section, "unknown section")
        for key, raw in items.items():
            if key not in SECTIONS[section]:
                raise ConfigError(f"{section}.{key}", "unknown key")
            updates[key] = _convert(key, raw)
    return replace(base or ExperimentConfig(), **updates)


def load_config(path, base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keep L_x / L_y case
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    except configparser.Error as exc:
        raise ConfigError("config", str(exc).splitlines()[0]) from None
    return from_mapping({s: dict(parser[s]) for s in parser.sections()}, base)


def validate(cfg: ExperimentConfig) -> list:
    """Problems as ``(severity, field_path, message)``; empty when well formed."""
    issues = []

    def err(key, msg):
        issues.append(("error", f"{_SECTION_OF.get(key, key)}.{key}", msg))

    def warn(key, msg):
        issues.append(("warning", f"{_SECTION_OF.get(key, key)}.{key}", msg))

    if cfg.experiment not in EXPERIMENTS:
        err("experiment", f"must be one of {EXPERIMENTS}")
    if cfg.kind not in DISORDER_KINDS:
        err("kind", f"must be one of {DISORDER_KINDS}")
    if not 0 <= cfg.p_a <= 1:
        err("p_a", "must lie in [0, 1]")
    if cfg.realizations < 1:
        err("realizations", "must be positive")
    if cfg.workers < 1:
        err("workers", "must be positive")
    if cfg.seed < 0:
        err("seed", "must be nonnegative")
    if len(cfg.binary_a) != 2 or len(cfg.binary_b) != 2:
        err("binary_a", "binary sets need two angles each")
    if len(cfg.extents) != 2 or min(cfg.extents, default=0) < 1:
        err("extents", "need two positive integers")
    if cfg.t_max is not None and cfg.t_max < 1:
        err("t_max", "must be positive")
    exp = cfg.experiment
    if exp in ("scatter", "binary-sweep"):
        if cfg.L_y % 2:
            err("L_y", "periodic y needs an even L_y for sublattice consistency")
        if cfg.L_x < 1:
            err("L_x", "must be positive")
        for c in cfg.cuts:
            if c not in ("none", "A", "B"):
                err("cuts", f"unknown cut {c!r}")
        for s in cfg.sizes:
            if len(s) != 2 or s[1] % 2:
                err("sizes", f"size {s} needs the form LxxLy with even L_y")
        table = DEFAULT_T_MAX.get((cfg.L_x, cfg.L_y))
        if cfg.t_max is not None and table is not None and cfg.t_max < table:
            warn("t_max", f"{cfg.t_max} is below the escape-matched default {table} for this size")
        if cfg.theta2_grid and not cfg.theta1_grid:
            err("theta1_grid", "theta2_grid needs theta1_grid")
        if cfg.theta1_grid and not cfg.theta2_grid and cfg.theta_sum is None:
            err("theta2_grid", "give theta2_grid or theta_sum")
    if exp == "evolve" and cfg.mode not in EVOLVE_MODES:
        err("mode", f"must be one of {EVOLVE_MODES}")
    needs_blocks = exp == "spectrum" or (exp == "critical" and set(cfg.methods) & {"autocorrelation", "fractal"})
    if needs_blocks:
        if any(v % 2 for v in cfg.extents):
            err("extents", "sublattice blocks need even extents on the torus")
        if cfg.block not in BLOCKS:
            err("block", f"must be one of {tuple(BLOCKS)}")
    if exp == "spectrum" and np.prod(cfg.extents) > DEFAULT_BLOCK_CAP:
        err("extents", f"block dimension {int(np.prod(cfg.extents))} exceeds cap {DEFAULT_BLOCK_CAP}")
    if exp == "critical":
        for m in cfg.methods:
            if m not in ETA_METHODS:
                err("methods", f"unknown method {m!r}")
        if cfg.eig_count < 1:
            err("eig_count", "must be positive")
    if exp == "binary-sweep":
        if cfg.kind != "binary":
            err("kind", "binary-sweep needs kind = binary")
        if not cfg.p_a_grid:
            err("p_a_grid", "empty grid")
        if not cfg.dtheta_grid:
            err("dtheta_grid", "empty grid")
        if any(not 0 <= p <= 1 for p in cfg.p_a_grid):
            err("p_a_grid", "values must lie in [0, 1]")
    return issues


_PI = np.pi
_MAP_GRID = tuple(_PI * v for v in (0.05, 0.15, 0.35, 0.45, 0.65))

PRESETS = {
    # quantized edge transmission and transmission eigenvalues
    "edge-quantization": ExperimentConfig(experiment="scatter", L_x=29, L_y=30, cuts=("B", "none"), t_max=8192),
    # theta1 x theta2 transmission maps and invariant
    "invariant-map": ExperimentConfig(
        experiment="scatter", alpha1=0.25 * _PI, alpha2=0.4 * _PI, beta1=0.1 * _PI, beta2=0.3 * _PI,
        cuts=("A", "B", "none"), theta1_grid=_MAP_GRID, theta2_grid=_MAP_GRID,
    ),
    "localized-spread": ExperimentConfig(experiment="evolve", extents=(101, 203), t_max=2000, realizations=20,
                              snapshots=(500, 1000, 2000)),
    "critical-spread": ExperimentConfig(experiment="evolve", theta2=0.2 * _PI, extents=(201, 201), t_max=1000,
                              realizations=10),
    "levels-localized": ExperimentConfig(experiment="spectrum", extents=(48, 96)),
    "levels-critical": ExperimentConfig(experiment="spectrum", theta2=0.2 * _PI, extents=(68, 68)),
    "scaling-theta-sum": ExperimentConfig(
        experiment="scatter", theta1_grid=tuple(_PI * v for v in (0.1, 0.2, 0.3, 0.4, 0.5)),
        theta_sum=0.6 * _PI, sizes=((19, 30), (39, 60), (59, 90)), realizations=10,
    ),
    "haar-variance": ExperimentConfig(experiment="evolve", kind="haar", extents=(301, 301), t_max=1024, realizations=20),
    "haar-diffusion": ExperimentConfig(experiment="evolve", kind="haar", extents=(301, 301), t_max=1024, realizations=20),
    "haar-diffusion-stochastic": ExperimentConfig(experiment="evolve", kind="haar", extents=(301, 301), t_max=1024,
                                        realizations=20, mode="stochastic"),
    "haar-diffusion-time-dependent": ExperimentConfig(experiment="evolve", kind="haar", extents=(301, 301), t_max=1024,
                                            realizations=20, mode="time_dependent"),
    "levels-haar": ExperimentConfig(experiment="spectrum", kind="haar", extents=(68, 68)),
    "scaling-haar": ExperimentConfig(experiment="scatter", kind="haar", sizes=((19, 30), (39, 60), (79, 120)),
                              realizations=40),
    "eta-autocorrelation": ExperimentConfig(experiment="critical", kind="haar", extents=(128, 128), realizations=5,
                              methods=("autocorrelation",)),
    "eta-fractal": ExperimentConfig(experiment="critical", kind="haar", extents=(128, 128), realizations=5,
                              methods=("fractal",)),
    "eta-return": ExperimentConfig(experiment="critical", kind="haar", t_max=2048, methods=("return",)),
    "binary-transmission": ExperimentConfig(
        experiment="binary-sweep", kind="binary", L_x=39, L_y=60, t_max=2000, cuts=("B", "none"),
        p_a_grid=tuple(np.round(np.linspace(0, 1, 11), 10)), dtheta_grid=tuple(_PI * v for v in (0.25, 0.5, 0.75)),
        spread_realizations=0,
    ),
    "binary-spread": ExperimentConfig(
        experiment="binary-sweep", kind="binary", cuts=(),
        p_a_grid=tuple(np.round(np.linspace(0, 1, 11), 10)), dtheta_grid=tuple(_PI * v for v in (0.25, 0.5, 0.75)),
    ),
}
