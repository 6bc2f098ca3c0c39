"""Line-based run configuration.

Format: one ``key = value`` per line, ``#`` starts a comment, keys are
dotted (``physics.tau_b_ps``). A bare key such as ``tau_b_ps`` is accepted
when it names exactly one dotted key. Unknown keys are errors; missing keys
take the defaults in :data:`KEYS`.
"""
from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Callable

import numpy as np

from . import __version__
from .analysis import DEFAULT_VARIATIONS, ChshAnalysis
from .detector import DetectorParams
from .generator import GeneratorConfig
from .physics import DEFAULT_BETA_GAMMA, DEFAULT_DELTA_M, DEFAULT_TAU_B, PhysicsParams
from .streams import GENERATOR_ALGORITHM, check_seed
from .validation import CATEGORIES

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


def _positive(x):
    return x > 0


def _nonneg(x):
    return x >= 0


def _prob_half(x):
    return 0 <= x < 0.5


def _unit(x):
    return 0 <= x <= 1


def _eff(x):
    return 0 < x <= 1


def _u64(x):
    return 0 <= x < 2 ** 64


def _edges(x):
    return len(x) >= 2 and all(b > a for a, b in zip(x, x[1:]))


def _known_variations(x):
    return all(v in DEFAULT_VARIATIONS for v in x)


@dataclass(frozen=True)
class Key:
    default: Any
    kind: type
    check: Callable[[Any], bool] | None = None
    rule: str = ""


def _fraction_keys():
    return {f"generator.fraction.{c}": Key(1.0 if c == "signal" else 0.0, float, _unit, "in [0, 1]")
            for c in CATEGORIES}


KEYS: dict[str, Key] = {
    "physics.tau_b_ps": Key(DEFAULT_TAU_B, float, _positive, "> 0"),
    "physics.delta_m_per_ps": Key(DEFAULT_DELTA_M, float, _nonneg, ">= 0"),
    "physics.beta_gamma": Key(DEFAULT_BETA_GAMMA, float, _positive, "> 0"),
    "detector.dz_sigma_um": Key(100.0, float, _nonneg, ">= 0"),
    "detector.omega_a": Key(0.03, float, _prob_half, "in [0, 0.5)"),
    "detector.omega_b": Key(0.03, float, _prob_half, "in [0, 0.5)"),
    "detector.efficiency": Key(1.0, float, _eff, "in (0, 1]"),
    "detector.sideband_scale": Key(1.0, float, _positive, "> 0"),
    "detector.control_scale": Key(1.0, float, _positive, "> 0"),
    "generator.n_events": Key(100_000, int, _nonneg, ">= 0"),
    "generator.seed": Key(0, int, _u64, "an unsigned 64-bit integer"),
    "generator.workers": Key(1, int, _positive, ">= 1"),
    **_fraction_keys(),
    "analysis.bin_edges_ps": Key((0.0, 12.0, 0.5), tuple, _edges, "strictly increasing"),
    "analysis.dt_center_ps": Key(2.0, float, _positive, "> 0"),
    "analysis.dt_halfwidth_ps": Key(0.5, float, _positive, "> 0"),
    "analysis.far_window_scale": Key(3.0, float, _positive, "> 0"),
    "analysis.dt_min_ps": Key(0.0, float, _nonneg, ">= 0"),
    "analysis.dt_max_ps": Key(12.0, float, _positive, "> 0"),
    "analysis.subtract_background": Key(True, bool),
    "analysis.correct_dilution": Key(False, bool),
    "analysis.systematics": Key((), list, _known_variations,
                                "a list of " + ", ".join(DEFAULT_VARIATIONS)),
    "ensemble.n_experiments": Key(100, int, _nonneg, ">= 0"),
    "ensemble.significance_threshold": Key(3.0, float),
    "ensemble.sigma_syst": Key(0.0, float, _nonneg, ">= 0"),
    "lhv.n_events": Key(1_000_000, int, _positive, "> 0"),
    "lhv.n_random": Key(20, int, _nonneg, ">= 0"),
    "lhv.dt_values_ps": Key((0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0), list,
                            lambda x: len(x) > 0 and all(t > 0 for t in x), "positive values"),
    "lhv.halfwidth_ps": Key(0.05, float, _positive, "> 0"),
    "report.mc_factor": Key(10.0, float, _positive, "> 0"),
    "output.dir": Key("out", str),
}

# bin edges may be written as "start:stop:step" or as an explicit list
_RANGE_KEYS = {"analysis.bin_edges_ps"}


def _expand_range(t):
    if len(t) == 3 and t[2] > 0 and t[1] > t[0]:
        start, stop, step = t
        n = int(round((stop - start) / step))
        if abs(start + n * step - stop) < 1e-9 * max(1.0, abs(stop)):
            return tuple(float(x) for x in np.round(start + step * np.arange(n + 1), 12))
    return tuple(t)


def _resolve(key: str, lineno: int) -> str:
    if key in KEYS:
        return key
    matches = [k for k in KEYS if k.endswith("." + key)]
    if len(matches) == 1:
        return matches[0]
    where = f"line {lineno}: " if lineno else ""
    if matches:
        raise ConfigError(f"{where}ambiguous key {key!r} (could be {', '.join(matches)})")
    raise ConfigError(f"{where}unknown key {key!r}")


def _convert(name: str, raw: str, lineno: int):
    spec = KEYS[name]
    where = f"line {lineno}: " if lineno else ""
    try:
        if spec.kind is bool:
            low = raw.lower()
            if low in ("true", "yes", "on", "1"):
                value = True
            elif low in ("false", "no", "off", "0"):
                value = False
            else:
                raise ValueError(raw)
        elif spec.kind is int:
            value = int(raw, 0)
        elif spec.kind is float:
            value = float(raw)
            if not math.isfinite(value):
                raise ValueError(raw)
        elif spec.kind is str:
            value = raw
        elif name in _RANGE_KEYS:
            if ":" in raw:
                value = _expand_range(tuple(float(x) for x in raw.split(":")))
            else:
                value = tuple(float(x) for x in raw.split(","))
        elif spec.kind is list and name == "analysis.systematics":
            value = tuple(x.strip() for x in raw.split(",") if x.strip())
        else:
            value = tuple(float(x) for x in raw.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"{where}invalid value {raw!r} for {name}") from None
    if spec.check is not None and not spec.check(value):
        raise ConfigError(f"{where}{name} must be {spec.rule}, got {raw!r}")
    return value


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    return str(value)


@dataclass(frozen=True)
class RunConfig:
    values: dict[str, Any]
    defaulted: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        v = self.values
        total = math.fsum(v[f"generator.fraction.{c}"] for c in CATEGORIES)
        if abs(total - 1.0) > 1e-12:
            raise ConfigError(f"generator.fraction.* must sum to 1, got {total!r}")
        if not v["analysis.dt_min_ps"] < v["analysis.dt_max_ps"]:
            raise ConfigError("analysis.dt_min_ps must be below analysis.dt_max_ps")
        try:
            self.analysis._validate_params()
        except ValueError as exc:
            raise ConfigError(f"analysis.dt_halfwidth_ps: {exc}") from None

    def __getitem__(self, key: str):
        return self.values[_resolve(key, 0)]

    def with_overrides(self, overrides: dict[str, Any]) -> RunConfig:
        values = dict(self.values)
        for key, value in overrides.items():
            name = _resolve(key, 0)
            raw = value if isinstance(value, str) else _format(value)
            values[name] = _convert(name, raw, 0)
        return RunConfig(values, tuple(k for k in self.defaulted if k not in overrides))

    @property
    def physics(self) -> PhysicsParams:
        v = self.values
        return PhysicsParams(v["physics.tau_b_ps"], v["physics.delta_m_per_ps"], v["physics.beta_gamma"])

    @property
    def detector(self) -> DetectorParams:
        v = self.values
        return DetectorParams(
            beta_gamma=v["physics.beta_gamma"], dz_sigma=v["detector.dz_sigma_um"],
            omega_a=v["detector.omega_a"], omega_b=v["detector.omega_b"],
            efficiency=v["detector.efficiency"], sideband_scale=v["detector.sideband_scale"],
            control_scale=v["detector.control_scale"],
        )

    @property
    def generator(self) -> GeneratorConfig:
        v = self.values
        fractions = {c: v[f"generator.fraction.{c}"] for c in CATEGORIES
                     if v[f"generator.fraction.{c}"] > 0}
        return GeneratorConfig(v["generator.n_events"], v["generator.seed"], self.physics, fractions)

    @property
    def analysis(self) -> ChshAnalysis:
        v = self.values
        return ChshAnalysis(
            bin_edges=v["analysis.bin_edges_ps"], dt_center=v["analysis.dt_center_ps"],
            dt_halfwidth=v["analysis.dt_halfwidth_ps"],
            far_window_scale=v["analysis.far_window_scale"],
            dt_min=v["analysis.dt_min_ps"], dt_max=v["analysis.dt_max_ps"],
            sideband_scale=v["detector.sideband_scale"], control_scale=v["detector.control_scale"],
            subtract_background=v["analysis.subtract_background"],
            correct_dilution=v["analysis.correct_dilution"],
            omega_a=v["detector.omega_a"], omega_b=v["detector.omega_b"],
        )

    @property
    def seed(self) -> int:
        return self.values["generator.seed"]

    def config_hash(self) -> str:
        return hashlib.sha256(serialize_config(self).encode("utf-8")).hexdigest()


def parse_config(text: str) -> RunConfig:
    """Parse and validate configuration text."""
    values: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: missing key")
        name = _resolve(key, lineno)
        if name in values:
            raise ConfigError(f"line {lineno}: duplicate key {name}")
        values[name] = _convert(name, raw, lineno)

    defaulted = []
    for name, spec in KEYS.items():
        if name not in values:
            default = spec.default
            if name in _RANGE_KEYS:
                default = _expand_range(default)
            values[name] = default
            defaulted.append(name)
            log.info("config: %s not set, using default %s", name, _format(default))
    return RunConfig(values, tuple(defaulted))


def serialize_config(config: RunConfig) -> str:
    return "".join(f"{k} = {_format(config.values[k])}\n" for k in KEYS)


def load_config(path=None) -> RunConfig:
    if path is None:
        return parse_config("")
    with open(path, encoding="utf-8") as f:
        return parse_config(f.read())


def bundled_config(name: str = "belle_like") -> RunConfig:
    text = resources.files("bellmeson.configs").joinpath(f"{name}.cfg").read_text(encoding="utf-8")
    return parse_config(text)


@dataclass(frozen=True)
class RunMetadata:
    toolkit_version: str
    config_hash: str
    seed: int
    generator_algorithm: str
    timestamp: str

    @classmethod
    def for_config(cls, config: RunConfig, timestamp: str) -> RunMetadata:
        return cls(__version__, config.config_hash(), check_seed(config.seed),
                   GENERATOR_ALGORITHM, timestamp)

    def as_dict(self) -> dict:
        return {
            "toolkit_version": self.toolkit_version,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "generator_algorithm": self.generator_algorithm,
            "timestamp": self.timestamp,
        }
