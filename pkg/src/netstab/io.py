"""Trace CSV files and scenario config documents.

Configs are TOML restricted to flat dotted keys (``delays.n = 10``); tables
such as ``[delays]`` are accepted on input as an equivalent spelling. The
writer always emits the flat form so a resolved config can be diffed line by
line against the file it came from.
"""
from __future__ import annotations

import csv
import math
import re
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Callable

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .controller import ActuatorLimits, ControllerGains
from .errors import ConfigParseError, ConfigurationError
from .estimation import DelayConfig, GaussianBelief, NoiseModel, check_psd
from .model import RobotGeometry, RobotState
from .sim import TRACE_FIELDS, ScenarioConfig, TraceRow

NAMED_CONFIGS = ("fig4", "fig5", "fig6", "fig7")

# ---------------------------------------------------------------------------
# Trace CSV

_INT_FIELDS = {"step"}
_OPTIONAL_FIELDS = {"meas_x", "meas_y", "meas_theta"}


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


def write_trace_csv(trace, path) -> Path:
    """One header row with the :class:`TraceRow` field names, then one row per step.

    Floats use Python's shortest round-trip repr, missing measurements are
    empty cells and lines end in ``\\n``.
    """
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_FIELDS)
        for row in trace:
            writer.writerow([_format_cell(getattr(row, name)) for name in TRACE_FIELDS])
    return path


def read_trace_csv(path) -> list[TraceRow]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != TRACE_FIELDS:
            raise ValueError(f"{path}: unexpected trace header")
        rows = []
        for lineno, cells in enumerate(reader, start=2):
            if len(cells) != len(TRACE_FIELDS):
                raise ValueError(f"{path}: line {lineno}: expected {len(TRACE_FIELDS)} cells")
            values = {}
            for name, cell in zip(TRACE_FIELDS, cells):
                if name in _INT_FIELDS:
                    values[name] = int(cell)
                elif name in _OPTIONAL_FIELDS and cell == "":
                    values[name] = None
                else:
                    values[name] = float(cell)
            rows.append(TraceRow(**values))
    return rows


# ---------------------------------------------------------------------------
# Config values


def _number(value, key):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigurationError(f"{key} must be a number, got {value!r}")
    return float(value)


def _finite(value, key):
    value = _number(value, key)
    if not math.isfinite(value):
        raise ConfigurationError(f"{key} must be finite, got {value!r}")
    return value


def _integer(value, key):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigurationError(f"{key} must be an integer, got {value!r}")
    return value


def _boolean(value, key):
    if not isinstance(value, bool):
        raise ConfigurationError(f"{key} must be true or false, got {value!r}")
    return value


def _string(value, key):
    if not isinstance(value, str):
        raise ConfigurationError(f"{key} must be a string, got {value!r}")
    return value


def _matrix(rows, cols):
    def convert(value, key):
        arr = np.array(value, dtype=object)
        if arr.shape != (rows, cols):
            raise ConfigurationError(f"{key} must be a {rows}x{cols} list of rows")
        return np.array([[_finite(v, key) for v in row] for row in value])
    return convert


def _vector(size):
    def convert(value, key):
        if not isinstance(value, list) or len(value) != size:
            raise ConfigurationError(f"{key} must be a list of {size} numbers")
        return [_finite(v, key) for v in value]
    return convert


@dataclass(frozen=True)
class _Key:
    convert: Callable[[Any, str], Any]
    required: bool = True


SCHEMA: dict[str, _Key] = {
    "geom.wheel_radius": _Key(_finite),
    "geom.wheel_base": _Key(_finite),
    "geom.sample_time": _Key(_finite),
    "gains.gamma": _Key(_finite),
    "gains.lambda": _Key(_finite),
    "gains.h": _Key(_finite),
    "delays.n": _Key(_integer),
    "delays.m": _Key(_integer),
    "noise.Q": _Key(_matrix(2, 2)),
    "noise.R": _Key(_matrix(3, 3)),
    "noise.enabled": _Key(_boolean),
    "initial_state": _Key(_vector(3)),
    "goal": _Key(_vector(3)),
    "estimator": _Key(_string),
    "steps": _Key(_integer),
    "seed": _Key(_integer),
    # Optional keys; defaults come from ScenarioConfig.
    "initial_belief.mean": _Key(_vector(3), required=False),
    "initial_belief.cov": _Key(_matrix(3, 3), required=False),
    "limits.v_max": _Key(_number, required=False),
    "limits.omega_max": _Key(_number, required=False),
    "limits.deadband": _Key(_finite, required=False),
    "filter.epoch": _Key(_string, required=False),
}


def _flatten(doc, prefix="") -> dict:
    out = {}
    for key, value in doc.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            out.update(_flatten(value, name + "."))
        else:
            out[name] = value
    return out


def _key_lines(text) -> dict[str, int]:
    """Line of each flat ``key = ...`` assignment, for error messages."""
    lines = {}
    pattern = re.compile(r"^\s*([A-Za-z0-9_.]+)\s*=")
    for lineno, line in enumerate(text.splitlines(), start=1):
        match = pattern.match(line)
        if match:
            lines.setdefault(match.group(1), lineno)
    return lines


# Attribute names used in dataclass validation messages, where they differ.
_ATTRIBUTE = {"gains.lambda": "lam", "estimator": "estimator", "filter.epoch": "epoch_estimate"}


def _blame(keys, message):
    """The key among ``keys`` that a validation message is about."""
    for key in keys:
        name = _ATTRIBUTE.get(key, key.rsplit(".", 1)[-1])
        if re.search(rf"\b{re.escape(name)}\b", message):
            return key
    return keys[0]


def config_from_dict(values: dict, lines: dict[str, int] | None = None) -> ScenarioConfig:
    """Validate a flat ``{dotted_key: value}`` mapping and build the scenario."""
    lines = lines or {}

    def fail(key, exc):
        message = str(exc)
        if not message.startswith(key):
            message = f"{key}: {message}"
        raise ConfigParseError(message, lines.get(key)) from exc

    unknown = sorted(set(values) - set(SCHEMA))
    if unknown:
        raise ConfigParseError(f"unknown key {unknown[0]!r}", lines.get(unknown[0]))
    missing = [k for k, spec in SCHEMA.items() if spec.required and k not in values]
    if missing:
        raise ConfigurationError(f"missing required key {missing[0]!r}")
    v = {}
    for key, value in values.items():
        try:
            v[key] = SCHEMA[key].convert(value, key)
        except ConfigurationError as exc:
            fail(key, exc)

    def build(keys, factory):
        try:
            return factory()
        except (ConfigurationError, ValueError) as exc:
            fail(_blame(keys, str(exc)), exc)

    geom = build(["geom.wheel_radius", "geom.wheel_base", "geom.sample_time"], lambda: RobotGeometry(
        v["geom.wheel_radius"], v["geom.wheel_base"], v["geom.sample_time"]))
    gains = build(["gains.gamma", "gains.lambda", "gains.h"], lambda: ControllerGains(
        v["gains.gamma"], v["gains.lambda"], v["gains.h"]))
    delays = build(["delays.n", "delays.m"], lambda: DelayConfig(v["delays.n"], v["delays.m"]))
    noise = build(["noise.Q", "noise.R"], lambda: NoiseModel(v["noise.Q"], v["noise.R"]))
    defaults = ActuatorLimits()
    limits = build(["limits.v_max", "limits.omega_max", "limits.deadband"], lambda: ActuatorLimits(
        v.get("limits.v_max", defaults.v_max), v.get("limits.omega_max", defaults.omega_max),
        v.get("limits.deadband", defaults.deadband)))
    belief = None
    if "initial_belief.mean" in v or "initial_belief.cov" in v:
        if not ("initial_belief.mean" in v and "initial_belief.cov" in v):
            raise ConfigurationError("initial_belief.mean and initial_belief.cov must be given together")
        try:
            cov = check_psd("initial_belief.cov", v["initial_belief.cov"], (3, 3))
        except ConfigurationError as exc:
            fail("initial_belief.cov", exc)
        belief = GaussianBelief(v["initial_belief.mean"], cov)
    keys = ["estimator", "steps", "seed", "filter.epoch"]
    return build(keys, lambda: ScenarioConfig(
        geom=geom, gains=gains, delays=delays, noise=noise,
        initial_state=RobotState(*v["initial_state"]), initial_belief=belief,
        goal=RobotState(*v["goal"]), estimator=v["estimator"], steps=v["steps"],
        seed=v["seed"], noise_enabled=v["noise.enabled"], limits=limits,
        epoch_estimate=v.get("filter.epoch", "lagged"),
    ))


def parse_config_text(text: str) -> dict:
    """Parse a config document into a flat mapping without validating it."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        lineno = getattr(exc, "lineno", None)
        message = getattr(exc, "msg", str(exc))
        raise ConfigParseError(message, lineno) from None
    return _flatten(doc)


def loads_config(text: str, overrides=()) -> ScenarioConfig:
    values = parse_config_text(text)
    extra = parse_overrides(overrides)
    values.update(extra)
    lines = {k: n for k, n in _key_lines(text).items() if k not in extra}
    return config_from_dict(values, lines)


def resolve_config_path(name_or_path) -> Path:
    """A shipped config name (``fig4`` ... ``fig7``) or a filesystem path."""
    if str(name_or_path) in NAMED_CONFIGS:
        return Path(str(resources.files("netstab") / "configs" / f"{name_or_path}.toml"))
    return Path(name_or_path)


def read_config(path, overrides=()) -> ScenarioConfig:
    """Load and validate a config file, applying ``KEY=VALUE`` overrides on top."""
    text = resolve_config_path(path).read_text(encoding="utf-8")
    return loads_config(text, overrides)


def parse_value(text: str):
    """A TOML value; anything that does not parse is taken as a bare string."""
    try:
        return tomllib.loads(f"value = {text}")["value"]
    except tomllib.TOMLDecodeError:
        return text.strip()


def parse_overrides(overrides) -> dict:
    out = {}
    for item in overrides:
        key, sep, raw = item.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigurationError(f"override {item!r} is not of the form KEY=VALUE")
        if key not in SCHEMA:
            raise ConfigurationError(f"unknown key {key!r}")
        out[key] = parse_value(raw)
    return out


# ---------------------------------------------------------------------------
# Writing


def config_to_dict(config: ScenarioConfig) -> dict:
    """Flat mapping that :func:`config_from_dict` turns back into ``config``."""
    out = {
        "geom.wheel_radius": config.geom.wheel_radius,
        "geom.wheel_base": config.geom.wheel_base,
        "geom.sample_time": config.geom.sample_time,
        "gains.gamma": config.gains.gamma,
        "gains.lambda": config.gains.lam,
        "gains.h": config.gains.h,
        "delays.n": int(config.delays.n),
        "delays.m": int(config.delays.m),
        "noise.Q": np.asarray(config.noise.Q).tolist(),
        "noise.R": np.asarray(config.noise.R).tolist(),
        "noise.enabled": config.noise_enabled,
        "initial_state": list(config.initial_state),
        "goal": list(config.goal),
        "estimator": config.estimator,
        "steps": config.steps,
        "seed": config.seed,
        "filter.epoch": config.epoch_estimate,
        "limits.v_max": config.limits.v_max,
        "limits.omega_max": config.limits.omega_max,
        "limits.deadband": config.limits.deadband,
    }
    if config.initial_belief is not None:
        out["initial_belief.mean"] = config.initial_belief.mean.tolist()
        out["initial_belief.cov"] = config.initial_belief.cov.tolist()
    return out


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isnan(value):
            raise ValueError("NaN cannot be written to a config")
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(format_value(v) for v in value) + "]"
    raise TypeError(f"cannot format {type(value).__name__}")


def dumps_config(config: ScenarioConfig) -> str:
    return "".join(f"{k} = {format_value(v)}\n" for k, v in config_to_dict(config).items())


def write_config(config: ScenarioConfig, path) -> Path:
    path = Path(path)
    path.write_text(dumps_config(config), encoding="utf-8", newline="\n")
    return path
