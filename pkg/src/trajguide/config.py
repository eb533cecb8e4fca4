"""Run configuration: a TOML document with one table per parameter group.

Every table maps onto a dataclass; unknown tables or keys are errors. The
materialized form (:func:`dump_config`) spells out every default, so feeding
it back reproduces the run exactly.
"""
from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, fields

import tomli
import tomli_w

from .control import YawControllerConfig
from .evaluation import SimParams, SuiteConfig, check_sweep
from .geometry import CameraModel
from .guidance import NoiseModel
from .mppi import MppiConfig
from .world import QueryParams, TrajectoryParams, WorldParams


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunParams:
    master_seed: int = 0
    workers: int = 1
    out: str = "results"
    trace: bool = False


@dataclass(frozen=True)
class SweepParams:
    parameter: str = "height"
    magnitudes: tuple[float, ...] = (0.0, 0.3, 0.6, 0.9, 1.2)

    def __post_init__(self):
        check_sweep(self.parameter, self.magnitudes)


_NESTED = {
    "world": WorldParams,
    "trajectory": TrajectoryParams,
    "query": QueryParams,
    "camera": CameraModel,
    "noise": NoiseModel,
    "sim": SimParams,
    "yaw": YawControllerConfig,
    "mppi": MppiConfig,
}
# suite fields holding nested dataclasses, keyed by table name
_SUITE_FIELD = {"camera": "recorder_camera"}


@dataclass(frozen=True)
class RunConfig:
    run: RunParams = RunParams()
    suite: SuiteConfig = SuiteConfig()
    sweep: SweepParams = SweepParams()


def _coerce(tp, value, where: str):
    origin = typing.get_origin(tp)
    if origin is tuple:
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected an array")
        (inner, *rest) = typing.get_args(tp)
        return tuple(_coerce(inner, v, where) for v in value)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        return _coerce(args[0], value, where)
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    return value


def _build(cls, table: dict, section: str, overrides: dict | None = None):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in fields(cls)}
    kwargs = dict(overrides or {})
    for key, value in table.items():
        if key not in names or key in kwargs:
            raise ConfigError(f"unknown key '{section}.{key}'")
        kwargs[key] = _coerce(hints[key], value, f"{section}.{key}")
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from exc


def parse_config(text: str) -> RunConfig:
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"TOML syntax error: {exc}") from exc
    allowed = {"run", "suite", "sweep", *_NESTED}
    for key in doc:
        if key not in allowed:
            raise ConfigError(f"unknown key '{key}'")
        if not isinstance(doc[key], dict):
            raise ConfigError(f"'{key}' must be a table")
    run = _build(RunParams, doc.get("run", {}), "run")
    nested = {_SUITE_FIELD.get(name, name): _build(cls, doc.get(name, {}), name)
              for name, cls in _NESTED.items()}
    nested["master_seed"] = run.master_seed
    suite = _build(SuiteConfig, doc.get("suite", {}), "suite", nested)
    sweep = _build(SweepParams, doc.get("sweep", {}), "sweep")
    return RunConfig(run, suite, sweep)


def load_config(path) -> RunConfig:
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ConfigError(f"{path}: not UTF-8 text") from exc
    return parse_config(text)


def _plain(obj) -> dict:
    out = {}
    for f in fields(obj):
        v = getattr(obj, f.name)
        if dataclasses.is_dataclass(v) or v is None:
            continue
        out[f.name] = list(v) if isinstance(v, tuple) else v
    return out


def config_to_dict(cfg: RunConfig) -> dict:
    suite = cfg.suite
    doc = {"run": _plain(cfg.run), "suite": _plain(suite), "sweep": _plain(cfg.sweep)}
    del doc["suite"]["master_seed"]
    for name in _NESTED:
        doc[name] = _plain(getattr(suite, _SUITE_FIELD.get(name, name)))
    return doc


def dump_config(cfg: RunConfig) -> str:
    return tomli_w.dumps(config_to_dict(cfg))


def with_overrides(cfg: RunConfig, **run_changes) -> RunConfig:
    """Apply CLI flag overrides (``None`` leaves a value untouched)."""
    changes = {k: v for k, v in run_changes.items() if v is not None}
    run = dataclasses.replace(cfg.run, **changes)
    suite = dataclasses.replace(cfg.suite, master_seed=run.master_seed)
    return RunConfig(run, suite, cfg.sweep)
