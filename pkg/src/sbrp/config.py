"""Run configuration: flat ``section.key = value`` files plus overrides.

Example file::

    # overcrowding
    bus.capacity = 48
    bus.alpha = 0.05
    optout.a = 2.0
    sweep.tau_grid = [0, 500, 1000]

Values are JSON literals when they parse as JSON and plain strings
otherwise.  Unknown keys are rejected.  Every value is re-validated by the
owning module when the solver objects are built.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

from .errors import ConfigError, SBRPError
from .optout import OptOutModel, calibrate
from .overbooking import ChanceParams
from .routing import RoutingOptions, TravelParams
from .simulation import DEFAULT_TAU_GRID, CostParams, Settings

DEFAULTS = {
    "instance.walk_limit": 0.5,
    "instance.stop_capacity": 20,
    "instance.stop_spacing": None,  # None: walk_limit / sqrt(2)
    "instance.side": 3.0,
    "bus.capacity": 48,
    "bus.alpha": 0.05,
    "bus.v_plus": None,  # None: ceil(sqrt(capacity)) + 1
    "bus.dt_max": 40.0,
    "bus.speed_mph": 20.0,
    "bus.dwell_fixed": 0.5,
    "bus.board_per_student": 0.1,
    "optout.a": None,
    "optout.b": None,
    "optout.c": None,
    "optout.d_close": None,
    "optout.p_high": None,
    "optout.tau_high": None,
    "optout.d_far": None,
    "optout.p_low": None,
    "optout.tau_low": None,
    "optout.epsilon0": None,
    "ridership.mean": 0.3,
    "ridership.g_kind": "identity",
    "cost.bus_cost": 85_000.0,
    "cost.time_cost": 0.0,
    "sweep.tau_grid": list(DEFAULT_TAU_GRID),
    "sweep.replicas": 100,
    "sweep.base_seed": 0,
    "sweep.threads": 1,
    "solver.allocation_mode": "auto",
    "solver.routing_mode": "auto",
    "solver.swap_rounds": 1,
}

_ANCHORS = ("d_close", "p_high", "tau_high", "d_far", "p_low", "tau_low", "epsilon0")
_INTS = {"instance.stop_capacity", "bus.capacity", "bus.v_plus", "sweep.replicas", "sweep.base_seed",
         "sweep.threads", "solver.swap_rounds"}
_STRS = {"ridership.g_kind", "solver.allocation_mode", "solver.routing_mode"}
# keys that change how fast, not what, gets computed
_NOT_HASHED = {"sweep.threads"}


def _coerce(key, value):
    if value is None:
        return None
    if key in _STRS:
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    if key == "sweep.tau_grid":
        if isinstance(value, str):
            value = [v for v in value.replace(",", " ").split()]
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key}: expected a list of numbers")
        return [_as_float(key, v) for v in value]
    if key in _INTS:
        f = _as_float(key, value)
        if not f.is_integer():
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return int(f)
    return _as_float(key, value)


def _as_float(key, v):
    if isinstance(v, bool):
        raise ConfigError(f"{key}: expected a number, got {v!r}")
    try:
        f = float(v)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected a number, got {v!r}") from None
    if not math.isfinite(f):
        raise ConfigError(f"{key}: value must be finite")
    return f


def parse_value(text):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_config_text(text, source="<config>"):
    """{dotted key: raw value} from config file text."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'section.key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = parse_value(value)
    return out


@dataclass(frozen=True)
class RunConfig:
    values: dict

    @classmethod
    def load(cls, path=None, overrides=None):
        raw = {}
        if path is not None:
            with open(path) as fh:
                raw.update(parse_config_text(fh.read(), str(path)))
        for key, value in (overrides or {}).items():
            if key not in DEFAULTS:
                raise ConfigError(f"unknown key {key!r}")
            if value is not None:
                raw[key] = value
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw):
        unknown = sorted(set(raw) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown keys: {unknown}")
        vals = dict(DEFAULTS)
        for k, v in raw.items():
            vals[k] = _coerce(k, v)
        cfg = cls(vals)
        cfg.validate()
        return cfg

    def __getitem__(self, key):
        return self.values[key]

    def validate(self):
        """Build every derived object once so domain errors surface at load."""
        v = self.values
        if not v["instance.walk_limit"] > 0:
            raise ConfigError("instance.walk_limit must be > 0")
        if v["instance.stop_capacity"] < 1:
            raise ConfigError("instance.stop_capacity must be >= 1")
        if v["instance.stop_spacing"] is not None and not v["instance.stop_spacing"] > 0:
            raise ConfigError("instance.stop_spacing must be > 0")
        if not v["instance.side"] > 0:
            raise ConfigError("instance.side must be > 0")
        if not 0.0 < v["ridership.mean"] < 1.0:
            raise ConfigError("ridership.mean must lie in (0, 1)")
        if v["ridership.g_kind"] not in ("identity", "log1p"):
            raise ConfigError("ridership.g_kind must be 'identity' or 'log1p'")
        if v["sweep.replicas"] < 1:
            raise ConfigError("sweep.replicas must be >= 1")
        if v["sweep.threads"] < 1:
            raise ConfigError("sweep.threads must be >= 1")
        if v["sweep.base_seed"] < 0:
            raise ConfigError("sweep.base_seed must be >= 0")
        grid = v["sweep.tau_grid"]
        if not grid or any(b <= a for a, b in zip(grid, grid[1:])) or grid[0] < 0:
            raise ConfigError("sweep.tau_grid must be non-empty, non-negative and strictly ascending")
        for key in ("solver.allocation_mode", "solver.routing_mode"):
            if v[key] not in ("auto", "exact", "heuristic"):
                raise ConfigError(f"{key} must be auto, exact or heuristic")
        if v["solver.swap_rounds"] < 0:
            raise ConfigError("solver.swap_rounds must be >= 0")
        try:
            self.settings()
            self.optout_model()
        except ConfigError:
            raise
        except (ValueError, SBRPError) as exc:
            raise ConfigError(str(exc)) from exc

    def chance_params(self):
        v = self.values
        vp = v["bus.v_plus"]
        return ChanceParams(v["bus.capacity"], v["bus.alpha"], -1 if vp is None else vp)

    def settings(self):
        v = self.values
        if not v["bus.dt_max"] > 0:
            raise ConfigError("bus.dt_max must be > 0")
        return Settings(
            chance=self.chance_params(),
            travel=TravelParams(v["bus.speed_mph"], v["bus.dwell_fixed"], v["bus.board_per_student"]),
            dt_max=v["bus.dt_max"],
            cost=CostParams(v["cost.bus_cost"], v["cost.time_cost"]),
            allocation_mode=v["solver.allocation_mode"],
            swap_rounds=v["solver.swap_rounds"],
            routing_mode=v["solver.routing_mode"],
            routing=RoutingOptions(),
        )

    def optout_model(self):
        v = self.values
        direct = [v[f"optout.{k}"] for k in "abc"]
        anchors = [v[f"optout.{k}"] for k in _ANCHORS]
        if any(a is not None for a in anchors):
            if any(d is not None for d in direct):
                raise ConfigError("give either optout.a/b/c or the calibration anchors, not both")
            if any(a is None for a in anchors):
                missing = [k for k, a in zip(_ANCHORS, anchors) if a is None]
                raise ConfigError(f"incomplete calibration anchors, missing {missing}")
            return calibrate(*anchors)
        base = OptOutModel()
        a, b, c = (base.a if direct[0] is None else direct[0], base.b if direct[1] is None else direct[1],
                   base.c if direct[2] is None else direct[2])
        return OptOutModel(a, b, c)

    def normalized(self):
        """Canonical dict of every output-relevant setting (resolved defaults)."""
        v = {k: val for k, val in self.values.items() if k not in _NOT_HASHED and not k.startswith("optout.")}
        m = self.optout_model()
        v["optout.a"], v["optout.b"], v["optout.c"] = m.a, m.b, m.c
        v["bus.v_plus"] = self.chance_params().v_plus
        if v["instance.stop_spacing"] is None:
            v["instance.stop_spacing"] = v["instance.walk_limit"] / math.sqrt(2.0)
        return v

    def config_hash(self):
        blob = json.dumps(self.normalized(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()
