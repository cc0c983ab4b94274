"""Experiment configuration: ``key = value [unit]`` text files.

Every dimensional key carries an explicit unit suffix, checked against the
key's dimension and converted to the canonical unit listed in ``UNITS``.
Unknown keys, malformed values and unit mismatches raise
:class:`ConfigError` naming the line and key.
"""

from __future__ import annotations

import hashlib
import math
import os
from dataclasses import dataclass, field

import numpy as np

SCHEMA_VERSION = 1

#: dimension -> {unit: factor to the canonical (first) unit}
UNITS = {
    "length": {"um": 1.0, "nm": 1e-3, "mm": 1e3},
    "time": {"us": 1.0, "ns": 1e-3, "ms": 1e3},
    "temperature": {"mK": 1.0, "uK": 1e-3, "K": 1e3},
    "c3": {"GHz*um^3": 1.0, "MHz*um^3": 1e-3},
    "rate": {"1/ms": 1.0, "1/us": 1e3, "1/s": 1e-3},
    "angle": {"rad": 1.0, "deg": math.pi / 180.0},
}
CANONICAL = {dim: next(iter(table)) for dim, table in UNITS.items()}


class ConfigError(ValueError):
    def __init__(self, message, key=None, line=None, path=None):
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        super().__init__(f"{': '.join(where)}: {message}" if where else message)
        self.key = key
        self.line = line


@dataclass(frozen=True)
class Field:
    kind: str  # float, int, str, bool, vec
    default: object = None
    dim: str | None = None
    size: int | None = None  # vector length (None: any)
    choices: tuple | None = None
    check: object = None  # callable(value) -> error message or None
    required: bool = False


def _positive(v):
    return None if np.all(np.asarray(v) > 0) else "must be positive"


def _nonneg(v):
    return None if np.all(np.asarray(v) >= 0) else "must be non-negative"


def _unit_dir(v):
    return None if v in (1, -1) else "must be 1 or -1"


def _nonzero_vec(v):
    return None if np.hypot(*v) > 0 else "must be a non-zero vector"


def _range(v):
    return None if (v[2] > 0 and v[1] >= v[0]) else "needs start <= stop and step > 0"


def _pairs(v):
    return None if len(v) % 2 == 0 else "needs an even number of entries (r, d pairs)"


SCHEMA: dict[str, Field] = {
    "schema_version": Field("int", SCHEMA_VERSION, required=True),
    "name": Field("str", ""),
    "physics.c3": Field("float", 2.39, "c3", check=_positive),
    "physics.species": Field("str", "Rb87", choices=("Rb87",)),
    "physics.quantization_axis": Field("vec", (0.0, 1.0), size=2, check=_nonzero_vec),
    "physics.r_min": Field("float", 1.0, "length", check=_positive),
    "traps.mobile_depth": Field("float", 10.0, "temperature", check=_positive),
    "traps.static_depth": Field("float", 4.0, "temperature", check=_positive),
    "traps.sigma": Field("float", 2.0, "length", check=_positive),
    "geometry.start": Field("vec", (0.0, 0.0), "length", size=2),
    "geometry.partner": Field("vec", None, "length", size=2, required=True),
    "horizon.T": Field("float", 30.0, "time", check=_positive),
    "horizon.dt": Field("float", 1e-3, "time", check=_positive),
    "horizon.samples": Field("int", 300, check=lambda v: None if v >= 2 else "must be >= 2"),
    "initial.state": Field("str", "dd", choices=("dd", "pf1", "pf2", "pf3", "cyclic")),
    "weights.chi_r": Field("float", 1e3, check=_nonneg),
    "weights.chi_p": Field("float", 10.0, check=_nonneg),
    "weights.chi_psi": Field("float", 1.0, check=_nonneg),
    "weights.chi_dy": Field("float", 1.0, check=_nonneg),
    "weights.nu_x": Field("float", 1e-4, check=_positive),
    "weights.nu_y": Field("float", 1e-4, check=_positive),
    "objective.phase": Field("str", "dynamical", choices=("dynamical", "geometric")),
    "objective.pairing": Field("str", "momentum", choices=("momentum", "position")),
    "objective.separability": Field("bool", True),
    "init.mode": Field("str", "tracking", choices=("tracking", "tweezer", "file")),
    "init.center": Field("vec", None, "length", size=2),
    "init.semi_axes": Field("vec", (1.0, 1.0), "length", size=2, check=_positive),
    "init.orientation": Field("float", 0.0, "angle"),
    "init.direction": Field("int", 1, check=_unit_dir),
    "init.profile": Field("str", "smooth", choices=("smooth", "uniform")),
    "init.control_file": Field("str", ""),
    "optimizer.method": Field("str", "gd", choices=("gd", "nesterov", "lbfgs")),
    "optimizer.max_iter": Field("int", 200, check=_nonneg),
    "optimizer.tol": Field("float", 1e-6, check=_nonneg),
    "optimizer.step0": Field("float", 1.0, check=_positive),
    "optimizer.armijo_c": Field("float", 1e-4, check=_positive),
    "optimizer.backtrack": Field("float", 0.5,
                                 check=lambda v: None if 0 < v < 1 else "must lie in (0, 1)"),
    "optimizer.max_backtracks": Field("int", 30, check=_nonneg),
    "optimizer.momentum": Field("float", 0.9, check=_nonneg),
    "optimizer.memory": Field("int", 10, check=_positive),
    "optimizer.rounds": Field("int", 1, check=_positive),
    "optimizer.reselect_every": Field("int", 0, check=_nonneg),
    "scan.kind": Field("str", "circle", choices=("circle", "ellipse")),
    "scan.r": Field("vec", (4.0, 10.0, 0.5), "length", size=3, check=_range),
    "scan.d": Field("vec", (8.0, 16.0, 0.5), "length", size=3, check=_range),
    "scan.extra": Field("vec", (), "length", check=_pairs),
    "scan.direction": Field("int", 1, check=_unit_dir),
    "scan.dt": Field("float", 2e-3, "time", check=_positive),
    "scan.workers": Field("int", 1, check=_positive),
    "noise.temperature": Field("float", 0.1, "temperature", check=_nonneg),
    "noise.lambda": Field("float", 0.05, "rate", check=_nonneg),
    "noise.seed": Field("int", 0, check=lambda v: None if 0 <= v < 2**64 else "must fit in 64 bits"),
    "noise.realizations": Field("int", 200, check=_positive),
    "noise.workers": Field("int", 1, check=_positive),
    "noise.escape_sigmas": Field("float", 3.0, check=_positive),
    "output.dir": Field("str", "results"),
}

_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}
_ALL_UNITS = {u: dim for dim, table in UNITS.items() for u in table}


def _split_unit(text: str):
    parts = text.rsplit(None, 1)
    if len(parts) == 2:
        try:
            float(parts[1].rstrip(","))
        except ValueError:
            return parts[0].strip(), parts[1]
    elif len(parts) == 1:
        try:
            float(parts[0])
        except ValueError:
            if parts[0] in _ALL_UNITS:
                return "", parts[0]
    return text.strip(), None


def _parse_value(key: str, spec: Field, raw: str, line=None, path=None):
    def fail(msg):
        raise ConfigError(msg, key, line, path)

    if spec.kind in ("str", "bool"):
        text, unit = raw.strip(), None
    else:
        text, unit = _split_unit(raw)
    if spec.dim is None and unit is not None:
        fail(f"does not take a unit (got '{unit}')")
    if spec.dim is not None:
        if unit is None and not (spec.kind == "vec" and text == ""):
            fail(f"needs a {spec.dim} unit, one of {sorted(UNITS[spec.dim])}")
        if unit is not None and unit not in UNITS[spec.dim]:
            fail(f"unit '{unit}' is not a {spec.dim} unit; use one of {sorted(UNITS[spec.dim])}")
    factor = UNITS[spec.dim][unit] if unit is not None else 1.0
    try:
        if spec.kind == "float":
            value = float(text) * factor
            if not math.isfinite(value):
                fail("must be finite")
        elif spec.kind == "int":
            value = int(text)
        elif spec.kind == "bool":
            low = text.lower()
            if low in _TRUE:
                value = True
            elif low in _FALSE:
                value = False
            else:
                fail(f"expected a boolean, got '{text}'")
        elif spec.kind == "vec":
            items = [s for s in text.replace(",", " ").split()]
            value = tuple(float(s) * factor for s in items)
            if spec.size is not None and len(value) != spec.size:
                fail(f"expected {spec.size} comma-separated numbers, got {len(value)}")
            if not all(math.isfinite(v) for v in value):
                fail("must be finite")
        else:
            value = text
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        fail(f"cannot parse '{text}' as {spec.kind}")
    if spec.choices is not None and value not in spec.choices:
        fail(f"must be one of {list(spec.choices)}, got '{value}'")
    if spec.check is not None:
        msg = spec.check(value)
        if msg:
            fail(msg)
    return value


def _format_value(spec: Field, value) -> str:
    unit = f" {CANONICAL[spec.dim]}" if spec.dim else ""
    if spec.kind == "float":
        return f"{float(value)!r}{unit}"
    if spec.kind == "vec":
        return ", ".join(repr(float(v)) for v in value) + unit
    if spec.kind == "bool":
        return "true" if value else "false"
    return str(value)


@dataclass
class ExperimentConfig:
    """Validated configuration in canonical units (µm, µs, mK, GHz·µm³,
    1/ms, rad); :mod:`aaphase.experiment` turns it into physics objects."""

    values: dict
    source: str | None = None
    base_dir: str = field(default=".")

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    def with_updates(self, **updates) -> "ExperimentConfig":
        """Copy with ``section__key=value`` overrides, re-validated."""
        vals = dict(self.values)
        for k, v in updates.items():
            key = k.replace("__", ".")
            if key not in SCHEMA:
                raise ConfigError("unknown key", key)
            vals[key] = v
        cfg = ExperimentConfig(vals, self.source, self.base_dir)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        for key, spec in SCHEMA.items():
            v = self.values.get(key)
            if v is None:
                if spec.required or (key == "init.center" and
                                     self.values.get("init.mode") != "file"):
                    raise ConfigError("required key missing", key, path=self.source)
                continue
            if spec.check is not None and (msg := spec.check(v)):
                raise ConfigError(msg, key, path=self.source)
        if self.values["schema_version"] != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema version (expected {SCHEMA_VERSION})",
                              "schema_version", path=self.source)
        if self.values["init.mode"] == "file":
            p = self.resolve(self.values["init.control_file"])
            if not self.values["init.control_file"] or not os.path.isfile(p):
                raise ConfigError(f"control file '{p}' not found", "init.control_file",
                                  path=self.source)
        sep = np.subtract(self.values["geometry.partner"], self.values["geometry.start"])
        if np.hypot(*sep) < self.values["physics.r_min"]:
            raise ConfigError("start and partner positions closer than the guard radius",
                              "geometry.partner", path=self.source)

    def resolve(self, path: str) -> str:
        return path if os.path.isabs(path) else os.path.join(self.base_dir, path)

    def serialize(self) -> str:
        lines = []
        for key, spec in SCHEMA.items():
            v = self.values.get(key)
            if v is None:
                continue
            lines.append(f"{key} = {_format_value(spec, v)}")
        return "\n".join(lines) + "\n"

    def hash(self) -> str:
        """SHA-256 of the canonical serialization."""
        return hashlib.sha256(self.serialize().encode("utf-8")).hexdigest()


def parse_config(text: str, source: str | None = None, base_dir: str = ".") -> ExperimentConfig:
    values = {k: spec.default for k, spec in SCHEMA.items()}
    seen = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", line=lineno, path=source)
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError("unknown key", key, lineno, source)
        if key in seen:
            raise ConfigError(f"duplicate key (first set on line {seen[key]})", key, lineno, source)
        seen[key] = lineno
        values[key] = _parse_value(key, SCHEMA[key], val, lineno, source)
    if "schema_version" not in seen:
        raise ConfigError("required key missing", "schema_version", path=source)
    cfg = ExperimentConfig(values, source, base_dir)
    cfg.validate()
    return cfg


def load_config(path) -> ExperimentConfig:
    path = os.fspath(path)
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_config(text, path, os.path.dirname(os.path.abspath(path)))


def bundled_config(name: str) -> str:
    """Path of a configuration shipped with the package (``p1`` or ``p2``)."""
    from importlib import resources

    return str(resources.files("aaphase") / "configs" / f"{name}.cfg")
