"""Experiment configuration files and run manifests.

Configurations are INI files read with :mod:`configparser`.  Every key has a
declared type and default; unknown sections or keys, malformed values and
non-positive tolerances are reported as :class:`ConfigError` with the file
line where the offending field sits.
"""
from __future__ import annotations

import configparser
import hashlib
import io
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid configuration; ``where`` names the field and line."""

    def __init__(self, message, where=""):
        super().__init__(f"{where}: {message}" if where else message)
        self.where = where


def _floats(text: str) -> Tuple[float, ...]:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _ints(text: str) -> Tuple[int, ...]:
    return tuple(int(v) for v in text.replace(",", " ").split())


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text: str) -> Optional[float]:
    return None if text.strip().lower() in ("", "none") else float(text)


PARSERS = {"float": float, "int": int, "str": str, "bool": _bool, "floats": _floats,
           "ints": _ints, "opt_float": _opt_float}

# section -> key -> (type, default)
SCHEMA: Dict[str, Dict[str, Tuple[str, Any]]] = {
    "experiment": {"id": ("str", "qei-cylinder"), "seed": ("int", 42)},
    "grid": {"L": ("float", 2 * np.pi), "T": ("float", 5.0), "Nt": ("int", 512), "Nx": ("int", 64)},
    "field": {"masses": ("floats", (1.0,)), "N_max": ("int", 60), "l": ("int", 3)},
    "test_function": {"center_t": ("float", 0.0), "center_x": ("float", np.pi), "radius_t": ("float", 2.0),
                      "radius_x": ("float", 1.5), "scale": ("float", 1.0)},
    "plateau": {"inner_t": ("floats", (-2.1, 2.1)), "outer_t": ("floats", (-4.0, 4.0))},
    "states": {"thermal_count": ("int", 12), "beta_min": ("float", 0.5), "beta_max": ("float", 5.0),
               "coherent_count": ("int", 25), "amplitude_max": ("float", 25.0), "coherent_modes": ("int", 3),
               "max_mode": ("int", 5), "one_particle_count": ("int", 6), "two_particle_count": ("int", 6)},
    "tolerances": {"margin": ("float", 1e-6), "positivity": ("float", 1e-8), "ratio": ("float", 1e-2),
                   "decay": ("float", 0.5)},
    "pointwise": {"point_t": ("float", 0.0), "point_x": ("float", np.pi), "R": ("float", 0.5),
                  "amplitudes": ("floats", (1.0, 5.0, 25.0)), "random_count": ("int", 20),
                  "amplitude_scale": ("float", 1.0), "c_override": ("opt_float", None)},
    "scan": {"v_orders": ("ints", (1, 2, 3)), "line_period": ("float", 200.0), "line_points": ("int", 4096),
             "localizer_radius": ("float", 60.0), "vacuum_points": ("int", 48), "vacuum_modes": ("int", 18),
             "cone_alpha": ("float", 0.3), "s_bounded": ("float", 0.4), "s_growing": ("float", 0.6)},
    "schur": {"pairs": ("int", 100), "min_size": ("int", 16), "max_size": ("int", 64),
              "inject_non_psd": ("bool", False), "ladder": ("floats", (0.8, 0.4, 0.2))},
    "output": {"directory": ("str", "out")},
}


def _render(kind: str, value) -> str:
    if value is None:
        return "none"
    if kind == "floats":
        return ", ".join(repr(float(v)) for v in value)
    if kind == "ints":
        return ", ".join(str(int(v)) for v in value)
    if kind in ("float", "opt_float"):
        return repr(float(value))
    if kind == "bool":
        return "true" if value else "false"
    return str(value)


def _line_of(text: str, section: str, key: Optional[str]) -> int:
    current = None
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            current = s[1:-1].strip()
            if key is None and current == section:
                return i
        elif current == section and key is not None and "=" in s:
            if s.split("=", 1)[0].strip() == key:
                return i
    return 0


@dataclass
class ExperimentConfig:
    """Typed view of an INI configuration (all sections filled with defaults)."""

    values: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    source: str = "<defaults>"

    def __post_init__(self):
        full = {s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()}
        for s, kv in self.values.items():
            full.setdefault(s, {}).update(kv)
        self.values = full

    def __getitem__(self, section: str) -> Dict[str, Any]:
        return self.values[section]

    # -- parsing -----------------------------------------------------------
    @classmethod
    def from_string(cls, text: str, source: str = "<string>") -> "ExperimentConfig":
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        try:
            cp.read_string(text, source=source)
        except configparser.Error as exc:
            raise ConfigError(str(exc).replace("\n", " "), f"{source}") from exc
        values: Dict[str, Dict[str, Any]] = {}
        for section in cp.sections():
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]", f"{source}:{_line_of(text, section, None)}")
            values[section] = {}
            for key, raw in cp[section].items():
                where = f"{source}:{_line_of(text, section, key)} [{section}] {key}"
                if key not in SCHEMA[section]:
                    raise ConfigError("unknown key", where)
                kind = SCHEMA[section][key][0]
                try:
                    values[section][key] = PARSERS[kind](raw)
                except ValueError as exc:
                    raise ConfigError(f"cannot parse {raw!r} as {kind} ({exc})", where) from exc
        cfg = cls(values, source)
        cfg.validate(text)
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        p = Path(path)
        if not p.exists():
            bundled = bundled_config_path(p.name)
            if bundled is None:
                raise ConfigError(f"no such file {path}")
            p = bundled
        return cls.from_string(p.read_text(), str(p))

    def validate(self, text: str = ""):
        def where(s, k):
            return f"{self.source}:{_line_of(text, s, k)} [{s}] {k}"

        for k, v in self["tolerances"].items():
            if not v > 0:
                raise ConfigError("tolerances must be strictly positive", where("tolerances", k))
        g = self["grid"]
        for k in ("Nt", "Nx"):
            if g[k] < 8 or g[k] % 2:
                raise ConfigError("sample counts must be even and >= 8", where("grid", k))
        for k in ("L", "T"):
            if not g[k] > 0:
                raise ConfigError("extent must be positive", where("grid", k))
        if any(not m > 0 for m in self["field"]["masses"]) or not self["field"]["masses"]:
            raise ConfigError("masses must be positive", where("field", "masses"))
        if self["field"]["l"] < 1:
            raise ConfigError("symbol order must be >= 1", where("field", "l"))
        st = self["states"]
        if not 0 < st["beta_min"] <= st["beta_max"]:
            raise ConfigError("need 0 < beta_min <= beta_max", where("states", "beta_min"))
        for k in ("thermal_count", "coherent_count", "one_particle_count", "two_particle_count"):
            if st[k] < 0:
                raise ConfigError("counts must be non-negative", where("states", k))
        for s, k in (("plateau", "inner_t"), ("plateau", "outer_t")):
            if len(self[s][k]) != 2:
                raise ConfigError("expected two numbers", where(s, k))
        if self["pointwise"]["R"] <= 0:
            raise ConfigError("R must be positive", where("pointwise", "R"))
        sc = self["schur"]
        if not 1 <= sc["min_size"] <= sc["max_size"]:
            raise ConfigError("need 1 <= min_size <= max_size", where("schur", "min_size"))

    # -- serialisation -----------------------------------------------------
    def to_string(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        for s, keys in SCHEMA.items():
            cp[s] = {k: _render(kind, self.values[s][k]) for k, (kind, _) in keys.items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def digest(self) -> str:
        return hashlib.sha256(self.to_string().encode()).hexdigest()

    def override(self, seed: Optional[int] = None, refine: int = 1) -> "ExperimentConfig":
        vals = {s: dict(kv) for s, kv in self.values.items()}
        if seed is not None:
            vals["experiment"]["seed"] = int(seed)
        if refine != 1:
            if refine < 1:
                raise ConfigError("refine factor must be >= 1")
            vals["grid"]["Nt"] *= refine
            vals["grid"]["Nx"] *= refine
            vals["field"]["N_max"] *= refine
        return ExperimentConfig(vals, self.source)


def bundled_config_path(name: str) -> Optional[Path]:
    base = resources.files("qeilab") / "configs"
    p = Path(str(base / name))
    return p if p.exists() else None


# ---------------------------------------------------------------------------
# manifests


@dataclass
class RunManifest:
    config_hash: str
    version: str
    command: str
    seed: int
    verdicts: Dict[str, bool]
    files: List[str]
    started: str = ""
    finished: str = ""

    def to_json(self) -> str:
        d = dict(schema_version=SCHEMA_VERSION, config_hash=self.config_hash, version=self.version,
                 command=self.command, seed=self.seed, verdicts=self.verdicts, files=self.files,
                 started=self.started, finished=self.finished)
        return json.dumps(d, indent=2, sort_keys=True)
