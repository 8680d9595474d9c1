"""Run configuration: strict TOML schema, validation and canonical hashing.

Rates are given in units of gamma_p by default (``units = "gamma_p"``), in
which case the system is specified by chi, delta_chi and the detunings and
the cavity coupling is solved for. ``units = "absolute"`` takes the raw
cavity parameters instead.
"""
from __future__ import annotations

import copy
import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import tomli
import tomli_w

from .harness import INITIAL_STATES, SWEEP_AXES, EnsembleConfig, DEFAULT_T_GRID
from .model import SystemParams
from .signals import LockinConfig
from .sme import SCHEMES

CRITERIA = ("optimal", "dc", "dc_weighted", "lockin")


class ConfigError(ValueError):
    """Invalid configuration document; the message names the offending key."""


_SYSTEM_COMMON = {
    "units": "gamma_p",
    "Delta_q": 0.0,
    "Delta_c": 0.0,
    "delta_omega_q": 0.0,
    "gamma_par": 0.0,
    "tau_phase": "inf",
    "eta": 1.0,
    "theta": -math.pi / 2,
}
_SYSTEM_RATES = {"chi": 0.0, "delta_chi": 0.0, "kappa": 5000.0, "kappa1_fraction": 1e-6}
_SYSTEM_ABSOLUTE = {"kappa1": None, "kappa2": None, "g": 50.0, "delta_g": 0.0, "beta": 0.0}

SCHEMA = {
    "system": {**_SYSTEM_COMMON, **_SYSTEM_RATES, **_SYSTEM_ABSOLUTE},
    "integrator": {"dt": 0.0, "t_final": 10.0, "record_stride": 100, "drift_step": "exact",
                   "scheme": "kraus"},
    "ensemble": {"n_trajectories": 2000, "initial": "eg", "seed": 0, "threads": 1,
                 "chunk_size": 500},
    "analysis": {
        "T_grid": [], "targets": [0.5], "criteria": ["optimal", "dc", "dc_weighted"],
        "lockin": "auto", "Omega_l": 0.0, "tau_l": 0.0,
        "weighted_center": 0.5, "spectrum": False,
        "delta_min": 0.0, "delta_max": 0.0, "n_delta": 0,
        "sweep_axis": "", "sweep_values": [],
        "histogram_times": [1.0, 2.0, 5.0, 10.0], "histogram_bins": 20,
    },
    "output": {"dir": "", "jsonl": True},
}


def _merge_defaults(doc: dict) -> dict:
    out = {}
    for section, keys in SCHEMA.items():
        given = doc.get(section, {})
        if not isinstance(given, dict):
            raise ConfigError(f"[{section}] must be a table")
        out[section] = {k: copy.deepcopy(v) for k, v in keys.items() if v is not None}
        out[section].update(given)
    return out


def _check_keys(doc: dict) -> None:
    for section, body in doc.items():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        if not isinstance(body, dict):
            raise ConfigError(f"[{section}] must be a table")
        for key in body:
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key '{key}' in [{section}]")
    units = doc.get("system", {}).get("units", "gamma_p")
    if units not in ("gamma_p", "absolute"):
        raise ConfigError(f"[system] units must be 'gamma_p' or 'absolute', got {units!r}")
    foreign = _SYSTEM_ABSOLUTE if units == "gamma_p" else _SYSTEM_RATES
    for key in doc.get("system", {}):
        if key in foreign:
            raise ConfigError(f"key '{key}' in [system] is not valid with units = {units!r}")


def _number(section, key, value, *, positive=False, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        if key == "tau_phase" and value == "inf":
            return math.inf
        raise ConfigError(f"[{section}] {key} must be a number")
    if integer and (not float(value).is_integer()):
        raise ConfigError(f"[{section}] {key} must be an integer")
    if positive and not value > 0:
        raise ConfigError(f"[{section}] {key} must be positive")
    return int(value) if integer else float(value)


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration; ``doc`` holds the full document with defaults."""

    doc: dict

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        _check_keys(doc)
        full = _merge_defaults(doc)
        units = full["system"]["units"]
        full["system"] = {k: v for k, v in full["system"].items()
                          if k not in (_SYSTEM_ABSOLUTE if units == "gamma_p" else _SYSTEM_RATES)}
        cfg = cls(full)
        cfg.validate()
        return cfg

    @classmethod
    def from_toml(cls, text: str) -> "RunConfig":
        try:
            doc = tomli.loads(text)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"malformed TOML: {exc}") from None
        return cls.from_dict(doc)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_toml(text)

    def to_toml(self) -> str:
        return tomli_w.dumps(self.doc)

    def config_hash(self) -> str:
        canonical = tomli_w.dumps(_sorted(self.doc))
        return hashlib.sha256(canonical.encode()).hexdigest()

    def override(self, section: str, **values) -> "RunConfig":
        doc = copy.deepcopy(self.doc)
        doc[section].update(values)
        return RunConfig.from_dict(doc)

    def __getitem__(self, section):
        return self.doc[section]

    # validation and construction

    def validate(self) -> None:
        self.system_params()
        it = self.doc["integrator"]
        _number("integrator", "t_final", it["t_final"], positive=True)
        if it["dt"] != 0:
            _number("integrator", "dt", it["dt"], positive=True)
        _number("integrator", "record_stride", it["record_stride"], positive=True, integer=True)
        if it["drift_step"] not in ("exact", "euler"):
            raise ConfigError("[integrator] drift_step must be 'exact' or 'euler'")
        if it["scheme"] not in SCHEMES:
            raise ConfigError(f"[integrator] scheme must be one of {SCHEMES}")
        en = self.doc["ensemble"]
        _number("ensemble", "n_trajectories", en["n_trajectories"], integer=True)
        if en["n_trajectories"] < 0:
            raise ConfigError("[ensemble] n_trajectories must be non-negative")
        _number("ensemble", "seed", en["seed"], integer=True)
        _number("ensemble", "threads", en["threads"], positive=True, integer=True)
        _number("ensemble", "chunk_size", en["chunk_size"], positive=True, integer=True)
        init = en["initial"]
        if isinstance(init, str):
            if init not in INITIAL_STATES:
                raise ConfigError(f"[ensemble] initial must be one of {INITIAL_STATES} "
                                  "or a list of 4 real amplitudes")
        elif not (isinstance(init, list) and len(init) == 4 and any(init)):
            raise ConfigError("[ensemble] initial amplitudes must be 4 numbers, not all zero")
        an = self.doc["analysis"]
        for key in ("T_grid", "targets", "sweep_values", "histogram_times"):
            if not isinstance(an[key], list):
                raise ConfigError(f"[analysis] {key} must be a list")
            for v in an[key]:
                _number("analysis", key, v, positive=True)
        for p in an["targets"]:
            if p > 1:
                raise ConfigError(f"[analysis] targets: success probability {p} exceeds 1")
        for c in an["criteria"]:
            if c not in CRITERIA:
                raise ConfigError(f"[analysis] unknown criterion {c!r}")
        if an["lockin"] not in ("auto", "off", "manual"):
            raise ConfigError("[analysis] lockin must be 'auto', 'off' or 'manual'")
        if an["lockin"] == "manual":
            _number("analysis", "Omega_l", an["Omega_l"])
            _number("analysis", "tau_l", an["tau_l"], positive=True)
        if an["sweep_axis"] and an["sweep_axis"] not in SWEEP_AXES:
            raise ConfigError(f"[analysis] sweep_axis must be one of {SWEEP_AXES}")
        _number("analysis", "histogram_bins", an["histogram_bins"], positive=True, integer=True)

    def system_params(self) -> SystemParams:
        s = self.doc["system"]
        vals = {k: _number("system", k, v) for k, v in s.items() if k != "units"
                and v is not None}
        try:
            if s["units"] == "gamma_p":
                return SystemParams.from_rates(**vals)
            for key in ("kappa1", "kappa2"):
                if key not in vals:
                    raise ConfigError(f"[system] {key} is required with units = 'absolute'")
            return SystemParams(**vals)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[system] {exc}") from None

    def initial(self):
        init = self.doc["ensemble"]["initial"]
        return init if isinstance(init, str) else np.asarray(init, dtype=float)

    def lockin_config(self):
        an = self.doc["analysis"]
        if an["lockin"] == "manual":
            return LockinConfig(Omega_l=float(an["Omega_l"]), tau_l=float(an["tau_l"]))
        return an["lockin"]

    def ensemble_config(self, lockin=None) -> EnsembleConfig:
        it, en, an = self.doc["integrator"], self.doc["ensemble"], self.doc["analysis"]
        if en["n_trajectories"] < 2:
            raise ConfigError("[ensemble] n_trajectories must be at least 2 to run an ensemble")
        return EnsembleConfig(
            params=self.system_params(), n_trajectories=int(en["n_trajectories"]),
            initial=self.initial(), t_final=float(it["t_final"]),
            dt=float(it["dt"]) or None, record_stride=int(it["record_stride"]),
            seed=int(en["seed"]), T_grid=tuple(float(t) for t in an["T_grid"]),
            targets=tuple(float(p) for p in an["targets"]), lockin=lockin,
            weighted_center=float(an["weighted_center"]), spectrum=bool(an["spectrum"]),
            chunk_size=int(en["chunk_size"]), threads=int(en["threads"]),
            drift_step=it["drift_step"], scheme=it["scheme"])

    def sweep_T_grid(self) -> tuple:
        return tuple(self.doc["analysis"]["T_grid"]) or DEFAULT_T_GRID


def _sorted(d):
    if isinstance(d, dict):
        return {k: _sorted(d[k]) for k in sorted(d)}
    return d
