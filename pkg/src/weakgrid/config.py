"""JSON run-configuration files.

A document mirrors the Scenario structure section by section; every key maps
to exactly one dataclass field, unknown keys are rejected with the offending
dotted path, and all physical values go through the dataclass validators
before a run starts.  A ``preset`` key pulls in one of the shipped cases as
the baseline and the remaining sections override it.

Example::

    {
      "preset": "case_b",
      "label": "case_b_slow_fault",
      "sync": {"mode": "sg", "delay": 0.01, "compensation": true},
      "fault": {"duration_cycles": 5},
      "timing": {"t_end": 3.0}
    }
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

from .controller import ControlParams
from .frames import TAU, PerUnitBase
from .plant import FaultWindow, NetworkParams
from .presets import case_a, get_preset, preset_names
from .scenario import Scenario
from .synclink import SyncMode


class ConfigInvalid(ValueError):
    """A configuration document or value failed validation."""


_BASE_KEYS = ("v_base_sg", "v_base_vsc", "s_base", "f_nominal", "omega_nominal")
_NETWORK_KEYS = tuple(f.name for f in dataclasses.fields(NetworkParams))
_CONTROL_KEYS = tuple(f.name for f in dataclasses.fields(ControlParams))
_FAULT_KEYS = tuple(f.name for f in dataclasses.fields(FaultWindow))
_SYNC_KEYS = ("mode", "delay", "compensation", "angle_offset")
_TIMING_KEYS = ("t_end", "dt_plant")
_TOP_KEYS = ("preset", "label", "base", "network", "control", "sync", "fault", "timing")


def _require_mapping(obj, path: str) -> dict:
    if not isinstance(obj, dict):
        raise ConfigInvalid(f"section {path!r} must be an object")
    return obj

def _check_keys(section: dict, allowed, path: str) -> None:
    for key in section:
        if key not in allowed:
            raise ConfigInvalid(f"unknown key {path}.{key}")


def _number(section: dict, key: str, path: str):
    value = section[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigInvalid(f"{path}.{key} must be a number")
    return float(value)


def scenario_to_dict(s: Scenario) -> dict:
    """Plain-data mirror of a scenario (config-file layout)."""
    return {
        "label": s.label,
        "base": {
            "v_base_sg": s.base.v_base_sg,
            "v_base_vsc": s.base.v_base_vsc,
            "s_base": s.base.s_base,
            "f_nominal": s.base.f_nominal,
            "omega_nominal": s.base.omega_nominal,
        },
        "network": dataclasses.asdict(s.network),
        "control": dataclasses.asdict(s.control),
        "sync": {
            "mode": s.sync_mode.value,
            "delay": s.delay,
            "compensation": s.compensation_enabled,
            "angle_offset": s.sync_angle_offset,
        },
        "fault": dataclasses.asdict(s.fault),
        "timing": {"t_end": s.t_end, "dt_plant": s.dt_plant},
    }


def scenario_from_dict(doc: dict) -> Scenario:
    """Build and validate a scenario from a config document."""
    doc = _require_mapping(doc, "$")
    _check_keys(doc, _TOP_KEYS, "$")

    if "preset" in doc:
        name = doc["preset"]
        if name not in preset_names():
            raise ConfigInvalid(f"unknown preset {name!r}; choose from {preset_names()}")
        merged = scenario_to_dict(get_preset(name))
    else:
        merged = scenario_to_dict(_DEFAULT)

    for section in ("base", "network", "control", "sync", "fault", "timing"):
        if section in doc:
            sub = _require_mapping(doc[section], section)
            allowed = {
                "base": _BASE_KEYS,
                "network": _NETWORK_KEYS,
                "control": _CONTROL_KEYS,
                "sync": _SYNC_KEYS,
                "fault": _FAULT_KEYS,
                "timing": _TIMING_KEYS,
            }[section]
            _check_keys(sub, allowed, section)
            merged[section].update(sub)
    if "label" in doc:
        if not isinstance(doc["label"], str):
            raise ConfigInvalid("label must be a string")
        merged["label"] = doc["label"]

    try:
        base_sec = merged["base"]
        if "omega_nominal" not in base_sec or base_sec["omega_nominal"] is None:
            base_sec["omega_nominal"] = TAU * float(base_sec["f_nominal"])
        base = PerUnitBase(**{k: float(base_sec[k]) for k in _BASE_KEYS})
        network = NetworkParams(**{k: float(merged["network"][k]) for k in _NETWORK_KEYS})
        control = ControlParams(**{k: float(merged["control"][k]) for k in _CONTROL_KEYS})
        sync_sec = merged["sync"]
        try:
            mode = SyncMode(sync_sec["mode"])
        except ValueError:
            raise ConfigInvalid(
                f"sync.mode must be one of {[m.value for m in SyncMode]}, got {sync_sec['mode']!r}"
            )
        fault = FaultWindow(**{k: float(merged["fault"][k]) for k in _FAULT_KEYS})
        return Scenario(
            base=base,
            network=network,
            control=control,
            sync_mode=mode,
            fault=fault,
            delay=float(sync_sec["delay"]),
            compensation_enabled=bool(sync_sec["compensation"]),
            t_end=float(merged["timing"]["t_end"]),
            dt_plant=float(merged["timing"]["dt_plant"]),
            label=str(merged["label"]),
            sync_angle_offset=float(sync_sec.get("angle_offset", 0.0)),
        )
    except ConfigInvalid:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigInvalid(str(exc)) from exc


def load_config(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigInvalid(f"cannot read config {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"config {path} is not valid JSON: {exc}") from exc
    return scenario_from_dict(doc)


def dump_config(s: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(s), indent=2) + "\n")


# baseline for documents that name no preset: the small-impedance network
_DEFAULT = case_a()
