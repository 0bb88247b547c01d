"""Experiment configuration: loading, schema validation, defaults, hashing."""
from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path
from typing import Any

import jsonschema
import yaml

from .distributions import ArrivalModel, DistributionSpec
from .errors import ConfigurationError
from .policy import PeriodicPolicy, build_cpk, explicit_policy, random_q_policy
from .simulator import SimPlan, SystemConfig

SCENARIOS = ("simulate", "sweep", "lower-bound", "analytic", "optimize", "verify-structure", "monotonicity")

_number = {"type": "number"}
_pos_int = {"type": "integer", "minimum": 1}
_pvec = {"type": "array", "items": _pos_int, "minItems": 1}
_dist = {
    "type": "object",
    "required": ["kind"],
    "properties": {"kind": {"enum": ["deterministic", "exponential", "erlang", "hyperexponential2", "uniform"]}},
    "additionalProperties": _number,
}
_fraction = {"oneOf": [{"type": "number"}, {"type": "string"}]}
_policy = {
    "type": "object",
    "properties": {
        "name": {"type": "string"},
        "type_sequence": {"type": "array", "items": _pos_int, "minItems": 1},
        "k": _pos_int,
        "q": {"type": "array", "items": {"type": "array", "items": _fraction, "minItems": 1}, "minItems": 1},
        "seed": {"type": "integer"},
        "assignment": {
            "type": "array",
            "items": {"type": "array", "items": _pos_int, "minItems": 2, "maxItems": 2},
            "minItems": 1,
        },
    },
    "oneOf": [
        {"required": ["type_sequence"]},
        {"required": ["q"]},
        {"required": ["assignment"]},
    ],
    "additionalProperties": False,
}

SCHEMA = {
    "type": "object",
    "required": ["scenario"],
    "additionalProperties": False,
    "properties": {
        "scenario": {"enum": list(SCENARIOS)},
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string"},
        "threads": _pos_int,
        "system": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "R": _pos_int,
                "k": _pos_int,
                "lam": {"type": "number", "exclusiveMinimum": 0},
                "arrival": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "case": {"enum": ["renewal", "poisson", "deterministic"]},
                        "base_spec": _dist,
                    },
                },
                "service": {"type": "array", "items": _dist, "minItems": 1},
            },
        },
        "policy": _policy,
        "plan": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "jobs_total": _pos_int,
                "warmup_fraction": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "replications": _pos_int,
                "batch_count": {"type": "integer", "minimum": 10},
                "ecdf_resolution": _pos_int,
            },
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "k_list": {"type": "array", "items": _pos_int, "minItems": 1},
                "scale_jobs": {"type": "boolean"},
                "type_sequences": {
                    "type": "array",
                    "items": {"type": "array", "items": _pos_int, "minItems": 1},
                    "minItems": 1,
                },
            },
        },
        "lower_bound": {
            "type": "object",
            "additionalProperties": False,
            "required": ["p", "policies"],
            "properties": {"p": _pvec, "policies": {"type": "array", "items": _policy, "minItems": 1}},
        },
        "analytic": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"p": _pvec, "export_grid": {"type": "boolean"}},
        },
        "optimize": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "slack": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "max_norm": _pos_int,
            },
        },
        "verify_structure": {
            "type": "object",
            "additionalProperties": False,
            "required": ["p"],
            "properties": {
                "p": _pvec,
                "m_max": {"type": "integer", "minimum": 2},
                "k_list": {"type": "array", "items": _pos_int, "minItems": 1},
            },
        },
        "monotonicity": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "early": {"type": "array", "items": _pos_int, "minItems": 2, "maxItems": 2},
                "late": {"type": "array", "items": _pos_int, "minItems": 2, "maxItems": 2},
                "replications": _pos_int,
                "tolerance": {"type": "number", "minimum": 0},
            },
        },
    },
}

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "system": {"R": None, "k": 1, "lam": 1.0, "arrival": {"case": "poisson"}, "service": None},
    "plan": {
        "jobs_total": 200_000,
        "warmup_fraction": 0.2,
        "replications": 1,
        "batch_count": 32,
        "ecdf_resolution": 512,
    },
    "sweep": {"k_list": [1, 2, 4, 8, 16, 32], "scale_jobs": True},
    "analytic": {"export_grid": False},
    "optimize": {"slack": 1e-3, "tol": 1e-7, "max_norm": 10},
    "verify_structure": {"m_max": 20, "k_list": [1, 2, 3, 4, 7, 10]},
    "monotonicity": {"early": [1, 1000], "late": [10000, 20000], "replications": 50, "tolerance": 0.02},
}

# keys that change where results go, not what they are
_UNHASHED = ("output_dir", "threads")


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def load(path) -> dict:
    """Read a YAML or JSON config file (JSON is valid YAML)."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    try:
        raw = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot parse config {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigurationError("config must be a mapping")
    return raw


def effective(raw: dict, seed=None) -> dict:
    """Validate ``raw`` and fill every default explicitly."""
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigurationError(f"config invalid at {where}: {exc.message}") from None
    cfg = _merge(DEFAULTS, raw)
    if seed is not None:
        cfg["seed"] = int(seed)
    sys_ = cfg["system"]
    if sys_["service"] is not None and sys_["R"] is None:
        sys_["R"] = len(sys_["service"])
    needs_system = cfg["scenario"] not in ("verify-structure",)
    if needs_system and not sys_["service"]:
        raise ConfigurationError("system.service is required for this scenario")
    if needs_system and sys_["R"] != len(sys_["service"]):
        raise ConfigurationError("system.R does not match the number of service specs")
    if cfg["scenario"] in ("simulate", "sweep", "monotonicity") and "policy" not in cfg:
        raise ConfigurationError(f"scenario {cfg['scenario']} needs a policy")
    if cfg["scenario"] == "analytic" and "p" not in cfg["analytic"]:
        raise ConfigurationError("scenario analytic needs analytic.p")
    return cfg


def config_hash(cfg: dict) -> str:
    hashed = {k: v for k, v in cfg.items() if k not in _UNHASHED}
    blob = json.dumps(hashed, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def services(cfg: dict) -> tuple[DistributionSpec, ...]:
    return tuple(DistributionSpec.from_dict(d) for d in cfg["system"]["service"])


def system(cfg: dict, k=None) -> SystemConfig:
    s = cfg["system"]
    return SystemConfig(
        R=s["R"],
        k=s["k"] if k is None else k,
        lam=float(s["lam"]),
        arrival=ArrivalModel.from_dict(s["arrival"]),
        service=services(cfg),
    )


def plan(cfg: dict) -> SimPlan:
    return SimPlan(seed=cfg["seed"], **cfg["plan"])


def policy(desc: dict, R: int, k: int) -> PeriodicPolicy:
    """Build a policy from ``{type_sequence, k}``, ``{q, seed}`` or ``{assignment}``."""
    if "type_sequence" in desc:
        return build_cpk(desc["type_sequence"], desc.get("k", k), R=R)
    if "q" in desc:
        pol = random_q_policy(desc["q"], desc.get("seed", 0))
    else:
        pol = explicit_policy(desc["assignment"], R, desc.get("k", k))
    if pol.R != R:
        raise ConfigurationError(f"policy covers {pol.R} types, system has {R}")
    return pol
