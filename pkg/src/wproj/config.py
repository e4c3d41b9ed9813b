"""Run configuration: YAML/JSON files validated against published schemas.

Every command's schema rejects unknown keys and range-checks numbers.
Defaults live in the schemas themselves (``default`` keywords) and are
filled in by :func:`apply_defaults` after validation.
"""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import jsonschema
import yaml

from .errors import ConfigError

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_posint = {"type": "integer", "minimum": 1}
_seed = {"type": "integer", "minimum": 0, "maximum": 2**64 - 1}
_strlist = {"type": "array", "items": {"type": "string"}}

SOLVER = {
    "type": "object",
    "additionalProperties": False,
    "default": {},
    "properties": {
        "method": {"enum": ["exact", "entropic"], "default": "exact"},
        "epsilon": {"anyOf": [_pos, {"type": "null"}], "default": None},
        "epsilon_scale": {**_pos, "default": 0.02},
        "tol": {**_pos, "default": 1e-3, "description": "Sinkhorn marginal tolerance relative to 1/n"},
        "max_iter": {**_posint, "default": 10000},
        "relaxation": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 2, "default": 1.5},
        "float32": {"type": "boolean", "default": False},
        "qp_tol": {"anyOf": [_pos, {"type": "null"}], "default": None},
        "qp_max_iter": {**_posint, "default": 100000},
        "size_budget": {**_posint, "default": 500_000_000},
        "threads": {"anyOf": [_posint, {"type": "null"}], "default": None},
    },
}

MEASURE_SOURCE = {
    "type": "object",
    "additionalProperties": False,
    "required": ["path"],
    "properties": {
        "path": {"type": "string"},
        "columns": _strlist,
        "weight_column": {"type": ["string", "null"]},
        "transforms": {"type": "object", "additionalProperties": {"enum": ["identity", "log"]}},
    },
}

_common = {
    "seed": {**_seed, "default": 0},
    "out": {"type": "string", "default": "runs"},
    "solver": SOLVER,
    "dump_plans": {"type": "boolean", "default": False},
}

PROJECT = {
    "type": "object",
    "additionalProperties": False,
    "required": ["target", "controls"],
    "properties": {
        **_common,
        "target": {"anyOf": [{"type": "string"}, MEASURE_SOURCE]},
        "controls": {"type": "array", "minItems": 1, "items": {"anyOf": [{"type": "string"}, MEASURE_SOURCE]}},
        "columns": _strlist,
        "weight_column": {"type": ["string", "null"], "default": None},
        "transforms": {"type": "object", "additionalProperties": {"enum": ["identity", "log"]}, "default": {}},
    },
}

_study = {
    **_common,
    "means": {"type": "array", "minItems": 2, "items": _num, "default": [10.0, 50.0, 200.0, -50.0]},
    "rho": {"type": "number", "default": 0.8},
    "var": {"type": "number", "minimum": 0, "default": 1.0},
    "cov": {"anyOf": [{"type": "array", "items": {"type": "array", "items": _num}}, {"type": "null"}], "default": None},
    "n": {**_posint, "default": 10000},
    "fit_size": {"anyOf": [_posint, {"type": "null"}], "default": None},
}

SIMULATE_GAUSSIAN = {
    "type": "object",
    "additionalProperties": False,
    "properties": {**_study, "d": {**_posint, "default": 10}},
}

SIMULATE_MIXTURE = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        **_study,
        "d": {**_posint, "default": 20},
        "coefficients": {
            "type": "array",
            "minItems": 2,
            "items": {"type": "array", "items": {"type": "number", "minimum": 0}},
            "default": [[0.3, 0.6, 0.1, 0.0], [0.8, 0.1, 0.1, 0.0], [0.0, 0.2, 0.7, 0.1], [0.2, 0.0, 0.2, 0.6]],
        },
    },
}

IMAGE_PROJECT = {
    "type": "object",
    "additionalProperties": False,
    "required": ["target_image", "control_images"],
    "properties": {
        **_common,
        "target_image": {"type": "string"},
        "control_images": {"type": "array", "minItems": 1, "items": {"type": "string"}},
        "downsample": {**_posint, "default": 1},
        "invert": {"type": "boolean", "default": False},
    },
}

SYNTH = {
    "type": "object",
    "additionalProperties": False,
    "required": ["treated", "controls", "pre_periods", "variables"],
    "properties": {
        **_common,
        "treated": {"type": "string"},
        "controls": {**_strlist, "minItems": 1},
        "pre_periods": {"type": "array", "minItems": 1, "items": {"type": ["string", "integer"]}},
        "post_periods": {"type": "array", "items": {"type": ["string", "integer"]}, "default": []},
        "variables": {**_strlist, "minItems": 1},
        "transforms": {"type": "object", "additionalProperties": {"enum": ["identity", "log"]}, "default": {}},
        "weight_column": {"type": ["string", "null"], "default": None},
        "fit_sample_size": {"anyOf": [_posint, {"type": "null"}], "default": None},
        "data_dir": {"type": "string", "default": "."},
        "file_pattern": {"type": "string", "default": "{unit}_{period}.csv"},
        "files": {
            "anyOf": [
                {"type": "object", "additionalProperties": {"type": "object", "additionalProperties": {"type": "string"}}},
                {"type": "null"},
            ],
            "default": None,
        },
        "time_mode": {"enum": ["pooled", "stacked"], "default": "pooled"},
        "jitter": {"type": "boolean", "default": False},
        "w2_budget": {"type": "integer", "minimum": 0, "default": 0},
        "flag_sd": {**_pos, "default": 0.25},
        "flag_ks": {**_pos, "default": 0.1},
    },
}

ORACLE_CHECK = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        **_common,
        "instances": {**_posint, "default": 200},
        "max_n": {"type": "integer", "minimum": 1, "maximum": 8, "default": 7},
        "max_d": {**_posint, "default": 4},
        "rtol": {**_pos, "default": 1e-9},
    },
}

COMMAND_SCHEMAS = {
    "project": PROJECT,
    "simulate-gaussian": SIMULATE_GAUSSIAN,
    "simulate-mixture": SIMULATE_MIXTURE,
    "image-project": IMAGE_PROJECT,
    "synth": SYNTH,
    "oracle-check": ORACLE_CHECK,
}

_floatlist = {"type": "array", "items": {"type": "number"}}

WEIGHTS_OUTPUT = {
    "type": "object",
    "additionalProperties": False,
    "required": ["lambda", "objective", "kkt_gap", "unique", "per_control_w2", "n0", "J", "method", "seed"],
    "properties": {
        "lambda": _floatlist,
        "lambda_display": _floatlist,
        "objective": {"type": "number", "minimum": 0},
        "kkt_gap": {"type": "number", "minimum": 0},
        "unique": {"type": "boolean"},
        "converged": {"type": "boolean"},
        "per_control_w2": _floatlist,
        "n0": {"type": "integer", "minimum": 1},
        "J": {"type": "integer", "minimum": 1},
        "method": {"enum": ["exact", "entropic"]},
        "seed": {"type": ["integer", "null"]},
        "config_hash": {"type": "string"},
    },
}

DIAGNOSTICS_OUTPUT = {
    "type": "object",
    "required": ["command", "converged", "ot_converged", "kkt_gap"],
    "properties": {
        "command": {"type": "string"},
        "converged": {"type": "boolean"},
        "ot_converged": {"type": "boolean"},
        "kkt_gap": {"type": "number", "minimum": 0},
    },
}

PRETREND_OUTPUT = {
    "type": "object",
    "additionalProperties": False,
    "required": ["periods", "any_flagged"],
    "properties": {
        "any_flagged": {"type": "boolean"},
        "periods": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["period", "mean_gap", "ks", "flagged"],
                "properties": {
                    "period": {"type": "string"},
                    "mean_gap": {"type": "object", "additionalProperties": {"type": "number"}},
                    "standardized_mean_gap": {"type": "object", "additionalProperties": {"type": ["number", "null"]}},
                    "ks": {"type": "object", "additionalProperties": {"type": "number", "minimum": 0, "maximum": 1}},
                    "w2": {"type": ["number", "null"]},
                    "flagged": {"type": "boolean"},
                },
            },
        },
    },
}

ORACLE_OUTPUT = {
    "type": "object",
    "required": ["instances", "failures", "max_rel_error", "passed"],
    "properties": {
        "instances": {"type": "integer"},
        "failures": {"type": "integer", "minimum": 0},
        "max_rel_error": {"type": "number", "minimum": 0},
        "passed": {"type": "boolean"},
    },
}

OUTPUT_SCHEMAS = {
    "weights.json": WEIGHTS_OUTPUT,
    "diagnostics.json": DIAGNOSTICS_OUTPUT,
    "pretrend.json": PRETREND_OUTPUT,
    "oracle.json": ORACLE_OUTPUT,
}


def apply_defaults(instance: dict, schema: dict) -> dict:
    """Fill missing properties from ``default`` keywords, recursing into objects."""
    out = dict(instance)
    for key, sub in schema.get("properties", {}).items():
        if key not in out and "default" in sub:
            out[key] = copy.deepcopy(sub["default"])
        if isinstance(out.get(key), dict) and sub.get("type") == "object":
            out[key] = apply_defaults(out[key], sub)
    return out


def validate(instance: dict, schema: dict, what: str = "config") -> dict:
    try:
        jsonschema.validate(instance, schema)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{what}: {where}: {exc.message}") from None
    return apply_defaults(instance, schema)


def load_config_file(path) -> dict:
    """Parse a YAML or JSON file into a dict (JSON is valid YAML)."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML/JSON: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping at the top level")
    return data


def config_hash(cfg: dict) -> str:
    """First 12 hex digits of the SHA-256 of the canonical JSON form."""
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def write_schemas(directory) -> list[Path]:
    """Write every input and output schema as ``<name>.schema.json``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, schema in {**COMMAND_SCHEMAS, **{k.removesuffix(".json"): v for k, v in OUTPUT_SCHEMAS.items()}}.items():
        p = d / f"{name}.schema.json"
        p.write_text(json.dumps(schema, indent=2, sort_keys=True) + "\n")
        paths.append(p)
    return paths
