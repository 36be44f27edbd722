"""Experiment configuration: one flat JSON document per run."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass

import jsonschema

from ..model import DisorderSpec, ModelConfig, SingleSitePotential

KINDS = ("lyapunov-scan", "block-stats", "negative-moment", "green-decay", "eigen-decay",
         "correlator-decay", "kappa-dichotomy", "transport-critical", "martingale-diagnostic")


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the offending key."""


_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_int = {"type": "integer"}
_posint = {"type": "integer", "minimum": 1}
_interval = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}
_box = {"type": "array", "items": _int, "minItems": 2, "maxItems": 2}


def _list(item, min_items=1):
    return {"type": "array", "items": item, "minItems": min_items}


MODEL_SCHEMA = {
    "type": "object",
    "required": ["alpha", "lambda"],
    "additionalProperties": False,
    "properties": {
        "_note": {},
        "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "lambda": {"type": "number", "not": {"const": 0}},
        "envelope": {"type": "object", "properties": {"rule": {"enum": ["power"]}}},
        "disorder": {
            "type": "object",
            "properties": {"family": {"enum": ["uniform", "triangular", "zero"]},
                           "params": {"type": "object"}},
        },
        "single_site": {
            "type": "object",
            "required": ["segments"],
            "properties": {
                "segments": _list({"type": "array", "minItems": 2, "maxItems": 2}),
                "c_u": _pos, "C_u": _pos, "J": _interval,
            },
        },
    },
}

COMMON = {
    "_note": {},
    "kind": {"enum": list(KINDS)},
    "model": MODEL_SCHEMA,
    "n_samples": {"type": "integer", "minimum": 2},
    "root_seed": {"type": "integer", "minimum": 0},
    "output": {"type": "string"},
}

KIND_PARAMS = {
    "lyapunov-scan": ({"energies": _list(_pos), "n": _posint, "checkpoints": _list(_posint)},
                      ["energies", "n"]),
    "block-stats": ({"energy": _pos, "n0": _posint, "blocks": _list(_posint)},
                    ["energy", "n0", "blocks"]),
    "negative-moment": ({"energy": _pos, "m": _int, "ns": _list(_int, 3), "s_values": _list(_pos)},
                        ["energy", "m", "ns", "s_values"]),
    "green-decay": ({"box": _box, "energy": _num, "y": _int, "xs": _list(_int, 3), "s_values": _list(_pos),
                     "max_rejection": {"type": "number", "minimum": 0, "maximum": 1}},
                    ["box", "energy", "y", "xs", "s_values"]),
    "eigen-decay": ({"box": _box, "interval": _interval, "min_side": _posint},
                    ["box", "interval"]),
    "correlator-decay": ({"box": _box, "interval": _interval, "y": _int, "xs": _list(_int, 3),
                          "points_per_cell": _posint},
                         ["box", "interval", "y", "xs"]),
    "kappa-dichotomy": ({"half_lengths": _list(_posint, 2), "kappas": _list(_num), "interval": _interval,
                         "t_max": _pos, "n_times": _posint, "points_per_cell": _posint},
                        ["half_lengths", "kappas", "interval", "t_max", "n_times"]),
    "transport-critical": ({"box": _box, "p": {"type": "number", "minimum": 0}, "window": {
                                "type": "object", "required": ["lo", "hi", "ramp"],
                                "properties": {"lo": _num, "hi": _num, "ramp": _pos}},
                            "T_grid": _list(_pos, 3), "points_per_cell": _posint},
                           ["box", "p", "window", "T_grid"]),
    "martingale-diagnostic": ({"energy": _pos, "m": _posint, "ns": _list(_posint),
                               "theta0": {"oneOf": [_num, {"const": "uniform"}]}},
                              ["energy", "m", "ns"]),
}


def schema_for(kind: str) -> dict:
    props, required = KIND_PARAMS[kind]
    return {
        "type": "object",
        "required": ["kind", "model", "n_samples", "root_seed"] + required,
        "additionalProperties": False,
        "properties": {**COMMON, **props},
    }


@dataclass(frozen=True)
class ExperimentSpec:
    kind: str
    model: ModelConfig
    n_samples: int
    root_seed: int
    params: dict
    output: str | None
    raw: dict

    def param(self, key, default=None):
        return self.params.get(key, default)


def _model_from(d: dict) -> ModelConfig:
    ss = d.get("single_site")
    if ss is None:
        u = SingleSitePotential.default()
    else:
        segs = tuple((tuple(iv), h) for iv, h in ss["segments"])
        top = max(segs, key=lambda s: s[1])
        u = SingleSitePotential(segs, c_u=ss.get("c_u", top[1]), C_u=ss.get("C_u", top[1]),
                                J=tuple(ss.get("J", top[0])))
    dis = d.get("disorder", {})
    return ModelConfig(alpha=float(d["alpha"]), lam=float(d["lambda"]),
                       envelope=d.get("envelope", {}).get("rule", "power"),
                       disorder=DisorderSpec(dis.get("family", "uniform"), dict(dis.get("params", {}))),
                       single_site=u)


def _path(err: jsonschema.ValidationError) -> str:
    return ".".join(str(p) for p in err.absolute_path) or "<root>"


def parse_spec(doc: dict, overrides: dict | None = None) -> ExperimentSpec:
    """Validate a configuration document and build the ExperimentSpec.

    ``overrides`` (e.g. from the command line) replace top-level keys
    before validation.
    """
    doc = copy.deepcopy(doc)
    for k, v in (overrides or {}).items():
        if v is not None:
            doc[k] = v
    kind = doc.get("kind")
    if kind not in KINDS:
        raise ConfigError(f"kind: expected one of {', '.join(KINDS)}, got {kind!r}")
    try:
        jsonschema.validate(doc, schema_for(kind))
    except jsonschema.ValidationError as e:
        raise ConfigError(f"{_path(e)}: {e.message}") from None
    try:
        model = _model_from(doc["model"])
    except ValueError as e:
        raise ConfigError(f"model: {e}") from None
    for key in ("box",):
        if key in doc and doc[key][1] <= doc[key][0]:
            raise ConfigError(f"{key}: need b > a")
    for key in ("interval",):
        if key in doc and doc[key][1] <= doc[key][0]:
            raise ConfigError(f"{key}: need hi > lo")
    skip = set(COMMON)
    params = {k: v for k, v in doc.items() if k not in skip}
    return ExperimentSpec(kind, model, int(doc["n_samples"]), int(doc["root_seed"]), params,
                          doc.get("output"), doc)


def load_spec(path: str, overrides: dict | None = None) -> ExperimentSpec:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as e:
        raise ConfigError(f"<file>: not valid JSON ({e})") from None
    return parse_spec(doc, overrides)


def canonical_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def spec_hash(doc: dict) -> str:
    """sha256 of the canonical JSON of a config document without its ``_note`` keys."""
    return hashlib.sha256(canonical_json(_strip_notes(doc)).encode("utf-8")).hexdigest()


def _strip_notes(doc):
    if isinstance(doc, dict):
        return {k: _strip_notes(v) for k, v in doc.items() if k != "_note"}
    if isinstance(doc, list):
        return [_strip_notes(v) for v in doc]
    return doc
