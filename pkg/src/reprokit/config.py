"""JSON run configurations: schemas, defaults and data loading.

Unknown keys are rejected everywhere so that a typo cannot silently fall back
to a default. :func:`resolve_reprogram_config` returns the fully expanded
document that gets echoed into every report.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

import jsonschema

from .data import Dataset, load_idx_dataset, load_ucr_csv, make_source_task, make_target_task
from .errors import ConfigError
from .reprogram import LOSSES, OUTPUT_MAPS, ReprogramConfig

_DATA = {
    "oneOf": [
        {
            "type": "object",
            "properties": {
                "kind": {"const": "synthetic_source"},
                "split": {"enum": ["train", "test"]},
                "seed": {"type": "integer", "minimum": 0},
                "n_train": {"type": "integer", "minimum": 1},
                "n_test": {"type": "integer", "minimum": 1},
            },
            "required": ["kind", "split"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {
                "kind": {"const": "synthetic_target"},
                "split": {"enum": ["train", "test"]},
                "seed": {"type": "integer", "minimum": 0},
                "noise": {"type": "number", "minimum": 0},
                "n_train": {"type": "integer", "minimum": 1},
                "n_test": {"type": "integer", "minimum": 1},
            },
            "required": ["kind", "split"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {
                "kind": {"const": "idx"},
                "images": {"type": "string"},
                "labels": {"type": "string"},
            },
            "required": ["kind", "images", "labels"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {"kind": {"const": "ucr"}, "path": {"type": "string"}},
            "required": ["kind", "path"],
            "additionalProperties": False,
        },
    ]
}

_SEED = {"type": "integer", "minimum": 0, "maximum": 2**64 - 1}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


REPROGRAM_SCHEMA = _obj({
    "seed": _SEED,
    "mode": {"enum": ["white_box", "black_box"]},
    "source": _obj({"checkpoint": {"type": "string"}, "heldout": _DATA}, ["checkpoint"]),
    "target": _obj({"train": _DATA, "test": _DATA}, ["train", "test"]),
    "layout": _obj({
        "mode": {"enum": ["center", "offset", "replicate"]},
        "offset": {"type": "integer", "minimum": 0},
        "replicates": {"type": "integer", "minimum": 1},
        "overlay": {"type": "boolean"},
    }),
    "output_map": _obj({
        "kind": {"enum": list(OUTPUT_MAPS)},
        "m": {"type": "integer", "minimum": 1},
        "head_input": {"enum": ["probs", "logits"]},
    }),
    "train": _obj({
        "epochs": {"type": "integer", "minimum": 1},
        "batch_size": {"type": "integer", "minimum": 1},
        "lr_W": {"type": "number", "minimum": 0},
        "lr_head": {"type": "number", "minimum": 0},
        "momentum": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "loss": {"enum": list(LOSSES)},
    }, ["epochs"]),
    "zo": _obj({
        "q": {"type": "integer", "minimum": 1},
        "mu": {"type": "number", "exclusiveMinimum": 0},
    }),
    "blackbox": _obj({"command": {"type": "array", "items": {"type": "string"}, "minItems": 1}}),
    "diagnostics": _obj({
        "n_rep": {"type": "integer", "minimum": 2, "maximum": 512},
        "track_w1": {"type": "boolean"},
    }),
    "report_dir": {"type": "string"},
}, ["source", "target", "train"])

TRAIN_SOURCE_SCHEMA = _obj({
    "seed": _SEED,
    "data": _DATA,
    "heldout": _DATA,
    "arch": _obj({"hidden": {"type": "array", "items": {"type": "integer", "minimum": 1}}}),
    "train": _obj({
        "epochs": {"type": "integer", "minimum": 1},
        "batch_size": {"type": "integer", "minimum": 1},
        "learning_rate": {"type": "number", "exclusiveMinimum": 0},
        "momentum": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
    }, ["epochs"]),
    "checkpoint": {"type": "string"},
}, ["data", "train", "checkpoint"])

REPROGRAM_DEFAULTS = {
    "seed": 0,
    "mode": "white_box",
    "layout": {"mode": "center", "offset": 0, "replicates": 1, "overlay": False},
    "output_map": {"kind": "greedy", "m": 1, "head_input": "probs"},
    "train": {"batch_size": 32, "lr_W": 0.05, "lr_head": 0.01, "momentum": 0.9, "loss": "ce"},
    "zo": {"q": 20, "mu": 0.01},
    "diagnostics": {"n_rep": 256, "track_w1": True},
    "report_dir": "report",
}

TRAIN_SOURCE_DEFAULTS = {
    "seed": 0,
    "arch": {"hidden": [128]},
    "train": {"batch_size": 32, "learning_rate": 0.05, "momentum": 0.9},
}

_PATH_KEYS = ("checkpoint", "images", "labels", "path", "report_dir")


def _validate(doc, schema):
    try:
        jsonschema.validate(doc, schema)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from None


def _merge(defaults, doc):
    out = copy.deepcopy(defaults)
    for key, value in doc.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _absolutize(doc, base: Path):
    if isinstance(doc, dict):
        return {k: (str((base / v).resolve()) if k in _PATH_KEYS and isinstance(v, str)
                    else _absolutize(v, base)) for k, v in doc.items()}
    return doc


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None


def resolve_reprogram_config(doc: dict, base=".", overrides=None) -> dict:
    """Validate, apply defaults and CLI overrides, and make every path absolute."""
    _validate(doc, REPROGRAM_SCHEMA)
    full = _merge(REPROGRAM_DEFAULTS, doc)
    for key, value in (overrides or {}).items():
        if value is not None:
            full[key] = value
    _validate(full, REPROGRAM_SCHEMA)
    full = _absolutize(full, Path(base))
    reprogram_config(full)  # cross-field checks
    return full


def resolve_train_source_config(doc: dict, base=".", overrides=None) -> dict:
    _validate(doc, TRAIN_SOURCE_SCHEMA)
    full = _merge(TRAIN_SOURCE_DEFAULTS, doc)
    for key, value in (overrides or {}).items():
        if value is not None:
            full[key] = value
    _validate(full, TRAIN_SOURCE_SCHEMA)
    return _absolutize(full, Path(base))


def reprogram_config(full: dict) -> ReprogramConfig:
    tr, lay, om, zo = full["train"], full["layout"], full["output_map"], full["zo"]
    try:
        return ReprogramConfig(
            epochs=tr["epochs"], batch_size=tr["batch_size"], lr_W=tr["lr_W"], lr_head=tr["lr_head"],
            momentum=tr["momentum"], seed=full["seed"], mode=full["mode"], q=zo["q"], mu=zo["mu"],
            output_map=om["kind"], m=om["m"], head_input=om["head_input"], layout_mode=lay["mode"],
            offset=lay["offset"], replicates=lay["replicates"], overlay=lay["overlay"], loss=tr["loss"],
        )
    except Exception as exc:
        raise ConfigError(f"inconsistent config: {exc}") from None


def load_data(spec: dict) -> Dataset:
    kind = spec["kind"]
    if kind == "synthetic_source":
        kw = {k: spec[k] for k in ("seed", "n_train", "n_test") if k in spec}
        train, test = make_source_task(**kw)
        return train if spec["split"] == "train" else test
    if kind == "synthetic_target":
        kw = {k: spec[k] for k in ("seed", "noise", "n_train", "n_test") if k in spec}
        train, test = make_target_task(**kw)
        return train if spec["split"] == "train" else test
    if kind == "idx":
        return load_idx_dataset(spec["images"], spec["labels"])
    return load_ucr_csv(spec["path"])
