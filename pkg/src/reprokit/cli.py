"""Command line entry points: train-source, reprogram, evaluate, diagnose.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as C
from .blackbox import BlackboxEndpoint
from .diagnostics import theorem1_report, w1_tracker
from .errors import AssumptionError, ConfigError, ReprokitError
from .input_transform import InputTransform, PlacementLayout
from .model_core import (
    SourceTrainConfig,
    dense,
    forward,
    load_checkpoint,
    param_digest,
    relu,
    save_checkpoint,
    train_source,
)
from .output_map import OutputMap
from .reprogram import evaluate, reprogram

log = logging.getLogger("reprokit")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _dump(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def transform_to_dict(t: InputTransform) -> dict:
    return {"layout": t.layout.to_dict(), "mask": t.mask.tolist(), "W": t.W.tolist(),
            "input_range": list(t.input_range)}


def transform_from_dict(d: dict) -> InputTransform:
    return InputTransform(PlacementLayout(**d["layout"]), np.array(d["mask"]), np.array(d["W"]),
                          input_range=tuple(d.get("input_range", (-1.0, 1.0))))


def _overrides(args) -> dict:
    return {"seed": getattr(args, "seed", None), "mode": getattr(args, "mode", None),
            "report_dir": getattr(args, "report_dir", None)}


def _load_run_config(args) -> dict:
    if args.config:
        base = Path(args.config).resolve().parent
        doc = C.read_json(args.config)
    elif getattr(args, "report_dir", None):
        path = Path(args.report_dir) / "config.json"
        base = path.resolve().parent
        doc = C.read_json(path)
    else:
        raise ConfigError("either --config or --report-dir is required")
    return C.resolve_reprogram_config(doc, base, _overrides(args))


def cmd_train_source(args) -> int:
    base = Path(args.config).resolve().parent
    full = C.resolve_train_source_config(C.read_json(args.config), base, {"seed": args.seed})
    data = C.load_data(full["data"])
    heldout = C.load_data(full["heldout"]) if "heldout" in full else None
    k = max(data.num_classes, heldout.num_classes if heldout is not None else 0)
    arch, width = [], data.dim
    for h in full["arch"]["hidden"]:
        arch += [dense(width, h), relu()]
        width = h
    arch.append(dense(width, k))
    tr = full["train"]
    cfg = SourceTrainConfig(epochs=tr["epochs"], batch_size=tr["batch_size"],
                            learning_rate=tr["learning_rate"], momentum=tr["momentum"], seed=full["seed"])
    history = []
    model = train_source(data, arch, cfg, history=history)
    Path(full["checkpoint"]).parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, full["checkpoint"])
    print(f"checkpoint {full['checkpoint']}")
    print(f"param_digest {model.param_digest}")
    print(f"train loss {history[0]:.6f} -> {history[-1]:.6f}")
    acc = np.mean(np.argmax(forward(model, data.samples), axis=1) == data.labels)
    print(f"train accuracy {acc:.4f}")
    if heldout is not None:
        acc = np.mean(np.argmax(forward(model, heldout.samples), axis=1) == heldout.labels)
        print(f"heldout accuracy {acc:.4f}")
    return EXIT_OK


def cmd_reprogram(args) -> int:
    full = _load_run_config(args)
    cfg = C.reprogram_config(full)
    model = load_checkpoint(full["source"]["checkpoint"])
    digest_before = param_digest(model)
    train = C.load_data(full["target"]["train"])
    test = C.load_data(full["target"]["test"])
    heldout = C.load_data(full["source"]["heldout"]) if "heldout" in full["source"] else None

    hook = None
    diag = full["diagnostics"]
    if diag["track_w1"] and heldout is not None:
        hook = w1_tracker(model, heldout, test.samples, diag["n_rep"], full["seed"])

    endpoint = None
    try:
        if cfg.mode == "black_box":
            command = full.get("blackbox", {}).get("command")
            if command:
                endpoint = BlackboxEndpoint(command, model.input_dim, model.num_classes)
            else:
                endpoint = BlackboxEndpoint.for_checkpoint(full["source"]["checkpoint"],
                                                           model.input_dim, model.num_classes)
        t, omap, trace = reprogram(model, train, test, cfg,
                                   oracle=endpoint, epoch_hook=hook)
        served = endpoint.served() if endpoint is not None else None
    finally:
        if endpoint is not None:
            endpoint.close()

    out = Path(full["report_dir"])
    out.mkdir(parents=True, exist_ok=True)
    _dump(out / "config.json", full)
    _dump(out / "transform.json", transform_to_dict(t))
    _dump(out / "output_map.json", omap.to_dict())
    with open(out / "trace.jsonl", "w") as fh:
        for rec in trace.lines():
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    summary = {
        "param_digest_before": digest_before,
        "param_digest_after": param_digest(model),
        "trainable_parameters": t.n_trainable + (omap.head.size if omap.head is not None else 0),
        "steps": trace.steps,
        "queries": trace.queries,
        "train_oracle_calls": trace.train_oracle_calls,
        "endpoint_served": {"requests": served[0], "samples": served[1]} if served else None,
        "loss": cfg.loss,
        "loss_note": {"ce": "cross-entropy on aggregated scores renormalised per row",
                      "nll": "cross-entropy on raw aggregated scores",
                      "mse": "mean squared error on raw aggregated scores"}[cfg.loss],
        "greedy_rule": "global count descending; ties by lower source label then lower target label",
        "final_test_accuracy": trace.records[-1]["test_acc"],
    }
    _dump(out / "summary.json", summary)
    (out / "timing.json").write_text(json.dumps({"wall_clock_seconds": trace.wall_clock}) + "\n")
    first, last = trace.initial, trace.records[-1]
    print(f"report {out}")
    print(f"loss {first['loss']:.6f} -> {last['loss']:.6f}")
    print(f"test accuracy {first['test_acc']:.4f} -> {last['test_acc']:.4f}")
    if cfg.mode == "black_box":
        print(f"queries {trace.queries} (endpoint served {served[1]} samples in {served[0]} requests)")
    return EXIT_OK


def _load_report(args):
    full = _load_run_config(args)
    report = Path(args.report_dir) if args.report_dir else Path(full["report_dir"])
    try:
        t = transform_from_dict(json.loads((report / "transform.json").read_text()))
        omap = OutputMap.from_dict(json.loads((report / "output_map.json").read_text()))
    except FileNotFoundError as exc:
        raise ConfigError(f"report directory is incomplete: {exc.filename}") from None
    return full, report, t, omap


def cmd_evaluate(args) -> int:
    full, _, t, omap = _load_report(args)
    model = load_checkpoint(full["source"]["checkpoint"])
    test = C.load_data(full["target"]["test"])
    _, acc = evaluate(model, t, omap, test.samples, test.labels, full["train"]["loss"])
    print(f"target test accuracy {acc:.4f}")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    full, report, t, omap = _load_report(args)
    if omap.mapping is None or not omap.mapping.is_one_to_one:
        raise AssumptionError(
            "refusing to evaluate the risk bound: it assumes a one-to-one label mapping, "
            f"but this run uses {'a linear head' if omap.mapping is None else 'a many-to-one mapping'}")
    model = load_checkpoint(full["source"]["checkpoint"])
    test = C.load_data(full["target"]["test"])
    heldout = C.load_data(full["source"]["heldout"]) if "heldout" in full["source"] else None
    rep = theorem1_report(model, t, omap, heldout, test, full["diagnostics"]["n_rep"], full["seed"])
    print(rep.table())
    if heldout is None:
        print("source risk unavailable: config has no source.heldout data")
    _dump(report / "theorem1.json", rep.to_dict())
    return EXIT_OK


COMMANDS = {
    "train-source": cmd_train_source,
    "reprogram": cmd_reprogram,
    "evaluate": cmd_evaluate,
    "diagnose": cmd_diagnose,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reprokit", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=name == "train-source")
        p.add_argument("--seed", type=int)
        if name != "train-source":
            p.add_argument("--mode", choices=["white_box", "black_box"])
            p.add_argument("--report-dir")
    return parser


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, AssumptionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ReprokitError, OSError, ValueError, FloatingPointError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
