"""Command-line entry point: synth, train, eval, infer, gradcheck, cost, serve.

Structured results go to stdout as JSON (CSV for metrics files); diagnostics
go to stderr. Exit codes: 0 success, 1 runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import SgcnError
from .graphs import conv_cost_ratio
from .ink import SynthSpec, load_jsonl, save_jsonl, synth_dataset
from .network import CONFIG_PRESETS, ModelConfig, SgcnModel
from .training import (TrainConfig, checkpoint_load, checkpoint_save, evaluate,
                       metrics_csv, prepare_graph, train)


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="random seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sgcn",
                                     description="Spatial graph convolutional character recognition")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic JSONL dataset")
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--per-class", type=int, default=100)
    p.add_argument("--jitter", type=float, default=0.01)
    p.add_argument("--rotation", type=float, default=0.15)
    p.add_argument("--out", required=True, help="output JSONL path")
    _add_common(p)

    p = sub.add_parser("train", help="train a model on a JSONL dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default="small",
                   help="preset name (small, large) or a model-config JSON file")
    p.add_argument("--checkpoint", required=True, help="output checkpoint path")
    p.add_argument("--metrics", help="output metrics CSV path")
    p.add_argument("--state", help="rolling state checkpoint for resumption")
    p.add_argument("--resume", help="resume training from a state checkpoint")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--lr", type=float, default=0.002)
    p.add_argument("--patience", type=int, default=3)
    p.add_argument("--interval", type=float, default=0.02)
    p.add_argument("--sigma", type=float, default=16.0)
    p.add_argument("--margin", type=float, default=0.0)
    p.add_argument("--dropout", type=float, default=0.2)
    p.add_argument("--width-mult", type=float, default=1.0)
    p.add_argument("--feat-mode", choices=["full", "constant"], default="full")
    p.add_argument("--penup-edges", action=argparse.BooleanOptionalAction, default=True)
    _add_common(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a JSONL dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--topk", type=int, default=5)
    _add_common(p)

    p = sub.add_parser("infer", help="print top-k predictions for each sample in FILE")
    p.add_argument("file", help="JSONL samples (labels optional)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--topk", type=int, default=5)
    _add_common(p)

    p = sub.add_parser("gradcheck", help="run the finite-difference gradient suites")
    p.add_argument("--eps", type=float, default=1e-4)
    _add_common(p)

    p = sub.add_parser("cost", help="image vs graph convolution cost ratio")
    p.add_argument("H", type=int)
    p.add_argument("W", type=int)
    p.add_argument("N", type=int, help="graph node count")
    p.add_argument("E", type=float, help="average edges per graph node")
    _add_common(p)

    p = sub.add_parser("serve", help="start the HTTP recognition service")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--ui-dir", help="directory with the static UI bundle")
    _add_common(p)

    return parser


def _load_model_config(args, num_classes: int) -> ModelConfig:
    overrides = dict(sigma=args.sigma, margin=args.margin, dropout=args.dropout,
                     width_mult=args.width_mult, feat_mode=args.feat_mode,
                     interval=args.interval, penup_edges=args.penup_edges)
    if args.config in CONFIG_PRESETS:
        return CONFIG_PRESETS[args.config](num_classes, **overrides)
    text = Path(args.config).read_text(encoding="utf-8")
    cfg = ModelConfig.from_json(text)
    if cfg.num_classes != num_classes:
        raise SgcnError(
            f"config expects {cfg.num_classes} classes but the dataset has {num_classes}"
        )
    return cfg


def cmd_synth(args) -> int:
    spec = SynthSpec(num_classes=args.classes, samples_per_class=args.per_class,
                     jitter=args.jitter, rotation_range=args.rotation)
    dataset = synth_dataset(spec, seed=args.seed)
    save_jsonl(dataset, args.out)
    print(json.dumps({"samples": len(dataset), "classes": dataset.num_classes,
                      "path": str(args.out)}))
    return 0


def cmd_train(args) -> int:
    dataset = load_jsonl(args.data)
    config = _load_model_config(args, dataset.num_classes)
    ss = np.random.SeedSequence([args.seed, 0x1a2b])
    model = SgcnModel(config, rng=np.random.default_rng(ss))
    tc = TrainConfig(batch_size=args.batch_size, lr=args.lr, patience=args.patience,
                     max_epochs=args.epochs, seed=args.seed, state_path=args.state)
    _log(f"training on {len(dataset)} samples, {dataset.num_classes} classes")
    result = train(model, dataset, tc, resume_from=args.resume)
    checkpoint_save(args.checkpoint, result.model,
                    extra={"class_names": dataset.class_names,
                           "best_accuracy": result.best_accuracy})
    if args.metrics:
        Path(args.metrics).write_text(metrics_csv(result.history), encoding="utf-8")
    print(json.dumps({"best_accuracy": result.best_accuracy,
                      "epochs": len(result.history),
                      "checkpoint": str(args.checkpoint)}))
    return 0


def _class_names(data, num_classes: int) -> list[str]:
    meta = data.json_section("meta") or {}
    return meta.get("class_names") or [str(i) for i in range(num_classes)]


def cmd_eval(args) -> int:
    model, data = checkpoint_load(args.checkpoint)
    names = _class_names(data, model.config.num_classes)
    dataset = load_jsonl(args.data, class_names=names)
    metrics = evaluate(model, dataset, batch_size=args.batch_size, topk=args.topk)
    print(json.dumps(metrics.to_dict()))
    return 0


def cmd_infer(args) -> int:
    from .graphs import batch_graphs

    model, data = checkpoint_load(args.checkpoint)
    names = _class_names(data, model.config.num_classes)
    dataset = load_jsonl(args.file, class_names=names, require_labels=False)
    topk = max(1, min(args.topk, model.config.num_classes))
    for sample in dataset.samples:
        graph = prepare_graph(sample.trajectory, model.config)
        result = model.forward(batch_graphs([graph]))
        logits = result.logits.data[0].astype(np.float64)
        z = np.exp(logits - logits.max())
        scores = z / z.sum()
        ranked = np.argsort(-logits, kind="stable")[:topk]
        print(json.dumps({
            "id": sample.id,
            "predictions": [{"label": names[i], "score": float(scores[i])} for i in ranked],
        }))
    return 0


def cmd_gradcheck(args) -> int:
    from .gradsuite import run_gradient_suite

    report = run_gradient_suite(eps=args.eps, seed=args.seed)
    print(json.dumps(report))
    worst = max(report.values())
    _log(f"max relative error: {worst:.3e}")
    return 0 if worst < 1e-3 else 1


def cmd_cost(args) -> int:
    report = conv_cost_ratio(args.H, args.W, args.N, args.E)
    print(json.dumps(report.to_dict()))
    return 0


def cmd_serve(args) -> int:
    from .server import serve

    serve(args.checkpoint, host=args.host, port=args.port, ui_dir=args.ui_dir)
    return 0


_COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "gradcheck": cmd_gradcheck,
    "cost": cmd_cost,
    "serve": cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except SgcnError as e:
        _log(f"error: {e}")
        return 1
    except OSError as e:
        _log(f"error: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
