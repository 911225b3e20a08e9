"""Command-line entry points.

Subcommands: phantom gen, split, train, evaluate, triage, serve.
Failures print a machine-readable JSON object to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import LungTriageError
from .labels import SCHEMES, SEG_SCHEME_LABELS
from .manifest import load_manifest, save_manifest, split_dataset
from .metrics import mean_dice_std
from .phantom import write_phantom_dataset
from .pipeline import triage_batch
from .segmenter import GuidanceMaps, segment
from .training import CachedDataset, TrainConfig, load_model, train
from .transforms import AugmentationPolicy


def _parse_ints(text: str) -> tuple:
    return tuple(int(p) for p in text.split(","))


def _cmd_phantom_gen(args) -> int:
    manifest = write_phantom_dataset(
        args.out, args.cases_per_class, shape=_parse_ints(args.shape),
        seed=args.seed, scheme=args.scheme,
    )
    save_manifest(manifest, Path(args.out) / "manifest.tsv")
    print(json.dumps({"cases": len(manifest), "out": str(args.out),
                      "manifest": str(Path(args.out) / "manifest.tsv")}))
    return 0


def _cmd_split(args) -> int:
    manifest, warnings = load_manifest(args.manifest)
    counts = _parse_ints(args.counts) if args.counts else None
    result = split_dataset(manifest.records, args.scheme or manifest.labeling_scheme,
                           args.seed, counts=counts)
    out = Path(args.out or args.manifest)
    save_manifest(result, out)
    roles = {}
    for record in result.records:
        roles[record.split_role] = roles.get(record.split_role, 0) + 1
    print(json.dumps({"out": str(out), "roles": roles, "warnings": warnings}))
    return 0


def _train_config_from_args(args) -> tuple:
    config_kwargs = {}
    policy = None
    if args.config:
        payload = json.loads(Path(args.config).read_text(encoding="utf-8"))
        config_kwargs.update(payload.get("train", {}))
        if payload.get("augmentation"):
            policy = AugmentationPolicy.from_dict(payload["augmentation"])
    for name in ("task", "epochs", "batch_size", "seed", "base_channels", "base_width",
                 "iterations_per_epoch", "slices_per_case"):
        value = getattr(args, name, None)
        if value is not None:
            config_kwargs[name] = value
    if args.learning_rate is not None:
        config_kwargs["learning_rate"] = args.learning_rate
    if args.momentum is not None:
        config_kwargs["momentum"] = args.momentum
    if args.hu_window:
        config_kwargs["hu_window"] = tuple(float(x) for x in args.hu_window.split(","))
    return TrainConfig(**config_kwargs), policy


def _cmd_train(args) -> int:
    config, policy = _train_config_from_args(args)
    manifest, warnings = load_manifest(args.manifest)
    for w in warnings:
        print(json.dumps({"warning": w}), file=sys.stderr)
    report, _ = train(config, manifest, root=Path(args.manifest).parent,
                      policy=policy, out_dir=args.out)
    print(json.dumps({
        "task": report.task,
        "epochs": config.epochs,
        "total_steps": report.total_steps,
        "selected_epoch": report.selected_epoch,
        "selected_metric": report.selected_metric,
        "convergence_epoch": report.convergence_epoch,
        "out": str(args.out),
    }))
    return 0


def _cmd_evaluate(args) -> int:
    manifest, _ = load_manifest(args.manifest)
    model, ckpt = load_model(args.checkpoint)
    root = Path(args.manifest).parent
    if ckpt.model_kind == "classifier3":
        from .classifier import classify_volume

        dataset = CachedDataset(manifest, root, "seg4", role=args.role, enabled=False)
        preds, truths = [], []
        for i in range(len(dataset)):
            entry = dataset.get(i)
            _, label = classify_volume(model, entry["volume"])
            preds.append(label)
            truths.append(entry["class_label"])
        correct = sum(p == t for p, t in zip(preds, truths) if t)
        labeled = sum(1 for t in truths if t)
        result = {"kind": "classifier3", "cases": len(preds),
                  "accuracy": correct / labeled if labeled else None}
    else:
        scheme = ckpt.model_kind
        dataset = CachedDataset(manifest, root, scheme, role=args.role, enabled=False)
        from .metrics import dice

        per_case = {}
        for i in range(len(dataset)):
            entry = dataset.get(i)
            if entry["mask"] is None:
                continue
            _, pred = segment(model, entry["volume"], GuidanceMaps.zeros(entry["volume"].shape))
            per_label = {lid: dice(pred, entry["mask"], lid) for lid in SEG_SCHEME_LABELS[scheme]}
            fg = [v for k, v in per_label.items() if k != 0]
            per_case[entry["case_id"]] = {"per_label": per_label, "mean_foreground": sum(fg) / len(fg)}
        result = {"kind": scheme, "cases": len(per_case), "per_case": per_case}
        if per_case:
            mean, std = mean_dice_std([c["mean_foreground"] for c in per_case.values()])
            result["mean_dice"] = mean
            result["std_dice"] = std
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(result, indent=2, sort_keys=True), encoding="utf-8")
    print(json.dumps(result, sort_keys=True))
    return 0


def _cmd_triage(args) -> int:
    manifest, _ = load_manifest(args.manifest)
    _, summary = triage_batch(
        manifest, args.classifier, args.segmenter, out_dir=args.out,
        root=Path(args.manifest).parent, scheme=args.scheme,
        hu_window=tuple(float(x) for x in args.hu_window.split(",")) if args.hu_window else None,
    )
    print(json.dumps(summary, sort_keys=True))
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    segmenters = {}
    for path in args.segmenter or []:
        _, ckpt = load_model(path)
        if ckpt.model_kind not in SEG_SCHEME_LABELS:
            raise LungTriageError(f"{path} is not a segmenter checkpoint")
        segmenters[ckpt.model_kind] = path
    app = create_app(classifier_ckpt=args.classifier, segmenter_ckpts=segmenters)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lungtriage",
                                     description="Lung-CT triage and lesion segmentation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    phantom = sub.add_parser("phantom", help="synthetic dataset tools")
    phantom_sub = phantom.add_subparsers(dest="phantom_command", required=True)
    gen = phantom_sub.add_parser("gen", help="generate a phantom dataset + manifest")
    gen.add_argument("--out", required=True)
    gen.add_argument("--cases-per-class", type=int, default=2)
    gen.add_argument("--shape", default="64,64,64")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--scheme", choices=SCHEMES, default="seg4")
    gen.set_defaults(func=_cmd_phantom_gen)

    split = sub.add_parser("split", help="assign split roles in a manifest")
    split.add_argument("--manifest", required=True)
    split.add_argument("--scheme", choices=SCHEMES)
    split.add_argument("--seed", type=int, default=0)
    split.add_argument("--counts", help="train,val,inference override")
    split.add_argument("--out")
    split.set_defaults(func=_cmd_split)

    tr = sub.add_parser("train", help="train a model from a manifest")
    tr.add_argument("--manifest", required=True)
    tr.add_argument("--out", required=True)
    tr.add_argument("--config", help="JSON run config (CLI flags override)")
    tr.add_argument("--task", choices=("classify3", "seg2", "seg4"))
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--batch-size", dest="batch_size", type=int)
    tr.add_argument("--learning-rate", dest="learning_rate", type=float)
    tr.add_argument("--momentum", type=float)
    tr.add_argument("--seed", type=int)
    tr.add_argument("--base-channels", dest="base_channels", type=int)
    tr.add_argument("--base-width", dest="base_width", type=int)
    tr.add_argument("--iterations-per-epoch", dest="iterations_per_epoch", type=int)
    tr.add_argument("--slices-per-case", dest="slices_per_case", type=int)
    tr.add_argument("--hu-window", dest="hu_window", help="hu_min,hu_max normalization")
    tr.set_defaults(func=_cmd_train)

    ev = sub.add_parser("evaluate", help="evaluate a checkpoint on a manifest role")
    ev.add_argument("--manifest", required=True)
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--role", default="validation")
    ev.add_argument("--out")
    ev.set_defaults(func=_cmd_evaluate)

    tri = sub.add_parser("triage", help="classify all cases, segment predicted COVID")
    tri.add_argument("--manifest", required=True)
    tri.add_argument("--classifier", required=True)
    tri.add_argument("--segmenter", required=True)
    tri.add_argument("--scheme", choices=("seg2", "seg4"))
    tri.add_argument("--out", required=True)
    tri.add_argument("--hu-window", dest="hu_window")
    tri.set_defaults(func=_cmd_triage)

    srv = sub.add_parser("serve", help="run the annotation HTTP service")
    srv.add_argument("--classifier")
    srv.add_argument("--segmenter", action="append",
                     help="segmenter checkpoint; repeat for both schemes")
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--port", type=int, default=8000)
    srv.set_defaults(func=_cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (LungTriageError, FileNotFoundError, ValueError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
