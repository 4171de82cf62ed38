"""``hamloc`` command line: synth, train, localize, eval, ablate, report, rerun.

Exit codes: 0 success, 1 usage or configuration error, 2 data-format error,
3 numeric failure. Errors print one JSON line on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import MISSING, asdict, dataclass, field, fields

import numpy as np

from . import __version__, plots
from . import synthetic as synth
from .errors import FormatError, NumericError
from .evaluation import THUMOS_IOUS, EvalReport, classification_map, evaluate
from .fileio import atomic_write_text
from .localization import LocalizationConfig, read_jsonl, write_jsonl
from .model import load_checkpoint, save_checkpoint
from .trainer import (ablate, ablation_columns, desk_config, grid_search, infer, log_to_csv, predict,
                      read_log_csv, rows_to_csv, train, TrainConfig)

logger = logging.getLogger("hamloc")

EXIT_OK, EXIT_USAGE, EXIT_FORMAT, EXIT_NUMERIC = 0, 1, 2, 3
MANIFEST_NAME = "run_manifest.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for data-format errors here
    def error(self, message):
        raise UsageError(message)


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int | None
    dataset: str | None
    artifacts: list
    args: dict = field(default_factory=dict)
    version: str = __version__

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


def _write_manifest(out, manifest: RunManifest):
    atomic_write_text(os.path.join(out, MANIFEST_NAME), manifest.to_json())


def _resolve_seed(args):
    if args.seed is None:
        args.seed = int(np.random.SeedSequence().entropy % (2 ** 31))
        logger.warning("no --seed given; using generated seed %d", args.seed)
    return args.seed


def _flag(name):
    return "--" + name.replace("_", "-")


# ------------------------------------------------------------------ flags


_TRAIN_TYPES = {"k": int, "train_snippets": int, "hidden": int, "attn_hidden": int}
_LOC_TYPES = {"smooth_window": int}


def _add_dataclass_flags(p, cls, skip=(), none_types=None):
    none_types = none_types or {}
    for f in fields(cls):
        if f.name in skip:
            continue
        default = f.default_factory() if f.default is MISSING else f.default
        if isinstance(default, bool):
            p.add_argument(_flag(f.name), action=argparse.BooleanOptionalAction, default=None)
        elif isinstance(default, (tuple, list)):
            p.add_argument(_flag(f.name), type=type(default[0]), nargs="+", default=None)
        elif default is None and f.name in none_types:
            p.add_argument(_flag(f.name), type=none_types[f.name], default=None)
        elif isinstance(default, (int, float, str)):
            p.add_argument(_flag(f.name), type=type(default), default=None)


def _add_train_flags(p):
    g = p.add_argument_group("training (TrainConfig fields)")
    g.add_argument("--preset", choices=("standard", "desk"), default="standard",
                   help="standard: library defaults (lr 1e-5, 100 epochs); desk: short synthetic-scale schedule")
    _add_dataclass_flags(g, TrainConfig, skip=("seed", "localization"), none_types=_TRAIN_TYPES)
    _add_loc_flags(p)


def _add_loc_flags(p):
    g = p.add_argument_group("localization (LocalizationConfig fields)")
    _add_dataclass_flags(g, LocalizationConfig, none_types=_LOC_TYPES)


def _loc_overrides(args):
    return {f.name: getattr(args, f.name) for f in fields(LocalizationConfig)
            if getattr(args, f.name, None) is not None}


def _train_config(args) -> TrainConfig:
    over = {f.name: getattr(args, f.name) for f in fields(TrainConfig)
            if f.name not in ("seed", "localization") and getattr(args, f.name, None) is not None}
    base = desk_config() if args.preset == "desk" else TrainConfig()
    loc = LocalizationConfig(**{**asdict(base.localization), **_loc_overrides(args)})
    return TrainConfig(**{**base.to_dict(), **over, "seed": args.seed, "localization": loc})


def _config_from_meta(meta) -> TrainConfig:
    cfg = dict(meta.get("config") or {})
    if not cfg:
        raise FormatError("checkpoint carries no training configuration")
    return TrainConfig(**cfg)


# --------------------------------------------------------------- commands


def cmd_synth(args):
    seed = _resolve_seed(args)
    over = {f.name: getattr(args, f.name) for f in fields(synth.SynthConfig)
            if f.name != "seed" and getattr(args, f.name, None) is not None}
    cfg = synth.SynthConfig(**over, seed=seed)
    manifest = RunManifest("synth", {**synth.config_dict(cfg), "val_fraction": args.val_fraction}, seed,
                           os.path.abspath(args.out), [os.path.abspath(args.out)], _args_dict(args))
    corpus = synth.generate(cfg)
    train_set, val, test = synth.split(corpus, args.val_fraction, seed)
    corpus = corpus.with_splits(train_set, val, test)
    synth.save(corpus, args.out)
    # the manifest lives inside the dataset directory, written after the atomic rename
    _write_manifest(args.out, manifest)
    print(json.dumps({"dataset": args.out, "videos": len(corpus.samples), "train": len(train_set),
                      "val": len(val), "test": len(test)}))


def _load_corpus(path):
    if not os.path.isdir(path):
        raise UsageError(f"dataset directory {path!r} does not exist")
    return synth.load(path)


def cmd_train(args):
    seed = _resolve_seed(args)
    config = _train_config(args)
    corpus = _load_corpus(args.data)
    ckpt = os.path.join(args.out, "checkpoint.hamn")
    log_path = os.path.join(args.out, "train_log.csv")
    os.makedirs(args.out, exist_ok=True)
    _write_manifest(args.out, RunManifest("train", config.to_dict(), seed, os.path.abspath(args.data),
                                          [ckpt, log_path], _args_dict(args)))
    if not corpus.train or not corpus.val:
        logger.info("dataset has no stored train/val split; carving val_fraction=%g", config.val_fraction)
    if args.dry_run:
        print(json.dumps({"dry_run": True, "k": config.resolved_k(corpus),
                          "snippets": config.resolved_snippets(corpus)}))
        return
    result = train(corpus, config, progress=lambda row: logger.info(
        "epoch %d total %.5f val_avg_map %s", row["epoch"], row["total"], row["val_avg_map"]))
    save_checkpoint(result.params, ckpt, result.meta)
    atomic_write_text(log_path, log_to_csv(result.log))
    print(json.dumps({"checkpoint": ckpt, "log": log_path, "best_epoch": result.best_epoch,
                      "best_val_avg_map": result.best_val_avg_map}))


def _split_samples(corpus, name):
    if name == "all":
        return list(corpus.samples)
    samples = corpus.subset(name)
    if not samples:
        raise UsageError(f"dataset has no videos in split {name!r}")
    return samples


def cmd_localize(args):
    params, meta = load_checkpoint(args.checkpoint)
    config = _config_from_meta(meta)
    config.localization = LocalizationConfig(**{**asdict(config.localization), **_loc_overrides(args)})
    corpus = _load_corpus(args.data)
    if (corpus.feature_dim, corpus.num_classes) != (params.feature_dim, params.num_classes):
        raise UsageError(f"checkpoint expects F={params.feature_dim}, c={params.num_classes}; dataset has "
                         f"F={corpus.feature_dim}, c={corpus.num_classes}")
    samples = _split_samples(corpus, args.split)
    prop_path = os.path.join(args.out, "proposals.jsonl")
    score_path = os.path.join(args.out, "scores.json")
    os.makedirs(args.out, exist_ok=True)
    _write_manifest(args.out, RunManifest("localize", asdict(config.localization), None,
                                          os.path.abspath(args.data), [prop_path, score_path], _args_dict(args)))
    proposals, scores = predict(params, samples, int(meta.get("k") or config.resolved_k(corpus)), config)
    write_jsonl(prop_path, proposals, {s.video_id: s.fps for s in samples if s.fps})
    atomic_write_text(score_path, json.dumps({v: [float(x) for x in p] for v, p in scores.items()},
                                             indent=1, sort_keys=True) + "\n")
    print(json.dumps({"proposals": prop_path, "count": len(proposals), "videos": len(samples)}))


def cmd_eval(args):
    corpus = _load_corpus(args.data)
    samples = _split_samples(corpus, args.split)
    ids = {s.video_id for s in samples}
    try:
        proposals = [p for p in read_jsonl(args.proposals) if p.video_id in ids]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"unreadable proposals file: {exc}", path=args.proposals) from exc
    ious = tuple(args.iou_thresholds) if args.iou_thresholds else THUMOS_IOUS
    json_path = os.path.join(args.out, "report.json")
    csv_path = os.path.join(args.out, "report.csv")
    os.makedirs(args.out, exist_ok=True)
    _write_manifest(args.out, RunManifest("eval", {"iou_thresholds": list(ious), "split": args.split}, None,
                                          os.path.abspath(args.data), [json_path, csv_path], _args_dict(args)))
    cls_map = None
    if args.scores:
        with open(args.scores) as fh:
            scores = json.load(fh)
        missing = [s.video_id for s in samples if s.video_id not in scores]
        if missing:
            raise FormatError(f"scores file lacks {len(missing)} videos, e.g. {missing[0]}", path=args.scores)
        cls_map = classification_map(np.array([scores[s.video_id] for s in samples]),
                                     np.array([s.label_vector(corpus.num_classes) for s in samples]))
    gt = [g for s in samples for g in s.segments]
    report = evaluate(proposals, gt, ious, cls_map)
    atomic_write_text(json_path, report.to_json())
    atomic_write_text(csv_path, report.to_csv())
    print(json.dumps({"avg_map": report.avg_map, "map_at": {f"{t:g}": m for t, m in report.map_at.items()},
                      "classification_map": cls_map}))


def _parse_value(text):
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    if text.lower() in ("true", "false", "on", "off"):
        return text.lower() in ("true", "on")
    return text


def cmd_ablate(args):
    seed = _resolve_seed(args)
    base = _train_config(args)
    corpus = _load_corpus(args.data)
    if not corpus.test:
        raise UsageError("ablation evaluates on the test split; the dataset has none")
    csv_path = os.path.join(args.out, "ablation.csv")
    svg_path = os.path.join(args.out, "ablation.svg")
    os.makedirs(args.out, exist_ok=True)
    if bool(args.axis) == bool(args.grid):
        raise UsageError("give exactly one of --axis or --grid")
    if args.grid:
        grid = {}
        for item in args.grid:
            key, _, vals = item.partition("=")
            if not vals:
                raise UsageError(f"--grid expects key=v1,v2,... got {item!r}")
            grid[key] = [_parse_value(v) for v in vals.split(",")]
        cfg_record = {**base.to_dict(), "grid": grid, "cap": args.cap}
    else:
        values = [_parse_value(v) for v in (args.values or [])]
        if args.axis != "loss_plan" and not values:
            raise UsageError("--values is required unless --axis loss_plan")
        cfg_record = {**base.to_dict(), "axis": args.axis, "values": values}
    _write_manifest(args.out, RunManifest("ablate", cfg_record, seed, os.path.abspath(args.data),
                                          [csv_path, svg_path], _args_dict(args)))
    if args.grid:
        best, rows = grid_search(corpus, grid, base, cap=args.cap)
        atomic_write_text(csv_path, rows_to_csv(rows))
        labels = [",".join(f"{k}={r[k]}" for k in sorted(grid)) for r in rows]
        svg = plots.bar_chart(labels, [r["val_avg_map"] for r in rows], "Grid search", "config", "val avg mAP")
        atomic_write_text(svg_path, svg)
        chosen = {k: getattr(best, k) if hasattr(best, k) else getattr(best.localization, k, None) for k in grid}
        print(json.dumps({"csv": csv_path, "best": chosen}))
        return
    rows = ablate(corpus, base, args.axis, values)
    atomic_write_text(csv_path, rows_to_csv(rows, ablation_columns(base.iou_thresholds)))
    numeric = all(isinstance(r["value"], (int, float)) and not isinstance(r["value"], bool) for r in rows)
    if numeric and len(rows) > 1:
        svg = plots.line_chart({"test avg mAP": [r["avg_map"] for r in rows]}, f"Ablation on {args.axis}",
                               args.axis, "avg mAP", x=[r["value"] for r in rows])
    else:
        svg = plots.bar_chart([r["value"] for r in rows], [r["avg_map"] for r in rows],
                              f"Ablation on {args.axis}", args.axis, "avg mAP")
    atomic_write_text(svg_path, svg)
    print(json.dumps({"csv": csv_path, "svg": svg_path, "rows": len(rows)}))


def _map_table(report: EvalReport) -> str:
    head = "| IoU | " + " | ".join(f"{t:g}" for t in report.map_at) + " | AVG |"
    sep = "|" + "---|" * (len(report.map_at) + 2)
    row = "| mAP | " + " | ".join(f"{100 * m:.1f}" for m in report.map_at.values()) + f" | {100 * report.avg_map:.1f} |"
    return "\n".join((head, sep, row))


def cmd_report(args):
    if not (args.log or args.eval_report or args.videos):
        raise UsageError("nothing to report: give --log, --eval-report and/or --videos")
    if args.videos and not (args.checkpoint and args.data):
        raise UsageError("--videos needs --checkpoint and --data")
    os.makedirs(args.out, exist_ok=True)
    artifacts = [os.path.join(args.out, "summary.md")]
    if args.log:
        artifacts.append(os.path.join(args.out, "loss_curves.svg"))
    artifacts += [os.path.join(args.out, f"timeline_{v}.svg") for v in args.videos or []]
    _write_manifest(args.out, RunManifest("report", {}, None, args.data and os.path.abspath(args.data),
                                          artifacts, _args_dict(args)))
    lines = ["# Run report", ""]
    if args.log:
        with open(args.log) as fh:
            try:
                rows = read_log_csv(fh.read())
            except (KeyError, ValueError) as exc:
                raise FormatError(f"unreadable training log: {exc!r}", path=args.log) from exc
        series = {c: [r[c] for r in rows] for c in ("bcl", "sal", "ssal", "hal", "sparsity", "guide", "total")}
        svg = plots.line_chart(series, "Training losses", "epoch", "mean loss", x=[r["epoch"] for r in rows])
        atomic_write_text(artifacts[1], svg)
        evals = [r for r in rows if not math.isnan(r["val_avg_map"])]
        lines += ["## Training", "", f"{len(rows)} epochs; loss curves in `loss_curves.svg`.", ""]
        if evals:
            best = max(evals, key=lambda r: r["val_avg_map"])
            lines += [f"Best validation avg mAP {best['val_avg_map']:.4f} at epoch {best['epoch']}.", ""]
    if args.eval_report:
        with open(args.eval_report) as fh:
            try:
                report = EvalReport.from_json(fh.read())
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise FormatError(f"unreadable evaluation report: {exc!r}", path=args.eval_report) from exc
        lines += ["## Localization mAP (%)", "", _map_table(report), ""]
        if report.classification_map is not None:
            lines += [f"Classification mAP: {100 * report.classification_map:.1f}", ""]
    if args.videos:
        params, meta = load_checkpoint(args.checkpoint)
        config = _config_from_meta(meta)
        corpus = _load_corpus(args.data)
        by_id = {s.video_id: s for s in corpus.samples}
        unknown = [v for v in args.videos if v not in by_id]
        if unknown:
            raise UsageError(f"unknown video ids {unknown}")
        samples = [by_id[v] for v in args.videos]
        k = int(meta.get("k") or config.resolved_k(corpus))
        proposals, _ = predict(params, samples, k, config)
        outputs = infer(params, samples, k, config)
        lines += ["## Timelines", ""]
        for s, out in zip(samples, outputs):
            preds = [p for p in proposals if p.video_id == s.video_id]
            cls = s.labels[0]
            scores = {"attention": out.attn.data.tolist(),
                      f"CAS class {cls}": out.cas_attn.data[:, cls].tolist()}
            svg = plots.timeline(s.length, s.segments, preds, scores, f"{s.video_id}", s.fps)
            atomic_write_text(os.path.join(args.out, f"timeline_{s.video_id}.svg"), svg)
            lines.append(f"- `timeline_{s.video_id}.svg`: {len(s.segments)} ground-truth segments, "
                         f"{len(preds)} proposals")
        lines.append("")
    atomic_write_text(artifacts[0], "\n".join(lines))
    print(json.dumps({"summary": artifacts[0]}))


def cmd_rerun(args):
    with open(args.manifest) as fh:
        try:
            m = RunManifest.from_json(fh.read())
        except (json.JSONDecodeError, TypeError) as exc:
            raise FormatError(f"unreadable run manifest: {exc!r}", path=args.manifest) from exc
    argv = m.args.get("argv")
    if not argv:
        raise FormatError("run manifest has no recorded arguments", path=args.manifest)
    if args.out:
        argv = _replace_out(argv, args.out)
    return main(argv)


def _replace_out(argv, out):
    argv = list(argv)
    i = argv.index("--out")
    argv[i + 1] = out
    return argv


def _args_dict(args):
    """Materialised arguments, replayable by ``hamloc rerun``."""
    d = {k: v for k, v in vars(args).items() if k not in ("func",)}
    d["argv"] = _to_argv(args)
    return d


def _to_argv(args):
    argv = [args.command]
    parser_actions = _SUBPARSERS[args.command]._actions
    for act in parser_actions:
        if not act.option_strings or act.dest in ("help",):
            continue
        v = getattr(args, act.dest, None)
        if v is None or v is False and not isinstance(act, argparse.BooleanOptionalAction):
            continue
        flag = act.option_strings[0]
        if isinstance(act, argparse.BooleanOptionalAction):
            argv.append(flag if v else "--no-" + flag[2:])
        elif isinstance(act, argparse._StoreTrueAction):
            argv.append(flag)
        elif isinstance(v, list):
            if act.dest == "grid":
                for item in v:
                    argv += [flag, item]
            else:
                argv += [flag] + [repr(x) if isinstance(x, float) else str(x) for x in v]
        else:
            argv += [flag, repr(v) if isinstance(v, float) else str(v)]
    return argv


# ------------------------------------------------------------------ parser

_SUBPARSERS = {}


def build_parser():
    parser = _Parser(prog="hamloc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--val-fraction", type=float, default=0.3)
    _add_dataclass_flags(p, synth.SynthConfig, skip=("seed",))
    p.set_defaults(func=cmd_synth)
    _SUBPARSERS["synth"] = p

    p = sub.add_parser("train", help="train and keep the best-validation checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--dry-run", action="store_true", help="validate config and data, write the manifest, stop")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)
    _SUBPARSERS["train"] = p

    p = sub.add_parser("localize", help="write proposals for one split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test", "all"))
    p.add_argument("--out", required=True)
    _add_loc_flags(p)
    p.set_defaults(func=cmd_localize)
    _SUBPARSERS["localize"] = p

    p = sub.add_parser("eval", help="mAP of a proposals file against a dataset split")
    p.add_argument("--proposals", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test", "all"))
    p.add_argument("--iou-thresholds", type=float, nargs="+")
    p.add_argument("--scores", help="per-video class scores (from localize) for classification mAP")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)
    _SUBPARSERS["eval"] = p

    p = sub.add_parser("ablate", help="one-axis sweep, the loss-combination table, or a grid search")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--axis", help="TrainConfig/LocalizationConfig field, loss name, 'lambda' or 'loss_plan'")
    p.add_argument("--values", nargs="+")
    p.add_argument("--grid", action="append", metavar="FIELD=V1,V2")
    p.add_argument("--cap", type=int, default=64)
    _add_train_flags(p)
    p.set_defaults(func=cmd_ablate)
    _SUBPARSERS["ablate"] = p

    p = sub.add_parser("report", help="SVG charts and a Markdown summary")
    p.add_argument("--out", required=True)
    p.add_argument("--log")
    p.add_argument("--eval-report")
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--videos", nargs="+")
    p.set_defaults(func=cmd_report)
    _SUBPARSERS["report"] = p

    p = sub.add_parser("rerun", help="replay a run manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_rerun)
    _SUBPARSERS["rerun"] = p
    return parser


def _fail(kind, message, code):
    print(json.dumps({"error": kind, "message": str(message).replace("\n", " ")}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail("usage", exc, EXIT_USAGE)
    if not args.command:
        return _fail("usage", "a command is required: " + ", ".join(_SUBPARSERS), EXIT_USAGE)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        rc = args.func(args)
        return rc or EXIT_OK
    except FormatError as exc:
        return _fail("format", exc, EXIT_FORMAT)
    except NumericError as exc:
        return _fail("numeric", exc, EXIT_NUMERIC)
    except (UsageError, ValueError, OSError) as exc:
        return _fail("usage", exc, EXIT_USAGE)


if __name__ == "__main__":
    sys.exit(main())
