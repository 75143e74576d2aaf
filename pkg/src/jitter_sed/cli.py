"""Command-line entry point: ``jitter-sed <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import pipeline
from .datagen import DatasetManifest, build_dataset
from .errors import JitterError
from .evaluation import CLIP_DURATION, PSDSParams, read_events
from .perturb import ShuffleSpec, apply
from .training import TrainConfig

logger = logging.getLogger("jitter_sed")

BASELINE_LABEL = "Baseline (no pretraining)"


# --- argument parsing -------------------------------------------------------

def _add_common(p: argparse.ArgumentParser, out_required: bool = True) -> None:
    p.add_argument("--out", required=out_required, help="output run directory")
    p.add_argument("--seed", type=int, default=0)


def _add_train(p: argparse.ArgumentParser) -> None:
    p.add_argument("--features", required=True, help="directory written by `featurize`")
    p.add_argument("--scale", type=float, default=0.1, help="fraction of 6000 steps per stage")
    p.add_argument("--checkpoint-every", type=int, default=0)


def _add_shuffle(p: argparse.ArgumentParser) -> None:
    d = ShuffleSpec()
    p.add_argument("--mode", choices=("block", "frame", "multitask"), default=d.mode)
    p.add_argument("--p-b", type=float, default=d.p_b)
    p.add_argument("--p-fb", type=float, default=d.p_fb)
    p.add_argument("--p-ff", type=float, default=d.p_ff)
    p.add_argument("--flip-rate", type=float, default=d.flip_rate)
    p.add_argument("--noise", type=float, default=d.noise_scale, help="noise scale lambda")
    p.add_argument("--multitask-order", choices=("block-first", "frame-first"), default=d.multitask_order)
    p.add_argument("--parallel-multitask", action="store_true",
                   help="apply both perturbations every step and sum the losses")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jitter-sed", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", help="synthesise the toy dataset")
    _add_common(p)
    p.add_argument("--sizes", type=int, nargs=4, metavar=("STRONG", "WEAK", "UNLABELED", "VALIDATION"),
                   default=(200, 200, 400, 100))

    p = sub.add_parser("featurize", help="compute log-mel caches and normalisation stats")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("pretrain", help="shuffle-reconstruction pretraining")
    _add_common(p)
    _add_train(p)
    _add_shuffle(p)

    p = sub.add_parser("adapt", help="train SED/AT heads on frozen features")
    _add_common(p)
    _add_train(p)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--init", help="pretrain run directory")
    group.add_argument("--from-scratch", action="store_true", help="skip pretraining (control run)")

    p = sub.add_parser("finetune", help="end-to-end mean-teacher fine-tuning")
    _add_common(p)
    _add_train(p)
    p.add_argument("--init", required=True, help="adapt run directory")

    p = sub.add_parser("evaluate", help="PSDS of a trained run or of detection files")
    p.add_argument("--out", required=True)
    p.add_argument("--features", help="feature directory (with --init)")
    p.add_argument("--init", help="finetune run directory")
    p.add_argument("--teacher", action="store_true", help="score the EMA teacher instead of the student")
    p.add_argument("--weak-rule", choices=("min", "hard"), default="min")
    p.add_argument("--filter-binary", action="store_true",
                   help="median-filter thresholded decisions instead of probabilities")
    p.add_argument("--thresholds", type=int, default=50)
    p.add_argument("--detections", nargs="+", help="detection TSVs, one per operating point")
    p.add_argument("--ground-truth", help="ground-truth TSV (with --detections)")
    p.add_argument("--audio-seconds", type=float,
                   help="total evaluated audio; default 10 s per ground-truth clip")

    p = sub.add_parser("ablate", help="run the shuffle-configuration grids and emit tables")
    _add_common(p)
    _add_train(p)
    p.add_argument("--seeds", type=int, default=1, help="runs per configuration")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--tables", nargs="+", choices=("I", "II", "III"), default=["I", "II", "III"])

    p = sub.add_parser("demo-perturb", help="perturb a toy sequence and dump the record")
    _add_common(p)
    _add_shuffle(p)
    p.add_argument("--frames", type=int, default=100)
    p.add_argument("--dim", type=int, default=4)
    p.add_argument("--iteration", type=int, default=0)
    return parser


# --- helpers ----------------------------------------------------------------

def shuffle_spec(args) -> ShuffleSpec:
    return ShuffleSpec(p_b=args.p_b, p_fb=args.p_fb, p_ff=args.p_ff, flip_rate=args.flip_rate,
                       noise_scale=args.noise, mode=args.mode, seed=args.seed,
                       multitask_order=args.multitask_order, parallel_multitask=args.parallel_multitask)


def train_config(args, shuffle: ShuffleSpec | None = None) -> TrainConfig:
    cfg = TrainConfig(seed=args.seed, scale=args.scale, checkpoint_every=args.checkpoint_every)
    if shuffle is not None:
        cfg = replace(cfg, shuffle=shuffle)
    return cfg


def run_config(args, **extra) -> dict:
    doc = {k: v for k, v in vars(args).items() if k != "verbose"}
    doc.update(extra)
    return doc


# --- subcommands ------------------------------------------------------------

def cmd_datagen(args) -> dict:
    sizes = dict(zip(("strong", "weak", "unlabeled", "validation"), args.sizes))
    manifest = DatasetManifest(sizes=sizes, seed=args.seed)
    out = build_dataset(manifest, args.out)
    pipeline.write_config(out, run_config(args))
    return {"out": str(out)}


def cmd_featurize(args) -> dict:
    out = pipeline.featurize(args.data, args.out)
    pipeline.write_config(out, run_config(args))
    return {"out": str(out)}


def cmd_stage(args) -> dict:
    shuffle = shuffle_spec(args) if args.command == "pretrain" else None
    cfg = train_config(args, shuffle)
    state = pipeline.train_stage(args.command, args.features, args.out, cfg,
                                 init=getattr(args, "init", None),
                                 from_scratch=getattr(args, "from_scratch", False),
                                 run_config=run_config(args, train=cfg.to_dict()))
    return {"stage": args.command, "step": state.step, "summary": state.summary}


def cmd_evaluate(args) -> dict:
    params = PSDSParams()
    if args.detections:
        if not args.ground_truth:
            raise JitterError("--detections needs --ground-truth")
        seconds = args.audio_seconds
        if seconds is None:
            seconds = CLIP_DURATION * len(read_events(args.ground_truth))
        report = pipeline.evaluate_files(args.detections, args.ground_truth, seconds, args.out, params,
                                         run_config=run_config(args))
    else:
        if not (args.init and args.features):
            raise JitterError("evaluate needs --init and --features, or --detections and --ground-truth")
        report = pipeline.evaluate_run(args.features, args.init, args.out, params, args.thresholds,
                                       args.teacher, args.weak_rule, args.filter_binary,
                                       run_config=run_config(args))
    return {"psds": report["psds"]}


def cmd_demo_perturb(args) -> dict:
    spec = shuffle_spec(args)
    x = np.random.default_rng(args.seed).normal(size=(args.frames, args.dim))
    y, record, kind = apply(x, spec, args.iteration)
    out = Path(args.out)
    pipeline.write_config(out, run_config(args))
    doc = {"kind": kind, "spec": spec.to_dict(), "iteration": args.iteration,
           "before": x.tolist(), "after": y.tolist(), "record": record.to_json()}
    (out / "perturbation.json").write_text(json.dumps(doc, indent=2))
    return {"kind": kind, "displaced_frames": record.displaced_frames()}


# --- ablation grids ---------------------------------------------------------

def _row(label, columns, **spec):
    return {"label": label, "columns": columns, "spec": spec}


def ablation_tables() -> dict:
    """Row definitions; ``spec`` None marks the no-pretraining baseline."""
    dash = "-"
    best = dict(mode="multitask", p_b=0.75, p_fb=0.5, p_ff=0.25)
    t1 = [{"section": None, "rows": [{"label": BASELINE_LABEL, "columns": [dash] * 3, "spec": None}]},
          {"section": "Block-Level Shuffle",
           "rows": [_row("JiTTER (Block Shuffle)", [p, dash, dash], mode="block", p_b=p, p_fb=0.0, p_ff=0.0)
                    for p in (0.25, 0.5, 0.75)]},
          {"section": "Frame-Level Shuffle",
           "rows": [_row("JiTTER (Frame Shuffle)", [dash, fb, ff], mode="frame", p_b=0.0, p_fb=fb, p_ff=ff)
                    for fb in (0.25, 0.5, 0.75) for ff in (0.25, 0.5, 0.75)]},
          {"section": "Multitask Learning (Block + Frame-Level Shuffle)",
           "rows": [_row("JiTTER (Multitask) - Best" if (b, fb, ff) == (0.75, 0.5, 0.25) else "JiTTER (Multitask)",
                         [b, fb, ff], mode="multitask", p_b=b, p_fb=fb, p_ff=ff)
                    for b, fb, ff in ((0.75, 0.5, 0.25), (0.5, 0.5, 0.25), (0.75, 0.25, 0.25),
                                      (0.75, 0.75, 0.25), (0.75, 0.5, 0.5))]}]
    t2 = [{"section": None, "rows": [_row("JiTTER (Multitask)", [dash], **best)]},
          {"section": None, "rows": [_row("JiTTER (Multitask + Flip)", [r], flip_rate=r, **best)
                                     for r in (0.25, 0.5, 0.75)]}]
    t3 = [{"section": None, "rows": [_row("JiTTER (Multitask)", [dash], **best)]},
          {"section": None, "rows": [_row("JiTTER (Multitask + Noise)", [lam], noise_scale=lam, **best)
                                     for lam in (0.05, 0.1, 0.2, 0.4)]}]
    return {
        "I": {"title": "Block-level, frame-level and multitask shuffle", "headers": ["Method", "p_b", "p_fb", "p_ff"],
              "groups": t1},
        "II": {"title": "Block flip on the multitask configuration", "headers": ["Method", "flip rate"], "groups": t2},
        "III": {"title": "Noise injection on the multitask configuration", "headers": ["Method", "Noise Scale λ"],
                "groups": t3},
    }


def _cell_key(spec: dict | None) -> str:
    return "baseline" if spec is None else json.dumps(spec, sort_keys=True)


def run_cell(features: str, root: str, spec: dict | None, seed: int, scale: float) -> float:
    """Full pipeline for one configuration and seed; returns PSDS."""
    root = Path(root)
    shuffle = ShuffleSpec(**{**(spec or {}), "seed": seed})
    cfg = TrainConfig(seed=seed, scale=scale, shuffle=shuffle)
    if spec is None:
        pipeline.train_stage("adapt", features, root / "adapt", cfg, from_scratch=True)
    else:
        pipeline.train_stage("pretrain", features, root / "pretrain", cfg)
        pipeline.train_stage("adapt", features, root / "adapt", cfg, init=root / "pretrain")
    pipeline.train_stage("finetune", features, root / "finetune", cfg, init=root / "adapt")
    return pipeline.evaluate_run(features, root / "finetune", root / "evaluate")["psds"]


def _fmt(v) -> str:
    return v if isinstance(v, str) else f"{v:g}"


def render_markdown(name: str, table: dict, scores: dict) -> str:
    headers = table["headers"] + ["PSDS (mean)"]
    lines = [f"### Table {name}: {table['title']}", "", "| " + " | ".join(headers) + " |",
             "|" + "|".join(["---"] + [":---:"] * (len(headers) - 1)) + "|"]
    for group in table["groups"]:
        if group["section"]:
            lines.append(f"| **{group['section']}** |" + " |" * (len(headers) - 1))
        for row in group["rows"]:
            s = scores[_cell_key(row["spec"])]
            lines.append("| " + " | ".join([row["label"]] + [_fmt(c) for c in row["columns"]]
                                            + [f"{s['mean']:.3f}"]) + " |")
    lines += ["", "PSDS is the mean over seeds; per-seed values and the max are in ablation.json."]
    return "\n".join(lines)


def cmd_ablate(args) -> dict:
    tables = {k: v for k, v in ablation_tables().items() if k in args.tables}
    out = Path(args.out)
    pipeline.write_config(out, run_config(args))
    cells = {}
    for table in tables.values():
        for group in table["groups"]:
            for row in group["rows"]:
                cells.setdefault(_cell_key(row["spec"]), row["spec"])
    seeds = [args.seed + i for i in range(args.seeds)]
    jobs = []
    for i, (key, spec) in enumerate(cells.items()):
        for s in seeds:
            jobs.append((key, s, args.features, str(out / "cells" / f"cell_{i:02d}" / f"seed_{s}"), spec))
    results: dict[str, dict[int, float]] = {k: {} for k in cells}
    if args.workers > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            futures = [(key, s, pool.submit(run_cell, f, d, spec, s, args.scale)) for key, s, f, d, spec in jobs]
            for key, s, fut in futures:
                results[key][s] = fut.result()
    else:
        for key, s, f, d, spec in jobs:
            logger.info("ablation cell %s seed %d", key, s)
            results[key][s] = run_cell(f, d, spec, s, args.scale)
    scores = {k: {"per_seed": [v[s] for s in seeds], "mean": float(np.mean([v[s] for s in seeds])),
                  "max": float(np.max([v[s] for s in seeds]))} for k, v in results.items()}
    doc, md = {}, []
    for name, table in tables.items():
        rows = []
        for group in table["groups"]:
            for row in group["rows"]:
                rows.append({"section": group["section"], "label": row["label"],
                             "columns": dict(zip(table["headers"][1:], row["columns"])),
                             "spec": row["spec"], **scores[_cell_key(row["spec"])]})
        doc[name] = {"title": table["title"], "headers": table["headers"] + ["PSDS"], "rows": rows}
        md.append(render_markdown(name, table, scores))
    doc["seeds"] = seeds
    (out / "ablation.json").write_text(json.dumps(doc, indent=2))
    (out / "ablation.md").write_text("\n\n".join(md) + "\n")
    print("\n\n".join(md))
    return {"tables": list(tables), "cells": len(cells)}


COMMANDS = {"datagen": cmd_datagen, "featurize": cmd_featurize, "pretrain": cmd_stage, "adapt": cmd_stage,
            "finetune": cmd_stage, "evaluate": cmd_evaluate, "ablate": cmd_ablate,
            "demo-perturb": cmd_demo_perturb}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        result = COMMANDS[args.command](args)
    except (JitterError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # unexpected; keep the traceback visible with -v
        if args.verbose:
            raise
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(result, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
