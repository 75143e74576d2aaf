"""Run-directory level operations behind the CLI subcommands."""

from __future__ import annotations

import json
import logging
import shutil
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from .datagen import SPLITS, load_manifest, read_wav
from .errors import DependencyError
from .evaluation import (
    CLIP_DURATION,
    EventList,
    PSDSParams,
    class_windows,
    decode,
    intersection_match,
    median_filter,
    psds,
    psds_from_detections,
    read_events,
    weak_mask,
    write_events,
)
from .features import extract, feature_stats, write_cache
from .model import SEDModel
from .numerics.tensorio import save_tensor
from .training import FeatureSet, MetricsLog, TrainConfig, TrainState, predict_all, run_stage

logger = logging.getLogger(__name__)

REFERENCE_THRESHOLDS = (0.25, 0.5, 0.75)


def featurize(data_dir, out_dir) -> Path:
    data_dir, out = Path(data_dir), Path(out_dir)
    if not (data_dir / "manifest.json").exists():
        raise DependencyError(f"{data_dir} has no manifest.json; run `datagen` first")
    manifest, splits = load_manifest(data_dir)
    out.mkdir(parents=True, exist_ok=True)
    strong_specs = []
    n_frames = n_mels = None
    for split in SPLITS:
        (out / split).mkdir(exist_ok=True)
        for cid in splits[split]:
            spec = extract(read_wav(data_dir / split / f"{cid}.wav"))
            n_frames, n_mels = spec.shape
            write_cache(out / split, cid, spec)
            if split == "strong":
                strong_specs.append(spec)
    mu, sigma = feature_stats(strong_specs)
    save_tensor(out / "stats.jtt", np.stack([mu, sigma]))
    for name in ("strong.tsv", "weak.tsv", "validation.tsv"):
        shutil.copyfile(data_dir / name, out / name)
    doc = {"classes": manifest.class_names, "categories": manifest.categories, "splits": splits,
           "n_frames": n_frames, "n_mels": n_mels, "source": str(data_dir)}
    (out / "manifest.json").write_text(json.dumps(doc, indent=2))
    return out


def write_config(out: Path, run_config: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(run_config, indent=2, sort_keys=True))


def load_state(stage: str, cfg: TrainConfig, init=None, from_scratch: bool = False) -> TrainState:
    if stage == "pretrain" or (stage == "adapt" and from_scratch):
        return TrainState(SEDModel(cfg.model, seed=cfg.seed))
    if init is None:
        raise DependencyError(f"`{stage}` needs --init pointing at the previous stage's run directory"
                              + (" (or --from-scratch)" if stage == "adapt" else ""))
    ckpt = Path(init) / "checkpoint"
    if not (ckpt / "state.json").exists():
        raise DependencyError(f"{init} holds no checkpoint; run the previous stage first")
    return TrainState.load(ckpt)


def train_stage(stage: str, features, out, cfg: TrainConfig, init=None, from_scratch: bool = False,
                run_config: dict | None = None) -> TrainState:
    out = Path(out)
    write_config(out, run_config or {"stage": stage, "train": cfg.to_dict()})
    state = load_state(stage, cfg, init, from_scratch)
    splits = cfg.pretrain_splits if stage == "pretrain" else ("strong", "weak", "unlabeled")
    data = FeatureSet.load(features, splits)
    log = MetricsLog(out / "metrics.jsonl")
    t0 = time.process_time()
    run_stage(stage, cfg.steps(stage), state, data, cfg, log, checkpoint_dir=out / "checkpoints")
    state.save(out / "checkpoint")
    report = {"stage": stage, "steps": cfg.steps(stage), "history": state.history,
              "summary": state.summary, "num_parameters": state.student.num_parameters(),
              "cpu_seconds": time.process_time() - t0}
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    return state


def postprocess(strong: np.ndarray, weak: np.ndarray, categories: Sequence[str], weak_rule: str = "min",
                filter_probabilities: bool = True) -> np.ndarray:
    p = weak_mask(strong, weak, weak_rule)
    return median_filter(p, class_windows(categories)) if filter_probabilities else p


def score_model(model: SEDModel, data: FeatureSet, params: PSDSParams = PSDSParams(),
                n_thresholds: int = 50, weak_rule: str = "min",
                filter_binary: bool = False) -> tuple[dict, dict[str, np.ndarray]]:
    ids = data.splits["validation"]
    strong, weak = predict_all(model, data.features["validation"])
    probs = {cid: postprocess(strong[i], weak[i], data.categories, weak_rule, not filter_binary)
             for i, cid in enumerate(ids)}
    windows = class_windows(data.categories) if filter_binary else None
    result = psds(probs, data.validation_events, data.classes, params, n_thresholds,
                  binary_windows=windows)
    hours = CLIP_DURATION * len(ids) / 3600.0
    per_class = {}
    for tau in REFERENCE_THRESHOLDS:
        dets = {cid: decode(p, tau, data.classes, cid) for cid, p in probs.items()}
        tp = dict.fromkeys(data.classes, 0)
        n = dict.fromkeys(data.classes, 0)
        for cid in ids:
            res = intersection_match(dets[cid], data.validation_events[cid], params, data.classes)
            for c, cc in res.per_class.items():
                tp[c] += cc.tp
                n[c] += cc.n_gt
        per_class[f"{tau:.2f}"] = {c: (tp[c] / n[c] if n[c] else None) for c in data.classes}
    report = {"psds": result.psds, "psds_params": params.__dict__, "n_thresholds": n_thresholds,
              "per_class_tpr": per_class, "audio_hours": hours, "roc": result.to_json()}
    return report, probs


def evaluate_run(features, init, out, params: PSDSParams = PSDSParams(), n_thresholds: int = 50,
                 use_teacher: bool = False, weak_rule: str = "min", filter_binary: bool = False,
                 run_config: dict | None = None) -> dict:
    out = Path(out)
    write_config(out, run_config or {"init": str(init)})
    ckpt = Path(init) / "checkpoint"
    if not (ckpt / "state.json").exists():
        raise DependencyError(f"{init} holds no checkpoint; run `finetune` first")
    state = TrainState.load(ckpt)
    model = state.teacher if use_teacher and state.teacher is not None else state.student
    data = FeatureSet.load(features, ("validation",))
    report, probs = score_model(model, data, params, n_thresholds, weak_rule, filter_binary)
    write_events(out / "detections_0.50.tsv",
                 [decode(p, 0.5, data.classes, cid) for cid, p in probs.items()])
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    return report


def evaluate_files(detection_files: Sequence, ground_truth, audio_seconds: float, out,
                   params: PSDSParams = PSDSParams(), classes: Sequence[str] | None = None,
                   run_config: dict | None = None) -> dict:
    """Score pre-decoded detections; each file is one operating point."""
    out = Path(out)
    write_config(out, run_config or {})
    gts = read_events(ground_truth)
    if classes is None:
        classes = sorted({ev.label for el in gts.values() for ev in el})
    sweep = []
    for i, path in enumerate(detection_files):
        sweep.append((float(i), read_events(path)))
    result = psds_from_detections(sweep, gts, classes, audio_seconds, params)
    report = {"psds": result.psds, "psds_params": params.__dict__, "roc": result.to_json()}
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    return report
