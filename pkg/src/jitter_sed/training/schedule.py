"""
Three-stage training: shuffle-reconstruction pretraining of the context
network, head adaptation on frozen features, then end-to-end fine-tuning with
a mean teacher.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .. import numerics as nx
from ..errors import CheckpointError, ScheduleError
from ..model import ModelConfig, SEDModel
from ..perturb import ShuffleSpec, apply, apply_both, clip_seed
from .augment import AugmentationConfig, augment
from .data import EpochSampler, FeatureSet, SEDBatcher
from .losses import LossWeights, normalized_rec_loss, rec_loss, sed_loss
from .optim import AdamW, cosine_lr
from .teacher import ema_update

logger = logging.getLogger(__name__)

STAGES = ("pretrain", "adapt", "finetune")
TRAINABLE = {"pretrain": ("context", "recon"), "adapt": ("sed", "at"),
             "finetune": ("encoder", "context", "sed", "at")}


@dataclass
class TrainConfig:
    seed: int = 0
    scale: float = 0.1
    base_steps: int = 6000
    pretrain_batch: int = 16
    sed_batch: int = 16
    batch_ratio: tuple[int, int, int] = (1, 1, 2)
    lr_pretrain: float = 1e-3
    lr_adapt: float = 1e-3
    lr_finetune: float = 1e-3
    weight_decay: float = 1e-4
    ema_decay: float = 0.999
    loss_weights: LossWeights = field(default_factory=LossWeights)
    consistency_in_adapt: bool = True
    shuffle: ShuffleSpec = field(default_factory=ShuffleSpec)
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    pretrain_splits: tuple[str, ...] = ("strong", "weak", "unlabeled")
    probe_clips: int = 32
    checkpoint_every: int = 0

    def steps(self, stage: str) -> int:
        return max(1, int(round(self.base_steps * self.scale)))

    def lr(self, stage: str) -> float:
        return {"pretrain": self.lr_pretrain, "adapt": self.lr_adapt, "finetune": self.lr_finetune}[stage]

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["model"] = self.model.to_dict()
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        doc = dict(doc)
        doc["loss_weights"] = LossWeights(**doc.get("loss_weights", {}))
        doc["shuffle"] = ShuffleSpec(**doc.get("shuffle", {}))
        aug = dict(doc.get("augmentation", {}))
        if "filter_bands" in aug:
            aug["filter_bands"] = tuple(aug["filter_bands"])
        doc["augmentation"] = AugmentationConfig(**aug)
        doc["model"] = ModelConfig.from_dict(doc["model"]) if "model" in doc else ModelConfig()
        for key in ("batch_ratio", "pretrain_splits"):
            if key in doc:
                doc[key] = tuple(doc[key])
        return cls(**doc)


class MetricsLog:
    """Append-only JSONL of per-step metrics; key order and float formatting are fixed."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self.records: list[dict] = []
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")

    def write(self, record: dict) -> None:
        self.records.append(record)
        if self.path:
            with self.path.open("a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")


@dataclass
class TrainState:
    student: SEDModel
    teacher: SEDModel | None = None
    step: int = 0
    history: list[str] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    optimizer: AdamW | None = None

    @property
    def stage(self) -> str | None:
        return self.history[-1] if self.history else None

    def save(self, directory) -> Path:
        d = Path(directory)
        self.student.save(d / "student")
        if self.teacher is not None:
            self.teacher.save(d / "teacher")
        (d / "state.json").write_text(json.dumps(
            {"step": self.step, "history": self.history, "summary": self.summary}, indent=2, sort_keys=True))
        return d

    @classmethod
    def load(cls, directory) -> "TrainState":
        d = Path(directory)
        if not (d / "state.json").exists():
            raise CheckpointError(f"no training state at {d}")
        doc = json.loads((d / "state.json").read_text())
        student = SEDModel.load(d / "student")
        teacher = SEDModel.load(d / "teacher") if (d / "teacher" / "manifest.json").exists() else None
        return cls(student, teacher, doc["step"], list(doc["history"]), doc.get("summary", {}))


def check_order(history: Sequence[str], stage: str) -> None:
    if stage not in STAGES:
        raise ScheduleError(f"unknown stage {stage!r}")
    if stage in history:
        raise ScheduleError(f"stage {stage!r} already ran (history {list(history)})")
    allowed = {"pretrain": [[]], "adapt": [[], ["pretrain"]],
               "finetune": [["adapt"], ["pretrain", "adapt"]]}[stage]
    if list(history) not in allowed:
        raise ScheduleError(f"stage {stage!r} cannot follow {list(history)}; order is pretrain -> adapt -> finetune")


def encode_all(model: SEDModel, x: np.ndarray, chunk: int = 50) -> np.ndarray:
    with nx.no_grad():
        return np.concatenate([model.encode(x[i:i + chunk]).data for i in range(0, len(x), chunk)])


def predict_all(model: SEDModel, x: np.ndarray, chunk: int = 25) -> tuple[np.ndarray, np.ndarray]:
    strong, weak = [], []
    with nx.no_grad():
        for i in range(0, len(x), chunk):
            s, w = model.forward(x[i:i + chunk])
            strong.append(s.data)
            weak.append(w.data)
    return np.concatenate(strong), np.concatenate(weak)


def _perturb_batch(latents: np.ndarray, clip_index: np.ndarray, spec: ShuffleSpec, iteration: int):
    """Perturbed copies of each clip; returns (block batch or None, frame batch or None)."""
    blocks, frames = [], []
    for x, ci in zip(latents, clip_index):
        s = replace(spec, seed=clip_seed(spec.seed, int(ci)))
        if spec.parallel_multitask and spec.mode == "multitask":
            (xb, _), (xf, _) = apply_both(x, s, iteration)
            blocks.append(xb)
            frames.append(xf)
        else:
            xp, _, kind = apply(x, s, iteration)
            (blocks if kind == "block" else frames).append(xp)
    return (np.stack(blocks) if blocks else None), (np.stack(frames) if frames else None)


def probe_loss(model: SEDModel, latents: np.ndarray, spec: ShuffleSpec) -> float:
    """Mean normalised reconstruction loss on fixed perturbations (iterations 0 and 1)."""
    idx = np.arange(len(latents))
    vals = []
    with nx.no_grad():
        for it in (0, 1):
            for xp in _perturb_batch(latents, idx + 1_000_003, spec, it):
                if xp is not None:
                    vals.append(normalized_rec_loss(model.reconstruct(model.context_forward(xp)), latents))
    return float(np.mean(vals))


def _pretrain(state: TrainState, data: FeatureSet, cfg: TrainConfig, steps: int, log: MetricsLog) -> None:
    model = state.student
    pool = np.concatenate([data.features[s] for s in cfg.pretrain_splits])
    latents = encode_all(model, pool)
    probe = latents[:min(cfg.probe_clips, len(latents))]
    spec = replace(cfg.shuffle, seed=cfg.seed)
    start = probe_loss(model, probe, spec)
    log.write({"stage": "pretrain", "event": "probe", "step": state.step, "probe_rec_loss_norm": start})
    opt = state.optimizer = AdamW(model.trainable(), cfg.lr_pretrain, weight_decay=cfg.weight_decay)
    sampler = EpochSampler(len(latents), np.random.default_rng(np.random.SeedSequence([cfg.seed, 1])))
    for i in range(steps):
        idx = sampler.take(cfg.pretrain_batch)
        target = latents[idx]
        xb, xf = _perturb_batch(target, idx, spec, i)
        net = lambda t: model.reconstruct(model.context_forward(t))  # noqa: E731
        with nx.Tape() as tape:
            terms = {}
            total = None
            for name, xp in (("block", xb), ("frame", xf)):
                if xp is None:
                    continue
                pred = net(xp)
                loss = rec_loss(pred, target) * (1.0 / len(target))
                terms[name] = (loss, normalized_rec_loss(pred, target))
                total = loss if total is None else total + loss
        tape.backward(total)
        lr = cosine_lr(cfg.lr_pretrain, i, steps)
        opt.step(lr)
        rec = {"stage": "pretrain", "step": state.step, "lr": lr, "rec_loss": float(total.data)}
        for name, (loss, norm) in terms.items():
            rec[f"rec_loss_{name}"] = float(loss.data)
            rec[f"rec_loss_norm_{name}"] = norm
        log.write(rec)
        state.step += 1
    end = probe_loss(model, probe, spec)
    log.write({"stage": "pretrain", "event": "probe", "step": state.step, "probe_rec_loss_norm": end})
    state.summary["pretrain"] = {"probe_rec_loss_norm_start": start, "probe_rec_loss_norm_end": end}


def _sed_stage(stage: str, state: TrainState, data: FeatureSet, cfg: TrainConfig, steps: int,
               log: MetricsLog, checkpoint_dir=None) -> None:
    student = state.student
    if state.teacher is None:
        state.teacher = student.copy()
    teacher = state.teacher
    teacher.set_trainable(())
    opt = state.optimizer = AdamW(student.trainable(), cfg.lr(stage), weight_decay=cfg.weight_decay)
    stage_id = STAGES.index(stage)
    batcher = SEDBatcher(data, cfg.sed_batch, cfg.batch_ratio, seed=cfg.seed * 10 + stage_id)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, stage_id, 99]))
    use_cons = stage == "finetune" or cfg.consistency_in_adapt
    for i in range(steps):
        batch = augment(batcher.next(), cfg.augmentation, rng)
        with nx.no_grad():
            ts, tw = teacher.forward(batch.x)
        w_cons = cfg.loss_weights.consistency_at(i, steps) if use_cons else 0.0
        with nx.Tape() as tape:
            s, w = student.forward(batch.x)
            loss, parts = sed_loss(s, w, batch.strong, batch.weak, batch.strong_slice, batch.weak_slice,
                                   ts, tw, cfg.loss_weights.weak, w_cons)
        tape.backward(loss)
        lr = cosine_lr(cfg.lr(stage), i, steps)
        opt.step(lr)
        ema_update(teacher, student, cfg.ema_decay)
        rec = {"stage": stage, "step": state.step, "lr": lr, "w_cons": w_cons}
        rec.update({f"loss_{k}": v for k, v in parts.items()})
        log.write(rec)
        state.step += 1
        if checkpoint_dir and cfg.checkpoint_every and state.step % cfg.checkpoint_every == 0:
            state.save(Path(checkpoint_dir) / f"step_{state.step:06d}")


def run_stage(stage: str, steps: int, state: TrainState, data: FeatureSet, cfg: TrainConfig,
              log: MetricsLog | None = None, checkpoint_dir=None) -> TrainState:
    """Run one stage in place on ``state`` and return it."""
    check_order(state.history, stage)
    log = log or MetricsLog()
    state.student.set_trainable(TRAINABLE[stage])
    logger.info("stage %s: %d steps, trainable %s", stage, steps, TRAINABLE[stage])
    if stage == "pretrain":
        _pretrain(state, data, cfg, steps, log)
    else:
        _sed_stage(stage, state, data, cfg, steps, log, checkpoint_dir)
    state.history.append(stage)
    state.student.set_trainable(())
    return state
