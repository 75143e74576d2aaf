"""
Hierarchical temporal shuffling of frame sequences.

Two perturbations act on a (T, D) frame sequence cut into B equal blocks:

* block shuffle: a subset of interior blocks is permuted among itself (first
  and last block stay put as anchors), optionally time-reversed, and the moved
  blocks receive additive Gaussian noise scaled by ``noise_scale``;
* frame shuffle: a subset of blocks (anchors included) has a subset of its
  frame positions permuted, block order unchanged.

Every perturbation is drawn as a :class:`PerturbationRecord` first and then
applied from the record, so ``replay`` reproduces it bit-exactly and
``invert`` undoes the permutations.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Literal

import numpy as np

from .errors import ConfigurationError, PartitionError, PerturbationError, RecordError

Mode = Literal["block", "frame", "multitask"]


@dataclass(frozen=True)
class BlockPartition:
    block_size: int
    num_blocks: int

    @property
    def length(self) -> int:
        return self.block_size * self.num_blocks


@dataclass(frozen=True)
class ShuffleSpec:
    p_b: float = 0.75
    p_fb: float = 0.5
    p_ff: float = 0.25
    flip_rate: float = 0.0
    noise_scale: float = 0.0
    mode: Mode = "multitask"
    seed: int = 0
    block_size: int = 5
    frame_block_size: int = 20
    multitask_order: Literal["block-first", "frame-first"] = "block-first"
    parallel_multitask: bool = False

    def __post_init__(self):
        for name in ("p_b", "p_fb", "p_ff", "flip_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigurationError(f"{name}={v} outside [0, 1]")
        if not math.isfinite(self.noise_scale) or self.noise_scale < 0:
            raise ConfigurationError(f"noise_scale={self.noise_scale} must be finite and >= 0")
        if self.mode not in ("block", "frame", "multitask"):
            raise ConfigurationError(f"unknown mode {self.mode!r}")
        if self.multitask_order not in ("block-first", "frame-first"):
            raise ConfigurationError(f"unknown multitask_order {self.multitask_order!r}")
        if self.block_size < 1 or self.frame_block_size < 1:
            raise ConfigurationError("block sizes must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PerturbationRecord:
    """Everything needed to replay or undo one perturbation.

    ``block_perm[i]`` is the source block placed at output position ``i``;
    ``frame_perms[b][j]`` is the source frame placed at position ``j`` of
    block ``b``.  Flips and noise refer to output block positions.
    """

    kind: Literal["identity", "block", "frame"]
    shape: tuple[int, int]
    block_size: int
    block_perm: np.ndarray
    chosen_blocks: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    frame_perms: dict[int, np.ndarray] = field(default_factory=dict)
    frame_positions: dict[int, np.ndarray] = field(default_factory=dict)
    flipped: frozenset[int] = frozenset()
    noise_seed: int = 0
    noise_scale: float = 0.0

    @property
    def num_blocks(self) -> int:
        return len(self.block_perm)

    def displaced_frames(self) -> int:
        """Frames whose position differs from their source position."""
        t = self.shape[0]
        src = self.source_index()
        return int(np.count_nonzero(src != np.arange(t)))

    def source_index(self) -> np.ndarray:
        """Source frame index for each output frame, ignoring flips."""
        f = self.block_size
        src = (self.block_perm[:, None] * f + np.arange(f)[None, :]).reshape(-1)
        for b, perm in self.frame_perms.items():
            src[b * f:(b + 1) * f] = b * f + perm
        for b in self.flipped:
            src[b * f:(b + 1) * f] = src[b * f:(b + 1) * f][::-1]
        return src

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "shape": list(self.shape),
            "block_size": self.block_size,
            "block_perm": [int(i) for i in self.block_perm],
            "chosen_blocks": [int(i) for i in self.chosen_blocks],
            "frame_perms": {str(b): [int(i) for i in p] for b, p in sorted(self.frame_perms.items())},
            "frame_positions": {str(b): [int(i) for i in p]
                                for b, p in sorted(self.frame_positions.items())},
            "flipped": sorted(int(b) for b in self.flipped),
            "noise_seed": int(self.noise_seed),
            "noise_scale": float(self.noise_scale),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "PerturbationRecord":
        return cls(
            kind=doc["kind"],
            shape=tuple(doc["shape"]),
            block_size=int(doc["block_size"]),
            block_perm=np.asarray(doc["block_perm"], dtype=np.int64),
            chosen_blocks=np.asarray(doc.get("chosen_blocks", []), dtype=np.int64),
            frame_perms={int(b): np.asarray(p, dtype=np.int64) for b, p in doc.get("frame_perms", {}).items()},
            frame_positions={int(b): np.asarray(p, dtype=np.int64)
                             for b, p in doc.get("frame_positions", {}).items()},
            flipped=frozenset(int(b) for b in doc.get("flipped", [])),
            noise_seed=int(doc.get("noise_seed", 0)),
            noise_scale=float(doc.get("noise_scale", 0.0)),
        )


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5 + 1e-9))


def partition(seq, block_size: int) -> BlockPartition:
    t = seq if isinstance(seq, int) else np.asarray(seq).shape[0]
    if block_size < 1:
        raise PartitionError(f"block_size must be >= 1, got {block_size}")
    if t % block_size:
        raise PartitionError(f"sequence length {t} is not divisible by block size {block_size}")
    return BlockPartition(block_size=block_size, num_blocks=t // block_size)


def _as_frames(seq) -> np.ndarray:
    x = np.asarray(seq)
    if x.ndim != 2:
        raise PerturbationError(f"expected a (T, D) frame sequence, got shape {x.shape}")
    return x


def _check_partition(x: np.ndarray, part: BlockPartition) -> None:
    if part.length != x.shape[0]:
        raise PartitionError(f"partition covers {part.length} frames, sequence has {x.shape[0]}")


def _identity_record(x: np.ndarray, part: BlockPartition) -> PerturbationRecord:
    return PerturbationRecord(kind="identity", shape=x.shape, block_size=part.block_size,
                              block_perm=np.arange(part.num_blocks, dtype=np.int64))


def _block_noise(rec: PerturbationRecord, d: int, dtype) -> np.ndarray:
    rng = np.random.default_rng(rec.noise_seed)
    noise = rng.standard_normal((len(rec.chosen_blocks), rec.block_size, d))
    return (rec.noise_scale * noise).astype(dtype)


def replay(seq, rec: PerturbationRecord) -> np.ndarray:
    """Apply a recorded perturbation to the original sequence."""
    x = _as_frames(seq)
    if tuple(x.shape) != tuple(rec.shape):
        raise RecordError(f"record was made for shape {tuple(rec.shape)}, got {x.shape}")
    f = rec.block_size
    b = rec.num_blocks
    blocks = x.reshape(b, f, -1)
    out = blocks[rec.block_perm].copy()
    for i, perm in rec.frame_perms.items():
        out[i] = out[i][perm]
    for i in rec.flipped:
        out[i] = out[i][::-1]
    if rec.noise_scale > 0 and len(rec.chosen_blocks):
        out[rec.chosen_blocks] += _block_noise(rec, x.shape[1], x.dtype)
    return out.reshape(x.shape)


def invert(perturbed, rec: PerturbationRecord) -> np.ndarray:
    """Undo frame permutations, flips and the block permutation (noise stays)."""
    y = _as_frames(perturbed)
    if tuple(y.shape) != tuple(rec.shape):
        raise RecordError(f"record was made for shape {tuple(rec.shape)}, got {y.shape}")
    f = rec.block_size
    blocks = y.reshape(rec.num_blocks, f, -1).copy()
    for i in rec.flipped:
        blocks[i] = blocks[i][::-1]
    for i, perm in rec.frame_perms.items():
        restored = np.empty_like(blocks[i])
        restored[perm] = blocks[i]
        blocks[i] = restored
    out = np.empty_like(blocks)
    out[rec.block_perm] = blocks
    return out.reshape(y.shape)


def block_shuffle(seq, part: BlockPartition, p_b: float, flip_rate: float, noise_scale: float,
                  rng: np.random.Generator) -> tuple[np.ndarray, PerturbationRecord]:
    x = _as_frames(seq)
    _check_partition(x, part)
    nb = part.num_blocks
    if nb < 3:
        raise PerturbationError(f"block shuffle needs at least 3 blocks, got {nb}")
    k = min(round_half_up(p_b * nb), nb - 2)
    if k <= 0:
        return x.copy(), _identity_record(x, part)
    chosen = np.sort(rng.choice(np.arange(1, nb - 1), size=k, replace=False))
    perm = np.arange(nb, dtype=np.int64)
    perm[chosen] = chosen[rng.permutation(k)]
    flipped = frozenset(int(c) for c in chosen[rng.random(k) < flip_rate]) if flip_rate > 0 else frozenset()
    noise_seed = int(rng.integers(0, 2**63 - 1))
    rec = PerturbationRecord(kind="block", shape=x.shape, block_size=part.block_size,
                             block_perm=perm, chosen_blocks=chosen, flipped=flipped,
                             noise_seed=noise_seed, noise_scale=float(noise_scale))
    return replay(x, rec), rec


def frame_shuffle(seq, part: BlockPartition, p_fb: float, p_ff: float,
                  rng: np.random.Generator) -> tuple[np.ndarray, PerturbationRecord]:
    x = _as_frames(seq)
    _check_partition(x, part)
    nb, f = part.num_blocks, part.block_size
    if f < 2:
        raise PerturbationError(f"frame shuffle needs blocks of at least 2 frames, got {f}")
    m = min(round_half_up(p_fb * nb), nb)
    n = min(round_half_up(p_ff * f), f)
    if m == 0 or n == 0:
        return x.copy(), _identity_record(x, part)
    chosen = np.sort(rng.choice(nb, size=m, replace=False))
    frame_perms: dict[int, np.ndarray] = {}
    positions: dict[int, np.ndarray] = {}
    for b in chosen:
        pos = np.sort(rng.choice(f, size=n, replace=False))
        perm = np.arange(f, dtype=np.int64)
        perm[pos] = pos[rng.permutation(n)]
        frame_perms[int(b)] = perm
        positions[int(b)] = pos
    rec = PerturbationRecord(kind="frame", shape=x.shape, block_size=f,
                             block_perm=np.arange(nb, dtype=np.int64), chosen_blocks=chosen,
                             frame_perms=frame_perms, frame_positions=positions)
    return replay(x, rec), rec


def make_rng(seed: int, iteration: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(iteration)]))


def mode_for_iteration(spec: ShuffleSpec, iteration: int) -> Literal["block", "frame"]:
    if spec.mode != "multitask":
        return spec.mode
    even = "block" if spec.multitask_order == "block-first" else "frame"
    odd = "frame" if even == "block" else "block"
    return even if iteration % 2 == 0 else odd


def _perturb(x: np.ndarray, spec: ShuffleSpec, kind: str, rng) -> tuple[np.ndarray, PerturbationRecord]:
    if kind == "block":
        return block_shuffle(x, partition(x, spec.block_size), spec.p_b, spec.flip_rate,
                             spec.noise_scale, rng)
    return frame_shuffle(x, partition(x, spec.frame_block_size), spec.p_fb, spec.p_ff, rng)


def apply(seq, spec: ShuffleSpec, iteration: int) -> tuple[np.ndarray, PerturbationRecord, str]:
    """Perturb ``seq`` according to ``spec``; multitask alternates by iteration parity."""
    x = _as_frames(seq)
    kind = mode_for_iteration(spec, iteration)
    out, rec = _perturb(x, spec, kind, make_rng(spec.seed, iteration))
    return out, rec, kind


def apply_both(seq, spec: ShuffleSpec, iteration: int):
    """Block and frame perturbation of the same sequence for the summed (parallel) objective."""
    x = _as_frames(seq)
    rng = make_rng(spec.seed, iteration)
    xb, rb = _perturb(x, spec, "block", rng)
    xf, rf = _perturb(x, spec, "frame", rng)
    return (xb, rb), (xf, rf)


def clip_seed(global_seed: int, clip_index: int) -> int:
    return int(global_seed) ^ int(clip_index)
