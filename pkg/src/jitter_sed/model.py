"""
Desk-scale SED network.

    spectrogram (B, 500, 128)
      -> encoder: three 1-D convolutions over time, strides (5, 1, 1) -> (B, 100, D)
      -> context: L pre-norm transformer layers, per-head relative-position bias
      -> heads: reconstruction (D -> D), frame-wise SED (D -> C), attention-pooled AT (D -> C)

Parameters live in a flat ``name -> Tensor`` dict; the name prefix
(``encoder.``, ``context.``, ``recon.``, ``sed.``, ``at.``) is the unit of
freezing.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nx
from .errors import CheckpointError, ConfigurationError, DimensionError
from .numerics import Tensor
from .numerics.tensorio import load_tensor, save_tensor

GROUPS = ("encoder", "context", "recon", "sed", "at")


@dataclass(frozen=True)
class EncoderConfig:
    n_mels: int = 128
    dim: int = 64
    # (kernel, stride, padding) per stage; 500 spectral frames -> 100 latent frames
    stages: tuple[tuple[int, int, int], ...] = ((5, 5, 0), (3, 1, 1), (3, 1, 1))

    def output_length(self, n_frames: int) -> int:
        t = n_frames
        for k, s, p in self.stages:
            t = (t + 2 * p - k) // s + 1
        return t

    def receptive_field(self, latent_index: int) -> tuple[int, int]:
        """Inclusive range of input frames that can influence one output frame."""
        lo = hi = latent_index
        for k, s, p in reversed(self.stages):
            lo = lo * s - p
            hi = hi * s - p + k - 1
        return lo, hi


@dataclass(frozen=True)
class ContextConfig:
    dim: int = 64
    layers: int = 2
    heads: int = 4
    ff_mult: int = 4
    max_rel: int = 100


@dataclass(frozen=True)
class ModelConfig:
    n_classes: int = 10
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    context: ContextConfig = field(default_factory=ContextConfig)
    input_frames: int = 500

    def __post_init__(self):
        if self.encoder.dim != self.context.dim:
            raise ConfigurationError("encoder and context dims differ")
        if self.context.dim < 8:
            raise ConfigurationError(f"latent dim {self.context.dim} < 8")
        if self.context.dim % self.context.heads:
            raise ConfigurationError(f"dim {self.context.dim} not divisible by {self.context.heads} heads")

    @property
    def dim(self) -> int:
        return self.context.dim

    @property
    def latent_frames(self) -> int:
        return self.encoder.output_length(self.input_frames)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        enc = dict(doc["encoder"])
        enc["stages"] = tuple(tuple(s) for s in enc["stages"])
        return cls(n_classes=doc["n_classes"], encoder=EncoderConfig(**enc),
                   context=ContextConfig(**doc["context"]), input_frames=doc["input_frames"])


def _init_params(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    d, c = cfg.dim, cfg.n_classes
    p: dict[str, np.ndarray] = {}

    def normal(shape, fan_in, gain=1.0):
        return rng.normal(0.0, gain / math.sqrt(fan_in), size=shape)

    cin = cfg.encoder.n_mels
    for i, (k, _, _) in enumerate(cfg.encoder.stages):
        p[f"encoder.conv{i}.w"] = normal((k, cin, d), k * cin)
        p[f"encoder.conv{i}.b"] = np.zeros(d)
        cin = d
    p["encoder.norm.g"] = np.ones(d)
    p["encoder.norm.b"] = np.zeros(d)

    ctx = cfg.context
    ff = ctx.ff_mult * d
    for layer in range(ctx.layers):
        pre = f"context.layer{layer}."
        p[pre + "ln1.g"] = np.ones(d)
        p[pre + "ln1.b"] = np.zeros(d)
        p[pre + "qkv.w"] = normal((d, 3 * d), d)
        p[pre + "qkv.b"] = np.zeros(3 * d)
        p[pre + "out.w"] = normal((d, d), d, 0.5)
        p[pre + "out.b"] = np.zeros(d)
        p[pre + "rpe"] = rng.normal(0.0, 0.02, size=(2 * ctx.max_rel + 1, ctx.heads))
        p[pre + "ln2.g"] = np.ones(d)
        p[pre + "ln2.b"] = np.zeros(d)
        p[pre + "ff1.w"] = normal((d, ff), d)
        p[pre + "ff1.b"] = np.zeros(ff)
        p[pre + "ff2.w"] = normal((ff, d), ff, 0.5)
        p[pre + "ff2.b"] = np.zeros(d)

    p["recon.w"] = np.eye(d)
    p["recon.b"] = np.zeros(d)
    p["sed.w"] = normal((d, c), d)
    p["sed.b"] = np.zeros(c)
    p["at.w"] = normal((d, c), d)
    p["at.b"] = np.zeros(c)
    return p


def relative_index(t: int, max_rel: int) -> np.ndarray:
    """Row i, column j holds clip(i - j, -R, R) + R."""
    pos = np.arange(t)
    return np.clip(pos[:, None] - pos[None, :], -max_rel, max_rel) + max_rel


class SEDModel:
    def __init__(self, config: ModelConfig | None = None, seed: int = 0, dtype=np.float32):
        self.config = config or ModelConfig()
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        self.params: dict[str, Tensor] = {
            name: Tensor(arr.astype(self.dtype), requires_grad=True, name=name)
            for name, arr in _init_params(self.config, rng).items()
        }
        self._rel_cache: dict[int, np.ndarray] = {}

    # ------------------------------------------------------------------ params
    def group(self, name: str) -> list[str]:
        return [k for k in self.params if k.split(".", 1)[0] == name]

    def set_trainable(self, groups) -> None:
        groups = set(groups)
        unknown = groups - set(GROUPS)
        if unknown:
            raise ConfigurationError(f"unknown parameter groups {sorted(unknown)}")
        for k, t in self.params.items():
            t.requires_grad = k.split(".", 1)[0] in groups

    def trainable(self) -> dict[str, Tensor]:
        return {k: t for k, t in self.params.items() if t.requires_grad}

    def num_parameters(self) -> int:
        return int(sum(t.data.size for t in self.params.values()))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        if set(state) != set(self.params):
            missing = sorted(set(self.params) - set(state))
            extra = sorted(set(state) - set(self.params))
            raise CheckpointError(f"parameter manifest mismatch: missing={missing} extra={extra}")
        for k, arr in state.items():
            if arr.shape != self.params[k].shape:
                raise CheckpointError(f"{k}: shape {arr.shape} != {self.params[k].shape}")
            self.params[k].data = np.array(arr, dtype=self.dtype)

    def astype(self, dtype) -> "SEDModel":
        self.dtype = np.dtype(dtype)
        for t in self.params.values():
            t.data = t.data.astype(self.dtype)
        return self

    def copy(self) -> "SEDModel":
        other = SEDModel.__new__(SEDModel)
        other.config = self.config
        other.dtype = self.dtype
        other.params = {k: Tensor(t.data.copy(), requires_grad=t.requires_grad, name=k)
                        for k, t in self.params.items()}
        other._rel_cache = {}
        return other

    # ----------------------------------------------------------------- forward
    def _p(self, name: str) -> Tensor:
        return self.params[name]

    def encode(self, spec) -> Tensor:
        """(B, 500, 128) or (500, 128) spectrogram -> latent frames (B, 100, D)."""
        x = spec if isinstance(spec, Tensor) else Tensor(np.asarray(spec, dtype=self.dtype))
        if x.ndim == 2:
            x = x.reshape(1, *x.shape)
        cfg = self.config
        if x.ndim != 3 or x.shape[1] != cfg.input_frames or x.shape[2] != cfg.encoder.n_mels:
            raise DimensionError(f"encoder expects (B, {cfg.input_frames}, {cfg.encoder.n_mels}), got {x.shape}")
        h = x
        last = len(cfg.encoder.stages) - 1
        for i, (k, s, pad) in enumerate(cfg.encoder.stages):
            h = nx.conv1d(h, self._p(f"encoder.conv{i}.w"), stride=s, padding=pad)
            h = h + self._p(f"encoder.conv{i}.b")
            if i < last:
                h = nx.gelu(h)
        return nx.layer_norm(h, self._p("encoder.norm.g"), self._p("encoder.norm.b"))

    def _rel_bias(self, layer: int, t: int) -> Tensor:
        ctx = self.config.context
        idx = self._rel_cache.get(t)
        if idx is None:
            idx = self._rel_cache[t] = relative_index(t, ctx.max_rel)
        table = self._p(f"context.layer{layer}.rpe")
        return nx.transpose(nx.take(table, idx), (2, 0, 1))  # (H, T, T)

    def attention(self, layer: int, h: Tensor) -> Tensor:
        ctx = self.config.context
        b, t, d = h.shape
        nh, dh = ctx.heads, d // ctx.heads
        pre = f"context.layer{layer}."
        qkv = h @ self._p(pre + "qkv.w") + self._p(pre + "qkv.b")
        qkv = nx.transpose(qkv.reshape(b, t, 3, nh, dh), (2, 0, 3, 1, 4))
        q, k, v = qkv[0], qkv[1], qkv[2]
        logits = nx.matmul(q, nx.transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(dh))
        logits = logits + self._rel_bias(layer, t)
        attn = nx.softmax(logits, axis=-1)
        out = nx.transpose(nx.matmul(attn, v), (0, 2, 1, 3)).reshape(b, t, d)
        return out @ self._p(pre + "out.w") + self._p(pre + "out.b")

    def feed_forward(self, layer: int, h: Tensor) -> Tensor:
        pre = f"context.layer{layer}."
        u = nx.gelu(h @ self._p(pre + "ff1.w") + self._p(pre + "ff1.b"))
        return u @ self._p(pre + "ff2.w") + self._p(pre + "ff2.b")

    def context_forward(self, latents, layers: int | None = None) -> Tensor:
        """Contextualise a (B, T, D) or (T, D) latent sequence."""
        x = latents if isinstance(latents, Tensor) else Tensor(np.asarray(latents, dtype=self.dtype))
        if x.ndim == 2:
            x = x.reshape(1, *x.shape)
        n = self.config.context.layers if layers is None else layers
        for layer in range(n):
            pre = f"context.layer{layer}."
            x = x + self.attention(layer, nx.layer_norm(x, self._p(pre + "ln1.g"), self._p(pre + "ln1.b")))
            x = x + self.feed_forward(layer, nx.layer_norm(x, self._p(pre + "ln2.g"), self._p(pre + "ln2.b")))
        return x

    def reconstruct(self, ctx: Tensor) -> Tensor:
        return ctx @ self._p("recon.w") + self._p("recon.b")

    def sed_logits(self, ctx: Tensor) -> tuple[Tensor, Tensor]:
        """Frame logits (B, T, C) and clip logits (B, C) from attention pooling over frames."""
        strong = ctx @ self._p("sed.w") + self._p("sed.b")
        attn = nx.softmax(ctx @ self._p("at.w") + self._p("at.b"), axis=1)
        weak = nx.sum(attn * strong, axis=1)
        return strong, weak

    def predict(self, ctx: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        """(strong probabilities, weak probabilities, reconstruction)."""
        strong, weak = self.sed_logits(ctx)
        return nx.sigmoid(strong), nx.sigmoid(weak), self.reconstruct(ctx)

    def forward(self, spec) -> tuple[Tensor, Tensor]:
        strong, weak, _ = self.predict(self.context_forward(self.encode(spec)))
        return strong, weak

    # ------------------------------------------------------------- checkpoints
    def save(self, directory, extra: dict | None = None) -> Path:
        d = Path(directory)
        (d / "tensors").mkdir(parents=True, exist_ok=True)
        files = {}
        for k, t in sorted(self.params.items()):
            fname = f"tensors/{k}.jtt"
            save_tensor(d / fname, t.data)
            files[k] = fname
        manifest = {"config": self.config.to_dict(), "tensors": files,
                    "num_parameters": self.num_parameters()}
        if extra:
            manifest.update(extra)
        (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
        return d

    @classmethod
    def load(cls, directory, dtype=np.float32) -> "SEDModel":
        d = Path(directory)
        mpath = d / "manifest.json"
        if not mpath.exists():
            raise CheckpointError(f"no checkpoint manifest at {mpath}")
        manifest = json.loads(mpath.read_text())
        model = cls(ModelConfig.from_dict(manifest["config"]), seed=0, dtype=dtype)
        model.load_state_dict({k: load_tensor(d / f) for k, f in manifest["tensors"].items()})
        return model
