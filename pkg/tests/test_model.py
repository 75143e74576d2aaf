import numpy as np
import pytest

from jitter_sed import numerics as nx
from jitter_sed.errors import CheckpointError, DimensionError
from jitter_sed.model import ContextConfig, EncoderConfig, ModelConfig, SEDModel, relative_index
from jitter_sed.numerics import Tensor, grad_check
from jitter_sed.perturb import block_shuffle, frame_shuffle, make_rng, partition
from jitter_sed.training import jitter_loss


def tiny_config(dim=8, heads=2, layers=1, max_rel=6):
    return ModelConfig(n_classes=3, encoder=EncoderConfig(dim=dim),
                       context=ContextConfig(dim=dim, layers=layers, heads=heads, ff_mult=2, max_rel=max_rel))


def test_default_parameter_count():
    m = SEDModel(seed=0)
    assert m.num_parameters() == SEDModel(seed=1).num_parameters()
    assert m.config.latent_frames == 100


def test_encoder_output_shape_and_receptive_field():
    m = SEDModel(seed=0)
    rng = np.random.default_rng(0)
    a = rng.normal(size=(500, 128)).astype(np.float32)
    b = a.copy()
    b[250:] = rng.normal(size=(250, 128))
    with nx.no_grad():
        la, lb = m.encode(a).data[0], m.encode(b).data[0]
    assert la.shape == (100, 64)
    assert np.array_equal(la[:40], lb[:40])
    assert not np.array_equal(la[50:], lb[50:])
    lo, hi = m.config.encoder.receptive_field(39)
    assert hi < 250 and lo == 5 * 37


def test_encoder_rejects_wrong_shape():
    with pytest.raises(DimensionError):
        SEDModel(seed=0).encode(np.zeros((400, 128)))


def test_zero_spectrogram_gives_constant_latents():
    m = SEDModel(seed=0)
    with nx.no_grad():
        z = m.encode(np.zeros((500, 128))).data[0]
    assert np.allclose(z, z[0], atol=1e-6)


def test_residual_identity_when_branches_are_zeroed():
    m = SEDModel(tiny_config(), seed=0, dtype=np.float64)
    for name in ("out.w", "out.b", "ff2.w", "ff2.b"):
        m.params[f"context.layer0.{name}"].data[...] = 0.0
    x = np.random.default_rng(1).normal(size=(12, 8))
    with nx.no_grad():
        assert np.array_equal(m.context_forward(x).data[0], x)


def test_relative_bias_depends_only_on_offset():
    m = SEDModel(tiny_config(max_rel=60), seed=0, dtype=np.float64)
    m.params["context.layer0.rpe"].data[...] = np.random.default_rng(2).normal(size=(121, 2))
    bias = m._rel_bias(0, 50).data
    for s in (1, 3, 7):
        # shifting both query and key by s leaves the bias unchanged
        assert np.array_equal(bias[:, s:, s:], bias[:, :-s, :-s])
    idx = relative_index(50, 60)
    assert idx[10, 3] == 60 + 7 and idx[3, 10] == 60 - 7


def test_relative_distance_is_clipped():
    idx = relative_index(20, 4)
    assert idx.min() == 0 and idx.max() == 8
    assert idx[19, 0] == 8 and idx[0, 19] == 0


def _permutation_gap(model, x, perm):
    with nx.no_grad():
        y = model.context_forward(x).data[0]
        yp = model.context_forward(x[perm]).data[0]
    return np.abs(yp - y[perm]).max()


def test_equivariance_with_zero_bias_and_sensitivity_with_bias():
    m = SEDModel(tiny_config(), seed=3, dtype=np.float64)
    rng = np.random.default_rng(3)
    x = rng.normal(size=(12, 8))
    m.params["context.layer0.rpe"].data[...] = 0.0
    for _ in range(20):
        assert _permutation_gap(m, x, rng.permutation(12)) < 1e-5
    m.params["context.layer0.rpe"].data[...] = rng.normal(size=(13, 2))
    violated = sum(_permutation_gap(m, x, rng.permutation(12)) > 1e-5 for _ in range(100))
    assert violated >= 95


def test_pooling_and_output_ranges():
    m = SEDModel(seed=4)
    x = np.random.default_rng(4).normal(size=(2, 500, 128))
    with nx.no_grad():
        ctx = m.context_forward(m.encode(x))
        strong_logit, weak_logit = m.sed_logits(ctx)
        strong, weak, recon = m.predict(ctx)
    s, w = strong_logit.data, weak_logit.data
    assert np.all(w >= s.min(axis=1) - 1e-5) and np.all(w <= s.max(axis=1) + 1e-5)
    assert strong.shape == (2, 100, 10) and weak.shape == (2, 10) and recon.shape == (2, 100, 64)
    assert np.all((strong.data > 0) & (strong.data < 1)) and np.all((weak.data > 0) & (weak.data < 1))


def test_recon_head_starts_as_identity():
    m = SEDModel(seed=0)
    x = Tensor(np.random.default_rng(5).normal(size=(1, 100, 64)).astype(np.float32))
    with nx.no_grad():
        assert np.array_equal(m.reconstruct(x).data, x.data)


def test_checkpoint_roundtrip_is_bit_stable(tmp_path):
    m = SEDModel(seed=5)
    x = np.random.default_rng(6).normal(size=(1, 500, 128)).astype(np.float32)
    m.save(tmp_path / "ckpt")
    m2 = SEDModel.load(tmp_path / "ckpt")
    with nx.no_grad():
        a, b = m.forward(x), m2.forward(x)
    assert np.array_equal(a[0].data, b[0].data) and np.array_equal(a[1].data, b[1].data)
    with pytest.raises(CheckpointError):
        m2.load_state_dict({"nope": np.zeros(1)})
    with pytest.raises(CheckpointError):
        SEDModel.load(tmp_path / "missing")


def _swap(model, name):
    def f(t):
        saved = model.params[name]
        model.params[name] = t
        try:
            return loss_fn(model)
        finally:
            model.params[name] = saved
    return f


def _make_loss(x, seed):
    rng = make_rng(seed, 0)
    xb, _ = block_shuffle(x, partition(x, 3), 0.75, 0.0, 0.1, rng)
    xf, _ = frame_shuffle(x, partition(x, 6), 0.5, 0.5, rng)
    return lambda m: jitter_loss(xb, xf, x, lambda t: m.reconstruct(m.context_forward(t))[0])


loss_fn = None


def test_jitter_loss_gradients_through_context_network():
    global loss_fn
    worst = 0.0
    for seed in range(20):
        m = SEDModel(tiny_config(), seed=seed, dtype=np.float64)
        m.params["context.layer0.rpe"].data[...] = np.random.default_rng(seed).normal(size=(13, 2))
        x = np.random.default_rng(100 + seed).normal(size=(12, 8))
        loss_fn = _make_loss(x, seed)
        for name in m.group("context") + m.group("recon"):
            worst = max(worst, grad_check(_swap(m, name), m.params[name], 1e-6))
    assert worst < 1e-4


def test_single_attention_layer_grad():
    m = SEDModel(tiny_config(), seed=0, dtype=np.float64)
    x = np.random.default_rng(7).normal(size=(1, 4, 8))
    assert grad_check(lambda t: nx.sum_sq(m.attention(0, t)), Tensor(x), 1e-6) < 1e-4


def test_full_model_grad_wrt_encoder_weights():
    cfg = ModelConfig(n_classes=3, encoder=EncoderConfig(n_mels=6, dim=8),
                      context=ContextConfig(dim=8, layers=1, heads=2, ff_mult=2, max_rel=10),
                      input_frames=25)
    m = SEDModel(cfg, seed=1, dtype=np.float64)
    x = np.random.default_rng(8).normal(size=(2, 25, 6))
    global loss_fn
    loss_fn = lambda mm: nx.sum(mm.forward(x)[0])  # noqa: E731
    for name in ("encoder.conv0.w", "encoder.norm.g", "sed.w", "at.w"):
        assert grad_check(_swap(m, name), m.params[name], 1e-6) < 1e-4
