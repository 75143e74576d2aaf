"""Acceptance suite: one test (or small group) per numbered criterion.

The end-to-end criteria share one synthetic dataset and one set of runs built
by a module fixture through the command line, each stage in a single-threaded
subprocess so CPU time can be charged to the pipeline.
"""

import json
import os
import resource
import subprocess
import sys
import time
from collections import Counter

import numpy as np
import pytest

import test_evaluation as ev
from jitter_sed import numerics as nx
from jitter_sed.cli import ablation_tables
from jitter_sed.model import ContextConfig, EncoderConfig, ModelConfig, SEDModel
from jitter_sed.numerics import grad_check
from jitter_sed.perturb import ShuffleSpec, apply, block_shuffle, frame_shuffle, invert, make_rng, partition
from jitter_sed.pipeline import train_stage
from jitter_sed.training import FeatureSet, TrainConfig, jitter_loss

SEEDS = (0, 1, 2)
SINGLE_THREAD = {k: "1" for k in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")}


def criterion(n, title):
    return pytest.mark.criterion(n, title)


def note(request, text):
    request.node.user_properties.append(("detail", text))


def rows(x):
    return Counter(map(bytes, np.ascontiguousarray(x)))


def child_cpu() -> float:
    r = resource.getrusage(resource.RUSAGE_CHILDREN)
    return r.ru_utime + r.ru_stime


def cli(*args):
    env = {**os.environ, **SINGLE_THREAD}
    proc = subprocess.run([sys.executable, "-m", "jitter_sed", *map(str, args)],
                          capture_output=True, text=True, env=env)
    assert proc.returncode == 0, proc.stderr[-2000:]
    return json.loads(proc.stdout.strip().splitlines()[-1])


def run_arm(features, root, seed, pretrained):
    """pretrain (optional) -> adapt -> finetune -> evaluate; returns (psds, cpu seconds)."""
    t0 = child_cpu()
    if pretrained:
        cli("pretrain", "--features", features, "--out", root / "pre", "--seed", seed)
        cli("adapt", "--features", features, "--out", root / "adapt", "--seed", seed, "--init", root / "pre")
    else:
        cli("adapt", "--features", features, "--out", root / "adapt", "--seed", seed, "--from-scratch")
    cli("finetune", "--features", features, "--out", root / "ft", "--seed", seed, "--init", root / "adapt")
    out = cli("evaluate", "--features", features, "--init", root / "ft", "--out", root / "eval")
    return out["psds"], child_cpu() - t0


@pytest.fixture(scope="module")
def e2e(tmp_path_factory):
    base = tmp_path_factory.mktemp("e2e")
    t0 = child_cpu()
    cli("datagen", "--out", base / "data", "--seed", 0)
    cli("featurize", "--data", base / "data", "--out", base / "feats")
    prep = child_cpu() - t0
    result = {"base": base, "features": base / "feats", "prep_cpu": prep, "pre": {}, "ctl": {}}
    for s in SEEDS:
        result["pre"][s] = run_arm(base / "feats", base / f"s{s}_pre", s, True)
        result["ctl"][s] = run_arm(base / "feats", base / f"s{s}_ctl", s, False)
    return result


# --- 1-3: perturbation engine ------------------------------------------------

@criterion(1, "perturbation bijectivity over 1000 random (seed, spec) pairs")
def test_c1_bijectivity(request):
    rng = np.random.default_rng(2024)
    t0 = time.process_time()
    for _ in range(1000):
        spec = ShuffleSpec(p_b=float(rng.random()), p_fb=float(rng.random()), p_ff=float(rng.random()),
                           flip_rate=float(rng.random()), noise_scale=0.0,
                           mode=str(rng.choice(["block", "frame", "multitask"])),
                           seed=int(rng.integers(2**32)))
        x = rng.normal(size=(100, 8))
        y, rec, kind = apply(x, spec, int(rng.integers(10**6)))
        assert rows(y) == rows(x)
        if kind == "block":
            assert np.array_equal(y[:5], x[:5]) and np.array_equal(y[-5:], x[-5:])
        assert invert(y, rec).tobytes() == x.tobytes()
    elapsed = time.process_time() - t0
    note(request, f"{elapsed:.2f} s")
    assert elapsed < 10.0


@criterion(2, "ablation-grid shape counts")
def test_c2_grid_counts(request):
    x = np.random.default_rng(0).normal(size=(100, 8))
    for s in range(100):
        _, rec = block_shuffle(x, partition(x, 5), 0.75, 0.0, 0.0, make_rng(s, 0))
        assert rec.num_blocks == 20 and len(rec.chosen_blocks) == 15
        assert not {0, 19} & set(int(b) for b in rec.chosen_blocks)
        _, rec = frame_shuffle(x, partition(x, 20), 0.5, 0.25, make_rng(s, 0))
        assert rec.num_blocks == 5 and len(rec.chosen_blocks) == 3
        assert all(len(rec.frame_positions[int(b)]) == 5 for b in rec.chosen_blocks)
    note(request, "B=20: 15 blocks; B=5,F=20: 3 blocks x 5 frames")


@criterion(3, "noise injection statistics at lambda=0.1")
def test_c3_noise(request):
    x = np.zeros((300, 1000))
    y, rec = block_shuffle(x, partition(x, 100), 1 / 3, 0.0, 0.1, make_rng(3, 0))
    b = int(rec.chosen_blocks[0])
    v = y[100 * b:100 * b + 100].ravel()
    note(request, f"n={v.size} mean={v.mean():+.5f} std={v.std():.5f}")
    assert v.size == 10**5
    assert abs(v.mean()) <= 0.005 and 0.095 <= v.std() <= 0.105


# --- 4-5: model ---------------------------------------------------------------

@criterion(4, "jitter-loss gradient check through a 1-layer RPE context network")
def test_c4_gradients(request):
    cfg = ModelConfig(n_classes=3, encoder=EncoderConfig(dim=8),
                      context=ContextConfig(dim=8, layers=1, heads=2, ff_mult=2, max_rel=6))
    worst = 0.0
    t0 = time.process_time()
    for seed in range(20):
        m = SEDModel(cfg, seed=seed, dtype=np.float64)
        m.params["context.layer0.rpe"].data[...] = np.random.default_rng(seed).normal(size=(13, 2))
        x = np.random.default_rng(100 + seed).normal(size=(12, 8))
        rng = make_rng(seed, 0)
        xb, _ = block_shuffle(x, partition(x, 3), 0.75, 0.0, 0.1, rng)
        xf, _ = frame_shuffle(x, partition(x, 6), 0.5, 0.5, rng)
        for name in m.group("context") + m.group("recon"):
            def loss(t, name=name, m=m):
                saved = m.params[name]
                m.params[name] = t
                try:
                    return jitter_loss(xb, xf, x, lambda z: m.reconstruct(m.context_forward(z))[0])
                finally:
                    m.params[name] = saved
            worst = max(worst, grad_check(loss, m.params[name], 1e-6))
    elapsed = time.process_time() - t0
    note(request, f"max rel err {worst:.2e} in {elapsed:.1f} s")
    assert worst < 1e-4 and elapsed < 60.0


def _gap(model, x, perm):
    with nx.no_grad():
        y = model.context_forward(x).data[0]
        yp = model.context_forward(x[perm]).data[0]
    return float(np.abs(yp - y[perm]).max())


@criterion(5, "RPE control: equivariant at zero bias, order-sensitive with trained bias")
def test_c5_rpe_control(request, e2e):
    ckpt = e2e["base"] / "s0_pre" / "pre" / "checkpoint" / "student"
    model = SEDModel.load(ckpt, dtype=np.float64)
    data = FeatureSet.load(e2e["features"], ("validation",))
    with nx.no_grad():
        x = model.encode(data.features["validation"][:1].astype(np.float64)).data[0]
    rng = np.random.default_rng(5)
    rpe = [f"context.layer{i}.rpe" for i in range(model.config.context.layers)]
    assert all(np.abs(model.params[k].data).max() > 0 for k in rpe)
    violated = sum(_gap(model, x, rng.permutation(len(x))) > 1e-5 for _ in range(100))
    for k in rpe:
        model.params[k].data[...] = 0.0
    zero_gap = max(_gap(model, x, rng.permutation(len(x))) for _ in range(20))
    note(request, f"zero-bias gap {zero_gap:.1e}; trained-bias violations {violated}/100")
    assert zero_gap < 1e-5 and violated >= 95


# --- 6, 7, 10: training pipeline ------------------------------------------------

@criterion(6, "pretraining halves the normalized reconstruction loss")
def test_c6_pretraining_efficacy(request, e2e, tmp_path):
    cfg = TrainConfig(seed=0, pretrain_splits=("strong",))
    t0 = time.process_time()
    state = train_stage("pretrain", e2e["features"], tmp_path / "pre", cfg)
    elapsed = time.process_time() - t0
    s = state.summary["pretrain"]
    drop = 1.0 - s["probe_rec_loss_norm_end"] / s["probe_rec_loss_norm_start"]
    note(request, f"{s['probe_rec_loss_norm_start']:.3f} -> {s['probe_rec_loss_norm_end']:.3f} "
                  f"({100 * drop:.0f}% drop, {cfg.steps('pretrain')} steps, {elapsed / 60:.1f} CPU-min)")
    assert cfg.steps("pretrain") == 600
    assert drop >= 0.5 and elapsed < 600.0


@criterion(7, "end-to-end: pretrained median PSDS beats the no-pretraining control")
def test_c7_end_to_end(request, e2e):
    pre = [e2e["pre"][s][0] for s in SEEDS]
    ctl = [e2e["ctl"][s][0] for s in SEEDS]
    cpu = e2e["prep_cpu"] + e2e["pre"][SEEDS[0]][1]
    note(request, "pre " + " ".join(f"{v:.3f}" for v in pre) + " | ctl " + " ".join(f"{v:.3f}" for v in ctl)
         + f" | {cpu / 60:.1f} CPU-min per pipeline")
    assert cpu < 30 * 60
    assert np.median(pre) > np.median(ctl)


@criterion(10, "determinism: rerun gives byte-identical metrics JSONL")
def test_c10_determinism(request, e2e):
    first = e2e["base"] / "s0_pre"
    second = e2e["base"] / "s0_pre_again"
    run_arm(e2e["features"], second, 0, True)
    for stage in ("pre", "adapt", "ft"):
        assert (first / stage / "metrics.jsonl").read_bytes() == (second / stage / "metrics.jsonl").read_bytes()
    a = json.loads((first / "eval" / "report.json").read_text())
    b = json.loads((second / "eval" / "report.json").read_text())
    assert a == b
    note(request, "pretrain/adapt/finetune metrics and evaluation report identical")


# --- 8-9: evaluation ------------------------------------------------------------

@criterion(8, "PSDS equals the brute-force reference; perfect 1.0, silent 0.0")
def test_c8_psds_random_scenes(request):
    ev.test_psds_equals_brute_force_on_random_scenes()
    note(request, "1000 random scenes within 1e-9")


@criterion(8, "PSDS equals the brute-force reference; perfect 1.0, silent 0.0")
def test_c8_psds_hand_and_extremes():
    ev.test_hand_scenario()
    ev.test_perfect_and_silent_detectors()


@criterion(9, "median filter equals the sort oracle for windows 5 and 20")
def test_c9_median_filter(request):
    ev.test_median_filter_matches_sort_oracle()
    note(request, "10^4 sequences exact")


# --- 11: ablation harness -------------------------------------------------------

@criterion(11, "ablate emits Tables I-III with the expected rows and columns")
def test_c11_ablation_structure(request, tmp_path):
    cli("datagen", "--out", tmp_path / "data", "--sizes", 8, 8, 8, 6, "--seed", 1)
    cli("featurize", "--data", tmp_path / "data", "--out", tmp_path / "feats")
    out = cli("ablate", "--features", tmp_path / "feats", "--out", tmp_path / "abl", "--scale", 0.0005)
    doc = json.loads((tmp_path / "abl" / "ablation.json").read_text())
    md = (tmp_path / "abl" / "ablation.md").read_text()
    expected = ablation_tables()
    assert out["tables"] == ["I", "II", "III"]
    headers = {"I": ["Method", "p_b", "p_fb", "p_ff"], "II": ["Method", "flip rate"],
               "III": ["Method", "Noise Scale λ"]}
    for name, table in expected.items():
        got = doc[name]
        assert got["headers"] == headers[name] + ["PSDS"]
        want = [(g["section"], r["label"], r["columns"]) for g in table["groups"] for r in g["rows"]]
        have = [(r["section"], r["label"], list(r["columns"].values())) for r in got["rows"]]
        assert have == want
        assert all(0.0 <= r["mean"] <= 1.0 and len(r["per_seed"]) == 1 for r in got["rows"])
        assert "| " + " | ".join(headers[name]) + " | PSDS (mean) |" in md
    rows_i = doc["I"]["rows"]
    assert len(rows_i) == 18 and rows_i[0]["spec"] is None
    assert [r["label"] for r in rows_i].count("JiTTER (Frame Shuffle)") == 9
    assert rows_i[13]["label"] == "JiTTER (Multitask) - Best"
    assert [r["columns"]["flip rate"] for r in doc["II"]["rows"]] == ["-", 0.25, 0.5, 0.75]
    assert [r["columns"]["Noise Scale λ"] for r in doc["III"]["rows"]] == ["-", 0.05, 0.1, 0.2, 0.4]
    note(request, f"{out['cells']} distinct configurations, 18/4/5 rows")
