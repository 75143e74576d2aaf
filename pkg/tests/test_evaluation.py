import numpy as np
import pytest

import psds_reference as ref
from jitter_sed.errors import ConfigurationError, DataError, UndefinedScoreError
from jitter_sed.evaluation import (
    Event,
    EventList,
    PSDSParams,
    decode,
    intersection_match,
    median_filter,
    median_filter_1d,
    psds,
    psds_from_detections,
    read_events,
    weak_mask,
    write_events,
)


def sort_median(x, w):
    left, right = (w - 1) // 2, w // 2
    padded = [x[0]] * left + list(x) + [x[-1]] * right
    out = []
    for t in range(len(x)):
        win = sorted(padded[t:t + w])
        out.append(win[w // 2] if w % 2 else (win[w // 2 - 1] + win[w // 2]) / 2)
    return np.array(out)


def test_median_filter_matches_sort_oracle():
    rng = np.random.default_rng(0)
    for i in range(10_000):
        x = rng.random(100) if i % 2 else rng.integers(0, 4, 100) / 3.0
        for w in (5, 20):
            assert np.array_equal(median_filter_1d(x, w), sort_median(x, w))


def test_median_filter_examples():
    assert np.array_equal(median_filter_1d(np.full(30, 0.4), 5), np.full(30, 0.4))
    spike = np.zeros(30)
    spike[12] = 1.0
    assert not median_filter_1d(spike, 5).any()
    with pytest.raises(ConfigurationError):
        median_filter(np.zeros((10, 2)), [5, 20])


def test_binary_median_reaches_a_root_signal():
    # one pass is not always a fixed point: 010110 -> 001100 -> 000000
    x = np.array([0, 1, 0, 1, 1, 0], dtype=float)
    assert median_filter_1d(x, 5).tolist() == [0, 0, 1, 1, 0, 0]
    assert not median_filter_1d(median_filter_1d(x, 5), 5).any()
    rng = np.random.default_rng(1)
    for _ in range(200):
        b = (rng.random(100) > 0.5).astype(float)
        for _ in range(100):
            nxt = median_filter_1d(b, 5)
            if np.array_equal(nxt, b):
                break
            b = nxt
        assert np.array_equal(median_filter_1d(b, 5), b)


def test_weak_mask():
    s = np.array([[0.9, 0.2, 0.6]])
    out = weak_mask(s, np.array([1.0, 0.0, 0.3]))
    assert out.tolist() == [[0.9, 0.0, 0.3]]
    rng = np.random.default_rng(2)
    s, w = rng.random((100, 4)), rng.random(4)
    assert np.all(weak_mask(s, w) <= s) and np.all(weak_mask(s, w, "hard") <= s)


def test_decode_examples():
    p = np.zeros((100, 1))
    assert len(decode(p, 0.5, ["a"])) == 0
    p[10:20] = 1.0
    assert list(decode(p, 0.5, ["a"])) == [Event("a", 1.0, 2.0)]
    p[21:25] = 1.0
    assert [(e.onset, e.offset) for e in decode(p, 0.5, ["a"])] == [(1.0, 2.0), (2.1, 2.5)]
    p[95:] = 1.0
    assert decode(p, 0.5, ["a"]).events[-1] == Event("a", 9.5, 10.0)


def el(*events, clip="c"):
    return EventList(clip, [Event(*e) for e in events])


def test_match_examples():
    p = PSDSParams()
    r = intersection_match(el(("a", 1.0, 2.0)), el(("a", 1.0, 2.0)), PSDSParams(dtc=1.0, gtc=1.0))
    assert (r.tp, r.fp) == (1, 0)
    r = intersection_match(el(("a", 0.0, 1.0)), el(("a", 0.5, 1.5)), p)
    assert (r.tp, r.fp) == (0, 1)
    r = intersection_match(el(("a", 2.0, 3.0), ("a", 3.0, 4.0)), el(("a", 2.0, 4.0)), p)
    assert (r.tp, r.fp) == (1, 0)
    r = intersection_match(el(("b", 2.0, 4.0)), el(("a", 2.0, 4.0)), p)
    assert (r.tp, r.fp) == (0, 1)
    with pytest.raises(DataError):
        intersection_match(el(("a", 3.0, 2.0)), el(), p)
    with pytest.raises(DataError):
        intersection_match(el(("a", 9.0, 10.5)), el(), p)


def random_events(rng, classes, k):
    out = []
    for _ in range(k):
        on = round(float(rng.uniform(0, 9.5)), 2)
        off = round(min(10.0, on + float(rng.uniform(0.05, 3.0))), 2)
        out.append((str(rng.choice(classes)), on, off))
    return out


def test_match_equals_brute_force_on_random_scenes():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        dets, gts = random_events(rng, ["a"], rng.integers(0, 6)), random_events(rng, ["a"], rng.integers(0, 6))
        r = intersection_match(el(*dets), el(*gts), PSDSParams(), ["a"])
        tp, fp = ref.match([(a, b) for _, a, b in dets], [(a, b) for _, a, b in gts], 0.7, 0.7)
        assert (r.tp, r.fp) == (tp, fp)


def _to_lists(scene):
    return {clip: el(*evs, clip=clip) for clip, evs in scene.items()}


def test_psds_equals_brute_force_on_random_scenes():
    rng = np.random.default_rng(4)
    classes = ["a", "b", "c"]
    checked = 0
    for _ in range(1000):
        clips = [f"k{i}" for i in range(rng.integers(1, 4))]
        gts = {c: random_events(rng, classes, rng.integers(0, 5)) for c in clips}
        if not any(gts.values()):
            continue
        sweep = [{c: random_events(rng, classes, rng.integers(0, 5)) for c in clips}
                 for _ in range(rng.integers(1, 5))]
        seconds = float(rng.choice([30.0, 360.0, 3600.0]))
        params = PSDSParams(alpha_st=float(rng.choice([0.0, 1.0])))
        fast = psds_from_detections([(float(i), _to_lists(s)) for i, s in enumerate(sweep)],
                                    _to_lists(gts), classes, seconds, params).psds
        slow = ref.psds(sweep, gts, classes, seconds, alpha_st=params.alpha_st)
        assert abs(fast - slow) < 1e-9
        checked += 1
    assert checked > 900


def hand_scenario():
    gts = {"c0": [("dog", 1.0, 3.0)], "c1": [("dog", 2.0, 4.0), ("bell", 5.0, 6.0)],
           "c2": [("bell", 0.0, 2.0)]}
    low = {"c0": [("dog", 1.0, 3.0), ("bell", 7.0, 8.0)], "c1": [("dog", 2.0, 4.0), ("bell", 5.0, 6.0)],
           "c2": [("bell", 0.0, 2.0)]}
    high = {"c0": [("dog", 1.0, 3.0)], "c1": [("bell", 5.0, 6.0)]}
    return gts, [low, high]


def test_hand_scenario():
    # 30 s of audio: one false positive is 120 per hour.  With e_max = 300:
    # eFPR in [0, 120): dog 1.0, bell 0.5 -> 0.75 - 0.25 = 0.5
    # eFPR in [120, 300): both 1.0 -> 1.0; area (0.5*120 + 1*180)/300 = 0.8
    gts, sweep = hand_scenario()
    params = PSDSParams(e_max=300.0)
    fast = psds_from_detections([(0.2, _to_lists(sweep[0])), (0.8, _to_lists(sweep[1]))],
                                _to_lists(gts), ["dog", "bell"], 30.0, params).psds
    slow = ref.psds(sweep, gts, ["dog", "bell"], 30.0, e_max=300.0)
    assert abs(fast - 0.8) < 1e-9 and abs(slow - 0.8) < 1e-9


def _gt_and_probs(rng, classes, n_clips=4):
    gts, probs = {}, {}
    for i in range(n_clips):
        cid = f"v{i}"
        p = np.zeros((100, len(classes)))
        evs = []
        for _ in range(2):
            c = int(rng.integers(len(classes)))
            a = int(rng.integers(0, 80))
            b = a + int(rng.integers(5, 20))
            p[a:b, c] = 1.0
            evs.append(Event(classes[c], a / 10, b / 10))
        gts[cid] = EventList(cid, evs)
        probs[cid] = p
    return gts, probs


def test_perfect_and_silent_detectors():
    rng = np.random.default_rng(5)
    classes = ["a", "b"]
    gts, probs = _gt_and_probs(rng, classes)
    # perfect detector: decode the rasterized truth
    truth = {cid: decode(p, 0.5, classes, cid) for cid, p in probs.items()}
    assert psds(probs, truth, classes).psds == 1.0
    silent = {cid: np.zeros_like(p) for cid, p in probs.items()}
    assert psds(silent, truth, classes).psds == 0.0


def test_undefined_without_ground_truth():
    with pytest.raises(UndefinedScoreError):
        psds({"v0": np.zeros((100, 1))}, {"v0": EventList("v0")}, ["a"])


def test_classes_without_ground_truth_are_excluded():
    gts = {"c0": el(("a", 1.0, 2.0), clip="c0")}
    dets = {"c0": el(("a", 1.0, 2.0), clip="c0")}
    r = psds_from_detections([(0.5, dets)], gts, ["a", "b"], 10.0)
    assert r.psds == 1.0 and r.classes == ["a"]


def test_adding_true_positive_never_decreases_psds():
    # With alpha_st = 0 the score is a mean of per-class areas, each monotone in TPR.
    rng = np.random.default_rng(6)
    params = PSDSParams(alpha_st=0.0)
    classes = ["a", "b"]
    for _ in range(200):
        clips = ["k0", "k1"]
        gts = {c: random_events(rng, classes, rng.integers(1, 4)) for c in clips}
        sweep = [{c: random_events(rng, classes, rng.integers(0, 3)) for c in clips} for _ in range(3)]
        before = psds_from_detections([(float(i), _to_lists(s)) for i, s in enumerate(sweep)],
                                      _to_lists(gts), classes, 3600.0, params).psds
        clip = clips[int(rng.integers(2))]
        target = gts[clip][int(rng.integers(len(gts[clip])))]
        for s in sweep:
            s[clip] = s[clip] + [target]
        after = psds_from_detections([(float(i), _to_lists(s)) for i, s in enumerate(sweep)],
                                     _to_lists(gts), classes, 3600.0, params).psds
        assert after >= before - 1e-12


def test_event_file_roundtrip(tmp_path):
    lists = [el(("a", 1.0, 2.5), ("b", 0.0, 10.0), clip="x"), EventList("y")]
    write_events(tmp_path / "e.tsv", lists)
    back = read_events(tmp_path / "e.tsv", ["x", "y"])
    assert sorted(back["x"]) == sorted(lists[0]) and len(back["y"]) == 0
