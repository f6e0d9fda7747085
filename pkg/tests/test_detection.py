import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import brute_threshold, brute_votes
from lrpursuit.detection import (
    ThresholdHistogram,
    build_histogram,
    choose_threshold,
    detect_events,
    mode_region,
    quantize,
)
from lrpursuit.projection import project, residuals


def test_constant_map_has_no_votes():
    h = build_histogram(np.full((6, 7), 4))
    assert h.total == 0
    assert choose_threshold(h) is None


def test_single_peak_votes():
    q = np.full((3, 3), 2)
    q[1, 1] = 10
    counts = build_histogram(q).counts
    assert counts.tolist() == [0, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1]


def test_crafted_5x5_matches_voter():
    q = np.array([[0, 1, 0, 2, 0],
                  [3, 9, 1, 0, 1],
                  [0, 2, 4, 6, 0],
                  [1, 0, 5, 8, 2],
                  [0, 0, 1, 0, 7]])
    assert build_histogram(q).counts.tolist() == brute_votes(q)


def test_non_maximal_pixels_do_not_vote():
    q = np.zeros((3, 3), dtype=int)
    q[0, 0] = 5
    q[1, 1] = 3
    assert build_histogram(q).total == 0


def test_spike_threshold():
    counts = np.zeros(12, dtype=np.int64)
    counts[5] = 1000
    h = ThresholdHistogram(counts)
    assert choose_threshold(h, 0.0025, 1000) == 6
    assert h.mode_region == (5, 5) and h.chosen_threshold == 6


def test_mode_region_prefers_narrow_then_left():
    assert mode_region([1, 4, 0, 4, 1]) == (0, 1)
    assert mode_region([1, 1, 0, 5, 1]) == (3, 3)
    assert mode_region([5, 0, 0, 5]) == (0, 0)
    assert mode_region([0, 0, 0]) is None


def test_scan_past_last_bin():
    h = ThresholdHistogram(np.array([0, 10, 10, 10]))
    assert choose_threshold(h, 0.0025, 100) == 4


def test_detect_strict_inequality_and_fallback():
    mask, _ = detect_events(np.zeros((4, 4)))
    assert mask.y.all() and mask.threshold is None
    # threshold 3 from a handmade histogram, applied through the mask rule
    q = np.array([0, 2, 3, 4])
    assert (q < 3).tolist() == [True, True, False, False]


def test_quantize_floor():
    q = quantize(np.array([[0.0, 0.99, 1.0, 2.5, -0.1]]), 2.0)
    assert q.tolist() == [[0, 1, 2, 5, 0]]


@settings(max_examples=100, deadline=None)
@given(q=arrays(np.int64, st.tuples(st.integers(1, 32), st.integers(1, 32)),
                elements=st.integers(0, 40)),
       fraction=st.sampled_from([0.0025, 0.01, 0.05]))
def test_matches_brute_force(q, fraction):
    h = build_histogram(q)
    assert h.counts.tolist() == brute_votes(q)
    region, threshold = brute_threshold(brute_votes(q), fraction, q.size)
    assert choose_threshold(h, fraction, q.size) == threshold
    assert h.mode_region == region


@settings(max_examples=60, deadline=None)
@given(q=arrays(np.int64, (8, 9), elements=st.integers(0, 30)))
def test_vote_conservation(q):
    total = 0
    for y in range(1, q.shape[0] - 1):
        for x in range(1, q.shape[1] - 1):
            hood = np.sort(q[y - 1:y + 2, x - 1:x + 2].ravel())
            if q[y, x] == hood[-1]:
                total += hood[-1] - hood[-3]
    assert build_histogram(q).total == total


@settings(max_examples=60, deadline=None)
@given(q=arrays(np.int64, (10, 10), elements=st.integers(0, 30)), c=st.integers(1, 20))
def test_shift_moves_threshold(q, c):
    a = choose_threshold(build_histogram(q), 0.0025, q.size)
    b = choose_threshold(build_histogram(q + c), 0.0025, q.size)
    assert (a is None and b is None) or b == a + c


def test_histogram_csv():
    text = ThresholdHistogram(np.array([0, 2])).to_csv()
    assert text == "bin,count\n0,0\n1,2\n"


def blob_frame(seed=0):
    rng = np.random.default_rng(seed)
    R = rng.standard_normal((4, 64 * 64)) * 25
    x = rng.standard_normal(4) @ R + rng.uniform(-5, 5, 64 * 64)
    blob = np.zeros((64, 64), dtype=bool)
    blob[20:30, 30:40] = True
    x[blob.ravel()] += 50.0
    return x, R, blob


def test_blob_threshold_separates():
    x, R, blob = blob_frame()
    res = project(x, R, period=1)
    r = residuals(x, res.v, R).reshape(64, 64)
    mask, h = detect_events(r)
    T = mask.threshold
    assert T is not None
    assert np.all(np.floor(r[blob]) >= T)
    assert np.mean(np.floor(r[~blob]) < T) >= 0.95


def test_blob_mask_f1():
    x, R, blob = blob_frame(1)
    res = project(x, R)
    mask, _ = detect_events(residuals(x, res.v, R).reshape(64, 64))
    ev = mask.events
    tp = np.sum(ev & blob.ravel())
    f1 = 2 * tp / (ev.sum() + blob.sum())
    assert f1 >= 0.90


def test_detect_is_pure():
    x, R, _ = blob_frame(2)
    r = residuals(x, project(x, R).v, R).reshape(64, 64)
    a, _ = detect_events(r)
    b, _ = detect_events(r.copy())
    assert np.array_equal(a.y, b.y) and a.threshold == b.threshold
