import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lipsync.windows import (
    OverlapConfig,
    WindowPair,
    infer_sequence,
    make_training_windows,
    plan_inference_windows,
    stitch,
)


def streams(n_video, rng=None):
    rng = rng or np.random.default_rng(0)
    return rng.standard_normal((4 * n_video, 13)), rng.standard_normal((n_video, 10))


def enumerate_plan(total, ov):
    """Brute force: slide by the advance, anchor the last window at the end, then give
    every frame to the earliest window that holds it at least ``ov`` frames from an
    interior edge (edges of the whole sequence count as safe)."""
    adv = 50 - 2 * ov
    starts = list(range(0, total - 50 + 1, adv))
    if starts[-1] != total - 50:
        starts.append(total - 50)
    owner = []
    for t in range(total):
        for i, s in enumerate(starts):
            if not s <= t < s + 50:
                continue
            head_ok = t - s >= ov or s == 0
            tail_ok = s + 50 - t > ov or i == len(starts) - 1
            if head_ok and tail_ok:
                owner.append(i)
                break
    return starts, owner


def test_single_training_window():
    a, m = streams(50)
    w = make_training_windows(a, m, 25)
    assert len(w) == 1 and w[0].start_audio_frame == 0


def test_training_window_offsets():
    a, m = streams(100)
    w = make_training_windows(a, m, 25)
    assert [x.start_video_frame for x in w] == [0, 25, 50]
    for x in w:
        s = x.start_video_frame
        assert x.start_audio_frame == 4 * s
        np.testing.assert_array_equal(x.mouth, m[s : s + 50])
        np.testing.assert_array_equal(x.audio, a[4 * s : 4 * s + 200])
        assert x.audio.shape == (200, 13) and x.mouth.shape == (50, 10)


def test_training_window_errors():
    a, m = streams(49)
    with pytest.raises(ValueError):
        make_training_windows(a, m, 5)
    a, m = streams(60)
    with pytest.raises(ValueError, match="rate alignment violated"):
        make_training_windows(a[:-1], m, 5)
    with pytest.raises(ValueError):
        make_training_windows(a, m, 0)


def test_overlap_config():
    cfg = OverlapConfig()
    assert cfg.output_overlap == 10 and cfg.input_overlap == 40
    with pytest.raises(ValueError):
        OverlapConfig(25)
    with pytest.raises(ValueError):
        OverlapConfig(-1)


@pytest.mark.parametrize(
    "total, plan",
    [
        (50, [(0, (0, 50))]),
        (80, [(0, (0, 40)), (30, (40, 80))]),
        (110, [(0, (0, 40)), (30, (40, 70)), (60, (70, 110))]),
    ],
)
def test_plan_examples(total, plan):
    assert plan_inference_windows(total, OverlapConfig(10)) == plan


def test_plan_too_short():
    with pytest.raises(ValueError, match="shorter than one window"):
        plan_inference_windows(49)


@pytest.mark.parametrize("total", [50, 51, 79, 80, 81, 99, 123, 200, 317])
@pytest.mark.parametrize("ov", [0, 3, 10, 12])
def test_plan_matches_enumeration(total, ov):
    plan = plan_inference_windows(total, OverlapConfig(ov))
    starts, owner = enumerate_plan(total, ov)
    assert [s for s, _ in plan] == starts
    got_owner = [i for i, (_, (lo, hi)) in enumerate(plan) for _ in range(lo, hi)]
    assert got_owner == owner


@settings(max_examples=200, deadline=None)
@given(total=st.integers(50, 500), ov=st.integers(0, 12))
def test_plan_partitions_sequence(total, ov):
    plan = plan_inference_windows(total, OverlapConfig(ov))
    covered = np.zeros(total, dtype=int)
    for start, (lo, hi) in plan:
        assert start <= lo < hi <= start + 50
        covered[lo:hi] += 1
    assert np.all(covered == 1)
    # keep ranges stay `ov` away from every window edge that has a neighbour
    for i, (start, (lo, hi)) in enumerate(plan):
        if i > 0:
            assert lo - start >= ov
        if i < len(plan) - 1:
            assert start + 50 - hi >= ov


def test_stitch_constant():
    plan = plan_inference_windows(137)
    v = np.arange(10.0)
    out = stitch([np.tile(v, (50, 1)) for _ in plan], plan)
    assert len(out) == 137 and np.all(out.frames == v)


def test_stitch_single_window_verbatim(rng):
    plan = plan_inference_windows(50)
    p = rng.standard_normal((50, 10))
    np.testing.assert_array_equal(stitch([p], plan).frames, p)


def test_stitch_switches_at_keep_boundary():
    plan = plan_inference_windows(80)
    out = stitch([np.full((50, 10), 1.0), np.full((50, 10), 2.0)], plan).frames
    assert np.all(out[:40] == 1.0) and np.all(out[40:] == 2.0)


def test_stitch_count_mismatch():
    plan = plan_inference_windows(80)
    with pytest.raises(ValueError):
        stitch([np.zeros((50, 10))], plan)


def test_infer_sequence_reads_the_right_frames():
    # an identity "model": each window predicts the absolute frame index
    total = 173
    audio = np.repeat(np.arange(total, dtype=float), 4)[:, None] * np.ones(13)

    def predict(batch):
        return batch[:, ::4, :10]

    out = infer_sequence(predict, audio, OverlapConfig(10))
    np.testing.assert_array_equal(out.frames[:, 0], np.arange(total))


def test_infer_sequence_drops_incomplete_tail():
    audio = np.zeros((4 * 60 + 3, 13))
    out = infer_sequence(lambda b: np.zeros((len(b), 50, 10)), audio)
    assert len(out) == 60


def test_window_pair_fields():
    w = WindowPair(np.zeros((200, 13)), np.zeros((50, 10)), 40)
    assert w.start_video_frame == 10
