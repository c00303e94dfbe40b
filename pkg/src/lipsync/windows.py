"""Training windows and overlap-stitch inference over long sequences."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import MouthFeatureSequence

WINDOW_VIDEO = 50
RATE_RATIO = 4
WINDOW_AUDIO = WINDOW_VIDEO * RATE_RATIO
DEFAULT_TRAIN_HOP = 5


@dataclass(frozen=True)
class WindowPair:
    audio: np.ndarray
    mouth: np.ndarray
    start_audio_frame: int

    @property
    def start_video_frame(self) -> int:
        return self.start_audio_frame // RATE_RATIO


@dataclass(frozen=True)
class OverlapConfig:
    output_overlap: int = 10

    def __post_init__(self):
        if not 0 <= self.output_overlap < WINDOW_VIDEO // 2:
            raise ValueError(f"output_overlap must be in [0, {WINDOW_VIDEO // 2}), got {self.output_overlap}")

    @property
    def input_overlap(self) -> int:
        return RATE_RATIO * self.output_overlap

    @property
    def advance(self) -> int:
        return WINDOW_VIDEO - 2 * self.output_overlap


def _frames(seq):
    return seq.frames if hasattr(seq, "frames") else np.asarray(seq, dtype=np.float64)


def check_alignment(audio, mouth) -> None:
    if len(_frames(audio)) != RATE_RATIO * len(_frames(mouth)):
        raise ValueError(
            f"rate alignment violated: {len(_frames(audio))} audio frames vs "
            f"{len(_frames(mouth))} mouth frames (need exactly {RATE_RATIO}:1)"
        )


def make_training_windows(audio, mouth, hop_video_frames: int = DEFAULT_TRAIN_HOP) -> list[WindowPair]:
    a, m = _frames(audio), _frames(mouth)
    check_alignment(a, m)
    if hop_video_frames < 1:
        raise ValueError("hop must be at least one video frame")
    if len(m) < WINDOW_VIDEO:
        raise ValueError(f"sequence shorter than one window: {len(m)} < {WINDOW_VIDEO} video frames")
    out = []
    for s in range(0, len(m) - WINDOW_VIDEO + 1, hop_video_frames):
        out.append(
            WindowPair(
                audio=a[RATE_RATIO * s : RATE_RATIO * (s + WINDOW_VIDEO)],
                mouth=m[s : s + WINDOW_VIDEO],
                start_audio_frame=RATE_RATIO * s,
            )
        )
    return out


def plan_inference_windows(total_video_frames: int, cfg: OverlapConfig = OverlapConfig()):
    """Window starts and the half-open range of absolute frames each window contributes.

    Windows advance by ``50 - 2 * overlap``; the final window is anchored at
    ``total - 50`` when the length does not divide evenly, and only takes over
    where the previous window's keep range ends. The first window keeps its
    head and the last window keeps its tail.
    """
    total = int(total_video_frames)
    if total < WINDOW_VIDEO:
        raise ValueError(f"sequence shorter than one window: {total} < {WINDOW_VIDEO} video frames")
    ov = cfg.output_overlap
    starts = [0]
    while starts[-1] + WINDOW_VIDEO < total:
        starts.append(min(starts[-1] + cfg.advance, total - WINDOW_VIDEO))
    plan = []
    keep_start = 0
    for i, s in enumerate(starts):
        keep_end = total if i == len(starts) - 1 else s + WINDOW_VIDEO - ov
        plan.append((s, (keep_start, keep_end)))
        keep_start = keep_end
    return plan


def stitch(predictions, plan) -> MouthFeatureSequence:
    if len(predictions) != len(plan):
        raise ValueError(f"{len(predictions)} predictions for a plan of {len(plan)} windows")
    pieces = []
    for pred, (start, (lo, hi)) in zip(predictions, plan):
        pred = np.asarray(pred, dtype=np.float64)
        if pred.shape[0] != WINDOW_VIDEO:
            raise ValueError(f"prediction has {pred.shape[0]} frames, expected {WINDOW_VIDEO}")
        if not (start <= lo <= hi <= start + WINDOW_VIDEO):
            raise ValueError(f"keep range [{lo}, {hi}) lies outside window at {start}")
        pieces.append(pred[lo - start : hi - start])
    return MouthFeatureSequence(np.concatenate(pieces, axis=0))


def audio_windows(audio, plan) -> np.ndarray:
    """Stack the 200-frame audio inputs for each planned window, shape (n_windows, 200, 13)."""
    a = _frames(audio)
    return np.stack([a[RATE_RATIO * s : RATE_RATIO * s + WINDOW_AUDIO] for s, _ in plan])


def infer_sequence(predict, audio, cfg: OverlapConfig = OverlapConfig()) -> MouthFeatureSequence:
    """Overlap-stitch inference. ``predict`` maps an (n, 200, 13) batch to (n, 50, d)."""
    a = _frames(audio)
    total = len(a) // RATE_RATIO
    if total < WINDOW_VIDEO:
        raise ValueError(f"audio too short: {len(a)} frames < one {WINDOW_AUDIO}-frame window")
    plan = plan_inference_windows(total, cfg)
    preds = predict(audio_windows(a, plan))
    return stitch(list(preds), plan)
