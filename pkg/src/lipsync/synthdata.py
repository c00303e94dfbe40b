"""Synthetic corpora with known ground truth: an audio->mouth oracle and parametric faces."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .features import N_MFCC, AudioFeatureSequence, LandmarkFrame, MouthFeatureSequence, Placement
from .windows import RATE_RATIO

KERNEL_OFFSETS = np.arange(-12, 25)


def default_kernel(peak: int = 6) -> np.ndarray:
    """Triangular weights over audio offsets -12..+24 peaking at ``peak``; mass leans to the future."""
    lo, hi = KERNEL_OFFSETS[0] - 1, KERNEL_OFFSETS[-1] + 1
    k = KERNEL_OFFSETS
    w = np.where(k <= peak, (k - lo) / (peak - lo), (hi - k) / (hi - peak))
    return w / w.sum()


def default_mixing(seed: int = 0, n_out: int = 10, gain: float = 1.0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return gain * rng.standard_normal((n_out, N_MFCC))


@dataclass(frozen=True)
class OracleSpec:
    mixing: np.ndarray = field(default_factory=lambda: default_mixing(0))
    kernel: np.ndarray = field(default_factory=default_kernel)
    noise_sigma: float = 0.05
    seed: int = 0

    def __post_init__(self):
        mixing = np.asarray(self.mixing, dtype=np.float64)
        kernel = np.asarray(self.kernel, dtype=np.float64)
        if mixing.ndim != 2 or mixing.shape[1] != N_MFCC:
            raise ValueError(f"mixing must map {N_MFCC} -> d, got {mixing.shape}")
        if kernel.shape != KERNEL_OFFSETS.shape:
            raise ValueError(f"kernel needs {len(KERNEL_OFFSETS)} weights for offsets -12..+24")
        if abs(kernel.sum() - 1.0) > 1e-9:
            raise ValueError("kernel weights must sum to 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        object.__setattr__(self, "mixing", mixing)
        object.__setattr__(self, "kernel", kernel)


@dataclass(frozen=True)
class Corpus:
    audio: AudioFeatureSequence
    mouth: MouthFeatureSequence
    truth: np.ndarray


def oracle_mouth(spec: OracleSpec, audio: np.ndarray) -> np.ndarray:
    """Noise-free mouth frames; audio outside the stream counts as zero."""
    n_video = len(audio) // RATE_RATIO
    lo = -KERNEL_OFFSETS[0]
    padded = np.zeros((len(audio) + lo + KERNEL_OFFSETS[-1], audio.shape[1]))
    padded[lo : lo + len(audio)] = audio
    centers = RATE_RATIO * np.arange(n_video) + lo
    mixed_in = np.zeros((n_video, audio.shape[1]))
    for k, w in zip(KERNEL_OFFSETS, spec.kernel):
        mixed_in += w * padded[centers + k]
    return mixed_in @ spec.mixing.T


def generate_corpus(spec: OracleSpec, minutes: float) -> Corpus:
    if minutes <= 0:
        raise ValueError("minutes must be positive")
    n_video = int(round(minutes * 60 * 25))
    n_audio = RATE_RATIO * n_video
    rng = np.random.default_rng(spec.seed)
    raw = rng.standard_normal((n_audio + 4, N_MFCC))
    csum = np.cumsum(np.vstack([np.zeros((1, N_MFCC)), raw]), axis=0)
    audio = (csum[5:] - csum[:-5]) / 5.0
    truth = oracle_mouth(spec, audio)
    mouth = truth + spec.noise_sigma * rng.standard_normal(truth.shape)
    return Corpus(AudioFeatureSequence(audio), MouthFeatureSequence(mouth), truth)


def oracle_floor(spec: OracleSpec) -> float:
    return float(spec.noise_sigma) ** 2


def split_corpus(corpus: Corpus, val_fraction: float = 0.2):
    """Contiguous train/validation split on a video-frame boundary: ((a, m), (a, m))."""
    n = len(corpus.mouth)
    cut = int(round(n * (1 - val_fraction)))
    a, m = corpus.audio.frames, corpus.mouth.frames
    return (
        (AudioFeatureSequence(a[: RATE_RATIO * cut]), MouthFeatureSequence(m[:cut])),
        (AudioFeatureSequence(a[RATE_RATIO * cut :]), MouthFeatureSequence(m[cut:])),
    )


# ------------------------------------------------------------ synthetic faces
# Normalized frame: outer eye corners one unit apart on the x axis, nose centre
# at the origin, y pointing down as in image coordinates.

REST_W, REST_H = 0.5, 0.08
MOUTH_Y = 0.35


def _ellipse(cx, cy, rx, ry, angles):
    return np.stack([cx + rx * np.cos(angles), cy + ry * np.sin(angles)], axis=1)


def rest_jaw() -> np.ndarray:
    phi = np.pi - np.arange(17) * np.pi / 16
    return _ellipse(0.0, -0.3, 0.8, 1.05, phi)


def jaw_response() -> np.ndarray:
    """Ground-truth jaw coefficients, shape (17, 2, 3): per point and axis, (intercept, d/dw, d/dh)
    relative to the rest jaw, with (w, h) measured from the rest mouth."""
    phi = np.pi - np.arange(17) * np.pi / 16
    coef = np.zeros((17, 2, 3))
    coef[:, 0, 1] = 0.3 * np.cos(phi)
    coef[:, 0, 2] = 0.05 * np.cos(phi)
    coef[:, 1, 1] = 0.1 * np.sin(phi)
    coef[:, 1, 2] = 0.9 * np.sin(phi) ** 2
    return coef


def mouth_points(w: float, h: float, cx: float = 0.0, cy: float = MOUTH_Y) -> np.ndarray:
    """20 mouth points: 12 outer-lip points from the left corner over the top, 8 inner-lip points."""
    outer = _ellipse(cx, cy, w / 2, h / 2, np.pi + np.arange(12) * np.pi / 6)
    inner = _ellipse(cx, cy, 0.4 * w, 0.3 * h, np.pi + np.arange(8) * np.pi / 4)
    # corners and mid-lips exact, free of trigonometric round-off
    outer[[0, 3, 6, 9]] = [[cx - w / 2, cy], [cx, cy - h / 2], [cx + w / 2, cy], [cx, cy + h / 2]]
    inner[[0, 2, 4, 6]] = [[cx - 0.4 * w, cy], [cx, cy - 0.3 * h], [cx + 0.4 * w, cy], [cx, cy + 0.3 * h]]
    return np.vstack([outer, inner])


def synthetic_face(w: float = REST_W, h: float = REST_H, jaw_coef=None) -> np.ndarray:
    """68 normalized landmarks whose jaw is a linear function of mouth (w, h)."""
    pts = np.zeros((68, 2))
    coef = jaw_response() if jaw_coef is None else jaw_coef
    design = np.array([1.0, w - REST_W, h - REST_H])
    pts[0:17] = rest_jaw() + coef @ design
    t = np.linspace(0, 1, 5)
    pts[17:22] = np.stack([-0.65 + 0.45 * t, -0.55 - 0.08 * np.sin(np.pi * t)], axis=1)
    pts[22:27] = np.stack([0.2 + 0.45 * t, -0.55 - 0.08 * np.sin(np.pi * t)], axis=1)
    pts[27:31] = np.stack([np.zeros(4), np.linspace(-0.4, -0.1, 4)], axis=1)
    pts[31:36] = np.stack([np.linspace(-0.12, 0.12, 5), np.array([0.0, 0.02, 0.03, 0.02, 0.0])], axis=1)
    pts[31:36, 1] -= pts[31:36, 1].mean()
    pts[36:42] = _ellipse(-0.35, -0.35, 0.15, 0.05, np.pi + np.arange(6) * np.pi / 3)
    pts[42:48] = _ellipse(0.35, -0.35, 0.15, 0.05, np.pi + np.arange(6) * np.pi / 3)
    # outer corners at x = -/+0.5 exactly
    pts[45] = [0.5, -0.35]
    pts[36] = [-0.5, -0.35]
    pts[48:68] = mouth_points(w, h)
    return pts


def place_face(points, placement: Placement, frame_index: int = 0, image_size=(512, 512)) -> LandmarkFrame:
    return LandmarkFrame(placement.to_pixels(points), frame_index, tuple(image_size))


def default_template_placement() -> Placement:
    return Placement(nose=np.array([256.0, 240.0]), roll=0.05, scale=140.0)


def random_mouth_shapes(n: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.stack([rng.uniform(0.4, 0.65, n), rng.uniform(0.0, 0.35, n)], axis=1)


def template_image(placement: Placement | None = None, size: int = 512, seed: int = 0) -> np.ndarray:
    """Deterministic RGB template: textured background, a face disc and a dark 'hair' band."""
    placement = placement or default_template_placement()
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size]
    img = np.full((size, size, 3), 40, dtype=np.int64)
    img += (20 * ((xx // 32 + yy // 32) % 2))[..., None]
    face = placement.to_normalized(np.stack([xx, yy], axis=-1).astype(np.float64))
    inside = (face[..., 0] / 0.85) ** 2 + ((face[..., 1] + 0.2) / 1.1) ** 2 <= 1.0
    img[inside] = [200, 160, 140]
    hair = inside & (face[..., 1] < -0.9)
    img[hair] = [60, 40, 30]
    for cx in (-0.35, 0.35):
        eye = ((face[..., 0] - cx) / 0.15) ** 2 + ((face[..., 1] + 0.35) / 0.06) ** 2 <= 1.0
        img[eye] = [50, 40, 40]
    lips = (face[..., 0] / (REST_W / 2)) ** 2 + ((face[..., 1] - MOUTH_Y) / 0.06) ** 2 <= 1.0
    img[lips] = [150, 60, 70]
    img += rng.integers(0, 3, size=img.shape)
    return np.clip(img, 0, 255).astype(np.uint8)


def planted_mouth_corpus(n: int, residual_fraction: float = 0.01, seed: int = 0, n_latent: int = 10) -> np.ndarray:
    """Mouth coordinates (n, 20, 2) with ``n_latent`` dominant directions.

    Isotropic noise is confined to the orthogonal complement of the latent
    directions and scaled so it carries ``residual_fraction`` of the variance.
    """
    rng = np.random.default_rng(seed)
    base = mouth_points(REST_W, 0.15).reshape(-1)
    dim = base.size
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    basis, complement = q[:, :n_latent].T, q[:, n_latent:].T
    latent_var = 0.02 * 0.7 ** np.arange(n_latent)
    latent = rng.standard_normal((n, n_latent)) * np.sqrt(latent_var)
    noise_var = residual_fraction / (1 - residual_fraction) * latent_var.sum() / len(complement)
    noise = rng.standard_normal((n, len(complement))) * np.sqrt(noise_var)
    x = base + latent @ basis + noise @ complement
    return x.reshape(n, dim // 2, 2)
