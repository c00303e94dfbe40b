"""Feature extraction: MFCC audio features, normalized mouth landmarks and the PCA mouth space."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.fft import dct, rfft

AUDIO_RATE_HZ = 100
VIDEO_RATE_HZ = 25
N_MFCC = 13
N_LANDMARKS = 68
MOUTH_SLICE = slice(48, 68)
JAW_SLICE = slice(0, 17)
LEFT_EYE_OUTER = 36
RIGHT_EYE_OUTER = 45
NOSTRILS = slice(31, 36)

WINDOW_SECONDS = 0.025
HOP_SECONDS = 0.010
N_MEL = 26
LOG_FLOOR = 1e-10

PCA_MAGIC = b"PCA1"


@dataclass(frozen=True)
class AudioFeatureSequence:
    frames: np.ndarray
    rate_hz: int = AUDIO_RATE_HZ

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[1] != N_MFCC:
            raise ValueError(f"audio features must be (n, {N_MFCC}), got {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise ValueError("audio features contain non-finite values")
        if self.rate_hz != AUDIO_RATE_HZ:
            raise ValueError(f"audio feature rate must be {AUDIO_RATE_HZ} Hz")
        object.__setattr__(self, "frames", frames)

    def __len__(self):
        return len(self.frames)


@dataclass(frozen=True)
class MouthFeatureSequence:
    frames: np.ndarray
    rate_hz: int = VIDEO_RATE_HZ

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2:
            raise ValueError(f"mouth features must be 2-D, got {frames.shape}")
        if self.rate_hz != VIDEO_RATE_HZ:
            raise ValueError(f"mouth feature rate must be {VIDEO_RATE_HZ} Hz")
        object.__setattr__(self, "frames", frames)

    def __len__(self):
        return len(self.frames)


@dataclass(frozen=True)
class LandmarkFrame:
    points: np.ndarray
    frame_index: int = 0
    image_size: tuple[int, int] = (512, 512)

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64)
        if points.shape != (N_LANDMARKS, 2):
            raise ValueError(f"expected {N_LANDMARKS} (x, y) landmarks, got {points.shape}")
        object.__setattr__(self, "points", points)

    @property
    def valid(self) -> bool:
        w, h = self.image_size
        p = self.points
        return bool(
            np.all(np.isfinite(p))
            and np.all(p[:, 0] >= 0) and np.all(p[:, 0] <= w - 1)
            and np.all(p[:, 1] >= 0) and np.all(p[:, 1] <= h - 1)
        )


@dataclass(frozen=True)
class Placement:
    """Similarity transform between pixel space and the normalized face frame.

    ``pixel = nose + scale * R(roll) @ normalized``.
    """

    nose: np.ndarray
    roll: float
    scale: float = 1.0

    def to_normalized(self, points):
        points = np.asarray(points, dtype=np.float64)
        c, s = np.cos(self.roll), np.sin(self.roll)
        d = points - self.nose
        # rotate by -roll
        x = c * d[..., 0] + s * d[..., 1]
        y = -s * d[..., 0] + c * d[..., 1]
        return np.stack([x, y], axis=-1) / self.scale

    def to_pixels(self, points):
        points = np.asarray(points, dtype=np.float64) * self.scale
        c, s = np.cos(self.roll), np.sin(self.roll)
        x = c * points[..., 0] - s * points[..., 1]
        y = s * points[..., 0] + c * points[..., 1]
        return np.stack([x, y], axis=-1) + self.nose


def _as_points(frame) -> np.ndarray:
    if isinstance(frame, LandmarkFrame):
        if not frame.valid:
            raise ValueError(f"frame {frame.frame_index}: landmarks are outside the image or non-finite")
        return frame.points
    points = np.asarray(frame, dtype=np.float64)
    if points.shape != (N_LANDMARKS, 2):
        raise ValueError(f"expected {N_LANDMARKS} (x, y) landmarks, got {points.shape}")
    if not np.all(np.isfinite(points)):
        raise ValueError("landmarks contain non-finite values")
    return points


def estimate_placement(frame, scale_normalize: bool = True) -> Placement:
    points = _as_points(frame)
    eye = points[RIGHT_EYE_OUTER] - points[LEFT_EYE_OUTER]
    dist = float(np.hypot(eye[0], eye[1]))
    if dist < 1e-12:
        raise ValueError("cannot estimate roll: outer eye corners coincide")
    roll = float(np.arctan2(eye[1], eye[0]))
    nose = points[NOSTRILS].mean(axis=0)
    return Placement(nose=nose, roll=roll, scale=dist if scale_normalize else 1.0)


def normalize_face(frame, scale_normalize: bool = True) -> np.ndarray:
    """All 68 landmarks in the roll-free, nose-centred frame."""
    points = _as_points(frame)
    return estimate_placement(points, scale_normalize).to_normalized(points)


def normalize_landmarks(frame, scale_normalize: bool = True) -> np.ndarray:
    """Return the 20 mouth points (20, 2) with roll removed and the nose centre at the origin."""
    return normalize_face(frame, scale_normalize)[MOUTH_SLICE]


# --------------------------------------------------------------------- MFCC


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def analysis_params(sample_rate: int) -> tuple[int, int, int]:
    """(window, hop, nfft) in samples."""
    window = int(round(WINDOW_SECONDS * sample_rate))
    hop = int(round(HOP_SECONDS * sample_rate))
    nfft = 1
    while nfft < window:
        nfft *= 2
    return window, hop, nfft


def mel_filterbank(sample_rate: int, nfft: int, n_filters: int = N_MEL) -> np.ndarray:
    """Triangular filters on the mel scale spanning 0 Hz to Nyquist, shape (n_filters, nfft//2 + 1)."""
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_filters + 2))
    freqs = np.arange(nfft // 2 + 1) * sample_rate / nfft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def pad_for_framing(signal: np.ndarray, window: int, hop: int) -> np.ndarray:
    """Zero-pad so frame k is centred on the k-th hop interval; yields len // hop frames."""
    total = window - hop
    left = total // 2
    return np.pad(signal, (left, total - left))


def _as_mono(pcm) -> np.ndarray:
    pcm = np.asarray(pcm)
    if pcm.ndim == 2 and pcm.shape[1] == 1:
        pcm = pcm[:, 0]
    if pcm.ndim != 1:
        raise ValueError(f"audio must be mono, got array of shape {pcm.shape}")
    if pcm.dtype == np.int16:
        return pcm.astype(np.float64) / 32768.0
    return pcm.astype(np.float64)


def extract_mfcc(pcm, sample_rate: int) -> AudioFeatureSequence:
    """13 MFCCs per 10 ms hop over 25 ms periodic-Hann windows.

    int16 samples are scaled to [-1, 1). The signal is zero-padded by
    ``window - hop`` samples so that ``len(pcm) // hop`` frames come out.
    """
    if sample_rate < 8000:
        raise ValueError(f"sample rate {sample_rate} Hz is below 8000 Hz")
    signal = _as_mono(pcm)
    window, hop, nfft = analysis_params(sample_rate)
    if len(signal) < window:
        raise ValueError(f"audio too short: {len(signal)} samples < one {window}-sample window")
    padded = pad_for_framing(signal, window, hop)
    n_frames = (len(padded) - window) // hop + 1
    idx = np.arange(window)[None, :] + hop * np.arange(n_frames)[:, None]
    taper = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(window) / window)
    frames = padded[idx] * taper
    power = np.abs(rfft(frames, n=nfft, axis=1)) ** 2 / nfft
    energies = power @ mel_filterbank(sample_rate, nfft).T
    log_e = np.log(np.maximum(energies, LOG_FLOOR))
    ceps = dct(log_e, type=2, axis=1, norm="ortho")[:, :N_MFCC]
    return AudioFeatureSequence(ceps)


def silence_vector() -> np.ndarray:
    """MFCC vector of a frame whose filterbank energies all sit at the log floor."""
    return dct(np.full(N_MEL, np.log(LOG_FLOOR)), type=2, norm="ortho")[:N_MFCC]


# ---------------------------------------------------------------------- PCA


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray
    explained_variance_ratio: np.ndarray = field(default=None)

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        comps = np.asarray(self.components, dtype=np.float64)
        if comps.ndim != 2 or comps.shape[1] != mean.shape[0]:
            raise ValueError(f"components {comps.shape} do not match mean of length {mean.shape[0]}")
        ratios = self.explained_variance_ratio
        ratios = np.zeros(comps.shape[0]) if ratios is None else np.asarray(ratios, dtype=np.float64)
        for a in (mean, comps, ratios):
            a.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "explained_variance_ratio", ratios)

    @property
    def n_components(self) -> int:
        return self.components.shape[0]

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def _flatten_coords(coords, dim: int) -> np.ndarray:
    x = np.asarray(coords, dtype=np.float64)
    if x.shape[-2:] == (dim // 2, 2):
        x = x.reshape(*x.shape[:-2], dim)
    if x.shape[-1] != dim:
        raise ValueError(f"expected {dim}-D mouth coordinates, got shape {x.shape}")
    return x


def fit_pca(corpus, n_components: int = 10) -> PcaModel:
    """Top principal components of mouth coordinates (each sample (20, 2) or 40-D)."""
    x = np.asarray(corpus, dtype=np.float64)
    if x.ndim == 3:
        x = x.reshape(len(x), -1)
    if x.ndim != 2:
        raise ValueError(f"corpus must be a list of mouth coordinate sets, got shape {x.shape}")
    if len(x) < n_components + 1:
        raise ValueError(f"insufficient data: {len(x)} samples for {n_components} components")
    if not 1 <= n_components <= x.shape[1]:
        raise ValueError(f"n_components must be in [1, {x.shape[1]}]")
    mean = x.mean(axis=0)
    centered = x - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    var = s**2
    total = var.sum()
    if total <= 1e-300:
        raise ValueError("zero-variance corpus: every sample is identical")
    comps = vt[:n_components]
    # deterministic signs: largest-magnitude entry of each component is positive
    pivot = comps[np.arange(n_components), np.argmax(np.abs(comps), axis=1)]
    comps = comps * np.where(pivot < 0, -1.0, 1.0)[:, None]
    return PcaModel(mean, comps, var[:n_components] / total)


def pca_transform(model: PcaModel, coords) -> np.ndarray:
    x = _flatten_coords(coords, model.dim)
    return (x - model.mean) @ model.components.T


def pca_inverse(model: PcaModel, feature) -> np.ndarray:
    """Map feature vector(s) back to mouth coordinates of shape (..., 20, 2)."""
    f = np.asarray(feature, dtype=np.float64)
    if f.shape[-1] != model.n_components:
        raise ValueError(f"expected {model.n_components}-D feature, got shape {f.shape}")
    x = f @ model.components + model.mean
    return x.reshape(*f.shape[:-1], model.dim // 2, 2)


def save_pca(model: PcaModel, path) -> None:
    """Flat little-endian binary: b"PCA1", mean, components (row-major), ratios, all float64."""
    with open(path, "wb") as fh:
        fh.write(PCA_MAGIC)
        for a in (model.mean, model.components, model.explained_variance_ratio):
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_pca(path, dim: int = 40) -> PcaModel:
    data = Path(path).read_bytes()
    if data[:4] != PCA_MAGIC:
        raise ValueError(f"{path}: not a PCA model file")
    values = np.frombuffer(data[4:], dtype="<f8")
    k, rem = divmod(len(values) - dim, dim + 1)
    if rem or k < 1:
        raise ValueError(f"{path}: truncated or malformed PCA model")
    mean = values[:dim]
    comps = values[dim : dim + k * dim].reshape(k, dim)
    return PcaModel(mean.copy(), comps.copy(), values[dim + k * dim :].copy())


# ---------------------------------------------------------------- CSV files


def read_landmark_csv(path, image_size=(512, 512)) -> list[LandmarkFrame]:
    frames = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) != 1 + 2 * N_LANDMARKS:
            raise ValueError(f"{path}: expected header frame_index,x0,y0,...,x67,y67")
        for row in reader:
            if not row:
                continue
            vals = np.array([float(v) for v in row[1:]])
            frames.append(LandmarkFrame(vals.reshape(N_LANDMARKS, 2), int(row[0]), tuple(image_size)))
    return frames


def write_landmark_csv(path, frames) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame_index"] + [f"{a}{i}" for i in range(N_LANDMARKS) for a in "xy"])
        for i, fr in enumerate(frames):
            if isinstance(fr, LandmarkFrame):
                idx, pts = fr.frame_index, fr.points
            else:
                idx, pts = i, np.asarray(fr)
            w.writerow([idx] + [repr(float(v)) for v in pts.reshape(-1)])


def write_matrix_csv(path, matrix, prefix: str) -> None:
    matrix = np.asarray(matrix, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"{prefix}{i}" for i in range(matrix.shape[1])])
        for row in matrix:
            w.writerow([repr(float(v)) for v in row])


def read_matrix_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty file")
        rows = [[float(v) for v in row] for row in reader if row]
    if not rows:
        return np.zeros((0, len(header)))
    return np.array(rows)


def write_mfcc_csv(path, seq: AudioFeatureSequence) -> None:
    write_matrix_csv(path, seq.frames, "c")


def read_mfcc_csv(path) -> AudioFeatureSequence:
    return AudioFeatureSequence(read_matrix_csv(path))


def write_mouth_csv(path, seq: MouthFeatureSequence) -> None:
    write_matrix_csv(path, seq.frames, "m")


def read_mouth_csv(path) -> MouthFeatureSequence:
    return MouthFeatureSequence(read_matrix_csv(path))


def read_wav(path) -> tuple[np.ndarray, int]:
    """Read a 16-bit PCM WAV file; returns (samples as int16 of shape (n,) or (n, channels), rate)."""
    import wave

    with wave.open(str(path), "rb") as wf:
        if wf.getsampwidth() != 2:
            raise ValueError(f"{path}: only 16-bit PCM WAV is supported")
        n_ch = wf.getnchannels()
        rate = wf.getframerate()
        data = np.frombuffer(wf.readframes(wf.getnframes()), dtype="<i2")
    if n_ch > 1:
        data = data.reshape(-1, n_ch)
    return data.astype(np.int16), rate


def write_wav(path, samples, sample_rate: int) -> None:
    import wave

    samples = np.asarray(samples)
    if samples.dtype != np.int16:
        samples = np.clip(np.round(samples * 32767.0), -32768, 32767).astype(np.int16)
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(sample_rate)
        wf.writeframes(samples.astype("<i2").tobytes())

