"""Face-side geometry: Canny edges, jaw correction and synthetic facial map rasterization."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from matplotlib.path import Path as PolyPath
from PIL import Image
from scipy import ndimage

from .features import (
    JAW_SLICE,
    LandmarkFrame,
    PcaModel,
    Placement,
    estimate_placement,
    pca_inverse,
    read_landmark_csv,
)

MAP_SIZE = 512
JAW_MAGIC = b"JAW1"
N_JAW = 17

# 5x5 Gaussian, sigma 1.4, integer weights summing to 159
GAUSS5 = np.array(
    [
        [2, 4, 5, 4, 2],
        [4, 9, 12, 9, 4],
        [5, 12, 15, 12, 5],
        [4, 9, 12, 9, 4],
        [2, 4, 5, 4, 2],
    ],
    dtype=np.int64,
)
GAUSS_SUM = 159
SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.int64)
SOBEL_Y = SOBEL_X.T
# tan(22.5 deg) ~ 5/12 for integer direction binning
TAN_NUM, TAN_DEN = 5, 12

# polyline groups of the 68-point scheme: (start, stop, closed)
LANDMARK_GROUPS = [(17, 22, False), (22, 27, False), (27, 31, False), (31, 36, False), (36, 42, True), (42, 48, True)]
MOUTH_GROUPS = [(0, 12, True), (12, 20, True)]  # outer / inner lips, relative to point 48


# -------------------------------------------------------------------- Canny


def to_gray(image) -> np.ndarray:
    img = np.asarray(image)
    if img.size == 0:
        raise ValueError("empty image")
    if img.ndim == 3:
        rgb = img[..., :3].astype(np.int64)
        return (299 * rgb[..., 0] + 587 * rgb[..., 1] + 114 * rgb[..., 2] + 500) // 1000
    if img.ndim != 2:
        raise ValueError(f"expected a grayscale or RGB image, got shape {img.shape}")
    return img.astype(np.int64)


def _correlate_edge(img, kernel):
    r = kernel.shape[0] // 2
    padded = np.pad(img, r, mode="edge")
    h, w = img.shape
    out = np.zeros_like(img)
    for dy in range(kernel.shape[0]):
        for dx in range(kernel.shape[1]):
            if kernel[dy, dx]:
                out += kernel[dy, dx] * padded[dy : dy + h, dx : dx + w]
    return out


def gradients(image):
    """Integer Sobel gradients of the Gaussian-blurred image (both scaled by 159)."""
    blurred = _correlate_edge(to_gray(image), GAUSS5)
    return _correlate_edge(blurred, SOBEL_X), _correlate_edge(blurred, SOBEL_Y)


def gradient_steps(gx, gy):
    """Unit pixel step (dx, dy) along the quantized gradient direction."""
    ax, ay = np.abs(gx), np.abs(gy)
    sx, sy = np.sign(gx), np.sign(gy)
    horizontal = TAN_DEN * ay <= TAN_NUM * ax
    vertical = ~horizontal & (TAN_DEN * ax <= TAN_NUM * ay)
    dx = np.where(vertical, 0, sx)
    dy = np.where(horizontal, 0, sy)
    return dx, dy


def _threshold_sq(t):
    return (float(t) * GAUSS_SUM) ** 2


def canny(image, low: float = 50, high: float = 150) -> np.ndarray:
    """Boolean edge mask.

    Gaussian blur (5x5, sigma 1.4), Sobel gradients and thresholds on the L2
    gradient magnitude of the 8-bit intensity scale. Non-maximum suppression
    compares along the signed gradient direction: a pixel survives if it is
    strictly larger than the neighbour on the brighter side and not smaller
    than the one on the darker side, which thins symmetric steps to one pixel.
    Hysteresis uses 8-connectivity.
    """
    if not high >= low > 0:
        raise ValueError(f"thresholds must satisfy high >= low > 0, got low={low}, high={high}")
    gx, gy = gradients(image)
    mag = gx * gx + gy * gy
    h, w = mag.shape
    dx, dy = gradient_steps(gx, gy)
    yy, xx = np.mgrid[0:h, 0:w]
    padded = np.pad(mag, 1)
    ahead = padded[yy + dy + 1, xx + dx + 1]
    behind = padded[yy - dy + 1, xx - dx + 1]
    thin = (mag > ahead) & (mag >= behind)
    weak = thin & (mag >= _threshold_sq(low))
    strong = thin & (mag >= _threshold_sq(high))
    labels, n = ndimage.label(weak, structure=np.ones((3, 3), dtype=int))
    if n == 0:
        return np.zeros_like(weak)
    keep = np.zeros(n + 1, dtype=bool)
    keep[np.unique(labels[strong])] = True
    keep[0] = False
    return keep[labels]


# ------------------------------------------------------------ jaw correction


def mouth_wh(coords) -> tuple[float, float]:
    """Mouth width (corner to corner) and height (outer mid-lips) from 20 mouth points."""
    m = np.asarray(coords, dtype=np.float64).reshape(20, 2)
    return float(np.linalg.norm(m[6] - m[0])), float(np.linalg.norm(m[9] - m[3]))


@dataclass(frozen=True)
class JawRegressor:
    """Per jaw point and axis: offset = c0 + c1 * w + c2 * h. ``coef`` has shape (17, 2, 3)."""

    coef: np.ndarray

    def __post_init__(self):
        coef = np.asarray(self.coef, dtype=np.float64)
        if coef.shape != (N_JAW, 2, 3):
            raise ValueError(f"jaw coefficients must have shape ({N_JAW}, 2, 3), got {coef.shape}")
        if not np.all(np.isfinite(coef)):
            raise ValueError("jaw coefficients must be finite")
        object.__setattr__(self, "coef", coef)

    @classmethod
    def zero(cls):
        return cls(np.zeros((N_JAW, 2, 3)))

    def predict(self, w: float, h: float) -> np.ndarray:
        return self.coef @ np.array([1.0, w, h])


def fit_jaw(samples) -> JawRegressor:
    """Ordinary least squares of jaw offsets (17, 2) on mouth shape (w, h).

    ``samples`` is a sequence of ``((w, h), offsets)`` pairs.
    """
    samples = list(samples)
    if len(samples) < 4:
        raise ValueError(f"need at least 4 samples, got {len(samples)}")
    wh = np.array([s[0] for s in samples], dtype=np.float64)
    offsets = np.array([s[1] for s in samples], dtype=np.float64).reshape(len(samples), N_JAW * 2)
    design = np.column_stack([np.ones(len(wh)), wh])
    if np.linalg.matrix_rank(design) < 3:
        raise ValueError("degenerate mouth-shape data: (w, h) samples are collinear")
    beta, *_ = np.linalg.lstsq(design, offsets, rcond=None)
    return JawRegressor(beta.T.reshape(N_JAW, 2, 3))


def correct_jaw(regressor: JawRegressor, template_jaw, mouth) -> np.ndarray:
    jaw = np.asarray(template_jaw, dtype=np.float64)
    if jaw.shape != (N_JAW, 2):
        raise ValueError(f"template jaw must be ({N_JAW}, 2), got {jaw.shape}")
    return jaw + regressor.predict(*mouth_wh(mouth))


def jaw_samples_from_faces(normalized_faces, reference_jaw=None):
    """Training pairs ((w, h), jaw - reference) from normalized 68-point faces.

    The reference defaults to the mean jaw over the given faces.
    """
    faces = np.asarray(normalized_faces, dtype=np.float64)
    ref = faces[:, JAW_SLICE].mean(axis=0) if reference_jaw is None else np.asarray(reference_jaw)
    return [(mouth_wh(f[48:68]), f[JAW_SLICE] - ref) for f in faces]


def save_jaw(reg: JawRegressor, path) -> None:
    with open(path, "wb") as fh:
        fh.write(JAW_MAGIC)
        fh.write(np.ascontiguousarray(reg.coef, dtype="<f8").tobytes())


def load_jaw(path) -> JawRegressor:
    data = Path(path).read_bytes()
    if data[:4] != JAW_MAGIC or len(data) != 4 + 8 * N_JAW * 2 * 3:
        raise ValueError(f"{path}: not a jaw regressor file")
    return JawRegressor(np.frombuffer(data[4:], dtype="<f8").reshape(N_JAW, 2, 3).copy())


# ------------------------------------------------------------- rasterization


def pixel_round(points) -> np.ndarray:
    return np.floor(np.asarray(points, dtype=np.float64) + 0.5).astype(np.int64)


def line_pixels(p0, p1):
    """Integer line stepping (Bresenham) between two integer points, endpoints included."""
    x0, y0 = int(p0[0]), int(p0[1])
    x1, y1 = int(p1[0]), int(p1[1])
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx, sy = (1 if x0 < x1 else -1), (1 if y0 < y1 else -1)
    err = dx + dy
    out = []
    while True:
        out.append((x0, y0))
        if x0 == x1 and y0 == y1:
            return out
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy


def draw_polyline(mask: np.ndarray, points, closed: bool = False) -> np.ndarray:
    """Set the pixels of a 1-pixel polyline in ``mask``; pixels outside the raster are skipped."""
    pts = pixel_round(points)
    if closed:
        pts = np.vstack([pts, pts[:1]])
    h, w = mask.shape
    for a, b in zip(pts[:-1], pts[1:]):
        for x, y in line_pixels(a, b):
            if 0 <= x < w and 0 <= y < h:
                mask[y, x] = True
    if len(pts) == 1:
        x, y = pts[0]
        if 0 <= x < w and 0 <= y < h:
            mask[y, x] = True
    return mask


def draw_mouth(mask, mouth_px):
    for lo, hi, closed in MOUTH_GROUPS:
        draw_polyline(mask, mouth_px[lo:hi], closed)
    return mask


def draw_landmarks(mask, points):
    for lo, hi, closed in LANDMARK_GROUPS:
        draw_polyline(mask, points[lo:hi], closed)
    return mask


def face_region(points, shape, margin: int = 2) -> np.ndarray:
    """Pixels inside the face contour (jaw closed over the brows), grown by ``margin`` pixels."""
    outline = np.vstack([points[0:17], points[26:16:-1]])
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    inside = PolyPath(outline).contains_points(np.column_stack([xx.ravel(), yy.ravel()]))
    inside = inside.reshape(h, w) | draw_polyline(np.zeros((h, w), bool), outline, closed=True)
    if margin:
        inside = ndimage.binary_dilation(inside, iterations=margin)
    return inside


# ------------------------------------------------------------- facial maps


@dataclass(frozen=True)
class TemplateFrame:
    image: np.ndarray
    landmarks: LandmarkFrame
    edges: np.ndarray

    def __post_init__(self):
        if self.image.shape[:2] != (MAP_SIZE, MAP_SIZE):
            raise ValueError(f"template frames must be {MAP_SIZE}x{MAP_SIZE}, got {self.image.shape[:2]}")
        if not self.landmarks.valid:
            raise ValueError(f"template frame {self.landmarks.frame_index}: invalid landmarks")


def make_template(image, landmarks: LandmarkFrame, low: float = 50, high: float = 150) -> TemplateFrame:
    image = np.asarray(image, dtype=np.uint8)
    if image.ndim == 2:
        image = np.repeat(image[..., None], 3, axis=2)
    return TemplateFrame(image, landmarks, canny(image, low, high))


@dataclass(frozen=True)
class FacialMap:
    """uint8 raster (512, 512, 3): edges / face landmarks / mouth + tuned jaw, values 0 or 255."""

    raster: np.ndarray

    def save_png(self, path) -> None:
        Image.fromarray(self.raster, mode="RGB").save(path, format="PNG")


def _check_inside(points, shape, what):
    px = pixel_round(points)
    h, w = shape
    if np.any(px[:, 0] < 0) or np.any(px[:, 0] >= w) or np.any(px[:, 1] < 0) or np.any(px[:, 1] >= h):
        raise ValueError(f"placement out of bounds: {what} falls outside the {w}x{h} raster")


def compose_map(
    template: TemplateFrame,
    mouth,
    regressor: JawRegressor,
    pca: PcaModel | None = None,
    placement: Placement | None = None,
    scale_normalize: bool = True,
) -> FacialMap:
    """Draw the facial map for one generated mouth on one template frame.

    ``mouth`` is either normalized mouth coordinates (20, 2) or a PCA feature
    vector, in which case ``pca`` is required. ``placement`` defaults to the
    pose estimated from the template landmarks.
    """
    mouth = np.asarray(mouth, dtype=np.float64)
    if mouth.ndim == 1 and pca is not None and mouth.shape[0] == pca.n_components:
        mouth = pca_inverse(pca, mouth)
    mouth = mouth.reshape(20, 2)
    pts = template.landmarks.points
    placement = placement or estimate_placement(template.landmarks, scale_normalize)
    shape = template.image.shape[:2]

    mouth_px = placement.to_pixels(mouth)
    jaw_norm = correct_jaw(regressor, placement.to_normalized(pts[JAW_SLICE]), mouth)
    jaw_px = placement.to_pixels(jaw_norm)
    _check_inside(mouth_px, shape, "mouth")
    _check_inside(jaw_px, shape, "jawline")

    face = face_region(pts, shape) | face_region(np.vstack([jaw_px, pts[17:]]), shape)
    ch0 = template.edges & ~face
    ch1 = draw_landmarks(np.zeros(shape, bool), pts)
    ch2 = draw_mouth(np.zeros(shape, bool), mouth_px)
    draw_polyline(ch2, jaw_px, closed=False)
    raster = np.stack([ch0, ch1, ch2], axis=-1).astype(np.uint8) * 255
    return FacialMap(raster)


def load_templates(directory, landmark_csv, low: float = 50, high: float = 150) -> list[TemplateFrame]:
    """Template frames from ``*.png`` files (sorted by name) paired row-by-row with a landmark CSV."""
    files = sorted(Path(directory).glob("*.png"))
    if not files:
        raise ValueError(f"{directory}: no template frames (*.png)")
    marks = read_landmark_csv(landmark_csv)
    if len(marks) < len(files):
        raise ValueError(f"{landmark_csv}: {len(marks)} landmark rows for {len(files)} template frames")
    out = []
    for f, lm in zip(files, marks):
        img = np.asarray(Image.open(f).convert("RGB"))
        lm = LandmarkFrame(lm.points, lm.frame_index, (img.shape[1], img.shape[0]))
        out.append(make_template(img, lm, low, high))
    return out
