import hashlib

import numpy as np
import pytest

from lipsync import facegeo as fg
from lipsync import synthdata
from lipsync.features import Placement, estimate_placement, normalize_face

from .helpers import random_images, square_image
from .oracles import canny_naive


# ------------------------------------------------------------------ canny


def test_canny_constant_image_has_no_edges():
    assert not fg.canny(np.full((32, 32), 77, np.uint8)).any()


def test_canny_square_ring():
    edges = fg.canny(square_image())
    ring = np.zeros_like(edges)
    ring[22:42, 22:42] = True
    ring[23:41, 23:41] = False
    assert np.array_equal(edges, ring)


def test_canny_square_matches_naive():
    assert np.array_equal(fg.canny(square_image()), canny_naive(square_image()))


@pytest.mark.parametrize("idx", range(20))
def test_canny_matches_naive_reference(idx):
    img = random_images()[idx]
    assert np.array_equal(fg.canny(img, 50, 150), canny_naive(img, 50, 150))


def test_canny_offset_invariant():
    img = random_images(2)[0].astype(np.int64) // 2
    assert np.array_equal(fg.canny(img), fg.canny(img + 60))


def test_canny_errors():
    with pytest.raises(ValueError):
        fg.canny(np.zeros((0, 0)))
    with pytest.raises(ValueError):
        fg.canny(square_image(), 100, 50)
    with pytest.raises(ValueError):
        fg.canny(square_image(), 0, 50)


def test_canny_rgb_uses_luma():
    rgb = np.repeat(square_image()[..., None], 3, axis=2)
    assert np.array_equal(fg.canny(rgb), fg.canny(square_image()))


def test_line_pixels_basic():
    assert fg.line_pixels((0, 0), (3, 0)) == [(0, 0), (1, 0), (2, 0), (3, 0)]
    assert fg.line_pixels((0, 0), (2, 2)) == [(0, 0), (1, 1), (2, 2)]
    px = fg.line_pixels((1, 7), (9, 2))
    assert px[0] == (1, 7) and px[-1] == (9, 2)
    # 8-connected, one pixel per step along the major axis
    assert len(px) == 9
    assert all(max(abs(a[0] - b[0]), abs(a[1] - b[1])) == 1 for a, b in zip(px, px[1:]))


# ------------------------------------------------------------------- jaw


def test_mouth_wh_hand_example():
    m = np.zeros((20, 2))
    m[0], m[6] = (-1, 0), (1, 0)
    m[3], m[9] = (0, 0.5), (0, -0.5)
    assert fg.mouth_wh(m) == (2.0, 1.0)


def test_mouth_wh_closed():
    m = synthdata.mouth_points(0.5, 0.0)
    assert fg.mouth_wh(m)[1] == 0.0


def test_mouth_wh_random(rng):
    m = rng.standard_normal((20, 2))
    w, h = fg.mouth_wh(m)
    assert w == pytest.approx(np.sqrt((m[6, 0] - m[0, 0]) ** 2 + (m[6, 1] - m[0, 1]) ** 2), abs=1e-15)
    assert h == pytest.approx(np.sqrt((m[9, 0] - m[3, 0]) ** 2 + (m[9, 1] - m[3, 1]) ** 2), abs=1e-15)


def test_fit_jaw_planted_coefficients(rng):
    wh = rng.uniform(0.2, 1.0, (30, 2))
    offsets = (0.3 * wh[:, 0] + 0.1 * wh[:, 1] + 2.0)[:, None, None] * np.ones((30, 17, 2))
    reg = fg.fit_jaw(zip(wh, offsets))
    assert np.max(np.abs(reg.coef - np.array([2.0, 0.3, 0.1]))) < 1e-8


def test_fit_jaw_constant_offsets(rng):
    wh = rng.uniform(0.2, 1.0, (10, 2))
    const = rng.standard_normal((17, 2))
    reg = fg.fit_jaw([(x, const) for x in wh])
    assert np.max(np.abs(reg.coef[..., 1:])) < 1e-8
    assert np.max(np.abs(reg.coef[..., 0] - const)) < 1e-8


def test_fit_jaw_noise_residual_matches_sigma():
    rng = np.random.default_rng(7)
    sigma = 0.02
    true = rng.standard_normal((17, 2, 3))
    rms = []
    for n in (50, 5000):
        wh = rng.uniform(0.2, 1.0, (n, 2))
        design = np.column_stack([np.ones(n), wh])
        offsets = np.einsum("pak,nk->npa", true, design) + sigma * rng.standard_normal((n, 17, 2))
        reg = fg.fit_jaw(zip(wh, offsets))
        resid = offsets - np.einsum("pak,nk->npa", reg.coef, design)
        rms.append(np.sqrt(np.mean(resid**2)))
    assert abs(rms[1] - sigma) < 0.02 * sigma
    assert abs(rms[1] - sigma) < abs(rms[0] - sigma)


def test_fit_jaw_centered_mean_gives_mean_offset(rng):
    wh = rng.uniform(0.2, 1.0, (40, 2))
    offsets = rng.standard_normal((40, 17, 2))
    reg = fg.fit_jaw(zip(wh, offsets))
    np.testing.assert_allclose(reg.predict(*wh.mean(axis=0)), offsets.mean(axis=0), atol=1e-12)


def test_fit_jaw_degenerate(rng):
    w = rng.uniform(0.2, 1.0, 10)
    with pytest.raises(ValueError, match="degenerate mouth-shape data"):
        fg.fit_jaw([((x, 2 * x), np.zeros((17, 2))) for x in w])
    with pytest.raises(ValueError):
        fg.fit_jaw([((0.1, 0.2), np.zeros((17, 2)))] * 3)


def test_correct_jaw_zero_and_intercept(rng):
    jaw = rng.standard_normal((17, 2))
    mouth = synthdata.mouth_points(0.6, 0.3)
    np.testing.assert_array_equal(fg.correct_jaw(fg.JawRegressor.zero(), jaw, mouth), jaw)
    coef = np.zeros((17, 2, 3))
    coef[:, 0, 0], coef[:, 1, 0] = 0.25, -0.5
    np.testing.assert_allclose(fg.correct_jaw(fg.JawRegressor(coef), jaw, mouth), jaw + [0.25, -0.5], atol=1e-15)


def test_correct_jaw_recovers_synthetic_face():
    shapes = synthdata.random_mouth_shapes(40, seed=2)
    rest = synthdata.synthetic_face()
    faces = [synthdata.synthetic_face(w, h) for w, h in shapes]
    reg = fg.fit_jaw(fg.jaw_samples_from_faces(faces, reference_jaw=rest[0:17]))
    for w, h in [(0.45, 0.1), (0.6, 0.3), (0.52, 0.0)]:
        truth = synthdata.synthetic_face(w, h)
        tuned = fg.correct_jaw(reg, rest[0:17], truth[48:68])
        assert np.max(np.abs(tuned - truth[0:17])) < 1e-6


def test_jaw_samples_from_pixel_faces_are_pose_free():
    shapes = synthdata.random_mouth_shapes(20, seed=4)
    rest = synthdata.synthetic_face()
    faces = []
    for i, (w, h) in enumerate(shapes):
        pl = Placement(np.array([250.0 + i, 260.0 - i]), 0.02 * i - 0.2, 130.0)
        frame = synthdata.place_face(synthdata.synthetic_face(w, h), pl)
        faces.append(normalize_face(frame))
    reg = fg.fit_jaw(fg.jaw_samples_from_faces(faces, reference_jaw=rest[0:17]))
    want = synthdata.jaw_response()
    # ground truth is expressed relative to the rest mouth; shift to raw (w, h)
    want[..., 0] -= want[..., 1] * synthdata.REST_W + want[..., 2] * synthdata.REST_H
    np.testing.assert_allclose(reg.coef, want, atol=1e-8)


def test_jaw_file_round_trip(tmp_path, rng):
    reg = fg.JawRegressor(rng.standard_normal((17, 2, 3)))
    fg.save_jaw(reg, tmp_path / "j.jaw")
    raw = (tmp_path / "j.jaw").read_bytes()
    assert raw[:4] == b"JAW1" and len(raw) == 4 + 17 * 2 * 3 * 8
    assert fg.load_jaw(tmp_path / "j.jaw").coef.tobytes() == reg.coef.tobytes()


# ----------------------------------------------------------- facial maps


@pytest.fixture(scope="module")
def template():
    pl = synthdata.default_template_placement()
    lm = synthdata.place_face(synthdata.synthetic_face(), pl)
    return fg.make_template(synthdata.template_image(pl), lm)


@pytest.fixture(scope="module")
def jaw_model():
    shapes = synthdata.random_mouth_shapes(40, seed=2)
    faces = [synthdata.synthetic_face(w, h) for w, h in shapes]
    return fg.fit_jaw(fg.jaw_samples_from_faces(faces, synthdata.synthetic_face()[0:17]))


def test_compose_deterministic(template, jaw_model):
    mouth = synthdata.mouth_points(0.6, 0.25)
    a = fg.compose_map(template, mouth, jaw_model).raster
    b = fg.compose_map(template, mouth, jaw_model).raster
    assert hashlib.sha256(a).hexdigest() == hashlib.sha256(b).hexdigest()
    assert a.shape == (512, 512, 3) and a.dtype == np.uint8
    assert set(np.unique(a)) <= {0, 255}


def test_compose_own_mouth_round_trip(template):
    own = normalize_face(template.landmarks)[48:68]
    ch2 = fg.compose_map(template, own, fg.JawRegressor.zero()).raster[..., 2] > 0
    pts = template.landmarks.points
    want = fg.draw_mouth(np.zeros((512, 512), bool), pts[48:68])
    fg.draw_polyline(want, pts[0:17])
    assert np.array_equal(ch2, want)


def test_compose_mouth_shift_moves_centroid(template):
    pl = estimate_placement(template.landmarks)
    unroll = Placement(pl.nose, 0.0, pl.scale)
    mouth = synthdata.mouth_points(0.55, 0.2)
    shift_px = np.array([7.0, -4.0])
    shifted = mouth + shift_px / pl.scale

    def mouth_centroid(m):
        raster = fg.compose_map(template, m, fg.JawRegressor.zero(), placement=unroll).raster[..., 2] > 0
        jaw_only = fg.draw_polyline(np.zeros((512, 512), bool), unroll.to_pixels(unroll.to_normalized(template.landmarks.points[0:17])))
        ys, xs = np.nonzero(raster & ~jaw_only)
        return np.array([xs.mean(), ys.mean()]), len(xs)

    (c0, n0), (c1, n1) = mouth_centroid(mouth), mouth_centroid(shifted)
    assert n0 == n1
    np.testing.assert_allclose(c1 - c0, shift_px, atol=1e-9)


def test_compose_from_pca_feature(template, jaw_model):
    from lipsync.features import fit_pca, pca_inverse, pca_transform

    corpus = synthdata.planted_mouth_corpus(200, seed=1)
    pca = fit_pca(corpus)
    f = pca_transform(pca, corpus[0])
    a = fg.compose_map(template, f, jaw_model, pca=pca).raster
    b = fg.compose_map(template, pca_inverse(pca, f), jaw_model).raster
    assert np.array_equal(a, b)


def test_compose_out_of_bounds(template):
    far = synthdata.mouth_points(0.5, 0.2) + [3.0, 0.0]
    with pytest.raises(ValueError, match="placement out of bounds"):
        fg.compose_map(template, far, fg.JawRegressor.zero())


def test_compose_channel_separation(template, jaw_model):
    mouth = synthdata.mouth_points(0.6, 0.25)
    full = fg.compose_map(template, mouth, jaw_model).raster
    # blank image: no edges, so channel 0 is empty and the others are unchanged
    blank = fg.make_template(np.full((512, 512, 3), 90, np.uint8), template.landmarks)
    blanked = fg.compose_map(blank, mouth, jaw_model).raster
    assert not blanked[..., 0].any()
    assert np.array_equal(blanked[..., 1:], full[..., 1:])
    # channel 1 depends only on the template landmarks, channel 2 carries mouth and jaw
    other = fg.compose_map(template, synthdata.mouth_points(0.45, 0.05), jaw_model).raster
    assert np.array_equal(other[..., 1], full[..., 1])
    assert not np.array_equal(other[..., 2], full[..., 2])
    ch1_want = fg.draw_landmarks(np.zeros((512, 512), bool), template.landmarks.points)
    assert np.array_equal(full[..., 1] > 0, ch1_want)
    # the face interior carries no template edges
    inside = fg.face_region(template.landmarks.points, (512, 512), margin=0)
    assert not (full[..., 0] > 0)[inside].any()
    assert template.edges[inside].any()
    assert full[..., 0].any()


def test_png_bytes_deterministic(tmp_path, template, jaw_model):
    m = fg.compose_map(template, synthdata.mouth_points(0.6, 0.2), jaw_model)
    m.save_png(tmp_path / "a.png")
    m.save_png(tmp_path / "b.png")
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()
    from PIL import Image

    assert np.array_equal(np.asarray(Image.open(tmp_path / "a.png")), m.raster)


def test_template_must_be_512(template):
    with pytest.raises(ValueError):
        fg.make_template(np.zeros((64, 64, 3), np.uint8), template.landmarks)
