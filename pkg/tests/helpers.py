"""Probes and fixtures shared by the unit and acceptance tests."""

import numpy as np
import torch
from scipy import ndimage

from lipsync import features, synthdata, tcn


def probe_block(spec, length=161, center=80):
    """Indices of output frames that change when one input frame is perturbed."""
    block = tcn.TcnBlock(16, spec, dropout=0.0).double().eval()
    x = torch.randn(1, 16, length, dtype=torch.float64)
    with torch.no_grad():
        base = block(x)
        x2 = x.clone()
        x2[0, :, center] += 10.0
        changed = (block(x2) - base).abs().amax(dim=1)[0] > 0
    return np.flatnonzero(changed.numpy()) - center


def gradient_check(model, loss_fn, n_params=100, step=1e-5, seed=0):
    """Worst relative error between backward() and central differences on sampled parameters."""
    grads = tcn.backward(model, loss_fn())
    params = dict(model.named_parameters())
    names = sorted(params)
    sizes = np.array([params[n].numel() for n in names])
    rng = np.random.default_rng(seed)
    # spread samples over every tensor, then fill the rest uniformly
    picks = [(n, int(rng.integers(params[n].numel()))) for n in names]
    flat = rng.choice(sizes.sum(), size=max(0, n_params - len(picks)), replace=False)
    bounds = np.cumsum(sizes)
    for f in flat:
        k = int(np.searchsorted(bounds, f, side="right"))
        picks.append((names[k], int(f - (bounds[k - 1] if k else 0))))
    worst = 0.0
    with torch.no_grad():
        for name, idx in picks:
            p = params[name].view(-1)
            orig = p[idx].item()
            p[idx] = orig + step
            up = loss_fn().item()
            p[idx] = orig - step
            down = loss_fn().item()
            p[idx] = orig
            numeric = (up - down) / (2 * step)
            analytic = grads[name].reshape(-1)[idx]
            denom = max(abs(numeric), abs(analytic))
            if denom > 0:
                worst = max(worst, abs(numeric - analytic) / denom)
    return worst, len(picks)


def square_image():
    img = np.zeros((64, 64), dtype=np.uint8)
    img[22:42, 22:42] = 255
    return img


def random_images(n=20, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        if i % 2:
            img = rng.integers(0, 256, (64, 64))
        else:
            blobs = ndimage.gaussian_filter(rng.standard_normal((64, 64)), 3)
            img = np.where(blobs > 0, 200, 30) + rng.integers(0, 20, (64, 64))
        out.append(img.astype(np.uint8))
    return out


def write_speaking_inputs(d, n_video=600, seed=0):
    """WAV plus a landmark CSV whose mouths follow the planted ten-direction spectrum."""
    rng = np.random.default_rng(seed)
    mouths = synthdata.planted_mouth_corpus(n_video, seed=seed)
    base = synthdata.default_template_placement()
    frames = []
    for i, m in enumerate(mouths):
        face = synthdata.synthetic_face()
        face[48:68] = m
        pl = features.Placement(base.nose + rng.normal(0, 5, 2), rng.normal(0, 0.05), base.scale * rng.uniform(0.9, 1.1))
        frames.append(synthdata.place_face(face, pl, i))
    features.write_landmark_csv(d / "landmarks.csv", frames)
    sr = 16000
    features.write_wav(d / "speech.wav", 0.1 * rng.standard_normal(n_video * sr // 25 + 123), sr)
    return d / "speech.wav", d / "landmarks.csv"
