"""Losses, the adversarial training loop and audio-to-mouth evaluation metrics."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, fields

import numpy as np
import torch

from .tcn import Discriminator, Generator, predict_batch
from .windows import OverlapConfig, WindowPair, infer_sequence

log = logging.getLogger(__name__)

EPS = 1e-7


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 100.0
    lambda2: float = 1.0

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 16
    learning_rate: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    seed: int = 0
    # stop once validation MSE reaches this value (0 disables)
    target_val_mse: float = 0.0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError(f"invalid training configuration: {self}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")


@dataclass(frozen=True)
class MetricsReport:
    mse: float
    mae: float
    int_mse: float


@dataclass
class EpochLog:
    epoch: int
    l2: float
    int: float
    g_gan: float
    d_loss: float
    val_mse: float = math.nan
    val_mae: float = math.nan
    val_int_mse: float = math.nan


LOG_COLUMNS = [f.name for f in fields(EpochLog)]


# ------------------------------------------------------------------ losses
# The loss functions accept numpy arrays or torch tensors. Leading batch
# dimensions are summed over; callers divide by the batch size.


def _check_pair(target, pred):
    if tuple(target.shape) != tuple(pred.shape):
        raise ValueError(f"shape mismatch: target {tuple(target.shape)} vs prediction {tuple(pred.shape)}")


def l2_loss(target, pred):
    """Squared Frobenius norm of ``target - pred``."""
    _check_pair(target, pred)
    d = target - pred
    return (d * d).sum()


def frame_deltas(x):
    return x[..., 1:, :] - x[..., :-1, :]


def interframe_loss(target, pred):
    """Squared Frobenius norm of the difference between consecutive-frame deltas."""
    _check_pair(target, pred)
    if target.shape[-2] < 2:
        raise ValueError("inter-frame loss needs at least 2 frames")
    d = frame_deltas(target) - frame_deltas(pred)
    return (d * d).sum()


def _log_clamped(p):
    if isinstance(p, torch.Tensor):
        return torch.log(p.clamp(EPS, 1 - EPS))
    return np.log(np.clip(p, EPS, 1 - EPS))


def _as_probs(p):
    return p if isinstance(p, torch.Tensor) else np.asarray(p, dtype=np.float64)


def _scalar(x):
    return x if isinstance(x, torch.Tensor) else float(x)


def generator_gan_loss(d_fake):
    """Non-saturating generator term ``-log D(G(a), a)``, batch mean."""
    return _scalar(-_log_clamped(_as_probs(d_fake)).mean())


def gan_losses(d_real, d_fake):
    """(discriminator loss, generator loss), each averaged over the batch."""
    d_real, d_fake = _as_probs(d_real), _as_probs(d_fake)
    d_loss = -(_log_clamped(d_real) + _log_clamped(1 - d_fake)).mean()
    return _scalar(d_loss), generator_gan_loss(d_fake)


def combined_generator_loss(weights: LossWeights, target, pred, d_fake):
    return (
        generator_gan_loss(d_fake)
        + weights.lambda1 * l2_loss(target, pred)
        + weights.lambda2 * interframe_loss(target, pred)
    )


# ----------------------------------------------------------------- metrics


def evaluate(target_seq, pred_seq) -> MetricsReport:
    y = np.asarray(getattr(target_seq, "frames", target_seq), dtype=np.float64)
    yh = np.asarray(getattr(pred_seq, "frames", pred_seq), dtype=np.float64)
    if y.shape != yh.shape:
        raise ValueError(f"length mismatch: {y.shape} vs {yh.shape}")
    if len(y) < 2:
        raise ValueError("need at least 2 frames")
    d = y - yh
    dd = frame_deltas(y) - frame_deltas(yh)
    return MetricsReport(
        mse=float(np.mean(d * d)),
        mae=float(np.mean(np.abs(d))),
        int_mse=float((dd * dd).sum() / (len(y) - 1)),
    )


def per_frame_error_profile(model: Generator, test_windows, batch_size: int = 64) -> np.ndarray:
    """Mean squared error at each of the 50 output positions, averaged over windows."""
    if len(test_windows) == 0:
        raise ValueError("no test windows")
    audio = np.stack([w.audio for w in test_windows])
    mouth = np.stack([w.mouth for w in test_windows])
    pred = np.concatenate([predict_batch(model, audio[i : i + batch_size]) for i in range(0, len(audio), batch_size)])
    if pred.shape != mouth.shape:
        raise ValueError(f"prediction shape {pred.shape} does not match targets {mouth.shape}")
    return ((pred - mouth) ** 2).mean(axis=(0, 2))


def predict_stream(model: Generator, audio, overlap: OverlapConfig = OverlapConfig(), batch_size: int = 64):
    def predict(batch):
        return np.concatenate([predict_batch(model, batch[i : i + batch_size]) for i in range(0, len(batch), batch_size)])

    return infer_sequence(predict, audio, overlap)


# ---------------------------------------------------------------- training


def _finite_or_raise(epoch, **components):
    for name, value in components.items():
        if not math.isfinite(value):
            raise TrainingDiverged(f"epoch {epoch}: loss component '{name}' became {value}")


def train(
    generator: Generator,
    discriminator: Discriminator,
    windows: list[WindowPair],
    weights: LossWeights = LossWeights(),
    cfg: TrainConfig = TrainConfig(),
    validation=None,
    overlap: OverlapConfig = OverlapConfig(),
    progress=None,
):
    """Alternate one discriminator and one generator Adam step per batch.

    ``validation`` is an optional ``(audio, mouth)`` pair of aligned streams,
    scored each epoch through overlap-stitch inference. Returns the trained
    generator (updated in place) and the per-epoch log.
    """
    if not windows:
        raise ValueError("no training windows")
    history: list[EpochLog] = []
    if cfg.epochs == 0:
        return generator, history

    dtype = next(generator.parameters()).dtype
    audio = torch.as_tensor(np.stack([w.audio for w in windows]), dtype=dtype)
    mouth = torch.as_tensor(np.stack([w.mouth for w in windows]), dtype=dtype)
    opt_g = torch.optim.Adam(generator.parameters(), lr=cfg.learning_rate, betas=(cfg.beta1, cfg.beta2))
    opt_d = torch.optim.Adam(discriminator.parameters(), lr=cfg.learning_rate, betas=(cfg.beta1, cfg.beta2))
    order_rng = np.random.default_rng(cfg.seed)

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        for epoch in range(1, cfg.epochs + 1):
            generator.train()
            discriminator.train()
            sums = dict(l2=0.0, int=0.0, g_gan=0.0, d_loss=0.0)
            order = order_rng.permutation(len(windows))
            for start in range(0, len(order), cfg.batch_size):
                idx = torch.as_tensor(order[start : start + cfg.batch_size])
                a, m = audio[idx], mouth[idx]
                n = len(idx)

                with torch.no_grad():
                    fake = generator(a)
                d_loss, _ = gan_losses(discriminator(a, m), discriminator(a, fake))
                opt_d.zero_grad()
                d_loss.backward()
                opt_d.step()

                pred = generator(a)
                g_gan = generator_gan_loss(discriminator(a, pred))
                l2 = l2_loss(m, pred) / n
                inter = interframe_loss(m, pred) / n
                total = g_gan + weights.lambda1 * l2 + weights.lambda2 * inter
                opt_g.zero_grad()
                total.backward()
                opt_g.step()

                for k, v in (("l2", l2), ("int", inter), ("g_gan", g_gan), ("d_loss", d_loss)):
                    sums[k] += float(v.detach()) * n
                _finite_or_raise(epoch, **{k: float(v.detach()) for k, v in (("l2", l2), ("int", inter), ("g_gan", g_gan), ("d_loss", d_loss))})

            entry = EpochLog(epoch, **{k: v / len(windows) for k, v in sums.items()})
            if validation is not None:
                val_audio, val_mouth = validation
                report = evaluate(val_mouth, predict_stream(generator, val_audio, overlap))
                entry.val_mse, entry.val_mae, entry.val_int_mse = report.mse, report.mae, report.int_mse
            history.append(entry)
            log.info(
                "epoch %d l2=%.4f int=%.4f g_gan=%.4f d=%.4f val_mse=%.5f",
                epoch, entry.l2, entry.int, entry.g_gan, entry.d_loss, entry.val_mse,
            )
            if progress is not None:
                progress(entry)
            if cfg.target_val_mse > 0 and entry.val_mse <= cfg.target_val_mse:
                break
    generator.eval()
    return generator, history


def write_training_log(path, history) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for e in history:
            row = asdict(e)
            w.writerow([row["epoch"]] + [repr(float(row[c])) for c in LOG_COLUMNS[1:]])


def write_metrics_csv(path, report: MetricsReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mse", "mae", "int_mse"])
        w.writerow([repr(report.mse), repr(report.mae), repr(report.int_mse)])
