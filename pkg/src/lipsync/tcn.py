"""Non-causal dilated TCN generator and discriminator, gradients and checkpoint files."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .windows import WINDOW_AUDIO, WINDOW_VIDEO

N_AUDIO = 13
N_MOUTH = 10

CKPT_MAGIC = b"TCN1"
CKPT_VERSION = 1


@dataclass(frozen=True)
class TcnBlockSpec:
    kernel_size: int = 3
    filters: int = 256
    dilations: tuple[int, ...] = (1, 2, 4, 8)
    causal: bool = False
    convs_per_block: int = 2

    def __post_init__(self):
        object.__setattr__(self, "dilations", tuple(int(d) for d in self.dilations))
        if self.kernel_size % 2 != 1:
            raise ValueError("kernel size must be odd for symmetric padding")
        d = self.dilations
        if not d or any(x < 1 or x & (x - 1) for x in d) or any(b <= a for a, b in zip(d, d[1:])):
            raise ValueError(f"dilations must be strictly increasing powers of 2, got {d}")


def receptive_field(spec: TcnBlockSpec) -> int:
    """Total span of input frames that can reach one output frame."""
    reach = spec.convs_per_block * (spec.kernel_size - 1) * sum(spec.dilations)
    if spec.causal:
        return reach + 1
    return 2 * (reach // 2) + 1


def influence_radius(spec: TcnBlockSpec) -> tuple[int, int]:
    """(past, future) reach of a TCN block in frames."""
    reach = spec.convs_per_block * (spec.kernel_size - 1) * sum(spec.dilations)
    if spec.causal:
        return reach, 0
    return reach // 2, reach // 2


@dataclass(frozen=True)
class GeneratorConfig:
    conv_channels: tuple[int, ...] = (64, 128, 256, 256)
    conv_strides: tuple[int, ...] = (2, 2, 1, 1)
    conv_kernel: int = 5
    tcn: TcnBlockSpec = field(default_factory=TcnBlockSpec)
    fc_hidden: int = 64
    dropout: float = 0.05
    in_dim: int = N_AUDIO
    out_dim: int = N_MOUTH

    @classmethod
    def reduced(cls, filters: int = 8, dilations=(1, 2)):
        """Small float64-friendly variant used for gradient checks."""
        return cls(
            conv_channels=(filters,) * 4,
            tcn=TcnBlockSpec(filters=filters, dilations=tuple(dilations)),
            fc_hidden=filters,
        )


@dataclass(frozen=True)
class DiscriminatorConfig:
    conv_channels: tuple[int, ...] = (64, 64, 64, 64)
    conv_strides: tuple[int, ...] = (2, 2, 1, 1)
    conv_kernel: int = 5
    tcn: TcnBlockSpec = field(default_factory=lambda: TcnBlockSpec(filters=128))
    dropout: float = 0.05
    in_dim: int = N_AUDIO
    mouth_dim: int = N_MOUTH

    @classmethod
    def reduced(cls, filters: int = 8, dilations=(1, 2)):
        return cls(conv_channels=(filters,) * 4, tcn=TcnBlockSpec(filters=filters, dilations=tuple(dilations)))


def conv_stack_radius(kernel: int, strides) -> tuple[int, int]:
    """(radius in input frames, total stride) of a stack of 'same'-padded strided convs."""
    radius, jump = 0, 1
    for s in strides:
        radius += (kernel // 2) * jump
        jump *= s
    return radius, jump


def generator_influence_radius(cfg: GeneratorConfig) -> int:
    """Upper bound, in audio frames around 4*i, on inputs that can change output frame i."""
    r_conv, jump = conv_stack_radius(cfg.conv_kernel, cfg.conv_strides)
    past, future = influence_radius(cfg.tcn)
    return r_conv + jump * max(past, future)


class WeightNormConv1d(nn.Module):
    """Conv1d whose kernel is ``g * v / ||v||`` (norm over input channels and taps)."""

    def __init__(self, c_in, c_out, kernel_size, dilation=1, causal=False):
        super().__init__()
        conv = nn.Conv1d(c_in, c_out, kernel_size, dilation=dilation)
        self.v = nn.Parameter(conv.weight.detach().clone())
        self.g = nn.Parameter(conv.weight.detach().flatten(1).norm(dim=1))
        self.bias = nn.Parameter(conv.bias.detach().clone())
        reach = dilation * (kernel_size - 1)
        self.pad = (reach, 0) if causal else (reach // 2, reach // 2)
        self.dilation = dilation

    def forward(self, x):
        norm = self.v.flatten(1).norm(dim=1)
        w = self.v * (self.g / norm)[:, None, None]
        return F.conv1d(F.pad(x, self.pad), w, self.bias, dilation=self.dilation)


class ResidualBlock(nn.Module):
    def __init__(self, c_in, filters, kernel_size, dilation, n_convs, dropout, causal):
        super().__init__()
        self.convs = nn.ModuleList(
            WeightNormConv1d(c_in if i == 0 else filters, filters, kernel_size, dilation, causal)
            for i in range(n_convs)
        )
        self.drop = nn.Dropout(dropout)
        self.proj = nn.Conv1d(c_in, filters, 1) if c_in != filters else None

    def forward(self, x):
        h = x
        for conv in self.convs:
            h = self.drop(F.relu(conv(h)))
        res = x if self.proj is None else self.proj(x)
        return F.relu(res + h)


class TcnBlock(nn.Module):
    def __init__(self, c_in, spec: TcnBlockSpec, dropout):
        super().__init__()
        blocks = []
        for d in spec.dilations:
            blocks.append(ResidualBlock(c_in, spec.filters, spec.kernel_size, d, spec.convs_per_block, dropout, spec.causal))
            c_in = spec.filters
        self.blocks = nn.Sequential(*blocks)

    def forward(self, x):
        return self.blocks(x)


def _downsampler(c_in, channels, strides, kernel):
    layers = []
    for c, s in zip(channels, strides):
        layers += [nn.Conv1d(c_in, c, kernel, stride=s, padding=kernel // 2), nn.ReLU()]
        c_in = c
    return nn.Sequential(*layers)


class Generator(nn.Module):
    """Audio (batch, 4T, 13) -> mouth features (batch, T, 10)."""

    def __init__(self, cfg: GeneratorConfig = GeneratorConfig()):
        super().__init__()
        self.cfg = cfg
        self.down = _downsampler(cfg.in_dim, cfg.conv_channels, cfg.conv_strides, cfg.conv_kernel)
        self.tcn = TcnBlock(cfg.conv_channels[-1], cfg.tcn, cfg.dropout)
        self.fc1 = nn.Linear(cfg.tcn.filters, cfg.fc_hidden)
        self.fc2 = nn.Linear(cfg.fc_hidden, cfg.out_dim)

    def forward(self, audio):
        h = self.tcn(self.down(audio.transpose(1, 2))).transpose(1, 2)
        return self.fc2(F.relu(self.fc1(h)))


class Discriminator(nn.Module):
    """(audio (batch, 4T, 13), mouth (batch, T, 10)) -> probability the pair is real, shape (batch,)."""

    def __init__(self, cfg: DiscriminatorConfig = DiscriminatorConfig()):
        super().__init__()
        self.cfg = cfg
        self.down = _downsampler(cfg.in_dim, cfg.conv_channels, cfg.conv_strides, cfg.conv_kernel)
        self.tcn = TcnBlock(cfg.conv_channels[-1] + cfg.mouth_dim, cfg.tcn, cfg.dropout)
        self.head = nn.Linear(cfg.tcn.filters, 1)

    def forward(self, audio, mouth):
        a = self.down(audio.transpose(1, 2))
        h = self.tcn(torch.cat([a, mouth.transpose(1, 2)], dim=1))
        return torch.sigmoid(self.head(h.mean(dim=2))).squeeze(1)


def build_generator(cfg: GeneratorConfig = GeneratorConfig(), seed: int = 0, dtype=torch.float32) -> Generator:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = Generator(cfg)
    return model.to(dtype)


def build_discriminator(cfg: DiscriminatorConfig = DiscriminatorConfig(), seed: int = 0, dtype=torch.float32) -> Discriminator:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed + 7919)
        model = Discriminator(cfg)
    return model.to(dtype)


def _param_dtype(model):
    return next(model.parameters()).dtype


def _check_shape(x, shape, what):
    if tuple(x.shape) != shape:
        raise ValueError(f"{what} must have shape {shape}, got {tuple(x.shape)}")


def predict_batch(model: Generator, audio) -> np.ndarray:
    """Evaluation-mode generator on a stack of audio windows (n, 4T, 13)."""
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            x = torch.as_tensor(np.asarray(audio), dtype=_param_dtype(model))
            return model(x).double().numpy()
    finally:
        model.train(was_training)


def generator_forward(model: Generator, audio) -> np.ndarray:
    audio = np.asarray(audio)
    _check_shape(audio, (WINDOW_AUDIO, model.cfg.in_dim), "audio window")
    return predict_batch(model, audio[None])[0]


def discriminator_forward(model: Discriminator, audio, mouth) -> float:
    audio, mouth = np.asarray(audio), np.asarray(mouth)
    _check_shape(audio, (WINDOW_AUDIO, model.cfg.in_dim), "audio window")
    _check_shape(mouth, (WINDOW_VIDEO, model.cfg.mouth_dim), "mouth window")
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            dt = _param_dtype(model)
            p = model(torch.as_tensor(audio[None], dtype=dt), torch.as_tensor(mouth[None], dtype=dt))
    finally:
        model.train(was_training)
    return float(p[0])


def backward(model: nn.Module, loss) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. every named parameter of ``model``."""
    if not isinstance(loss, torch.Tensor) or loss.grad_fn is None:
        raise RuntimeError("backward before forward: loss has no recorded computation graph")
    if loss.numel() != 1:
        raise ValueError("loss must be a scalar")
    names, params = zip(*model.named_parameters())
    grads = torch.autograd.grad(loss, params, allow_unused=True, retain_graph=True)
    return {
        n: (np.zeros(tuple(p.shape)) if g is None else g.detach().double().numpy())
        for n, p, g in zip(names, params, grads)
    }


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(model: nn.Module, path) -> None:
    """b"TCN1", u32 version, u32 count, then per tensor: u32 name length, UTF-8 name,
    u32 rank, u32 dims, float64 data (row-major). All little-endian."""
    state = model.state_dict()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<II", CKPT_VERSION, len(state)))
        for name, t in state.items():
            raw = name.encode("utf-8")
            arr = t.detach().cpu().double().numpy()
            fh.write(struct.pack("<I", len(raw)) + raw)
            fh.write(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_checkpoint(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a TCN checkpoint")
    version, count = struct.unpack_from("<II", data, 4)
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos, out = 12, {}
    for _ in range(count):
        (n,) = struct.unpack_from("<I", data, pos)
        name = data[pos + 4 : pos + 4 + n].decode("utf-8")
        pos += 4 + n
        (rank,) = struct.unpack_from("<I", data, pos)
        dims = struct.unpack_from(f"<{rank}I", data, pos + 4)
        pos += 4 + 4 * rank
        size = int(np.prod(dims)) if rank else 1
        out[name] = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(dims).copy()
        pos += 8 * size
    if pos != len(data):
        raise ValueError(f"{path}: trailing bytes after {count} tensors")
    return out


def load_checkpoint(model: nn.Module, path) -> nn.Module:
    tensors = read_checkpoint(path)
    state = model.state_dict()
    if set(tensors) != set(state):
        missing = sorted(set(state) ^ set(tensors))
        raise ValueError(f"{path}: checkpoint does not match model; mismatched tensors {missing[:5]}")
    model.load_state_dict({k: torch.from_numpy(v).to(state[k].dtype) for k, v in tensors.items()})
    return model


def config_to_dict(cfg) -> dict:
    return asdict(cfg)


def _config_from_dict(cls, d):
    d = dict(d)
    d["tcn"] = TcnBlockSpec(**{**d["tcn"], "dilations": tuple(d["tcn"]["dilations"])})
    for key in ("conv_channels", "conv_strides"):
        d[key] = tuple(d[key])
    return cls(**d)


def save_model_configs(path, gen_cfg: GeneratorConfig, disc_cfg: DiscriminatorConfig) -> None:
    Path(path).write_text(
        json.dumps({"generator": asdict(gen_cfg), "discriminator": asdict(disc_cfg)}, indent=2, sort_keys=True) + "\n"
    )


def load_model_configs(path) -> tuple[GeneratorConfig, DiscriminatorConfig]:
    d = json.loads(Path(path).read_text())
    return _config_from_dict(GeneratorConfig, d["generator"]), _config_from_dict(DiscriminatorConfig, d["discriminator"])


