"""Unrolled FISTA decoder with learned transforms and ST-Net thresholds.

Vector <-> image layout: entry v of a length-n vector sits at channel
v // (img_h * img_w), then row-major (row, col).  Channel 0 is the real
block and channel 1 the imaginary block of the stacked channel matrix, so
the vector is simply the row-major flattening of that 2*img_h x img_w
matrix.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import fista_solver
from .errors import InvalidArgument, NumericFailure
from .linear_encoder import codeword_length

BN_MOMENTUM = 0.1  # torch convention: running = 0.9 * running + 0.1 * batch
BN_EPS = 1e-5


@dataclass(frozen=True)
class ArchConfig:
    stages: int
    img_h: int
    img_w: int
    cr: float
    io_channels: int = 2
    feat_channels: int = 16
    bottleneck: int = 4

    def __post_init__(self):
        if self.stages < 0:
            raise InvalidArgument("stages must be >= 0")
        if min(self.img_h, self.img_w) < 1:
            raise InvalidArgument("image dims must be positive")
        if self.io_channels != 2:
            raise InvalidArgument("io_channels must be 2 (real/imaginary)")
        codeword_length(self.input_len, self.cr)

    @property
    def input_len(self) -> int:
        return self.io_channels * self.img_h * self.img_w

    @property
    def codeword_len(self) -> int:
        return codeword_length(self.input_len, self.cr)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


PRESETS = {"angular32": (32, 32)}


def preset(name: str, cr: float, stages: int) -> ArchConfig:
    try:
        h, w = PRESETS[name]
    except KeyError:
        raise InvalidArgument(f"unknown arch preset {name!r}; known: {sorted(PRESETS)}") from None
    return ArchConfig(stages=stages, img_h=h, img_w=w, cr=cr)


_kink_log: list | None = None


@contextmanager
def record_kinks():
    """Collect the branch of every non-smooth op (ReLU, |.|, soft threshold) run inside the block."""
    global _kink_log
    prev, _kink_log = _kink_log, []
    try:
        yield _kink_log
    finally:
        _kink_log = prev


def _mark(x: torch.Tensor) -> torch.Tensor:
    if _kink_log is not None:
        _kink_log.append((x.detach() > 0).flatten())
    return x


def to_image(v: torch.Tensor, arch: ArchConfig) -> torch.Tensor:
    return v.reshape(v.shape[0], arch.io_channels, arch.img_h, arch.img_w)


def soft(x: torch.Tensor, tau) -> torch.Tensor:
    return torch.sign(_mark(x)) * F.relu(_mark(x.abs() - tau))


def gradient_step(y, w, s, eta, arch: ArchConfig) -> torch.Tensor:
    """g = y - eta W^T (W y - s), reshaped to (B, 2, img_h, img_w)."""
    if y.shape[-1] != arch.input_len or s.shape[-1] != w.shape[0] or w.shape[1] != arch.input_len:
        raise InvalidArgument(f"shapes y{tuple(y.shape)} W{tuple(w.shape)} s{tuple(s.shape)} inconsistent with arch")
    return to_image(fista_solver.gradient_step(y, w, s, eta), arch)


def _batch_norm(x, stats_mean, stats_var, scale, shift, train):
    return F.batch_norm(x, stats_mean, stats_var, scale, shift, training=train, momentum=BN_MOMENTUM, eps=BN_EPS)


class Stage(nn.Module):
    """One unrolled iteration.  Kernels are stored in torch (out, in, kh, kw) order."""

    def __init__(self, arch: ArchConfig, dtype=torch.float64):
        super().__init__()
        c, f, b = arch.io_channels, arch.feat_channels, arch.bottleneck
        z = lambda *shape: nn.Parameter(torch.zeros(*shape, dtype=dtype))  # noqa: E731
        self.eta = z(())
        self.gamma = z(())
        self.R = z(f, c, 3, 3)
        self.S0 = z(f, f, 1, 1)
        self.S1 = z(f, f, 1, 1)
        self.St0 = z(f, f, 1, 1)
        self.St1 = z(f, f, 1, 1)
        self.D = z(c, f, 3, 3)
        self.fc1_w = z(b, f)
        self.fc1_b = z(b)
        self.bn1_scale = nn.Parameter(torch.ones(b, dtype=dtype))
        self.bn1_shift = z(b)
        self.fc2_w = z(f, b)
        self.fc2_b = z(f)
        self.bn2_scale = nn.Parameter(torch.ones(f, dtype=dtype))
        self.bn2_shift = z(f)
        self.register_buffer("bn1_mean", torch.zeros(b, dtype=dtype))
        self.register_buffer("bn1_var", torch.ones(b, dtype=dtype))
        self.register_buffer("bn2_mean", torch.zeros(f, dtype=dtype))
        self.register_buffer("bn2_var", torch.ones(f, dtype=dtype))

    def transform(self, x):
        return F.conv2d(F.relu(_mark(F.conv2d(x, self.S0))), self.S1)

    def inverse_transform(self, x):
        return F.conv2d(F.relu(_mark(F.conv2d(x, self.St0))), self.St1)

    def st_net(self, features: torch.Tensor, train: bool) -> torch.Tensor:
        """Per-channel thresholds tau = GAP(|F|) * sigmoid(BN(FC2(ReLU(BN(FC1(GAP))))))."""
        if features.shape[1] != self.fc1_w.shape[1]:
            raise InvalidArgument(f"ST-Net expects {self.fc1_w.shape[1]} channels, got {features.shape[1]}")
        p = _mark(features).abs().mean(dim=(2, 3))
        a = _batch_norm(F.linear(p, self.fc1_w, self.fc1_b), self.bn1_mean, self.bn1_var,
                        self.bn1_scale, self.bn1_shift, train)
        a = _batch_norm(F.linear(F.relu(_mark(a)), self.fc2_w, self.fc2_b), self.bn2_mean, self.bn2_var,
                        self.bn2_scale, self.bn2_shift, train)
        return p * torch.sigmoid(a)

    def forward(self, y, h_prev, w, s, arch: ArchConfig, train: bool = False, tau=None):
        g = gradient_step(y, w, s, self.eta, arch)
        x = F.conv2d(g, self.R, padding=1)
        feat = self.transform(x)
        if tau is None:
            tau = self.st_net(feat, train)
        tau = torch.as_tensor(tau, dtype=feat.dtype)
        if tau.ndim == 1:
            tau = tau.unsqueeze(0)
        z = soft(feat, tau[..., None, None] if tau.ndim == 2 else tau)
        h = (g + F.conv2d(self.inverse_transform(z), self.D, padding=1)).reshape(y.shape)
        y_next = h + self.gamma * (h - h_prev)
        return h, y_next, (x, self.inverse_transform(feat)), tau


@dataclass
class NetOutput:
    final: torch.Tensor
    iterates: list = field(default_factory=list)
    sym_features: list = field(default_factory=list)
    taus: list = field(default_factory=list)


class FistaNet(nn.Module):
    """Linear encoder plus K unrolled stages.  ``forward`` decodes codewords."""

    def __init__(self, arch: ArchConfig, dtype=torch.float64):
        super().__init__()
        self.arch = arch
        self.w = nn.Parameter(torch.zeros(arch.codeword_len, arch.input_len, dtype=dtype))
        self.stages = nn.ModuleList(Stage(arch, dtype) for _ in range(arch.stages))

    @property
    def dtype(self):
        return self.w.dtype

    def encode(self, h: torch.Tensor) -> torch.Tensor:
        return h @ self.w.T

    def forward(self, s, x0=None, mode: str = "infer", taus=None) -> NetOutput:
        if mode not in ("train", "infer"):
            raise InvalidArgument(f"mode must be 'train' or 'infer', got {mode!r}")
        if s.ndim == 1:
            s = s.unsqueeze(0)
        if x0 is None:
            x0 = torch.zeros(s.shape[0], self.arch.input_len, dtype=s.dtype)
        elif x0.ndim == 1:
            x0 = x0.unsqueeze(0).expand(s.shape[0], -1)
        out = NetOutput(final=x0)
        y, h_prev = x0, x0
        for k, stage in enumerate(self.stages):
            tau = None if taus is None else taus[k]
            h, y, sym, tau = stage(y, h_prev, self.w, s, self.arch, train=(mode == "train"), tau=tau)
            if not torch.isfinite(h).all():
                raise NumericFailure(k)
            h_prev = h
            out.iterates.append(h)
            out.sym_features.append(sym)
            out.taus.append(tau)
        if out.iterates:
            out.final = out.iterates[-1]
        return out

    def named_entries(self):
        """(name, tensor, trainable) in checkpoint order."""
        yield "encoder.w", self.w, True
        for k, st in enumerate(self.stages):
            p = f"stage.{k}."
            yield p + "eta", st.eta, True
            yield p + "gamma", st.gamma, True
            for name in ("R", "S0", "S1", "St0", "St1", "D"):
                label = name if len(name) == 1 else f"{name[:-1]}.{name[-1]}"
                yield p + label, getattr(st, name), True
            for i in (1, 2):
                yield p + f"stnet.fc{i}.w", getattr(st, f"fc{i}_w"), True
                yield p + f"stnet.fc{i}.b", getattr(st, f"fc{i}_b"), True
                yield p + f"stnet.bn{i}.scale", getattr(st, f"bn{i}_scale"), True
                yield p + f"stnet.bn{i}.shift", getattr(st, f"bn{i}_shift"), True
                yield p + f"stnet.bn{i}.mean", getattr(st, f"bn{i}_mean"), False
                yield p + f"stnet.bn{i}.var", getattr(st, f"bn{i}_var"), False


def _gauss(rng, shape, fan_in):
    return rng.standard_normal(shape) / math.sqrt(fan_in)


def init_params(arch: ArchConfig, rng: np.random.Generator, dtype=torch.float64, encoder=None) -> FistaNet:
    """Build a network with deterministic initial values drawn from ``rng``.

    eta_k starts at 1/lambda_max(W^T W) and gamma_k at the classical FISTA
    momentum schedule.  ``encoder`` (an m x n array) replaces the Gaussian
    encoder draw.
    """
    net = FistaNet(arch, dtype)
    if encoder is None:
        w = rng.standard_normal((arch.codeword_len, arch.input_len)) / math.sqrt(arch.input_len)
    else:
        w = np.asarray(getattr(encoder, "w", encoder), dtype=float)
        if w.shape != (arch.codeword_len, arch.input_len):
            raise InvalidArgument(f"encoder shape {w.shape} does not match arch")
    eta = 1.0 / fista_solver.lipschitz(w)
    gammas = fista_solver.shrinkage_schedule(max(arch.stages, 1))[1]
    f, c, b = arch.feat_channels, arch.io_channels, arch.bottleneck
    with torch.no_grad():
        net.w.copy_(torch.from_numpy(w))
        for k, st in enumerate(net.stages):
            st.eta.fill_(eta)
            st.gamma.fill_(float(gammas[k]))
            st.R.copy_(torch.from_numpy(_gauss(rng, (f, c, 3, 3), 9 * c)))
            for name in ("S0", "S1", "St0", "St1"):
                getattr(st, name).copy_(torch.from_numpy(_gauss(rng, (f, f, 1, 1), f)))
            st.D.copy_(torch.from_numpy(_gauss(rng, (c, f, 3, 3), 9 * f)))
            st.fc1_w.copy_(torch.from_numpy(_gauss(rng, (b, f), f)))
            st.fc2_w.copy_(torch.from_numpy(_gauss(rng, (f, b), b)))
    return net


def st_net(features, stage: Stage, mode: str = "infer"):
    return stage.st_net(features, mode == "train")


def stage_forward(y_k, h_prev, w, s, stage: Stage, arch: ArchConfig, mode: str = "infer", tau=None):
    h, y_next, sym, _ = stage(y_k, h_prev, w, s, arch, train=(mode == "train"), tau=tau)
    if not torch.isfinite(h).all():
        raise NumericFailure(0)
    return h, y_next, sym


def network_forward(s, net: FistaNet, x0=None, mode: str = "infer", taus=None) -> NetOutput:
    return net(s, x0, mode=mode, taus=taus)


def count_trainable_params(arch: ArchConfig) -> dict:
    """Trainable parameter counts; BN running statistics are excluded."""
    c, f, b = arch.io_channels, arch.feat_channels, arch.bottleneck
    per_stage = {
        "scalars": 2,
        "R": 9 * c * f,
        "S": 2 * f * f,
        "St": 2 * f * f,
        "D": 9 * f * c,
        "fc": (f * b + b) + (b * f + f),
        "bn": 2 * b + 2 * f,
    }
    stage_total = sum(per_stage.values())
    encoder = arch.codeword_len * arch.input_len
    return {
        "encoder": encoder,
        "per_stage": per_stage,
        "stage_total": stage_total,
        "decoder": stage_total * arch.stages,
        "total": encoder + stage_total * arch.stages,
    }


def count_macc(arch: ArchConfig, model: str = "fista_net") -> dict:
    """Multiply-accumulate counts of encoder and decoder for one sample."""
    m, n, k = arch.codeword_len, arch.input_len, arch.stages
    encoder = m * n
    gradient = k * 2 * m * n
    if model == "fista":
        return {"encoder": encoder, "decoder": gradient}
    if model != "fista_net":
        raise InvalidArgument(f"unknown model {model!r}")
    c, f, b = arch.io_channels, arch.feat_channels, arch.bottleneck
    hw = arch.img_h * arch.img_w
    conv = hw * (9 * c * f + 2 * f * f + 2 * f * f + 9 * f * c)
    fc = f * b + b * f
    return {"encoder": encoder, "decoder": gradient + k * (conv + fc),
            "decoder_gradient": gradient, "decoder_conv": k * conv, "decoder_stnet": k * fc}
