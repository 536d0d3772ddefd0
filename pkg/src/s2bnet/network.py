"""U-shaped binarized pan-sharpening network.

Data flow (C base channels, two stages by default)::

    up4(LR-MS) ++ PAN -> head conv (fp) -> X_s -> S2BConv
      -> [basic block -> B-Down] * stages          (C -> 2C -> 4C)
      -> basic block (bottleneck)
      -> [B-Up -> concat skip -> Fusion Decrease -> basic block] * stages
      -> S2BConv -> X_d
    X_s + X_d -> tail conv (fp) (+ up4(LR-MS) when global_residual) -> HR-MS

Only the head and tail are full-precision convolutions.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np
import torch
import torch.nn as nn

from .s2bconv import BinaryConv2d, GaborSpec, S2BConv
from .tensor import ShapeError, bilinear_upsample, bilinear_upsample2x, concat_channels, conv2d_fp, layer_norm

Tensor = torch.Tensor

MS_BANDS = 4
PAN_BANDS = 1


@dataclass
class S2BNetConfig:
    base_channels: int = 32
    stages: int = 2
    kernel_size: int = 3
    srm_reduction: int = 4
    gabor: GaborSpec = field(default_factory=GaborSpec)
    use_gsfa: bool = True
    use_srm: bool = True
    scale_ratio: int = 4
    global_residual: bool = True  # add the upsampled LR-MS to the tail output

    def __post_init__(self):
        if isinstance(self.gabor, dict):
            self.gabor = GaborSpec.from_dict(self.gabor)
        if self.stages < 1:
            raise ValueError("stages must be >= 1")
        if self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd")
        r = self.srm_reduction
        if r < 1 or self.base_channels % r:
            raise ValueError(f"base_channels {self.base_channels} not divisible by srm_reduction {r}")
        s = self.scale_ratio
        if s < 1 or s & (s - 1):
            raise ValueError(f"scale_ratio must be a power of two, got {s}")

    @property
    def ablation(self) -> str:
        if self.use_gsfa and self.use_srm:
            return "ours"
        if not self.use_gsfa and self.use_srm:
            return "I"
        if self.use_gsfa and not self.use_srm:
            return "II"
        return "I+II"

    def widths(self) -> list[int]:
        """Channel ladder down the encoder: C, 2C, 4C, ..."""
        return [self.base_channels * 2**i for i in range(self.stages + 1)]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "S2BNetConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config field(s): {', '.join(sorted(unknown))}")
        return cls(**d)


class FullPrecisionConv(nn.Module):
    def __init__(self, cin: int, cout: int, k: int):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(cout, cin, k, k))
        self.bias = nn.Parameter(torch.zeros(cout))
        nn.init.kaiming_uniform_(self.weight, a=5**0.5)
        self.padding = k // 2

    def forward(self, x: Tensor) -> Tensor:
        return conv2d_fp(x, self.weight, 1, self.padding, self.bias)


class LayerNorm2d(nn.Module):
    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        self.gamma = nn.Parameter(torch.ones(channels))
        self.beta = nn.Parameter(torch.zeros(channels))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, self.eps)


class BasicBlock(nn.Module):
    """LayerNorm -> Fusion Increase (1x1, c->2c) -> S2BConv -> Fusion Decrease (1x1, 2c->c) -> ReLU."""

    def __init__(self, channels: int, cfg: S2BNetConfig, seed: int, use_relu: bool = True):
        super().__init__()
        self.norm = LayerNorm2d(channels)
        self.increase = BinaryConv2d(channels, 2 * channels, 1)
        self.s2b = S2BConv(2 * channels, cfg.kernel_size, cfg.srm_reduction, cfg.use_srm, cfg.use_gsfa, cfg.gabor, seed)
        self.decrease = BinaryConv2d(2 * channels, channels, 1)
        self.use_relu = use_relu

    def forward(self, x: Tensor) -> Tensor:
        y = self.decrease(self.s2b(self.increase(self.norm(x))))
        return torch.relu(y) if self.use_relu else y


class BDown(nn.Module):
    """Stride-2 3x3 binarized conv, doubles channels."""

    def __init__(self, cin: int, k: int):
        super().__init__()
        self.conv = BinaryConv2d(cin, 2 * cin, k, stride=2)

    def forward(self, x: Tensor) -> Tensor:
        return self.conv(x)


class BUp(nn.Module):
    """Bilinear x2 then 3x3 binarized conv, halves channels."""

    def __init__(self, cin: int, k: int):
        super().__init__()
        self.conv = BinaryConv2d(cin, cin // 2, k)

    def forward(self, x: Tensor) -> Tensor:
        return self.conv(bilinear_upsample2x(x))


class Encoder(nn.Module):
    def __init__(self, channels: int, cfg: S2BNetConfig, seed: int):
        super().__init__()
        self.block = BasicBlock(channels, cfg, seed)
        self.down = BDown(channels, cfg.kernel_size)

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        skip = self.block(x)
        return self.down(skip), skip


class Decoder(nn.Module):
    def __init__(self, cin: int, cfg: S2BNetConfig, seed: int):
        super().__init__()
        c = cin // 2
        self.up = BUp(cin, cfg.kernel_size)
        self.fuse = BinaryConv2d(2 * c, c, 1)
        self.block = BasicBlock(c, cfg, seed)

    def forward(self, x: Tensor, skip: Tensor) -> Tensor:
        return self.block(self.fuse(concat_channels(self.up(x), skip)))


class S2BNet(nn.Module):
    def __init__(self, cfg: S2BNetConfig, seeds: list[int]):
        super().__init__()
        self.cfg = cfg
        c, k = cfg.base_channels, cfg.kernel_size
        widths = cfg.widths()
        it = iter(seeds)
        self.head = FullPrecisionConv(MS_BANDS + PAN_BANDS, c, k)
        self.stem = S2BConv(c, k, cfg.srm_reduction, cfg.use_srm, cfg.use_gsfa, cfg.gabor, next(it))
        self.encoders = nn.ModuleList(Encoder(w, cfg, next(it)) for w in widths[:-1])
        self.bottleneck = BasicBlock(widths[-1], cfg, next(it))
        self.decoders = nn.ModuleList(Decoder(w, cfg, next(it)) for w in reversed(widths[1:]))
        self.mapping = S2BConv(c, k, cfg.srm_reduction, cfg.use_srm, cfg.use_gsfa, cfg.gabor, next(it))
        self.tail = FullPrecisionConv(c, MS_BANDS, k)

    def check_inputs(self, pan: Tensor, lrms: Tensor) -> None:
        cfg = self.cfg
        if pan.dim() != 4 or pan.shape[1] != PAN_BANDS:
            raise ShapeError(f"PAN must be (N, 1, H, W), got {tuple(pan.shape)}")
        if lrms.dim() != 4 or lrms.shape[1] != MS_BANDS:
            raise ShapeError(f"LR-MS must be (N, 4, h, w), got {tuple(lrms.shape)}")
        h, w = pan.shape[2:]
        step = max(2**cfg.stages, cfg.scale_ratio)
        if h % step or w % step:
            raise ShapeError(f"PAN size {h}x{w} must be divisible by {step} (2^stages and scale ratio)")
        if (lrms.shape[2] * cfg.scale_ratio, lrms.shape[3] * cfg.scale_ratio) != (h, w):
            raise ShapeError(
                f"LR-MS {tuple(lrms.shape[2:])} x{cfg.scale_ratio} does not match PAN {h}x{w}"
            )

    def forward(self, pan: Tensor, lrms: Tensor) -> Tensor:
        self.check_inputs(pan, lrms)
        up = bilinear_upsample(lrms, self.cfg.scale_ratio)
        x_s = self.head(concat_channels(up, pan))
        x = self.stem(x_s)
        skips = []
        for enc in self.encoders:
            x, skip = enc(x)
            skips.append(skip)
        x = self.bottleneck(x)
        for dec, skip in zip(self.decoders, reversed(skips)):
            x = dec(x, skip)
        x_d = self.mapping(x)
        out = self.tail(x_s + x_d)
        return out + up if self.cfg.global_residual else out

    def set_engine(self, engine: str) -> None:
        if engine not in ("float", "packed"):
            raise ValueError(f"unknown engine {engine!r}")
        for m in self.modules():
            if isinstance(m, BinaryConv2d):
                m.engine = engine

    def full_precision_convs(self) -> list[nn.Module]:
        return [m for m in self.modules() if isinstance(m, FullPrecisionConv)]

    def binary_convs(self) -> list[BinaryConv2d]:
        return [m for m in self.modules() if isinstance(m, BinaryConv2d)]

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def layer_seeds(seed: int, count: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(count)]


def build(cfg: S2BNetConfig, seed: int = 0) -> S2BNet:
    """Deterministically construct the network for ``seed``."""
    n_blocks = 2 * cfg.stages + 3
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = S2BNet(cfg, layer_seeds(seed, n_blocks))
    widths = cfg.widths()
    for enc, w in zip(model.encoders, widths):
        assert enc.block.norm.gamma.numel() == w and enc.down.conv.cout == 2 * w
    for dec, w in zip(model.decoders, reversed(widths[:-1])):
        assert dec.block.norm.gamma.numel() == w
    assert len(model.full_precision_convs()) == 2
    return model
