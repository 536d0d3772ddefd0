"""The spatial-spectral binarized convolution unit and its pieces.

* ``SpectralRedistribution`` - data-driven per-channel affine before sign.
* Gabor bank initialization for the latent binary weights.
* ``BinaryConv2d`` - sign activations/weights, XNOR conv, mean-abs rescale.
* ``S2BConv`` - redistribution -> binary conv -> RPReLU -> residual add.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import bitpack
from .binarize import RPReLU, binarize_activation, binarize_weight, weight_scale
from .tensor import global_avg_pool, linear, relu, sigmoid, tanh_op

Tensor = torch.Tensor


# --------------------------------------------------------------------------
# Gabor initialization


def _default_thetas() -> tuple[float, ...]:
    return tuple(k * math.pi / 16 for k in range(16))


@dataclass
class GaborSpec:
    freqs: tuple[float, ...] = (2.0, 3.0, 4.0, 6.0)
    thetas: tuple[float, ...] = field(default_factory=_default_thetas)
    psi: float = 0.0
    gamma_aspect: float = 0.5
    sigma: float | None = None  # None -> K / (2*sqrt(2))
    scale: str = "fan_in"  # per-kernel std -> sqrt(2 / n_in); "none" keeps raw amplitude

    def __post_init__(self):
        self.freqs = tuple(float(f) for f in self.freqs)
        self.thetas = tuple(float(t) for t in self.thetas)
        if len(self.freqs) != 4 or len(self.thetas) != 16:
            raise ValueError("GaborSpec needs exactly 4 wavelengths and 16 orientations")
        if any(f <= 0 for f in self.freqs):
            raise ValueError("GaborSpec wavelengths must be positive")
        if any(not 0 <= t < math.pi for t in self.thetas):
            raise ValueError("GaborSpec orientations must lie in [0, pi)")
        if self.scale not in ("fan_in", "none"):
            raise ValueError(f"GaborSpec.scale must be 'fan_in' or 'none', got {self.scale!r}")

    def sigma_for(self, k: int) -> float:
        return self.sigma if self.sigma is not None else k / (2.0 * math.sqrt(2.0))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GaborSpec":
        return cls(**d)


def gabor_response(x, y, lam: float, theta: float, spec: GaborSpec, sigma: float):
    """Real Gabor response at coordinates (x, y); numpy broadcasting applies."""
    xr = x * math.cos(theta) + y * math.sin(theta)
    yr = -x * math.sin(theta) + y * math.cos(theta)
    envelope = np.exp(-(xr**2 + spec.gamma_aspect**2 * yr**2) / (2.0 * sigma**2))
    return envelope * np.cos(2.0 * math.pi * xr / lam + spec.psi)


def gabor_kernel(lam: float, theta: float, spec: GaborSpec, k: int, n_in: int | None = None) -> np.ndarray:
    """K x K real Gabor kernel on the grid x, y in [0, K-1], mean-centered.

    With ``n_in`` given and ``spec.scale == "fan_in"`` the centered kernel is
    rescaled to standard deviation sqrt(2 / n_in).
    """
    if lam <= 0:
        raise ValueError(f"gabor_kernel: wavelength must be positive, got {lam}")
    if k % 2 == 0 or k < 1:
        raise ValueError(f"gabor_kernel: kernel size must be odd, got {k}")
    grid = np.arange(k, dtype=np.float64)
    xs, ys = np.meshgrid(grid, grid, indexing="ij")
    kern = gabor_response(xs, ys, lam, theta, spec, spec.sigma_for(k))
    kern = kern - kern.mean()
    if n_in is not None and spec.scale == "fan_in":
        std = kern.std()
        if std > 1e-12:
            kern = kern * (math.sqrt(2.0 / n_in) / std)
    return kern


def gabor_draws(cout: int, spec: GaborSpec, seed: int) -> list[tuple[float, float]]:
    """One (wavelength, orientation) pair per output channel, drawn uniformly."""
    rng = np.random.default_rng(seed)
    draws = []
    for _ in range(cout):
        lam = spec.freqs[rng.integers(len(spec.freqs))]
        theta = spec.thetas[rng.integers(len(spec.thetas))]
        draws.append((lam, theta))
    return draws


def gabor_init_bank(cout: int, cin: int, k: int, spec: GaborSpec, seed: int) -> Tensor:
    """(Cout, Cin, K, K) float32 bank; each output channel's kernel is shared across Cin."""
    n_in = cin * k * k
    bank = np.empty((cout, cin, k, k), dtype=np.float32)
    for oc, (lam, theta) in enumerate(gabor_draws(cout, spec, seed)):
        bank[oc] = gabor_kernel(lam, theta, spec, k, n_in)[None]
    return torch.from_numpy(bank)


def fan_in_target_std(cin: int, k: int) -> float:
    return math.sqrt(2.0 / (cin * k * k))


# --------------------------------------------------------------------------
# Spectral redistribution


def srm_redistribute(x_f: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor, return_coeffs: bool = False):
    """GAP -> FC -> ReLU -> FC -> split -> (sigmoid, tanh) -> per-channel affine."""
    c = x_f.shape[1]
    g = global_avg_pool(x_f)
    kb = linear(relu(linear(g, w1, b1)), w2, b2)
    if kb.shape[1] != 2 * c:
        raise ValueError(f"srm_redistribute: projection gives {kb.shape[1]} outputs, need {2 * c}")
    k, b = kb[:, :c], kb[:, c:]
    # keep k' in (0, 1) and b' in (-1, 1) even where the float result would saturate
    fi = torch.finfo(kb.dtype)
    below_one = 1.0 - fi.eps / 2
    k_prime = sigmoid(k).clamp(fi.tiny, below_one)
    b_prime = tanh_op(b).clamp(-below_one, below_one)
    x_r = x_f * k_prime[:, :, None, None] + b_prime[:, :, None, None]
    if return_coeffs:
        return x_r, k_prime, b_prime
    return x_r


class SpectralRedistribution(nn.Module):
    def __init__(self, channels: int, reduction: int = 4):
        super().__init__()
        if reduction < 1 or channels % reduction:
            raise ValueError(f"SRM: reduction {reduction} must divide channel count {channels}")
        self.reduction = reduction
        self.fc1 = nn.Linear(channels, channels // reduction)
        self.fc2 = nn.Linear(channels // reduction, 2 * channels)

    def forward(self, x: Tensor, return_coeffs: bool = False):
        return srm_redistribute(
            x, self.fc1.weight, self.fc1.bias, self.fc2.weight, self.fc2.bias, return_coeffs
        )


class StaticAffine(nn.Module):
    """Input-independent per-channel scale and bias with random initial values.

    Stand-in for the redistribution mechanism in the no-SRM ablation.
    """

    def __init__(self, channels: int):
        super().__init__()
        self.scale = nn.Parameter(torch.empty(channels).uniform_(0.5, 1.0))
        self.bias = nn.Parameter(torch.empty(channels).uniform_(-0.1, 0.1))

    def forward(self, x: Tensor) -> Tensor:
        return x * self.scale.view(1, -1, 1, 1) + self.bias.view(1, -1, 1, 1)


# --------------------------------------------------------------------------
# Binarized convolution


class BinaryConv2d(nn.Module):
    """Sign-binarized activations and weights, rescaled by mean |W_f| per channel.

    ``engine`` selects the arithmetic: ``"float"`` runs the +-1 operands
    through a float convolution (exact for these integer sums and
    differentiable through the STEs); ``"packed"`` runs the XNOR/popcount
    kernel and is inference-only.
    """

    def __init__(self, cin: int, cout: int, kernel_size: int, stride: int = 1, padding: int | None = None):
        super().__init__()
        self.cin, self.cout, self.kernel_size = cin, cout, kernel_size
        self.stride = stride
        self.padding = kernel_size // 2 if padding is None else padding
        self.weight = nn.Parameter(torch.empty(cout, cin, kernel_size, kernel_size))
        nn.init.kaiming_uniform_(self.weight, a=math.sqrt(5))
        self.alpha = nn.Parameter(torch.ones(()))
        self.engine = "float"

    def integer_response(self, x: Tensor) -> Tensor:
        """Raw XNOR conv counts before rescaling (float tensor of integers)."""
        xb = binarize_activation(x, self.alpha)
        wb = binarize_weight(self.weight)
        if self.engine == "packed":
            if torch.is_grad_enabled() and (x.requires_grad or self.weight.requires_grad):
                raise RuntimeError("packed engine is inference-only; wrap the call in torch.no_grad()")
            y = bitpack.binary_conv2d_packed(
                xb.detach().to(torch.int8).numpy(), wb.detach().to(torch.int8).numpy(), self.padding,
                stride=self.stride,
            )
            return torch.from_numpy(y).to(x.dtype)
        return F.conv2d(xb, wb, stride=self.stride, padding=self.padding)

    def forward(self, x: Tensor) -> Tensor:
        return bitpack.rescale_output(self.integer_response(x), weight_scale(self.weight))

    def extra_repr(self) -> str:
        return f"{self.cin}, {self.cout}, kernel_size={self.kernel_size}, stride={self.stride}, padding={self.padding}"


class S2BConv(nn.Module):
    """X_o = X_f + RPReLU(rescale(XNOR-conv(sign(redistribute(X_f)), sign(W_f))))."""

    def __init__(
        self,
        channels: int,
        kernel_size: int = 3,
        reduction: int = 4,
        use_srm: bool = True,
        use_gsfa: bool = True,
        gabor: GaborSpec | None = None,
        seed: int = 0,
    ):
        super().__init__()
        self.channels = channels
        self.redistribute = SpectralRedistribution(channels, reduction) if use_srm else StaticAffine(channels)
        self.conv = BinaryConv2d(channels, channels, kernel_size)
        if use_gsfa:
            bank = gabor_init_bank(channels, channels, kernel_size, gabor or GaborSpec(), seed)
            with torch.no_grad():
                self.conv.weight.copy_(bank)
        self.act = RPReLU(channels)

    @property
    def alpha(self) -> nn.Parameter:
        return self.conv.alpha

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.channels:
            raise ValueError(f"S2BConv: residual needs {self.channels} channels, got {x.shape[1]}")
        return x + self.act(self.conv(self.redistribute(x)))
