"""Sign binarization, its straight-through surrogates, weight scaling and RPReLU."""

from __future__ import annotations

import torch
import torch.nn as nn

Tensor = torch.Tensor

ALPHA_FLOOR = 1e-4


def sign_binarize(x: Tensor) -> Tensor:
    """+1 where x > 0, -1 elsewhere (zero maps to -1)."""
    one = torch.ones((), dtype=x.dtype, device=x.device)
    return torch.where(x > 0, one, -one)


def sign_backward_tanh(x: Tensor, upstream: Tensor, alpha: Tensor | float) -> tuple[Tensor, Tensor]:
    """Gradients of the tanh(alpha*x) surrogate.

    Returns ``(grad_x, grad_alpha)`` where grad_alpha is summed to a scalar.
    """
    alpha = torch.as_tensor(alpha, dtype=x.dtype, device=x.device)
    sech2 = 1.0 - torch.tanh(alpha * x) ** 2
    grad_x = upstream * alpha * sech2
    grad_alpha = (upstream * x * sech2).sum()
    return grad_x, grad_alpha


def clip_ste(w: Tensor, upstream: Tensor) -> Tensor:
    """Gradient of the Clip surrogate: identity inside (-1, 1), zero on and beyond +-1."""
    return upstream * (w.abs() < 1).to(upstream.dtype)


class _SignTanh(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, alpha):
        ctx.save_for_backward(x, alpha)
        return sign_binarize(x)

    @staticmethod
    def backward(ctx, grad_out):
        x, alpha = ctx.saved_tensors
        grad_x, grad_alpha = sign_backward_tanh(x, grad_out, alpha)
        return grad_x, grad_alpha.reshape(alpha.shape)


class _SignClip(torch.autograd.Function):
    @staticmethod
    def forward(ctx, w):
        ctx.save_for_backward(w)
        return sign_binarize(w)

    @staticmethod
    def backward(ctx, grad_out):
        (w,) = ctx.saved_tensors
        return clip_ste(w, grad_out)


def binarize_activation(x: Tensor, alpha: Tensor) -> Tensor:
    """Exact sign forward, tanh(alpha*x) gradient backward (alpha is learnable)."""
    return _SignTanh.apply(x, alpha)


def binarize_weight(w: Tensor) -> Tensor:
    """Exact sign forward, Clip gradient backward."""
    return _SignClip.apply(w)


def weight_scale(w_f: Tensor) -> Tensor:
    """Per-output-channel mean absolute latent weight, shape (Cout,)."""
    return w_f.abs().mean(dim=tuple(range(1, w_f.dim())))


def rprelu(y: Tensor, gamma: Tensor, zeta: Tensor, beta: Tensor) -> Tensor:
    """Per-channel RPReLU with the threshold on zeta.

    ``y - gamma + zeta`` where ``y > zeta``, else ``beta * (y - gamma) + zeta``.
    The two branches meet at ``y == zeta`` only when ``beta == 1`` or
    ``gamma == zeta``.
    """
    c = y.shape[1]
    if not (gamma.shape == zeta.shape == beta.shape == (c,)):
        raise ValueError(f"rprelu: parameters must have shape ({c},)")
    shape = (1, c) + (1,) * (y.dim() - 2)
    g, z, b = gamma.view(shape), zeta.view(shape), beta.view(shape)
    return torch.where(y > z, y - g + z, b * (y - g) + z)


class RPReLU(nn.Module):
    def __init__(self, channels: int, slope: float = 0.25):
        super().__init__()
        self.gamma = nn.Parameter(torch.zeros(channels))
        self.zeta = nn.Parameter(torch.zeros(channels))
        self.beta = nn.Parameter(torch.full((channels,), slope))

    def forward(self, y: Tensor) -> Tensor:
        return rprelu(y, self.gamma, self.zeta, self.beta)


def reproject_alpha(module: nn.Module, floor: float = ALPHA_FLOOR) -> None:
    """Clamp every learnable STE slope in ``module`` back above ``floor``."""
    with torch.no_grad():
        for name, p in module.named_parameters():
            if name == "alpha" or name.endswith(".alpha"):
                p.clamp_(min=floor)
