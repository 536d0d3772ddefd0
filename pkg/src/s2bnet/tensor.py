"""Dense NCHW tensor operations used by the network.

Tensors are plain ``torch.Tensor`` objects; autograd records the tape and
``backward`` walks it in reverse. The wrappers here pin down the exact
conventions the rest of the package relies on (layout, padding, layer-norm
axes, bilinear alignment) and reject shape mismatches early with a
``ShapeError`` instead of letting torch broadcast silently.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F

Tensor = torch.Tensor


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def _check_rank(x: Tensor, rank: int, name: str) -> None:
    if x.dim() != rank:
        raise ShapeError(f"{name}: expected rank {rank}, got shape {tuple(x.shape)}")


def conv2d_fp(x: Tensor, w: Tensor, stride: int = 1, pad: int = 0, bias: Tensor | None = None) -> Tensor:
    """Full-precision cross-correlation with zero padding.

    Output spatial size is ``(H + 2*pad - K) // stride + 1``.
    """
    _check_rank(x, 4, "conv2d_fp input")
    _check_rank(w, 4, "conv2d_fp weight")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d_fp: input has {x.shape[1]} channels, weight expects {w.shape[1]}")
    k = w.shape[-1]
    if w.shape[-2] != k or k % 2 == 0:
        raise ShapeError(f"conv2d_fp: kernel must be square and odd, got {tuple(w.shape[-2:])}")
    if stride < 1 or pad < 0:
        raise ValueError("conv2d_fp: stride >= 1 and pad >= 0 required")
    return F.conv2d(x, w, bias, stride=stride, padding=pad)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each sample over (C, H, W), then apply a per-channel affine."""
    if eps <= 0:
        raise ValueError("layer_norm: eps must be positive")
    _check_rank(x, 4, "layer_norm input")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"layer_norm: affine params must have shape ({c},)")
    mu = x.mean(dim=(1, 2, 3), keepdim=True)
    var = ((x - mu) ** 2).mean(dim=(1, 2, 3), keepdim=True)
    xhat = (x - mu) / torch.sqrt(var + eps)
    return xhat * gamma.view(1, c, 1, 1) + beta.view(1, c, 1, 1)


def relu(x: Tensor) -> Tensor:
    return torch.relu(x)


def sigmoid(x: Tensor) -> Tensor:
    return torch.sigmoid(x)


def tanh_op(x: Tensor) -> Tensor:
    return torch.tanh(x)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes differ {tuple(a.shape)} vs {tuple(b.shape)}")
    return a + b


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    _check_rank(a, 4, "concat_channels")
    _check_rank(b, 4, "concat_channels")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"concat_channels: {tuple(a.shape)} and {tuple(b.shape)} differ outside channels")
    return torch.cat([a, b], dim=1)


def global_avg_pool(x: Tensor) -> Tensor:
    _check_rank(x, 4, "global_avg_pool")
    return x.mean(dim=(2, 3))


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    _check_rank(x, 2, "linear input")
    if w.dim() != 2 or x.shape[1] != w.shape[1] or b.shape != (w.shape[0],):
        raise ShapeError(
            f"linear: x {tuple(x.shape)}, w {tuple(w.shape)}, b {tuple(b.shape)} are incompatible"
        )
    return F.linear(x, w, b)


def bilinear_upsample2x(x: Tensor) -> Tensor:
    """Bilinear x2 upsampling with half-pixel centers (no corner alignment)."""
    return bilinear_upsample(x, 2)


def bilinear_upsample(x: Tensor, factor: int) -> Tensor:
    _check_rank(x, 4, "bilinear_upsample")
    if x.shape[2] < 1 or x.shape[3] < 1:
        raise ShapeError("bilinear_upsample: empty spatial dims")
    return F.interpolate(x, scale_factor=factor, mode="bilinear", align_corners=False)


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf that requires it; grads accumulate."""
    if loss.numel() != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {tuple(loss.shape)}")
    if loss.grad_fn is None:
        raise RuntimeError("backward: loss was not produced by a recorded forward pass")
    loss.backward()
