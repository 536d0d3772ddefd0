"""Bit-packed XNOR/popcount binary convolution.

Operands in {-1, +1} are packed 64 per word (1 encodes +1, 0 encodes -1)
along the flattened (Cin, K, K) receptive field, im2col style. A parallel
validity plane marks in-bounds positions so that zero padding contributes
exactly 0 to every dot product::

    dot = 2 * popcount(XNOR(a, b) & va & vb) - popcount(va & vb)

``ternary_conv2d_reference`` is the slow nested-loop oracle over
{-1, 0, +1} that defines the expected result.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

WORD_BITS = 64

_BYTE_POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.uint8)


@dataclass(frozen=True)
class PackedBitPlane:
    bits: np.ndarray  # uint64, (..., n_words)
    valid_mask: np.ndarray  # uint64, same shape
    logical_len: int

    @property
    def n_words(self) -> int:
        return self.bits.shape[-1]


def _n_words(length: int) -> int:
    return -(-length // WORD_BITS)


def _pack_bool(flags: np.ndarray) -> np.ndarray:
    length = flags.shape[-1]
    packed = np.packbits(flags, axis=-1, bitorder="little")
    n_bytes = _n_words(length) * 8
    if packed.shape[-1] != n_bytes:
        pad = [(0, 0)] * (packed.ndim - 1) + [(0, n_bytes - packed.shape[-1])]
        packed = np.pad(packed, pad)
    return np.ascontiguousarray(packed).view("<u8").astype(np.uint64, copy=False)


def _check_signs(v: np.ndarray) -> None:
    if not np.all((v == 1) | (v == -1)):
        bad = v[(v != 1) & (v != -1)]
        raise ValueError(f"pack_signs: values must be exactly -1 or +1, found {bad.flat[0]!r}")


def pack_signs(v, mask=None) -> PackedBitPlane:
    """Pack a {-1, +1} array along its last axis.

    Bit i is set iff ``v[i] == +1`` and ``mask[i]`` is true. Leading axes are
    kept, so a (P, L) array packs into P rows.
    """
    v = np.asarray(v)
    _check_signs(v)
    length = v.shape[-1]
    valid = np.ones(v.shape, dtype=bool) if mask is None else np.broadcast_to(np.asarray(mask, dtype=bool), v.shape)
    return PackedBitPlane(_pack_bool((v > 0) & valid), _pack_bool(valid), length)


def unpack_signs(plane: PackedBitPlane) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of ``pack_signs``: returns (values in {-1, +1}, validity mask)."""
    def unpack(words):
        raw = np.ascontiguousarray(words.astype("<u8")).view(np.uint8)
        return np.unpackbits(raw, axis=-1, bitorder="little", count=plane.logical_len).astype(bool)

    bits = unpack(plane.bits)
    return np.where(bits, 1, -1).astype(np.int8), unpack(plane.valid_mask)


def popcount(words: np.ndarray, portable: bool = False) -> np.ndarray:
    """Per-word population count of a uint64 array."""
    words = np.asarray(words, dtype=np.uint64)
    if not portable and hasattr(np, "bitwise_count"):
        return np.bitwise_count(words).astype(np.int64)
    as_bytes = np.ascontiguousarray(words).view(np.uint8).reshape(words.shape + (8,))
    return _BYTE_POPCOUNT[as_bytes].sum(axis=-1, dtype=np.int64)


def xnor_popcount_dot(a: PackedBitPlane, b: PackedBitPlane, portable: bool = False) -> int:
    """Exact {-1, 0, +1} dot product of two packed vectors."""
    if a.logical_len != b.logical_len:
        raise ValueError(f"xnor_popcount_dot: lengths differ ({a.logical_len} vs {b.logical_len})")
    both = a.valid_mask & b.valid_mask
    agree = ~(a.bits ^ b.bits) & both
    return int(2 * popcount(agree, portable).sum() - popcount(both, portable).sum())


def _im2col(x: np.ndarray, valid: np.ndarray, k: int, pad: int, stride: int) -> tuple[np.ndarray, np.ndarray, int, int]:
    n, cin, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=-1)
    vp = np.pad(valid, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=False)
    if h + 2 * pad < k or w + 2 * pad < k:
        raise ValueError(f"binary_conv2d_packed: kernel {k} does not fit {h}x{w} with pad {pad}")
    ho, wo = (h + 2 * pad - k) // stride + 1, (w + 2 * pad - k) // stride + 1

    def cols(a):
        win = np.lib.stride_tricks.sliding_window_view(a, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
        return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, cin * k * k)

    return cols(xp), cols(vp), ho, wo


def binary_conv2d_packed(
    xb, wb, pad: int, mask=None, stride: int = 1, portable: bool = False, chunk: int = 4096
) -> np.ndarray:
    """Binary cross-correlation via XNOR + popcount.

    ``xb`` is (N, Cin, H, W) in {-1, +1}; ``wb`` is (Cout, Cin, K, K) in
    {-1, +1}. ``mask`` optionally marks valid input positions; invalid ones
    and zero padding contribute 0. Returns int32 (N, Cout, Ho, Wo).
    """
    xb = np.asarray(xb)
    wb = np.asarray(wb)
    if xb.ndim != 4 or wb.ndim != 4:
        raise ValueError("binary_conv2d_packed: expected 4-D input and weight")
    cout, cin, k, k2 = wb.shape
    if k != k2 or k % 2 == 0:
        raise ValueError(f"binary_conv2d_packed: kernel must be square and odd, got {k}x{k2}")
    if xb.shape[1] != cin:
        raise ValueError(f"binary_conv2d_packed: input has {xb.shape[1]} channels, weight expects {cin}")
    if stride < 1:
        raise ValueError("binary_conv2d_packed: stride must be >= 1")
    _check_signs(xb)
    valid = np.ones(xb.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)

    cols, col_valid, ho, wo = _im2col(xb, valid, k, pad, stride)
    xplane = pack_signs(cols, col_valid)
    wplane = pack_signs(wb.reshape(cout, -1))

    n_pos = cols.shape[0]
    out = np.empty((n_pos, cout), dtype=np.int64)
    wbits = wplane.bits[None, :, :]
    wvalid = wplane.valid_mask[None, :, :]
    for start in range(0, n_pos, chunk):
        sl = slice(start, start + chunk)
        both = xplane.valid_mask[sl, None, :] & wvalid
        agree = ~(xplane.bits[sl, None, :] ^ wbits) & both
        out[sl] = 2 * popcount(agree, portable).sum(-1) - popcount(both, portable).sum(-1)
    n = xb.shape[0]
    return out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2).astype(np.int32)


def ternary_conv2d_reference(x, w, pad: int) -> np.ndarray:
    """Nested-loop zero-padded cross-correlation over integer inputs.

    Slow on purpose: this is the oracle the packed path is checked against.
    """
    x = np.asarray(x, dtype=np.int64)
    w = np.asarray(w, dtype=np.int64)
    n, cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    ho, wo = h + 2 * pad - k + 1, wd + 2 * pad - k + 1
    out = np.zeros((n, cout, ho, wo), dtype=np.int64)
    for b in range(n):
        for o in range(cout):
            for i in range(ho):
                for j in range(wo):
                    acc = 0
                    for c in range(cin):
                        for u in range(k):
                            for v in range(k):
                                r, s = i + u - pad, j + v - pad
                                if 0 <= r < h and 0 <= s < wd:
                                    acc += x[b, c, r, s] * w[o, c, u, v]
                    out[b, o, i, j] = acc
    return out.astype(np.int32)


def rescale_output(y_int, s):
    """Multiply channel i of an integer conv result by ``s[i]``."""
    if y_int.shape[1] != s.shape[0]:
        raise ValueError(f"rescale_output: {y_int.shape[1]} channels but {s.shape[0]} scales")
    if isinstance(y_int, np.ndarray):
        s = np.asarray(s, dtype=np.float32)
        return y_int.astype(np.float32) * s.reshape(1, -1, 1, 1)
    return y_int.to(s.dtype) * s.reshape(1, -1, 1, 1)
