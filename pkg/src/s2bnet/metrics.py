"""Pan-sharpening quality indices.

Images are (bands, H, W) arrays. Reduced-resolution indices compare a fused
image ``h`` against ground truth ``g``; the no-reference family (D_lambda,
D_s, QNR) compares the fused image with its own LR-MS and PAN inputs.
Everything is computed in float64.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .data import degrade

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
Q_BLOCK = 32
Q_MIN_BLOCK = 8


def _f64(a) -> np.ndarray:
    return np.asarray(a, dtype=np.float64)


def _same_shape(g, h):
    g, h = _f64(g), _f64(h)
    if g.shape != h.shape:
        raise ValueError(f"shape mismatch: {g.shape} vs {h.shape}")
    return g, h


def psnr(g, h, peak: float = 1.0) -> float:
    g, h = _same_shape(g, h)
    mse = np.mean((g - h) ** 2)
    if mse == 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * math.log10(peak**2 / mse)))


def sam(g, h) -> float:
    """Mean spectral angle in degrees; pixels where either spectrum is zero are skipped."""
    g, h = _same_shape(g, h)
    if g.shape[0] < 2:
        raise ValueError("sam needs at least 2 bands")
    gp, hp = g.reshape(g.shape[0], -1), h.reshape(h.shape[0], -1)
    ng, nh = np.linalg.norm(gp, axis=0), np.linalg.norm(hp, axis=0)
    ok = (ng > 0) & (nh > 0)
    if not ok.any():
        return 0.0
    # 2*atan2(|u-v|, |u+v|) on unit vectors stays accurate near 0 where arccos does not
    u, v = gp[:, ok] / ng[ok], hp[:, ok] / nh[ok]
    ang = 2.0 * np.arctan2(np.linalg.norm(u - v, axis=0), np.linalg.norm(u + v, axis=0))
    return float(np.degrees(ang).mean())


def ergas_detail(g, h, ratio: float = 4) -> tuple[float, list[int]]:
    """ERGAS value plus the indices of zero-mean bands left out of it."""
    if ratio <= 0:
        raise ValueError("ratio must be positive")
    g, h = _same_shape(g, h)
    terms, excluded = [], []
    for b in range(g.shape[0]):
        mu = g[b].mean()
        if mu == 0:
            excluded.append(b)
            continue
        rmse = math.sqrt(np.mean((g[b] - h[b]) ** 2))
        terms.append((rmse / mu) ** 2)
    if not terms:
        return 0.0, excluded
    return 100.0 / ratio * math.sqrt(sum(terms) / len(terms)), excluded


def ergas(g, h, ratio: float = 4) -> float:
    return ergas_detail(g, h, ratio)[0]


# ---------------------------------------------------------------------- SSIM


def _gauss_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax**2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def _filter_valid(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    return np.einsum("ijkl,kl->ij", sliding_window_view(img, win.shape), win)


def ssim_map(a, b, peak: float = 1.0) -> np.ndarray:
    """Local SSIM of two single-band images over the valid window positions."""
    a, b = _same_shape(a, b)
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ValueError(f"image {a.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    win = _gauss_window()
    c1, c2 = (0.01 * peak) ** 2, (0.03 * peak) ** 2
    mu_a, mu_b = _filter_valid(a, win), _filter_valid(b, win)
    saa = _filter_valid(a * a, win) - mu_a**2
    sbb = _filter_valid(b * b, win) - mu_b**2
    sab = _filter_valid(a * b, win) - mu_a * mu_b
    return ((2 * mu_a * mu_b + c1) * (2 * sab + c2)) / ((mu_a**2 + mu_b**2 + c1) * (saa + sbb + c2))


def ssim(g, h, peak: float = 1.0) -> float:
    """Mean local SSIM, averaged over bands."""
    g, h = _same_shape(g, h)
    if g.ndim == 2:
        g, h = g[None], h[None]
    return float(np.mean([ssim_map(g[b], h[b], peak).mean() for b in range(g.shape[0])]))


# ------------------------------------------------------------------- Q index


MEAN_TOL = 1e-12


def _ratio(num: float, den: float) -> float:
    # 0/0 means both terms vanish identically -> perfect agreement for that factor
    if den == 0:
        return 1.0 if num == 0 else 0.0
    return num / den


def _luminance(mx2: float, my2: float, cross: float, spread: float) -> float:
    """2*mx*my / (mx^2 + my^2), with means negligible next to ``spread`` read as exact zeros."""
    den = mx2 + my2
    if den <= MEAN_TOL * spread:
        return 1.0
    return _ratio(2 * cross, den)


def q_block(x: np.ndarray, y: np.ndarray) -> float:
    """Universal image quality index on one block, as correlation x luminance x contrast."""
    x, y = x.ravel(), y.ravel()
    mx, my = x.mean(), y.mean()
    vx, vy = x.var(), y.var()
    cxy = np.mean((x - mx) * (y - my))
    sx, sy = math.sqrt(vx), math.sqrt(vy)
    if sx == 0 and sy == 0:
        corr = 1.0
    elif sx == 0 or sy == 0:
        corr = 0.0
    else:
        corr = cxy / (sx * sy)
    return corr * _luminance(mx**2, my**2, mx * my, vx + vy) * _ratio(2 * sx * sy, vx + vy)


def _blocks(h: int, w: int, block: int = Q_BLOCK):
    if h < Q_MIN_BLOCK or w < Q_MIN_BLOCK:
        raise ValueError(f"image {h}x{w} smaller than the minimum Q block {Q_MIN_BLOCK}")
    for i in range(0, h, block):
        for j in range(0, w, block):
            bh, bw = min(block, h - i), min(block, w - j)
            if bh >= Q_MIN_BLOCK and bw >= Q_MIN_BLOCK:
                yield slice(i, i + bh), slice(j, j + bw)


def q_index(a, b, block: int = Q_BLOCK) -> float:
    """Mean Q over non-overlapping blocks of two single-band images."""
    a, b = _same_shape(a, b)
    return float(np.mean([q_block(a[r, c], b[r, c]) for r, c in _blocks(*a.shape, block)]))


def _qmul(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Hamilton product along axis 0 (components w, x, y, z)."""
    a1, b1, c1, d1 = p
    a2, b2, c2, d2 = q
    return np.stack([
        a1 * a2 - b1 * b2 - c1 * c2 - d1 * d2,
        a1 * b2 + b1 * a2 + c1 * d2 - d1 * c2,
        a1 * c2 - b1 * d2 + c1 * a2 + d1 * b2,
        a1 * d2 + b1 * c2 - c1 * b2 + d1 * a2,
    ])


def _qconj(p: np.ndarray) -> np.ndarray:
    return p * np.array([1.0, -1.0, -1.0, -1.0]).reshape((4,) + (1,) * (p.ndim - 1))


def q4_block(x: np.ndarray, y: np.ndarray) -> float:
    """Quaternion Q on one (4, h, w) block."""
    x, y = x.reshape(4, -1), y.reshape(4, -1)
    mx, my = x.mean(axis=1), y.mean(axis=1)
    dx, dy = x - mx[:, None], y - my[:, None]
    vx, vy = np.mean(np.sum(dx**2, 0)), np.mean(np.sum(dy**2, 0))
    cov = np.linalg.norm(_qmul(dx, _qconj(dy)).mean(axis=1))
    sx, sy = math.sqrt(vx), math.sqrt(vy)
    if sx == 0 and sy == 0:
        corr = 1.0
    elif sx == 0 or sy == 0:
        corr = 0.0
    else:
        corr = cov / (sx * sy)
    nmx, nmy = np.linalg.norm(mx), np.linalg.norm(my)
    return corr * _luminance(nmx**2, nmy**2, nmx * nmy, vx + vy) * _ratio(2 * sx * sy, vx + vy)


def q4(g, h, block: int = Q_BLOCK) -> float:
    g, h = _same_shape(g, h)
    if g.shape[0] != 4:
        raise ValueError(f"q4 needs exactly 4 bands, got {g.shape[0]}")
    return float(np.mean([q4_block(g[:, r, c], h[:, r, c]) for r, c in _blocks(*g.shape[1:], block)]))


# ---------------------------------------------------------- no-reference


def _lr_block(hr_shape, lr_shape, block: int) -> tuple[int, int]:
    """Scale ratio implied by the shapes and the block size covering the same ground area at LR."""
    ratio = hr_shape[-1] // lr_shape[-1]
    if ratio < 1 or hr_shape[-1] != ratio * lr_shape[-1] or hr_shape[-2] != ratio * lr_shape[-2]:
        raise ValueError(f"fused {hr_shape} is not an integer multiple of lrms {lr_shape}")
    return ratio, max(Q_MIN_BLOCK, block // ratio)


def d_lambda(fused, lrms, block: int = Q_BLOCK) -> float:
    """Spectral distortion: inter-band Q at full scale vs at LR scale."""
    fused, lrms = _f64(fused), _f64(lrms)
    nb = fused.shape[0]
    if nb < 2 or lrms.shape[0] != nb:
        raise ValueError("d_lambda needs >= 2 bands in both images")
    _, lr_block = _lr_block(fused.shape, lrms.shape, block)
    total = 0.0
    for i in range(nb):
        for j in range(nb):
            if i != j:
                total += abs(q_index(fused[i], fused[j], block) - q_index(lrms[i], lrms[j], lr_block))
    return total / (nb * (nb - 1))


def d_s(fused, lrms, pan, ratio: int = 4, block: int = Q_BLOCK) -> float:
    """Spatial distortion against the PAN, with the LR side using the degraded PAN."""
    fused, lrms, pan = _f64(fused), _f64(lrms), _f64(pan)
    pan2 = pan[0] if pan.ndim == 3 else pan
    if pan2.shape != fused.shape[1:]:
        raise ValueError(f"pan {pan2.shape} does not match fused {fused.shape[1:]}")
    implied, lr_block = _lr_block(fused.shape, lrms.shape, block)
    if implied != ratio:
        raise ValueError(f"shapes imply ratio {implied}, expected {ratio}")
    pan_lr = degrade(pan2[None], ratio)[0]
    nb = fused.shape[0]
    return sum(
        abs(q_index(fused[i], pan2, block) - q_index(lrms[i], pan_lr, lr_block)) for i in range(nb)
    ) / nb


def qnr(dl: float, ds: float) -> float:
    return (1.0 - dl) * (1.0 - ds)


# ------------------------------------------------------------------ report


@dataclass
class MetricReport:
    values: dict[str, float] = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {"schema_version": 1, "metrics": self.values, "config": self.config, "flags": self.flags},
            indent=2,
            sort_keys=True,
        )


REDUCED = ("psnr", "ssim", "sam", "ergas", "q4")
FULL = ("d_lambda", "d_s", "qnr")


def evaluate_pair(fused, lrms, pan, gt=None, ratio: int = 4, peak: float = 1.0) -> tuple[dict, list[str]]:
    """All applicable indices for one sample; reduced ones only when ``gt`` is given."""
    out, flags = {}, []
    if gt is not None:
        out["psnr"] = psnr(gt, fused, peak)
        out["ssim"] = ssim(gt, fused, peak)
        out["sam"] = sam(gt, fused)
        out["ergas"], excluded = ergas_detail(gt, fused, ratio)
        if excluded:
            flags.append(f"ergas_excluded_zero_mean_bands={excluded}")
        out["q4"] = q4(gt, fused)
    dl = d_lambda(fused, lrms)
    ds = d_s(fused, lrms, pan, ratio)
    out.update(d_lambda=dl, d_s=ds, qnr=qnr(dl, ds))
    return out, flags


def report(rows: list[dict], flags: list[str] | None = None, ratio: int = 4, peak: float = 1.0) -> MetricReport:
    """Average per-sample rows into one report."""
    keys = [k for k in REDUCED + FULL if rows and all(k in r for r in rows)]
    values = {k: float(np.mean([r[k] for r in rows])) for k in keys}
    cfg = {"peak": peak, "ratio": ratio, "ssim_window": SSIM_WINDOW, "ssim_sigma": SSIM_SIGMA,
           "q_block": Q_BLOCK, "psnr_cap": PSNR_CAP, "samples": len(rows)}
    return MetricReport(values, cfg, sorted(set(flags or [])))
