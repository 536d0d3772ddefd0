"""Reduced-resolution sample synthesis and dataset I/O.

Arrays are (bands, H, W) float32 in [0, 1]. A dataset directory holds
``manifest.json`` plus ``pan_%04d.s2bt``, ``lrms_%04d.s2bt`` and (when
ground truth exists) ``gt_%04d.s2bt``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .container import ContainerError, load_tensor, save_tensor

SCHEMA_VERSION = 1
BLUR_SIGMA = 1.0
BLUR_SIZE = 5
PAN_WEIGHTS = np.array([0.15, 0.25, 0.3, 0.3])


class DatasetError(ValueError):
    pass


@dataclass
class ScenePair:
    pan: np.ndarray  # (1, H, W)
    lrms: np.ndarray  # (4, H/r, W/r)
    gt: np.ndarray | None = None  # (4, H, W)
    meta: dict = field(default_factory=lambda: {"sensor": "synthetic", "scale_ratio": 4})

    def __post_init__(self):
        r = int(self.meta.get("scale_ratio", 4))
        if self.pan.ndim != 3 or self.pan.shape[0] != 1:
            raise DatasetError(f"pan must be (1, H, W), got {self.pan.shape}")
        h, w = self.pan.shape[1:]
        if self.lrms.ndim != 3 or self.lrms.shape[1:] != (h // r, w // r) or h % r or w % r:
            raise DatasetError(f"lrms {self.lrms.shape} inconsistent with pan {self.pan.shape} at ratio {r}")
        if self.gt is not None and self.gt.shape != (self.lrms.shape[0], h, w):
            raise DatasetError(f"gt {self.gt.shape} inconsistent with pan {self.pan.shape}")

    @property
    def scale_ratio(self) -> int:
        return int(self.meta.get("scale_ratio", 4))


def gaussian_kernel(size: int = BLUR_SIZE, sigma: float = BLUR_SIGMA) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax**2) / (2 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


def blur(img: np.ndarray) -> np.ndarray:
    """5x5 Gaussian (sigma 1) per band, symmetric border extension."""
    k = gaussian_kernel()
    img = np.asarray(img, dtype=np.float64)
    return np.stack([ndimage.correlate(b, k, mode="reflect") for b in img])


def decimate(img: np.ndarray, ratio: int) -> np.ndarray:
    # sample near each block center so bilinear half-pixel upsampling lines up
    off = ratio // 2
    return img[:, off::ratio, off::ratio]


def degrade(img: np.ndarray, ratio: int) -> np.ndarray:
    """Blur then decimate by ``ratio``; (B, H, W) -> (B, H/r, W/r)."""
    img = np.asarray(img)
    if img.shape[-1] % ratio or img.shape[-2] % ratio:
        raise DatasetError(f"spatial size {img.shape[-2:]} not divisible by ratio {ratio}")
    return decimate(blur(img), ratio)


def wald_degrade(hrms: np.ndarray, pan_hr: np.ndarray, ratio: int = 4, sensor: str = "synthetic") -> ScenePair:
    """Build a reduced-resolution training triple; the original MS becomes ground truth."""
    if hrms.ndim != 3 or pan_hr.shape != (1,) + hrms.shape[1:]:
        raise DatasetError(f"hrms {hrms.shape} and pan {pan_hr.shape} must share H, W")
    lrms = np.clip(degrade(hrms, ratio), 0.0, 1.0).astype(np.float32)
    return ScenePair(
        pan=np.asarray(pan_hr, dtype=np.float32),
        lrms=lrms,
        gt=np.asarray(hrms, dtype=np.float32),
        meta={"sensor": sensor, "scale_ratio": ratio},
    )


def _sinusoids(rng: np.random.Generator, yy, xx, n: int, max_cycles: float, amp: float) -> np.ndarray:
    out = np.zeros_like(xx)
    for _ in range(n):
        fy, fx = rng.uniform(-max_cycles, max_cycles, size=2)
        phase = rng.uniform(0, 2 * math.pi)
        out += amp * rng.uniform(0.3, 1.0) * np.cos(2 * math.pi * (fy * yy + fx * xx) + phase)
    return out


def synth_scene(seed: int, h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    """Procedural 4-band scene and its panchromatic companion.

    Smooth low-frequency fields plus a few sharp-edged regions with
    band-specific contrast; PAN is a positive band mix plus fine texture.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.arange(h) / h, np.arange(w) / w, indexing="ij")
    shared = _sinusoids(rng, yy, xx, 4, 2.5, 0.12)
    bands = []
    base_levels = rng.uniform(0.25, 0.6, size=4)
    for b in range(4):
        bands.append(base_levels[b] + shared * rng.uniform(0.6, 1.2) + _sinusoids(rng, yy, xx, 2, 3.0, 0.05))
    hrms = np.stack(bands)

    for _ in range(rng.integers(3, 7)):
        if rng.random() < 0.5:
            y0, x0 = rng.uniform(0, 1, 2)
            hh, ww = rng.uniform(0.1, 0.45, 2)
            region = (yy >= y0) & (yy < y0 + hh) & (xx >= x0) & (xx < x0 + ww)
        else:
            ang = rng.uniform(0, 2 * math.pi)
            c = rng.uniform(-0.3, 0.3)
            region = (np.cos(ang) * (xx - 0.5) + np.sin(ang) * (yy - 0.5)) > c
        contrast = rng.uniform(-0.2, 0.2, size=4) + rng.uniform(-0.1, 0.1)
        hrms += contrast[:, None, None] * region[None]

    hrms = np.clip(hrms, 0.0, 1.0)
    texture = _sinusoids(rng, yy, xx, 3, min(h, w) / 4.0, 0.01)
    pan = np.tensordot(PAN_WEIGHTS, hrms, axes=1) + texture
    pan = np.clip(pan, 0.0, 1.0)[None]
    return hrms.astype(np.float32), pan.astype(np.float32)


def scene_seeds(seed: int, count: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(count)]


def make_dataset(count: int, size: int, seed: int, ratio: int = 4) -> list[ScenePair]:
    """``count`` reduced-resolution triples with PAN ``size`` x ``size``."""
    if size % ratio:
        raise DatasetError(f"size {size} is not divisible by the scale ratio {ratio}")
    return [wald_degrade(*synth_scene(s, size, size), ratio) for s in scene_seeds(seed, count)]


def save_dataset(pairs: list[ScenePair], directory: str | Path) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    items = []
    for i, p in enumerate(pairs):
        save_tensor(d / f"pan_{i:04d}.s2bt", p.pan.astype(np.float32))
        save_tensor(d / f"lrms_{i:04d}.s2bt", p.lrms.astype(np.float32))
        if p.gt is not None:
            save_tensor(d / f"gt_{i:04d}.s2bt", p.gt.astype(np.float32))
        items.append({"index": i, "has_gt": p.gt is not None, **p.meta})
    manifest = {"schema_version": SCHEMA_VERSION, "count": len(pairs), "items": items}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_dataset(directory: str | Path) -> list[ScenePair]:
    d = Path(directory)
    mpath = d / "manifest.json"
    try:
        manifest = json.loads(mpath.read_text())
    except FileNotFoundError as exc:
        raise DatasetError(f"{mpath}: missing dataset manifest") from exc
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{mpath}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    items = manifest.get("items", [])
    if manifest.get("count") != len(items):
        raise DatasetError(f"{mpath}: count {manifest.get('count')} does not match {len(items)} listed items")
    on_disk = len(list(d.glob("pan_*.s2bt")))
    if on_disk != len(items):
        raise DatasetError(f"{mpath}: manifest lists {len(items)} items but {on_disk} pan files exist")
    pairs = []
    for item in items:
        i = item["index"]
        meta = {k: v for k, v in item.items() if k not in ("index", "has_gt")}
        try:
            pan = load_tensor(d / f"pan_{i:04d}.s2bt")
            lrms = load_tensor(d / f"lrms_{i:04d}.s2bt")
            gt = load_tensor(d / f"gt_{i:04d}.s2bt") if item.get("has_gt") else None
            pairs.append(ScenePair(pan, lrms, gt, meta))
        except (ContainerError, DatasetError) as exc:
            raise DatasetError(str(exc)) from exc
    return pairs


def batch_arrays(pairs: list[ScenePair]) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    pan = np.stack([p.pan for p in pairs])
    lrms = np.stack([p.lrms for p in pairs])
    gt = np.stack([p.gt for p in pairs]) if all(p.gt is not None for p in pairs) else None
    return pan, lrms, gt
