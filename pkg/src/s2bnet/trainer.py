"""L1 training loop, Adam, step-decay schedule and checkpoints.

Run directory layout::

    config.json
    loss.jsonl                    # one {"step", "epoch", "lr", "loss"} per step
    checkpoints/step_%07d/        # manifest.json + params/ + optim/
    final_metrics.json
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from . import metrics
from .binarize import reproject_alpha
from .container import load_tensor, save_tensor
from .data import ScenePair, batch_arrays
from .network import S2BNet, S2BNetConfig, build

log = logging.getLogger(__name__)

CHECKPOINT_SCHEMA = 1


@dataclass
class TrainConfig:
    lr0: float = 1.5e-3
    decay: float = 0.85
    decay_every: int = 100  # epochs
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch: int = 16
    epochs: int = 1500
    max_steps: int | None = None
    seed: int = 0
    checkpoint_every: int = 0  # steps; 0 -> final checkpoint only

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if not 0 < self.decay <= 1:
            raise ValueError("decay must lie in (0, 1]")
        if self.batch < 1 or self.epochs < 1 or self.decay_every < 1:
            raise ValueError("batch, epochs and decay_every must be >= 1")

    def lr_at(self, epoch: int) -> float:
        return self.lr0 * self.decay ** (epoch // self.decay_every)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown train config field(s): {', '.join(sorted(unknown))}")
        return cls(**d)


def l1_loss(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    if pred.shape != gt.shape:
        raise ValueError(f"l1_loss: shapes differ {tuple(pred.shape)} vs {tuple(gt.shape)}")
    return (pred - gt).abs().mean()


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, torch.Tensor] = field(default_factory=dict)
    v: dict[str, torch.Tensor] = field(default_factory=dict)

    @classmethod
    def for_model(cls, model: nn.Module) -> "AdamState":
        params = dict(model.named_parameters())
        return cls(0, {n: torch.zeros_like(p) for n, p in params.items()}, {n: torch.zeros_like(p) for n, p in params.items()})


def adam_step(
    params: dict[str, torch.Tensor],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> bool:
    """One bias-corrected Adam update from ``p.grad``.

    Returns False (and leaves params and state untouched) when any gradient
    is non-finite.
    """
    grads = {n: (p.grad if p.grad is not None else torch.zeros_like(p)) for n, p in params.items()}
    if not all(torch.isfinite(g).all() for g in grads.values()):
        return False
    state.step += 1
    c1 = 1.0 - beta1**state.step
    c2 = 1.0 - beta2**state.step
    with torch.no_grad():
        for n, p in params.items():
            g = grads[n]
            m, v = state.m[n], state.v[n]
            m.mul_(beta1).add_(g, alpha=1.0 - beta1)
            v.mul_(beta2).addcmul_(g, g, value=1.0 - beta2)
            p.sub_(lr * (m / c1) / ((v / c2).sqrt() + eps))
    return True


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(directory: str | Path, model: S2BNet, seed: int, step: int = 0,
                    state: AdamState | None = None, train_cfg: TrainConfig | None = None) -> Path:
    d = Path(directory)
    (d / "params").mkdir(parents=True, exist_ok=True)
    names = []
    for n, p in model.named_parameters():
        save_tensor(d / "params" / f"{n}.s2bt", p.detach().cpu().numpy().astype(np.float32))
        names.append(n)
    if state is not None:
        (d / "optim").mkdir(exist_ok=True)
        for n in names:
            save_tensor(d / "optim" / f"m.{n}.s2bt", state.m[n].numpy())
            save_tensor(d / "optim" / f"v.{n}.s2bt", state.v[n].numpy())
    manifest = {
        "schema_version": CHECKPOINT_SCHEMA,
        "config": model.cfg.to_dict(),
        "train_config": asdict(train_cfg) if train_cfg else None,
        "seed": seed,
        "step": step,
        "adam_step": state.step if state else None,
        "params": names,
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return d


def load_checkpoint(directory: str | Path) -> tuple[S2BNet, dict, AdamState | None]:
    d = Path(directory)
    mpath = d / "manifest.json"
    if not mpath.exists():
        raise FileNotFoundError(f"{d}: no checkpoint manifest")
    manifest = json.loads(mpath.read_text())
    model = build(S2BNetConfig.from_dict(manifest["config"]), manifest["seed"])
    params = dict(model.named_parameters())
    if sorted(params) != sorted(manifest["params"]):
        raise ValueError(f"{d}: parameter set does not match the configured model")
    with torch.no_grad():
        for n, p in params.items():
            arr = load_tensor(d / "params" / f"{n}.s2bt")
            if tuple(arr.shape) != tuple(p.shape):
                raise ValueError(f"{d}: {n} has shape {arr.shape}, expected {tuple(p.shape)}")
            p.copy_(torch.from_numpy(arr))
    state = None
    if manifest.get("adam_step") is not None:
        state = AdamState(
            manifest["adam_step"],
            {n: torch.from_numpy(load_tensor(d / "optim" / f"m.{n}.s2bt").copy()) for n in params},
            {n: torch.from_numpy(load_tensor(d / "optim" / f"v.{n}.s2bt").copy()) for n in params},
        )
    return model, manifest, state


# --------------------------------------------------------------------------
# training


def _to_torch(arr: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float32))


def predict(model: S2BNet, pairs: list[ScenePair], batch: int = 8) -> np.ndarray:
    out = []
    with torch.no_grad():
        for i in range(0, len(pairs), batch):
            pan, lrms, _ = batch_arrays(pairs[i:i + batch])
            out.append(model(_to_torch(pan), _to_torch(lrms)).numpy())
    return np.concatenate(out)


def dataset_l1(model: S2BNet, pairs: list[ScenePair]) -> float:
    pred = predict(model, pairs)
    gt = np.stack([p.gt for p in pairs])
    return float(np.mean(np.abs(pred.astype(np.float64) - gt)))


def evaluate(model: S2BNet, pairs: list[ScenePair]) -> metrics.MetricReport:
    pred = predict(model, pairs)
    rows, flags = [], []
    for fused, p in zip(pred, pairs):
        row, f = metrics.evaluate_pair(np.clip(fused, 0, 1), p.lrms, p.pan, p.gt, p.scale_ratio)
        rows.append(row)
        flags += f
    return metrics.report(rows, flags)


@dataclass
class TrainResult:
    losses: list[float]
    steps: int
    skipped: int
    checkpoint: Path | None
    final_metrics: dict | None


def _check_dataset(model: S2BNet, pairs: list[ScenePair]) -> None:
    if not pairs:
        raise ValueError("train: dataset is empty")
    if any(p.gt is None for p in pairs):
        raise ValueError("train: every training pair needs ground truth")
    shapes = {(p.pan.shape, p.lrms.shape, p.gt.shape) for p in pairs}
    if len(shapes) != 1:
        raise ValueError(f"train: mixed sample shapes {sorted(shapes)}")
    p = pairs[0]
    if p.gt.shape[0] != 4 or p.scale_ratio != model.cfg.scale_ratio:
        raise ValueError("train: dataset bands / scale ratio do not match the model")
    model.check_inputs(_to_torch(p.pan[None]), _to_torch(p.lrms[None]))


def epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def train(
    model: S2BNet,
    pairs: list[ScenePair],
    cfg: TrainConfig,
    run_dir: str | Path | None = None,
    state: AdamState | None = None,
    start_step: int = 0,
    eval_pairs: list[ScenePair] | None = None,
    model_seed: int | None = None,
) -> TrainResult:
    """Train in place. Pass ``state``/``start_step`` from a checkpoint to resume."""
    _check_dataset(model, pairs)
    n = len(pairs)
    steps_per_epoch = math.ceil(n / cfg.batch)
    total = cfg.max_steps if cfg.max_steps is not None else cfg.epochs * steps_per_epoch
    state = state or AdamState.for_model(model)
    params = dict(model.named_parameters())
    run = Path(run_dir) if run_dir is not None else None
    loss_log = None
    if run is not None:
        run.mkdir(parents=True, exist_ok=True)
        if not start_step:
            cfg_doc = {"schema_version": CHECKPOINT_SCHEMA, "model": model.cfg.to_dict(), "train": asdict(cfg),
                       "model_seed": model_seed}
            (run / "config.json").write_text(json.dumps(cfg_doc, indent=2) + "\n")
        loss_log = (run / "loss.jsonl").open("a" if start_step else "w")
    seed = cfg.seed if model_seed is None else model_seed

    losses, skipped, ckpt = [], 0, None
    model.train()
    try:
        for step in range(start_step, total):
            epoch, slot = divmod(step, steps_per_epoch)
            idx = epoch_order(cfg.seed, epoch, n)[slot * cfg.batch:(slot + 1) * cfg.batch]
            pan, lrms, gt = batch_arrays([pairs[i] for i in idx])
            lr = cfg.lr_at(epoch)

            for p in params.values():
                p.grad = None
            loss = l1_loss(model(_to_torch(pan), _to_torch(lrms)), _to_torch(gt))
            loss.backward()
            # abs() backpropagates a NaN residual as a zero gradient, so check the loss too
            applied = bool(torch.isfinite(loss)) and adam_step(params, state, lr, cfg.beta1, cfg.beta2, cfg.eps)
            if applied:
                reproject_alpha(model)
            else:
                skipped += 1
                log.warning("step %d: non-finite loss or gradient, batch skipped", step)
            value = float(loss.detach())
            losses.append(value)
            if loss_log is not None:
                rec = {"step": step, "epoch": epoch, "lr": lr, "loss": value}
                if not applied:
                    rec["skipped"] = True
                loss_log.write(json.dumps(rec) + "\n")
            done = step + 1
            if run is not None and cfg.checkpoint_every and done % cfg.checkpoint_every == 0 and done < total:
                save_checkpoint(run / "checkpoints" / f"step_{done:07d}", model, seed, done, state, cfg)
    finally:
        if loss_log is not None:
            loss_log.close()
    model.eval()

    final = None
    if run is not None:
        ckpt = save_checkpoint(run / "checkpoints" / f"step_{total:07d}", model, seed, total, state, cfg)
        rep = evaluate(model, eval_pairs or pairs)
        final = json.loads(rep.to_json())
        (run / "final_metrics.json").write_text(rep.to_json() + "\n")
    return TrainResult(losses, total - start_step, skipped, ckpt, final)
