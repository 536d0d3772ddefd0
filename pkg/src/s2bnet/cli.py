"""``s2bnet`` command line: synth, train, eval, infer, bench.

Every invocation writes one run manifest (JSON). Exit status is 0 only when
the command succeeded and its manifest was written; failures print
``error: ...`` to stderr, record the error in the manifest where the output
location is known, and exit with status 1.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .container import ContainerError, load_tensor, save_tensor
from .data import DatasetError, load_dataset, make_dataset, save_dataset
from .network import S2BNetConfig, build
from .tensor import ShapeError
from .trainer import TrainConfig, load_checkpoint, predict, train

MANIFEST_SCHEMA = 1
PREVIEW_BANDS = (2, 1, 0)  # RGB <- bands 3, 2, 1


class CliError(Exception):
    pass


# ------------------------------------------------------------------ manifest


@dataclasses.dataclass
class RunManifest:
    command: str
    config: dict
    seed: int | None = None
    artifacts: list[str] = dataclasses.field(default_factory=list)
    tool_version: str = __version__
    wall_time_s: float = 0.0
    status: str = "ok"
    error: str | None = None

    def write(self, path: Path) -> None:
        doc = {"schema_version": MANIFEST_SCHEMA, **dataclasses.asdict(self)}
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# ------------------------------------------------------------------- configs


def _check_types(section: str, cls, values: dict) -> None:
    fields = {f.name: f for f in dataclasses.fields(cls)}
    for key, value in values.items():
        if key not in fields:
            raise CliError(f"config field {section}.{key}: unknown field")
        f = fields[key]
        default = f.default if f.default is not dataclasses.MISSING else None
        if isinstance(default, bool):
            ok = isinstance(value, bool)
        elif isinstance(default, int):
            ok = isinstance(value, int) and not isinstance(value, bool)
        elif isinstance(default, float):
            ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        else:
            ok = True
        if not ok:
            raise CliError(f"config field {section}.{key}: expected {type(default).__name__}, got {type(value).__name__}")


def load_run_config(path: Path) -> tuple[S2BNetConfig, TrainConfig, int]:
    """Parse a train config file: ``{"model": {...}, "train": {...}, "seed": int}``."""
    try:
        text = path.read_text()
    except OSError as exc:
        raise CliError(f"{path}: cannot read config ({exc.strerror})") from exc
    try:
        doc = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise CliError(f"{path}: top level must be a JSON object")
    unknown = set(doc) - {"model", "train", "seed"}
    if unknown:
        raise CliError(f"{path}: unknown config field(s): {', '.join(sorted(unknown))}")
    model_d, train_d = doc.get("model", {}), doc.get("train", {})
    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise CliError(f"{path}: config field seed: expected int")
    for name, section in (("model", model_d), ("train", train_d)):
        if not isinstance(section, dict):
            raise CliError(f"{path}: config field {name}: expected an object")
    _check_types("model", S2BNetConfig, {k: v for k, v in model_d.items() if k != "gabor"})
    _check_types("train", TrainConfig, train_d)
    try:
        return S2BNetConfig.from_dict(model_d), TrainConfig.from_dict(train_d), seed
    except (TypeError, ValueError) as exc:
        raise CliError(f"{path}: {exc}") from exc


# ------------------------------------------------------------------ commands


def cmd_synth(args, man: RunManifest) -> None:
    if args.size % 4:
        raise CliError(f"--size {args.size}: PAN size must be divisible by the scale ratio 4 (LR-MS is size/4)")
    if args.count < 1:
        raise CliError("--count must be >= 1")
    pairs = make_dataset(args.count, args.size, args.seed)
    save_dataset(pairs, args.out)
    man.seed = args.seed
    man.artifacts = [str(Path(args.out) / "manifest.json")]


def cmd_train(args, man: RunManifest) -> None:
    model_cfg, train_cfg, seed = load_run_config(Path(args.config))
    if args.no_gsfa:
        model_cfg = dataclasses.replace(model_cfg, use_gsfa=False)
    if args.no_srm:
        model_cfg = dataclasses.replace(model_cfg, use_srm=False)
    pairs = load_dataset(args.data)
    model = build(model_cfg, seed)
    man.seed = seed
    man.config.update(model=model_cfg.to_dict(), train=dataclasses.asdict(train_cfg), ablation=model_cfg.ablation)
    res = train(model, pairs, train_cfg, run_dir=args.out, model_seed=seed)
    out = Path(args.out)
    man.artifacts = [str(out / "config.json"), str(out / "loss.jsonl"), str(res.checkpoint), str(out / "final_metrics.json")]
    if res.skipped:
        man.config["skipped_steps"] = res.skipped


def _per_image_rows(fused: np.ndarray, pairs) -> tuple[list[dict], list[str]]:
    from . import metrics

    rows, flags = [], []
    for img, p in zip(fused, pairs):
        row, f = metrics.evaluate_pair(img, p.lrms, p.pan, p.gt, p.scale_ratio)
        rows.append(row)
        flags += f
    return rows, flags


def cmd_eval(args, man: RunManifest) -> None:
    from . import metrics

    pairs = load_dataset(args.data)
    if args.ckpt:
        model, manifest, _ = _load_ckpt(args.ckpt)
        fused = np.clip(predict(model, pairs), 0.0, 1.0)
        man.seed = manifest.get("seed")
    else:
        fused = np.asarray(load_tensor(args.pred), dtype=np.float64)
        if fused.ndim == 3:
            fused = fused[None]
        if fused.shape[0] != len(pairs):
            raise CliError(f"{args.pred}: {fused.shape[0]} predictions for {len(pairs)} samples")
    rows, flags = _per_image_rows(fused, pairs)
    rep = metrics.report(rows, flags)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(rep.to_json() + "\n")
    man.artifacts = [str(out)]
    if args.csv:
        keys = [k for k in metrics.REDUCED + metrics.FULL if k in rows[0]]
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index"] + keys)
            for i, r in enumerate(rows):
                w.writerow([i] + [repr(float(r[k])) for k in keys])
        man.artifacts.append(str(args.csv))


def _load_ckpt(path: str):
    try:
        return load_checkpoint(path)
    except FileNotFoundError as exc:
        raise CliError(f"missing checkpoint: {exc}") from exc


def write_ppm(path: Path, img: np.ndarray) -> None:
    """8-bit binary PPM from a (3, H, W) array in [0, 1]."""
    rgb = np.clip(np.rint(np.clip(img, 0.0, 1.0) * 255.0), 0, 255).astype(np.uint8)
    h, w = rgb.shape[1:]
    path.write_bytes(f"P6\n{w} {h}\n255\n".encode() + np.ascontiguousarray(rgb.transpose(1, 2, 0)).tobytes())


def _as_chw(arr: np.ndarray, bands: int, what: str) -> np.ndarray:
    if arr.ndim == 2 and bands == 1:
        arr = arr[None]
    if arr.ndim == 4 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim != 3 or arr.shape[0] != bands:
        raise CliError(f"{what}: expected ({bands}, H, W), got {arr.shape}")
    return arr.astype(np.float32)


def cmd_infer(args, man: RunManifest) -> None:
    model, manifest, _ = _load_ckpt(args.ckpt)
    pan = _as_chw(load_tensor(args.pan), 1, args.pan)
    lrms = _as_chw(load_tensor(args.lrms), 4, args.lrms)
    with torch.no_grad():
        fused = model(torch.from_numpy(pan[None]), torch.from_numpy(lrms[None]))[0].numpy()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    tensor_path, preview_path = out.with_suffix(".s2bt"), out.with_suffix(".ppm")
    save_tensor(tensor_path, fused.astype(np.float32))
    write_ppm(preview_path, fused[list(PREVIEW_BANDS)])
    man.seed = manifest.get("seed")
    man.artifacts = [str(tensor_path), str(preview_path)]


def _bench_kernels(repeats: int) -> dict:
    from .bitpack import binary_conv2d_packed, ternary_conv2d_reference

    rng = np.random.default_rng(0)
    x = rng.choice(np.array([-1, 1], np.int8), size=(1, 16, 16, 16))
    w = rng.choice(np.array([-1, 1], np.int8), size=(16, 16, 3, 3))
    t0 = time.perf_counter()
    ref = ternary_conv2d_reference(x, w, 1)
    t_ref = time.perf_counter() - t0
    t_packed = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        got = binary_conv2d_packed(x, w, 1)
        t_packed = min(t_packed, time.perf_counter() - t0)
    if not np.array_equal(got, ref):
        raise CliError("packed kernel disagrees with the reference oracle")
    return {"case": "N1 C16 H16 W16 -> C16, K3", "oracle_s": t_ref, "packed_s": t_packed,
            "speedup": t_ref / t_packed, "bit_exact": True}


def cmd_bench(args, man: RunManifest) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.account:
        from .efficiency import account

        model_cfg = load_run_config(Path(args.config))[0] if args.config else S2BNetConfig()
        ledger = account(build(model_cfg, 0), (args.size, args.size))
        print(ledger.table())
        path = out / "ledger.json"
        path.write_text(ledger.to_json() + "\n")
        print(json.dumps(ledger.totals(), indent=2))
        man.config.update(size=args.size, model=model_cfg.to_dict())
    else:
        res = _bench_kernels(args.repeats)
        print(f"{'kernel':<10} {'seconds':>12}")
        print(f"{'oracle':<10} {res['oracle_s']:>12.6f}")
        print(f"{'packed':<10} {res['packed_s']:>12.6f}")
        print(f"speedup {res['speedup']:.1f}x  bit-exact {res['bit_exact']}")
        path = out / "kernels.json"
        path.write_text(json.dumps({"schema_version": MANIFEST_SCHEMA, **res}, indent=2) + "\n")
    man.artifacts = [str(path)]


# ---------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="s2bnet", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic reduced-resolution dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--size", type=int, required=True, help="PAN height/width, divisible by 4")
    s.add_argument("--seed", type=int, default=0)

    t = sub.add_parser("train", help="train a model; writes a run directory")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config", required=True, help='JSON: {"model": {...}, "train": {...}, "seed": 0}')
    t.add_argument("--no-gsfa", action="store_true", help="standard init instead of Gabor banks")
    t.add_argument("--no-srm", action="store_true", help="fixed affine instead of spectral redistribution")

    e = sub.add_parser("eval", help="metric report for a checkpoint or stored predictions")
    src = e.add_mutually_exclusive_group(required=True)
    src.add_argument("--ckpt")
    src.add_argument("--pred", help=".s2bt tensor of predictions (N, 4, H, W)")
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--csv", help="optional per-image CSV")

    i = sub.add_parser("infer", help="fuse one PAN / LR-MS pair")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--pan", required=True)
    i.add_argument("--lrms", required=True)
    i.add_argument("--out", required=True, help="output stem; writes .s2bt and .ppm")

    b = sub.add_parser("bench", help="cost ledger or kernel throughput")
    mode = b.add_mutually_exclusive_group(required=True)
    mode.add_argument("--account", action="store_true")
    mode.add_argument("--kernels", action="store_true")
    b.add_argument("--size", type=int, default=128)
    b.add_argument("--config")
    b.add_argument("--repeats", type=int, default=5)
    b.add_argument("--out", default=".", help="directory for results and the run manifest")
    return p


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "infer": cmd_infer, "bench": cmd_bench}


def _manifest_path(args) -> Path:
    if args.command in ("synth", "train", "bench"):
        return Path(args.out) / f"run_manifest_{args.command}.json"
    out = Path(args.out)
    return out.with_name(out.name + ".manifest.json")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    threads = os.environ.get("S2B_THREADS")
    if threads:
        try:
            torch.set_num_threads(max(1, int(threads)))
        except ValueError:
            print(f"error: S2B_THREADS={threads!r} is not an integer", file=sys.stderr)
            return 1
    echo = {k: v for k, v in vars(args).items() if k != "command"}
    man = RunManifest(command=args.command, config={"args": echo})
    start = time.perf_counter()
    status = 0
    try:
        COMMANDS[args.command](args, man)
    except (CliError, DatasetError, ContainerError, ShapeError, ValueError, OSError) as exc:
        man.status, man.error = "error", str(exc)
        print(f"error: {exc}", file=sys.stderr)
        status = 1
    man.wall_time_s = time.perf_counter() - start
    try:
        man.write(_manifest_path(args))
    except OSError as exc:
        print(f"error: could not write run manifest: {exc}", file=sys.stderr)
        return 1
    return status


if __name__ == "__main__":
    sys.exit(main())
