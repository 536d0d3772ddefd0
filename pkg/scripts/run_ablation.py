"""Train the full model and both ablations on synthetic scenes and print a metric table.

    python scripts/run_ablation.py --steps 300 --seeds 0 1 2
"""

import argparse
import json
import time

import torch.nn.functional as F
import torch
import numpy as np

from s2bnet import metrics
from s2bnet.data import make_dataset
from s2bnet.network import S2BNetConfig, build
from s2bnet.trainer import TrainConfig, dataset_l1, evaluate, train

VARIANTS = {
    "ours": S2BNetConfig(),
    "I (no GSFA)": S2BNetConfig(use_gsfa=False),
    "II (no SRM)": S2BNetConfig(use_srm=False),
}


def bicubic_psnr(pairs) -> float:
    vals = []
    for p in pairs:
        up = F.interpolate(torch.from_numpy(p.lrms[None]), scale_factor=p.scale_ratio, mode="bicubic", align_corners=False)
        vals.append(metrics.psnr(p.gt, up.clamp(0, 1)[0].numpy()))
    return float(np.mean(vals))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=300)
    ap.add_argument("--lr", type=float, default=3e-3)
    ap.add_argument("--train-count", type=int, default=16)
    ap.add_argument("--test-count", type=int, default=8)
    ap.add_argument("--size", type=int, default=32)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--json", help="optional path for the raw results")
    args = ap.parse_args()

    train_set = make_dataset(args.train_count, args.size, seed=1)
    test_set = make_dataset(args.test_count, args.size, seed=2)
    print(f"bicubic PSNR on held-out scenes: {bicubic_psnr(test_set):.2f} dB")
    results = []
    for name, cfg in VARIANTS.items():
        for seed in args.seeds:
            t0 = time.perf_counter()
            model = build(cfg, seed)
            l1_0 = dataset_l1(model, train_set)
            train(model, train_set, TrainConfig(lr0=args.lr, batch=4, max_steps=args.steps, seed=seed))
            row = {"variant": name, "seed": seed, "l1_ratio": dataset_l1(model, train_set) / l1_0,
                   **evaluate(model, test_set).values, "seconds": time.perf_counter() - t0}
            results.append(row)
            print(f"{name:12s} seed {seed}  L1 ratio {row['l1_ratio']:.3f}  PSNR {row['psnr']:.2f}  "
                  f"SSIM {row['ssim']:.3f}  SAM {row['sam']:.3f}  QNR {row['qnr']:.3f}  ({row['seconds']:.0f}s)")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2)


if __name__ == "__main__":
    main()
