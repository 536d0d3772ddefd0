"""Print parameter and FLOP totals for the default model and the all-FP counterpart.

    python scripts/cost_table.py --size 128
"""

import argparse

from s2bnet.efficiency import account
from s2bnet.network import S2BNetConfig, build


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=128)
    ap.add_argument("--rows", action="store_true", help="also print the per-layer ledger")
    args = ap.parse_args()

    model = build(S2BNetConfig())
    hw = (args.size, args.size)
    binary, full = account(model, hw), account(model, hw, binarize_parts=set())
    if args.rows:
        print(binary.table())
    for name, led in (("binarized", binary), ("full precision", full)):
        print(f"{name:15s} Params^t {led.params_total / 1e3:10.1f}K   Flops^t {led.flops_total / 1e9:8.3f}G")
    print(f"compression x{full.params_total / binary.params_total:.1f} params, "
          f"x{full.flops_total / binary.flops_total:.1f} FLOPs")


if __name__ == "__main__":
    main()
