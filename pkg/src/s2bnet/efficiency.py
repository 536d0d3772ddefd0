"""FLOP and parameter accounting with the binarization discounts.

Every row records its full-precision-equivalent cost. Rows executed with
binary arithmetic contribute ``flops / 64`` to Flops^b and ``params / 32``
to Params^b; all other rows count at face value toward Flops^f / Params^f.

FLOP convention: a multiply-accumulate is 2 operations. Elementwise costs
per output element are listed in ``ELEMENTWISE``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import torch

from .binarize import RPReLU
from .network import BasicBlock, BUp, FullPrecisionConv, LayerNorm2d, S2BNet, MS_BANDS
from .s2bconv import BinaryConv2d, S2BConv, SpectralRedistribution, StaticAffine

FLOPS_DIVISOR = 64
PARAMS_DIVISOR = 32

# flops per output element
ELEMENTWISE = {
    "layer_norm": 7,  # mean, centre, square, variance, normalise, scale, shift
    "rprelu": 3,
    "residual_add": 1,
    "relu": 1,
    "bilinear": 7,  # 4 weighted taps: 4 mul + 3 add
    "affine": 2,
    "rescale": 1,
}

_PARTS = {"encoders": "encoder", "decoders": "decoder"}


@dataclass
class LedgerRow:
    name: str
    kind: str
    part: str
    binarized: bool
    flops: float  # full-precision equivalent
    params: float  # full-precision equivalent

    @property
    def flops_f(self) -> float:
        return 0.0 if self.binarized else self.flops

    @property
    def flops_b(self) -> float:
        return self.flops / FLOPS_DIVISOR if self.binarized else 0.0

    @property
    def params_f(self) -> float:
        return 0.0 if self.binarized else self.params

    @property
    def params_b(self) -> float:
        return self.params / PARAMS_DIVISOR if self.binarized else 0.0


@dataclass
class CostLedger:
    rows: list[LedgerRow] = field(default_factory=list)

    @property
    def flops_f(self) -> float:
        return sum(r.flops_f for r in self.rows)

    @property
    def flops_b(self) -> float:
        return sum(r.flops_b for r in self.rows)

    @property
    def params_f(self) -> float:
        return sum(r.params_f for r in self.rows)

    @property
    def params_b(self) -> float:
        return sum(r.params_b for r in self.rows)

    @property
    def flops_total(self) -> float:
        return self.flops_b + self.flops_f

    @property
    def params_total(self) -> float:
        return self.params_b + self.params_f

    def totals(self) -> dict[str, float]:
        return {
            "flops_f": self.flops_f,
            "flops_b": self.flops_b,
            "flops_total": self.flops_total,
            "params_f": self.params_f,
            "params_b": self.params_b,
            "params_total": self.params_total,
        }

    def by_part(self) -> dict[str, dict[str, float]]:
        parts: dict[str, CostLedger] = {}
        for r in self.rows:
            parts.setdefault(r.part, CostLedger()).rows.append(r)
        return {p: led.totals() for p, led in parts.items()}

    def to_json(self) -> str:
        rows = [
            {**asdict(r), "flops_f": r.flops_f, "flops_b": r.flops_b, "params_f": r.params_f, "params_b": r.params_b}
            for r in self.rows
        ]
        return json.dumps({"schema_version": 1, "totals": self.totals(), "parts": self.by_part(), "rows": rows}, indent=2)

    def table(self) -> str:
        head = f"{'layer':<44} {'kind':<12} {'bin':>3} {'Flops^f':>12} {'Flops^b':>12} {'Params^f':>10} {'Params^b':>10}"
        lines = [head, "-" * len(head)]
        for r in self.rows:
            lines.append(
                f"{r.name:<44} {r.kind:<12} {'y' if r.binarized else 'n':>3} "
                f"{r.flops_f:>12.0f} {r.flops_b:>12.1f} {r.params_f:>10.0f} {r.params_b:>10.2f}"
            )
        t = self.totals()
        lines.append("-" * len(head))
        lines.append(
            f"{'total':<44} {'':<12} {'':>3} {t['flops_f']:>12.0f} {t['flops_b']:>12.1f} "
            f"{t['params_f']:>10.0f} {t['params_b']:>10.2f}"
        )
        lines.append(f"Flops^t = {t['flops_total']:.1f}   Params^t = {t['params_total']:.2f}")
        return "\n".join(lines)


def _part(name: str) -> str:
    top = name.split(".")[0]
    return _PARTS.get(top, top)


def account(model: S2BNet, pan_hw: tuple[int, int], binarize_parts: set[str] | None = None) -> CostLedger:
    """Trace one forward pass at batch 1 and build the cost ledger.

    ``binarize_parts`` (e.g. ``{"bottleneck"}``) overrides which binary
    layers count as binarized; ``set()`` treats the whole model as full
    precision. ``None`` keeps the model as built.
    """
    rows: list[LedgerRow] = []
    hooks = []

    def is_bin(name: str) -> bool:
        return binarize_parts is None or _part(name) in binarize_parts

    def add(name, kind, flops, params, binarized=False):
        rows.append(LedgerRow(name, kind, _part(name), binarized, float(flops), float(params)))

    def hook_for(name, mod):
        def hook(m, inputs, out):
            x = inputs[0]
            if isinstance(m, (BinaryConv2d, FullPrecisionConv)):
                cout, cin, k, _ = m.weight.shape
                hw = out.shape[2] * out.shape[3]
                macs = 2 * cout * cin * k * k * hw
                if isinstance(m, BinaryConv2d):
                    add(name, "conv_b", macs, m.weight.numel(), is_bin(name))
                    add(name + ".rescale", "rescale", ELEMENTWISE["rescale"] * out.numel(), 1)  # + alpha
                else:
                    add(name, "conv_fp", macs + cout * hw, m.weight.numel() + m.bias.numel())
            elif isinstance(m, LayerNorm2d):
                add(name, "layer_norm", ELEMENTWISE["layer_norm"] * out.numel(), 2 * m.gamma.numel())
            elif isinstance(m, SpectralRedistribution):
                c = x.shape[1]
                fl = x.numel()  # global average pool
                for fc in (m.fc1, m.fc2):
                    fl += 2 * fc.in_features * fc.out_features + fc.out_features
                fl += 3 * 2 * c  # sigmoid / tanh
                fl += ELEMENTWISE["affine"] * out.numel()
                params = sum(p.numel() for p in m.parameters())
                add(name, "srm", fl, params)
            elif isinstance(m, StaticAffine):
                add(name, "affine", ELEMENTWISE["affine"] * out.numel(), 2 * m.scale.numel())
            elif isinstance(m, RPReLU):
                add(name, "rprelu", ELEMENTWISE["rprelu"] * out.numel(), 3 * m.gamma.numel())
            elif isinstance(m, S2BConv):
                add(name + ".residual", "residual_add", ELEMENTWISE["residual_add"] * out.numel(), 0)
            elif isinstance(m, BasicBlock) and m.use_relu:
                add(name + ".relu", "relu", ELEMENTWISE["relu"] * out.numel(), 0)
            elif isinstance(m, BUp):
                add(name + ".upsample", "bilinear", ELEMENTWISE["bilinear"] * x.numel() * 4, 0)
        return hook

    watched = (BinaryConv2d, FullPrecisionConv, LayerNorm2d, SpectralRedistribution, StaticAffine, RPReLU, S2BConv, BasicBlock, BUp)
    for name, mod in model.named_modules():
        if isinstance(mod, watched):
            hooks.append(mod.register_forward_hook(hook_for(name, mod)))

    h, w = pan_hw
    r = model.cfg.scale_ratio
    try:
        with torch.no_grad():
            model(torch.zeros(1, 1, h, w), torch.zeros(1, MS_BANDS, h // r, w // r))
    finally:
        for hk in hooks:
            hk.remove()
    add("head.input_upsample", "bilinear", ELEMENTWISE["bilinear"] * MS_BANDS * h * w, 0)
    add("tail.skip_add", "residual_add", model.cfg.base_channels * h * w, 0)
    if model.cfg.global_residual:
        add("tail.global_residual", "residual_add", MS_BANDS * h * w, 0)
    return CostLedger(rows)
