"""Static model analysis: closed-form parameter counts, FLOPs and receptive fields.

The symbolic counts here are written from the layer recipe alone and never
touch a constructed model, so they act as an independent check on
:func:`tsan.nn.count_params`.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

from .blocks import BLOCK_STYLES, receptive_field
from .model import TSAN, ModelConfig
from .nn import CostRow, cost_trace, count_params


def conv_params(cin: int, cout: int, k: int = 1) -> int:
    return cin * cout * k * k + cout


def dense_params(cin: int, cout: int) -> int:
    return cin * cout + cout


def symbolic_drb(c: int) -> int:
    return conv_params(c, c, 1) + 4 * conv_params(c, c, 3) + conv_params(4 * c, c, 1)


def symbolic_mcab(cfg: ModelConfig) -> dict[str, int]:
    c, e = cfg.channels, cfg.n_drb
    rows = {f"drb.{k}": symbolic_drb(c) for k in range(e)}
    rows["compress"] = sum(conv_params((k + 1) * c, c, 1) for k in range(1, e))
    rows["fuse"] = conv_params((e + 1) * c, c, 1)
    if cfg.use_csb:
        cc = cfg.csb_cells**2 * c
        rows["csb"] = conv_params(cc, cc, 3)
    if cfg.use_triplet1:
        hidden = c // cfg.mlp_reduction
        rows["triplet1"] = dense_params(c, hidden) + dense_params(hidden, c)
        if not cfg.triplet1_hw_only:
            rows["triplet1"] += 2 * (3 + 1)
    if cfg.use_triplet2:
        rows["triplet2"] = (1 if cfg.triplet2_hw_only else 3) * conv_params(1, 1, 1)
    rows["gate"] = conv_params(c, c, 3)
    return rows


def symbolic_param_rows(cfg: ModelConfig) -> list[tuple[str, int]]:
    """Per-block parameter counts in forward order."""
    c = cfg.channels
    rows = [("shallow", conv_params(3, c, 1))]
    mcab = sum(symbolic_mcab(cfg).values())
    rows += [(f"mcabs.{i}", mcab) for i in range(cfg.n_mcab)]
    rows.append(("fusion", conv_params(cfg.n_mcab * c, c, 1)))
    rab_ch = c if cfg.rab_position == "pre-upsample" else 3
    if cfg.use_rab and cfg.rab_position == "pre-upsample":
        rows.append(("rab", conv_params(rab_ch, cfg.rab_hidden, 3) + conv_params(cfg.rab_hidden, rab_ch, 1)))
    factors = [2, 2] if cfg.scale == 4 else [cfg.scale]
    rows.append(("upsample", sum(conv_params(c, c * r * r, 3) for r in factors)))
    rows.append(("tail", conv_params(c, 3, 1)))
    if cfg.use_rab and cfg.rab_position == "hr":
        rows.append(("rab", conv_params(rab_ch, cfg.rab_hidden, 3) + conv_params(cfg.rab_hidden, rab_ch, 1)))
    return rows


def symbolic_param_count(cfg: ModelConfig) -> int:
    return sum(n for _, n in symbolic_param_rows(cfg))


def chain_receptive_field(style: str, dilations) -> int:
    """Receptive-field extent through a chain of blocks along the deepest path."""
    return 1 + sum(receptive_field(style, s) - 1 for s in dilations)


@dataclass
class AnalysisReport:
    cfg: ModelConfig
    input_shape: tuple[int, int, int, int]
    params: int
    symbolic_params: int
    block_params: list[tuple[str, int]]
    layers: list[CostRow]
    flops: dict[str, int] = field(default_factory=dict)
    receptive_fields: dict[str, dict] = field(default_factory=dict)

    @property
    def params_match(self) -> bool:
        return self.params == self.symbolic_params

    def to_text(self) -> str:
        out = io.StringIO()
        n, c, h, w = self.input_shape
        out.write(f"input {n}x{c}x{h}x{w}, scale x{self.cfg.scale}\n")
        out.write(f"parameters: {self.params:,} (symbolic {self.symbolic_params:,}, "
                  f"{'match' if self.params_match else 'MISMATCH'})\n")
        for name, p in self.block_params:
            out.write(f"  {name:<24}{p:>12,}\n")
        g = {k: v / 1e9 for k, v in self.flops.items()}
        out.write("FLOPs (G), 2 ops per multiply-accumulate:\n")
        out.write(f"  with HR stage {g['2mac']:.4f}   LR stage only {g['2mac_lr']:.4f}\n")
        out.write("FLOPs (G), 1 op per multiply-accumulate:\n")
        out.write(f"  with HR stage {g['mac']:.4f}   LR stage only {g['mac_lr']:.4f}\n")
        out.write("receptive field (taps):\n")
        for style, rf in self.receptive_fields.items():
            per = ", ".join(f"s={s}: {v}" for s, v in rf["per_block"].items())
            out.write(f"  {style:<10} per block [{per}]  chain {rf['chain']}\n")
        return out.getvalue()

    def layers_csv(self) -> str:
        out = io.StringIO()
        out.write("name,kind,stage,out_shape,params,macs,other,flops_2mac\n")
        for r in self.layers:
            shape = "x".join(map(str, r.out_shape))
            out.write(f"{r.name},{r.kind},{r.stage},{shape},{r.params},{r.macs},{r.other},{r.flops()}\n")
        return out.getvalue()


def analyze(cfg: ModelConfig, input_shape=(1, 3, 48, 48)) -> AnalysisReport:
    model = TSAN(cfg)
    tr = cost_trace(model, tuple(input_shape))
    flops = {
        "2mac": tr.total("2mac", True),
        "2mac_lr": tr.total("2mac", False),
        "mac": tr.total("mac", True),
        "mac_lr": tr.total("mac", False),
    }
    rfs = {}
    for style in BLOCK_STYLES:
        per = {s: receptive_field(style, s) for s in sorted(set(cfg.dilations))}
        rfs[style] = {"per_block": per, "chain": chain_receptive_field(style, cfg.dilations)}
    return AnalysisReport(
        cfg, tuple(input_shape), count_params(model), symbolic_param_count(cfg),
        symbolic_param_rows(cfg), tr.rows, flops, rfs,
    )
