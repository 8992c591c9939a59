"""The two-stage network, its joint loss and the named ablation variants."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from typing import NamedTuple

import numpy as np

from . import tensor as T
from .blocks import MCAB, RAB, BlockConfig
from .nn import Conv2d, Module, ModuleList
from .tensor import Tensor

DIV2K_RGB_MEAN = (114.4, 111.5, 103.0)
DEFAULT_DILATIONS = (1, 2, 3, 3, 2, 1)


@dataclass
class ModelConfig:
    scale: int = 2
    n_mcab: int = 3
    dilations: tuple[int, ...] = DEFAULT_DILATIONS
    channels: int = 64
    use_rab: bool = True
    rab_position: str = "hr"
    rab_hidden: int = 64
    w1: float = 1.0
    w2: float = 1.0
    block_style: str = "drb"
    use_csb: bool = True
    use_triplet1: bool = True
    use_triplet2: bool = True
    triplet1_hw_only: bool = False
    triplet2_hw_only: bool = False
    csb_cells: int = 2
    mlp_reduction: int = 4
    rgb_mean: tuple[float, float, float] = field(default=DIV2K_RGB_MEAN)

    def __post_init__(self):
        self.dilations = tuple(int(s) for s in self.dilations)
        self.rgb_mean = tuple(float(v) for v in self.rgb_mean)
        if self.scale not in (2, 3, 4):
            raise ValueError(f"unsupported scale {self.scale}")
        if self.n_mcab < 1:
            raise ValueError("n_mcab must be >= 1")
        if not self.dilations or min(self.dilations) < 1:
            raise ValueError("dilation schedule must be non-empty and positive")
        if self.w1 < 0 or self.w2 < 0:
            raise ValueError("loss weights must be non-negative")
        if self.rab_position not in ("hr", "pre-upsample"):
            raise ValueError(f"unknown rab_position {self.rab_position!r}")
        if len(self.rgb_mean) != 3:
            raise ValueError("rgb_mean needs three values")
        self.block_config()

    @property
    def n_drb(self) -> int:
        return len(self.dilations)

    def block_config(self) -> BlockConfig:
        return BlockConfig(
            channels=self.channels,
            csb_cells=self.csb_cells,
            mlp_reduction=self.mlp_reduction,
            block_style=self.block_style,
            use_csb=self.use_csb,
            use_triplet1=self.use_triplet1,
            use_triplet2=self.use_triplet2,
            triplet1_hw_only=self.triplet1_hw_only,
            triplet2_hw_only=self.triplet2_hw_only,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dilations"] = list(self.dilations)
        d["rgb_mean"] = list(self.rgb_mean)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


class ForwardOutput(NamedTuple):
    sr1: Tensor
    sr2: Tensor


class Upsampler(Module):
    """3x3 conv to C*r^2 channels then pixel shuffle; x4 is two x2 stages."""

    def __init__(self, channels: int, scale: int, rng=None):
        super().__init__()
        factors = [2, 2] if scale == 4 else [scale]
        self.factors = factors
        self.stages = ModuleList(Conv2d(channels, channels * r * r, 3, rng=rng) for r in factors)

    def forward(self, x: Tensor) -> Tensor:
        for conv, r in zip(self.stages, self.factors):
            x = T.pixel_shuffle(conv(x), r)
        return x

    def trace(self, shape, tr, name=""):
        for i, (conv, r) in enumerate(zip(self.stages, self.factors)):
            n, c, h, w = conv.trace(shape, tr, f"{name}.stages.{i}")
            shape = (n, c // (r * r), h * r, w * r)
        return shape


class TSAN(Module):
    """LR stage: shallow 1x1 conv, a chain of MCABs, 1x1 fusion of all MCAB
    outputs, global skip from the shallow features, sub-pixel upsampling and a
    1x1 projection to RGB (coarse output). HR stage: the refinement block.

    Inputs and outputs live in mean-subtracted 0-255 space.
    """

    def __init__(self, cfg: ModelConfig | None = None, seed: int = 0):
        super().__init__()
        cfg = cfg or ModelConfig()
        rng = np.random.default_rng(seed)
        c = cfg.channels
        self.cfg = cfg
        bcfg = cfg.block_config()
        self.shallow = Conv2d(3, c, 1, activation="relu", rng=rng)
        self.mcabs = ModuleList(MCAB(bcfg, cfg.dilations, rng=rng) for _ in range(cfg.n_mcab))
        self.fusion = Conv2d(cfg.n_mcab * c, c, 1, rng=rng)
        if cfg.use_rab and cfg.rab_position == "pre-upsample":
            self.rab = RAB(c, cfg.rab_hidden, rng=rng)
        self.upsample = Upsampler(c, cfg.scale, rng=rng)
        self.tail = Conv2d(c, 3, 1, rng=rng)
        if cfg.use_rab and cfg.rab_position == "hr":
            self.rab = RAB(3, cfg.rab_hidden, rng=rng)
        self.assign_names()

    @property
    def refines_in_hr(self) -> bool:
        return self.cfg.use_rab and self.cfg.rab_position == "hr"

    def forward(self, lr: Tensor) -> ForwardOutput:
        if lr.data.ndim != 4 or lr.shape[1] != 3 or min(lr.shape) < 1:
            raise T.ShapeError(f"expected (N, 3, H, W) input, got {lr.shape}")
        fs = self.shallow(lr)
        feats, f = [], fs
        for mcab in self.mcabs:
            f = mcab(f)
            feats.append(f)
        z = self.fusion(T.concat(feats)) + fs
        if self.cfg.use_rab and self.cfg.rab_position == "pre-upsample":
            z = self.rab(z)
        sr1 = self.tail(self.upsample(z))
        sr2 = self.rab(sr1) if self.refines_in_hr else sr1
        return ForwardOutput(sr1, sr2)

    def trace(self, shape, tr, name=""):
        tr.stage = "lr"
        fs = self.shallow.trace(shape, tr, "shallow")
        n, c, h, w = fs
        for i, mcab in enumerate(self.mcabs):
            mcab.trace(fs, tr, f"mcabs.{i}")
        self.fusion.trace((n, len(self.mcabs) * c, h, w), tr, "fusion")
        tr.elementwise("global_skip", "add", fs)
        if self.cfg.use_rab and self.cfg.rab_position == "pre-upsample":
            self.rab.trace(fs, tr, "rab")
        up = self.upsample.trace(fs, tr, "upsample")
        out = self.tail.trace(up, tr, "tail")
        if self.refines_in_hr:
            tr.stage = "hr"
            self.rab.trace(out, tr, "rab")
            tr.stage = "lr"
        return out


def joint_loss_terms(out: ForwardOutput, gt: Tensor, w1: float = 1.0, w2: float = 1.0):
    """Return (w1 * MAE(sr1, gt) + w2 * MAE(sr2, gt), MAE(sr1, gt), MAE(sr2, gt))."""
    l1 = T.mae_loss(out.sr1, gt)
    l2 = T.mae_loss(out.sr2, gt)
    return T.add(T.scale(l1, w1), T.scale(l2, w2)), l1, l2


def joint_loss(out: ForwardOutput, gt: Tensor, w1: float = 1.0, w2: float = 1.0) -> Tensor:
    return joint_loss_terms(out, gt, w1, w2)[0]


_ONES = (1,) * len(DEFAULT_DILATIONS)

VARIANTS: dict[str, dict] = {
    "default": {},
    "tsan-l": {"n_mcab": 13},
    "cascaded": {"block_style": "cascaded", "dilations": _ONES},
    "parallel": {"block_style": "parallel", "dilations": _ONES},
    "drb-s1": {"dilations": _ONES},
    "no-csb": {"use_csb": False},
    "no-t1": {"use_triplet1": False},
    "t1-hw": {"triplet1_hw_only": True},
    "no-t2": {"use_triplet2": False},
    "t2-hw": {"triplet2_hw_only": True},
    "mcab-1": {"n_mcab": 1},
    "mcab-2": {"n_mcab": 2},
    "mcab-3": {"n_mcab": 3},
    "mcab-4": {"n_mcab": 4},
    "no-rab": {"use_rab": False},
    "rab-pre-upsample": {"rab_position": "pre-upsample"},
    "w1-zero": {"w1": 0.0, "w2": 1.0},
    "micro": {"n_mcab": 1, "dilations": (1, 2)},
}


def build_variant(name: str, scale: int = 2, **overrides) -> ModelConfig:
    """Config for a named ablation; ``overrides`` are applied last."""
    if name not in VARIANTS:
        raise ValueError(f"unknown variant {name!r}; choose from {', '.join(VARIANTS)}")
    return replace(ModelConfig(scale=scale), **{**VARIANTS[name], **overrides})
