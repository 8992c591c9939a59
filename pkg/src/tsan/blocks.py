"""Network building blocks: dilated residual block, cutting-splicing block,
the two attention triplets, the multi-context attentive block and the
HR-space refinement block.

All blocks map (N, C, H, W) to the same shape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Conv1d, Conv2d, Dense, Module, ModuleList
from .tensor import Tensor

BLOCK_STYLES = ("drb", "cascaded", "parallel")


@dataclass
class BlockConfig:
    channels: int = 64
    csb_cells: int = 2
    mlp_reduction: int = 4
    block_style: str = "drb"
    use_csb: bool = True
    use_triplet1: bool = True
    use_triplet2: bool = True
    triplet1_hw_only: bool = False
    triplet2_hw_only: bool = False

    def __post_init__(self):
        if self.channels % self.mlp_reduction:
            raise ValueError("channels must be divisible by mlp_reduction")
        if self.csb_cells < 1:
            raise ValueError("csb_cells must be >= 1")
        if self.block_style not in BLOCK_STYLES:
            raise ValueError(f"block_style must be one of {BLOCK_STYLES}")


class DRB(Module):
    """Dilated residual block and its cascaded / parallel ablation variants.

    All three styles own one 1x1 reduction, four 3x3 convs at dilation ``s``
    (each followed by ReLU) and one 1x1 fusion over the four concatenated taps.
    They differ only in how the taps are wired:

    * ``drb``: two independent branches of two stacked convs, tapped at
      depths 1 and 2 -> [A1, B1, A2, B2]
    * ``cascaded``: one chain of four convs, tapped after each conv
    * ``parallel``: four convs all reading the reduced features
    """

    def __init__(self, channels=64, dilation=1, style="drb", rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        if style not in BLOCK_STYLES:
            raise ValueError(f"unknown block style {style!r}")
        self.style = style
        self.dilation = dilation
        self.reduce = Conv2d(channels, channels, 1, rng=rng)
        self.taps = ModuleList(Conv2d(channels, channels, 3, dilation, "relu", rng=rng) for _ in range(4))
        self.fuse = Conv2d(4 * channels, channels, 1, rng=rng)

    def _taps(self, f: Tensor) -> list[Tensor]:
        c = list(self.taps)
        if self.style == "drb":
            a1, b1 = c[0](f), c[2](f)
            return [a1, b1, c[1](a1), c[3](b1)]
        if self.style == "cascaded":
            out, t = [], f
            for conv in c:
                t = conv(t)
                out.append(t)
            return out
        return [conv(f) for conv in c]

    def forward(self, x: Tensor) -> Tensor:
        f = self.reduce(x)
        return x + self.fuse(T.concat(self._taps(f)))

    def trace(self, shape, tr, name=""):
        self.reduce.trace(shape, tr, name + ".reduce")
        for i, conv in enumerate(self.taps):
            conv.trace(shape, tr, f"{name}.taps.{i}")
        n, c, h, w = shape
        self.fuse.trace((n, 4 * c, h, w), tr, name + ".fuse")
        tr.elementwise(name + ".residual", "add", shape)
        return shape


def _pad_index(size: int, target: int) -> np.ndarray:
    idx = np.arange(target)
    if size == 1:
        return np.zeros(target, dtype=np.intp)
    return np.where(idx < size, idx, 2 * (size - 1) - idx)


class CSB(Module):
    """Cut the map into n x n cells, stack them on channels, convolve, splice back.

    Extents not divisible by n are reflect-padded at the bottom/right and
    cropped after splicing, which keeps cut/splice exact inverses.
    """

    def __init__(self, channels=64, cells=2, rng=None):
        super().__init__()
        self.cells = cells
        self.conv = Conv2d(cells * cells * channels, cells * cells * channels, 3, rng=rng)

    def _padded(self, h: int, w: int) -> tuple[int, int]:
        n = self.cells
        return -(-h // n) * n, -(-w // n) * n

    def cut(self, x: Tensor) -> Tensor:
        return T.cut_cells(x, self.cells)

    def splice(self, x: Tensor) -> Tensor:
        return T.splice_cells(x, self.cells)

    def forward(self, x: Tensor) -> Tensor:
        h, w = x.shape[2:]
        hp, wp = self._padded(h, w)
        if (hp, wp) != (h, w):
            x = T.gather_hw(x, _pad_index(h, hp), _pad_index(w, wp))
        y = self.splice(self.conv(self.cut(x)))
        if (hp, wp) != (h, w):
            y = T.gather_hw(y, np.arange(h), np.arange(w))
        return y

    def trace(self, shape, tr, name=""):
        n, c, h, w = shape
        hp, wp = self._padded(h, w)
        k = self.cells
        self.conv.trace((n, c * k * k, hp // k, wp // k), tr, name + ".conv")
        return shape


class Triplet1(Module):
    """First-order attention triplet.

    Channel gate: global mean over (H, W) -> MLP C -> C/r -> C -> sigmoid.
    Row gate: mean over (C, W) -> 1-D conv along H -> sigmoid.
    Column gate: mean over (C, H) -> 1-D conv along W -> sigmoid.
    Output is x * (g_cha + g_row + g_col) + x, computed as a sum of products.
    """

    def __init__(self, channels=64, reduction=4, hw_only=False, rng=None):
        super().__init__()
        self.hw_only = hw_only
        self.mlp_in = Dense(channels, channels // reduction, "relu", rng=rng)
        self.mlp_out = Dense(channels // reduction, channels, rng=rng)
        if not hw_only:
            self.row = Conv1d(3, rng=rng)
            self.col = Conv1d(3, rng=rng)

    def gates(self, x: Tensor) -> list[Tensor]:
        n, c, h, w = x.shape
        d = T.reshape(T.mean_over_axes(x, ("height", "width")), (n, c))
        gates = [T.reshape(T.sigmoid(self.mlp_out(self.mlp_in(d))), (n, c, 1, 1))]
        if not self.hw_only:
            r = T.reshape(T.mean_over_axes(x, ("channel", "width")), (n, h))
            gates.append(T.reshape(T.sigmoid(self.row(r)), (n, 1, h, 1)))
            q = T.reshape(T.mean_over_axes(x, ("channel", "height")), (n, w))
            gates.append(T.reshape(T.sigmoid(self.col(q)), (n, 1, 1, w)))
        return gates

    def forward(self, x: Tensor) -> Tensor:
        out = x
        for g in self.gates(x):
            out = T.mul(x, g) + out
        return out

    def trace(self, shape, tr, name=""):
        n, c, h, w = shape
        tr.elementwise(name + ".pool_hw", "mean", shape)
        dshape = self.mlp_in.trace((n, c), tr, name + ".mlp_in")
        self.mlp_out.trace(dshape, tr, name + ".mlp_out")
        tr.elementwise(name + ".sigmoid_cha", "sigmoid", (n, c))
        tr.elementwise(name + ".mul_cha", "mul", shape)
        tr.elementwise(name + ".add_cha", "add", shape)
        if not self.hw_only:
            for axis, length in (("row", h), ("col", w)):
                tr.elementwise(f"{name}.pool_{axis}", "mean", shape)
                getattr(self, axis).trace((n, length), tr, f"{name}.{axis}")
                tr.elementwise(f"{name}.sigmoid_{axis}", "sigmoid", (n, length))
                tr.elementwise(f"{name}.mul_{axis}", "mul", shape)
                tr.elementwise(f"{name}.add_{axis}", "add", shape)
        return shape


class Triplet2(Module):
    """Second-order attention triplet built on axis-pooled maps.

    Each branch averages x along one axis, passes the pooled map through a
    single-channel 1x1 conv (a learned scale and shift) and a sigmoid, and
    gates x with the broadcast result:

    * (H, W): mean over channels -> (N, 1, H, W)
    * (C, H): mean over width    -> (N, C, H, 1)
    * (C, W): mean over height   -> (N, C, 1, W)
    """

    _BRANCHES = (("hw", "channel"), ("ch", "width"), ("cw", "height"))

    def __init__(self, hw_only=False, rng=None):
        super().__init__()
        self.hw_only = hw_only
        self.hw = Conv2d(1, 1, 1, rng=rng)
        if not hw_only:
            self.ch = Conv2d(1, 1, 1, rng=rng)
            self.cw = Conv2d(1, 1, 1, rng=rng)

    def _branches(self):
        return self._BRANCHES[:1] if self.hw_only else self._BRANCHES

    def gates(self, x: Tensor) -> list[Tensor]:
        out = []
        for key, axis in self._branches():
            m = T.mean_over_axes(x, (axis,))
            shp = m.shape
            if key != "hw":
                # single-channel 1x1 conv over the pooled (C, H) or (C, W) plane
                m = T.reshape(m, (shp[0], 1, shp[1], shp[2] * shp[3]))
            a = T.reshape(getattr(self, key)(m), shp)
            out.append(T.sigmoid(a))
        return out

    def forward(self, x: Tensor) -> Tensor:
        out = x
        for g in self.gates(x):
            out = T.mul(x, g) + out
        return out

    def trace(self, shape, tr, name=""):
        n, c, h, w = shape
        pooled = {"hw": (n, 1, h, w), "ch": (n, 1, c, h), "cw": (n, 1, c, w)}
        for key, _ in self._branches():
            tr.elementwise(f"{name}.pool_{key}", "mean", shape)
            getattr(self, key).trace(pooled[key], tr, f"{name}.{key}")
            tr.elementwise(f"{name}.sigmoid_{key}", "sigmoid", pooled[key])
            tr.elementwise(f"{name}.mul_{key}", "mul", shape)
            tr.elementwise(f"{name}.add_{key}", "add", shape)
        return shape


class MCAB(Module):
    """Multi-context attentive block.

    Contextual branch: a densely connected chain of DRBs. DRB k (k >= 2) reads
    a 1x1 compression of [x, out_1, ..., out_{k-1}]; the branch output is a
    1x1 fusion of [x, out_1, ..., out_e].
    Attention branch: CSB -> first-order triplet -> second-order triplet on x,
    then a 3x3 conv and sigmoid.
    Output: context * gate + x.
    """

    def __init__(self, cfg: BlockConfig | None = None, dilations=(1, 2, 3, 3, 2, 1), rng=None):
        super().__init__()
        cfg = cfg or BlockConfig()
        rng = rng if rng is not None else np.random.default_rng(0)
        if len(dilations) < 1:
            raise ValueError("dilation schedule must be non-empty")
        c = cfg.channels
        self.cfg = cfg
        self.dilations = tuple(dilations)
        self.drbs = ModuleList(DRB(c, s, cfg.block_style, rng=rng) for s in self.dilations)
        self.compress = ModuleList(Conv2d((k + 1) * c, c, 1, rng=rng) for k in range(1, len(self.dilations)))
        self.fuse = Conv2d((len(self.dilations) + 1) * c, c, 1, rng=rng)
        if cfg.use_csb:
            self.csb = CSB(c, cfg.csb_cells, rng=rng)
        if cfg.use_triplet1:
            self.triplet1 = Triplet1(c, cfg.mlp_reduction, cfg.triplet1_hw_only, rng=rng)
        if cfg.use_triplet2:
            self.triplet2 = Triplet2(cfg.triplet2_hw_only, rng=rng)
        self.gate = Conv2d(c, c, 3, rng=rng)

    def drb_inputs(self, x: Tensor) -> list[Tensor]:
        """Inputs seen by each DRB of the dense chain (for inspection)."""
        return self._context(x)[1]

    def _context(self, x: Tensor) -> tuple[Tensor, list[Tensor]]:
        feats, inputs = [x], []
        for k, drb in enumerate(self.drbs):
            inp = x if k == 0 else self.compress[k - 1](T.concat(feats))
            inputs.append(inp)
            feats.append(drb(inp))
        return self.fuse(T.concat(feats)), inputs

    def attention(self, x: Tensor) -> Tensor:
        a = x
        for key in ("csb", "triplet1", "triplet2"):
            if key in self._modules:
                a = self._modules[key](a)
        return T.sigmoid(self.gate(a))

    def forward(self, x: Tensor) -> Tensor:
        context, _ = self._context(x)
        return T.mul(context, self.attention(x)) + x

    def trace(self, shape, tr, name=""):
        n, c, h, w = shape
        for k, drb in enumerate(self.drbs):
            if k:
                self.compress[k - 1].trace((n, (k + 1) * c, h, w), tr, f"{name}.compress.{k - 1}")
            drb.trace(shape, tr, f"{name}.drbs.{k}")
        self.fuse.trace((n, (len(self.drbs) + 1) * c, h, w), tr, name + ".fuse")
        for key in ("csb", "triplet1", "triplet2"):
            if key in self._modules:
                self._modules[key].trace(shape, tr, f"{name}.{key}")
        self.gate.trace(shape, tr, name + ".gate")
        tr.elementwise(name + ".sigmoid_gate", "sigmoid", shape)
        tr.elementwise(name + ".mul_gate", "mul", shape)
        tr.elementwise(name + ".residual", "add", shape)
        return shape


class RAB(Module):
    """Refinement block: y * sigmoid(conv1x1(relu(conv3x3(y)))) + y."""

    def __init__(self, channels=3, hidden=64, rng=None):
        super().__init__()
        self.expand = Conv2d(channels, hidden, 3, activation="relu", rng=rng)
        self.project = Conv2d(hidden, channels, 1, rng=rng)

    def forward(self, y: Tensor) -> Tensor:
        g = T.sigmoid(self.project(self.expand(y)))
        return T.mul(y, g) + y

    def trace(self, shape, tr, name=""):
        hid = self.expand.trace(shape, tr, name + ".expand")
        self.project.trace(hid, tr, name + ".project")
        tr.elementwise(name + ".sigmoid", "sigmoid", shape)
        tr.elementwise(name + ".mul", "mul", shape)
        tr.elementwise(name + ".residual", "add", shape)
        return shape


def drb_param_count(channels: int = 64) -> int:
    """Closed-form DRB size: 1x1 reduce + four 3x3 + 1x1 fusion over 4C."""
    c = channels
    return (c * c + c) + 4 * (9 * c * c + c) + (4 * c * c + c)


def receptive_field(style: str, dilation: int) -> int:
    """Largest receptive-field extent through one block, rf += (k - 1) * dilation per 3x3 conv."""
    depth = {"drb": 2, "cascaded": 4, "parallel": 1}[style]
    return 1 + depth * 2 * dilation
