"""Parameterized layers, a hierarchical parameter registry and static cost tracing."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Parameter(Tensor):
    """Trainable tensor carrying its registry name and two Adam moment slots."""

    __slots__ = ("name", "m", "v")

    def __init__(self, data, name: str = "", dtype=np.float32):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name
        self.m = np.zeros_like(self.data)
        self.v = np.zeros_like(self.data)


# ---------------------------------------------------------------------------
# static cost tracing
# ---------------------------------------------------------------------------


@dataclass
class CostRow:
    name: str
    kind: str
    out_shape: tuple[int, ...]
    macs: int = 0
    other: int = 0
    params: int = 0
    stage: str = "lr"

    def flops(self, convention: str = "2mac") -> int:
        return (2 if convention == "2mac" else 1) * self.macs + self.other


@dataclass
class CostTrace:
    """Per-layer arithmetic counts collected by ``Module.trace``.

    Counting rules mirror what the tensor ops tally at run time: a conv or
    dense layer costs its multiply-accumulates plus one add per output for the
    bias; relu, sigmoid, add and mul cost one op per output element; a mean
    costs one op per input element; data movement is free.
    """

    rows: list[CostRow] = field(default_factory=list)
    stage: str = "lr"

    def add(self, name, kind, out_shape, macs=0, other=0, params=0) -> None:
        self.rows.append(CostRow(name, kind, tuple(out_shape), int(macs), int(other), int(params), self.stage))

    def elementwise(self, name: str, kind: str, shape, per_element: int = 1) -> None:
        self.add(name, kind, shape, other=per_element * math.prod(shape))

    def total(self, convention: str = "2mac", include_hr: bool = True) -> int:
        return sum(r.flops(convention) for r in self.rows if include_hr or r.stage != "hr")


# ---------------------------------------------------------------------------
# module registry
# ---------------------------------------------------------------------------


class Module:
    """Container that registers Parameters and sub-Modules assigned as attributes."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})

    def __setattr__(self, key, value):
        if isinstance(value, Parameter):
            self._params[key] = value
        elif isinstance(value, Module):
            self._modules[key] = value
        object.__setattr__(self, key, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, p in self._params.items():
            yield prefix + key, p
        for key, m in self._modules.items():
            yield from m.named_parameters(prefix + key + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix.rstrip("."), self
        for key, m in self._modules.items():
            yield from m.named_modules(prefix + key + ".")

    def assign_names(self) -> None:
        for name, p in self.named_parameters():
            p.name = name

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.m = p.m.astype(dtype)
            p.v = p.v.astype(dtype)
            p.grad = None
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)[:5]} unexpected={sorted(extra)[:5]}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def trace(self, shape: tuple[int, ...], tr: CostTrace, name: str = "") -> tuple[int, ...]:
        """Append this module's cost rows for an input of ``shape``; return the output shape."""
        raise NotImplementedError(type(self).__name__)


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        object.__setattr__(self, "_items", [])
        for m in modules:
            self.append(m)

    def append(self, m: Module) -> None:
        self._modules[str(len(self._items))] = m
        self._items.append(m)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # "conv" | "dense"
    in_channels: int
    out_channels: int
    kernel: int = 1
    dilation: int = 1
    activation: str = "none"

    def __post_init__(self):
        if self.kind not in ("conv", "dense"):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kernel not in (1, 3, 7):
            raise ValueError(f"kernel {self.kernel} not in (1, 3, 7)")
        if self.dilation < 1 or (self.dilation > 1 and self.kernel != 3):
            raise ValueError("dilation > 1 is only allowed for 3x3 kernels")
        if self.activation not in ("none", "relu", "sigmoid"):
            raise ValueError(f"unknown activation {self.activation!r}")


def init_conv(spec: LayerSpec, rng: np.random.Generator) -> tuple[Parameter, Parameter]:
    """Uniform fan-in init in +-sqrt(6 / fan_in); zero bias."""
    k = spec.kernel if spec.kind == "conv" else 1
    fan_in = spec.in_channels * k * k
    bound = math.sqrt(6.0 / fan_in)
    shape = (spec.out_channels, spec.in_channels, k, k) if spec.kind == "conv" else (spec.out_channels, spec.in_channels)
    w = Parameter(rng.uniform(-bound, bound, size=shape))
    b = Parameter(np.zeros(spec.out_channels))
    return w, b


def _activate(x: Tensor, activation: str) -> Tensor:
    if activation == "relu":
        return T.relu(x)
    if activation == "sigmoid":
        return T.sigmoid(x)
    return x


class Conv2d(Module):
    """Size-preserving square convolution: padding = dilation * (k - 1) / 2."""

    def __init__(self, in_channels, out_channels, kernel=3, dilation=1, activation="none", rng=None):
        super().__init__()
        self.spec = LayerSpec("conv", in_channels, out_channels, kernel, dilation, activation)
        self.padding = dilation * (kernel - 1) // 2
        self.weight, self.bias = init_conv(self.spec, rng if rng is not None else np.random.default_rng(0))

    def forward(self, x: Tensor) -> Tensor:
        y = T.conv2d(x, self.weight, self.bias, dilation=self.spec.dilation, padding=self.padding)
        return _activate(y, self.spec.activation)

    def trace(self, shape, tr, name=""):
        n, c, h, w = shape
        s = self.spec
        out = (n, s.out_channels, h, w)
        tr.add(name, f"conv{s.kernel}x{s.kernel}" + (f"/d{s.dilation}" if s.dilation > 1 else ""),
               out, macs=n * s.out_channels * h * w * c * s.kernel ** 2,
               other=n * s.out_channels * h * w, params=self.weight.size + self.bias.size)
        if s.activation != "none":
            tr.elementwise(name + "." + s.activation, s.activation, out)
        return out


class Dense(Module):
    def __init__(self, in_features, out_features, activation="none", rng=None):
        super().__init__()
        self.spec = LayerSpec("dense", in_features, out_features, activation=activation)
        self.weight, self.bias = init_conv(self.spec, rng if rng is not None else np.random.default_rng(0))

    def forward(self, x: Tensor) -> Tensor:
        return _activate(T.dense(x, self.weight, self.bias), self.spec.activation)

    def trace(self, shape, tr, name=""):
        rows = math.prod(shape[:-1])
        out = tuple(shape[:-1]) + (self.spec.out_channels,)
        tr.add(name, "dense", out, macs=rows * self.spec.out_channels * self.spec.in_channels,
               other=rows * self.spec.out_channels, params=self.weight.size + self.bias.size)
        if self.spec.activation != "none":
            tr.elementwise(name + "." + self.spec.activation, self.spec.activation, out)
        return out


class Conv1d(Module):
    """Single-channel length-preserving 1-D convolution over (N, L)."""

    def __init__(self, kernel=3, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = math.sqrt(6.0 / kernel)
        self.weight = Parameter(rng.uniform(-bound, bound, size=(kernel,)))
        self.bias = Parameter(np.zeros(1))

    def forward(self, x: Tensor) -> Tensor:
        return T.conv1d(x, self.weight, self.bias)

    def trace(self, shape, tr, name=""):
        n, length = shape
        tr.add(name, "conv1d", shape, macs=n * length * self.weight.size, other=n * length,
               params=self.weight.size + self.bias.size)
        return shape


def count_params(model: Module) -> int:
    return sum(p.size for p in model.parameters())


def cost_trace(model: Module, input_shape) -> CostTrace:
    tr = CostTrace()
    model.trace(tuple(input_shape), tr, "")
    return tr


def count_flops(model: Module, input_shape, convention: str = "2mac", include_hr: bool = True) -> int:
    """Total arithmetic for one forward pass on ``input_shape``.

    ``convention="2mac"`` counts a multiply-accumulate as two FLOPs;
    ``"mac"`` counts it as one, the convention most SR model-size tables use.
    """
    if convention not in ("2mac", "mac"):
        raise ValueError(f"unknown convention {convention!r}")
    return cost_trace(model, input_shape).total(convention, include_hr)


class Sequential(ModuleList):
    def forward(self, x: Tensor) -> Tensor:
        for m in self:
            x = m(x)
        return x

    def trace(self, shape, tr, name=""):
        for i, m in enumerate(self):
            shape = m.trace(shape, tr, f"{name}.{i}" if name else str(i))
        return shape
