"""64-bit finite-difference suites over ops, blocks and a small full model.

Every check reduces the output with a fixed random projection so that each
coordinate gets a generic, non-vanishing gradient.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .blocks import CSB, DRB, MCAB, RAB, BlockConfig, Triplet1, Triplet2
from .model import TSAN, build_variant
from .nn import Module
from .tensor import Tensor, gradcheck

TOLERANCE = 1e-4
STEP = 1e-6
LEVELS = ("ops", "blocks", "model")


@dataclass
class CheckResult:
    name: str
    seed: int
    error: float

    @property
    def passed(self) -> bool:
        return bool(self.error < TOLERANCE)


def _f64(a) -> Tensor:
    return Tensor(a, dtype=np.float64)


def projected(fn: Callable[..., Tensor], out_shape, rng) -> Callable[..., Tensor]:
    r = _f64(rng.standard_normal(out_shape))
    return lambda *xs: T.sum_all(T.mul(fn(*xs), r))


def _away_from_zero(a: np.ndarray, margin: float = 0.05) -> np.ndarray:
    return np.where(np.abs(a) < margin, np.sign(a + 1e-12) * margin + a, a)


def _op_cases(rng) -> list[tuple[str, Callable, list[np.ndarray]]]:
    u = lambda *s: rng.uniform(-1, 1, s)
    cases = [
        ("add", T.add, [u(2, 3, 4, 5), u(1, 3, 1, 5)]),
        ("mul", T.mul, [u(2, 3, 4, 5), u(2, 1, 4, 1)]),
        ("scale", lambda x: T.scale(x, -1.7), [u(2, 3, 4)]),
        ("relu", T.relu, [_away_from_zero(u(2, 3, 4, 5))]),
        ("sigmoid", T.sigmoid, [u(2, 3, 4, 5) * 2]),
        ("sum_all", lambda x: T.scale(T.sum_all(x), 0.3), [u(3, 4)]),
        ("concat", lambda a, b: T.concat([a, b, a]), [u(2, 2, 3, 3), u(2, 4, 3, 3)]),
        ("reshape", lambda x: T.reshape(x, (6, 10)), [u(2, 3, 10)]),
        ("permute", lambda x: T.permute(x, (0, 2, 3, 1)), [u(2, 3, 4, 5)]),
        ("gather_hw", lambda x: T.gather_hw(x, np.array([0, 1, 2, 1, 0]), np.array([3, 2, 3])), [u(2, 2, 3, 4)]),
        ("mean_hw", lambda x: T.mean_over_axes(x, ("height", "width")), [u(2, 3, 4, 5)]),
        ("mean_cw", lambda x: T.mean_over_axes(x, ("channel", "width")), [u(2, 3, 4, 5)]),
        ("mean_c", lambda x: T.mean_over_axes(x, ("channel",)), [u(2, 3, 4, 5)]),
        ("pixel_shuffle", lambda x: T.pixel_shuffle(x, 2), [u(2, 8, 3, 3)]),
        ("pixel_unshuffle", lambda x: T.pixel_unshuffle(x, 2), [u(2, 2, 4, 6)]),
        ("cut_cells", lambda x: T.cut_cells(x, 2), [u(1, 3, 4, 6)]),
        ("splice_cells", lambda x: T.splice_cells(x, 2), [u(1, 12, 2, 3)]),
        ("conv1x1", lambda x, w, b: T.conv2d(x, w, b), [u(2, 3, 4, 4), u(5, 3, 1, 1), u(5)]),
        ("conv3x3", lambda x, w, b: T.conv2d(x, w, b, padding=1), [u(2, 3, 5, 4), u(4, 3, 3, 3), u(4)]),
        ("conv3x3_dilated", lambda x, w, b: T.conv2d(x, w, b, 2, 2), [u(1, 2, 6, 6), u(3, 2, 3, 3), u(3)]),
        ("conv7x7", lambda x, w: T.conv2d(x, w, None, padding=3), [u(1, 2, 5, 5), u(2, 2, 7, 7)]),
        ("conv1d", lambda x, w, b: T.conv1d(x, w, b), [u(3, 7), u(3), u(1)]),
        ("dense", lambda x, w, b: T.dense(x, w, b), [u(4, 6), u(5, 6), u(5)]),
    ]
    p, t = u(2, 3, 4, 4), u(2, 3, 4, 4)
    t = p - _away_from_zero(p - t)
    cases.append(("mae_loss", T.mae_loss, [p, t]))
    return cases


def run_ops(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    for name, fn, arrays in _op_cases(rng):
        xs = [_f64(a) for a in arrays]
        with T.no_grad():
            out_shape = fn(*xs).shape
        err = gradcheck(projected(fn, out_shape, rng), xs, h=STEP)
        results.append(CheckResult(name, seed, err))
    return results


def _check_module(name: str, module: Module, x: np.ndarray, rng, seed: int, max_coords: int = 120) -> CheckResult:
    module.astype(np.float64)
    xs = _f64(x)

    def fn(t):
        out = module(t)
        # both stages of the full model enter the checked scalar
        return T.concat(list(out)) if isinstance(out, tuple) else out

    with T.no_grad():
        out_shape = fn(xs).shape
    f = projected(fn, out_shape, rng)
    err = gradcheck(f, xs, h=STEP, wrt=module.parameters(), max_coords=max_coords, seed=seed)
    return CheckResult(name, seed, err)


def _block_cases(rng, channels: int = 64):
    cfg = BlockConfig(channels=channels)
    return [
        ("drb", DRB(channels, 2, "drb", rng=rng), (1, channels, 6, 6)),
        ("drb_cascaded", DRB(channels, 1, "cascaded", rng=rng), (1, channels, 6, 6)),
        ("drb_parallel", DRB(channels, 3, "parallel", rng=rng), (1, channels, 6, 6)),
        ("csb", CSB(channels, 2, rng=rng), (1, channels, 6, 6)),
        ("csb_padded", CSB(channels, 2, rng=rng), (1, channels, 5, 7)),
        ("triplet1", Triplet1(channels, 4, rng=rng), (2, channels, 5, 6)),
        ("triplet2", Triplet2(rng=rng), (2, channels, 5, 6)),
        ("mcab", MCAB(cfg, (1, 2), rng=rng), (1, channels, 6, 6)),
        ("rab", RAB(3, 64, rng=rng), (1, 3, 8, 8)),
    ]


def run_blocks(seed: int = 0, channels: int = 64) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    for name, module, shape in _block_cases(rng, channels):
        x = rng.uniform(-1, 1, shape)
        results.append(_check_module(name, module, x, rng, seed))
    return results


def run_model(seed: int = 0, max_coords: int = 256) -> list[CheckResult]:
    """Micro model (one MCAB of two DRBs) on an 8x8 input, sampled coordinates."""
    rng = np.random.default_rng(seed)
    model = TSAN(build_variant("micro", 2), seed=seed)
    x = rng.uniform(-1, 1, (1, 3, 8, 8))
    return [_check_module("micro_model", model, x, rng, seed, max_coords)]


def run_level(level: str, seed: int = 0) -> list[CheckResult]:
    if level == "ops":
        return run_ops(seed)
    if level == "blocks":
        return run_blocks(seed)
    if level == "model":
        return run_model(seed)
    raise ValueError(f"unknown gradcheck level {level!r}; choose from {LEVELS}")
