"""Shared fixtures: the overfit smoke model and the acceptance summary."""

from dataclasses import dataclass

import numpy as np
import pytest

from tsan.data import bicubic_resize, make_dataset, to_uint8, write_synthetic_corpus
from tsan.metrics import psnr, rgb_to_y
from tsan.model import build_variant
from tsan.trainer import TrainConfig, super_resolve, train

# Overfit smoke run: micro model, three synthetic 64x64 images, x2, 500 iterations.
# Each patch covers a whole 32x32 LR image and augmentation is off, so the
# run memorises the training set.
SMOKE_SCALE = 2
SMOKE_ITERS = 500
SMOKE_SIZE = 64
SMOKE_TRAIN = TrainConfig(batch=3, patch=32, lr0=1e-3, augment=False, seed=0)
SMOOTH_WINDOW = 25

_acceptance_lines: list[str] = []


@dataclass
class SmokeResult:
    log: list[dict]
    checkpoint: object
    manifest: object
    psnr_bicubic: list[float]
    psnr_sr1: list[float]
    psnr_sr2: list[float]


def evaluate_pairs(model, pairs, mean, scale):
    bic, s1, s2 = [], [], []
    for lr, hr in pairs:
        up = to_uint8(bicubic_resize(lr, hr.shape[1], hr.shape[0]))
        sr1, sr2 = super_resolve(model, lr, mean)
        y = rgb_to_y(hr)
        bic.append(psnr(rgb_to_y(up), y, scale))
        s1.append(psnr(rgb_to_y(to_uint8(sr1)), y, scale))
        s2.append(psnr(rgb_to_y(to_uint8(sr2)), y, scale))
    return bic, s1, s2


@pytest.fixture(scope="session")
def smoke(tmp_path_factory):
    root = tmp_path_factory.mktemp("smoke")
    write_synthetic_corpus(root / "hr", 3, SMOKE_SIZE, SMOKE_SIZE, seed=0)
    manifest = make_dataset(root / "hr", SMOKE_SCALE, root / "ds")
    cfg = build_variant("micro", SMOKE_SCALE, rgb_mean=manifest.rgb_mean)
    ckpt, log = train(cfg, SMOKE_TRAIN, manifest, iters=SMOKE_ITERS)
    model = ckpt.build_model()
    bic, s1, s2 = evaluate_pairs(model, manifest.load_pairs(), manifest.rgb_mean, SMOKE_SCALE)
    return SmokeResult(log, ckpt, manifest, bic, s1, s2)


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line; the lines are also repeated in the terminal summary."""

    def record(name: str, passed: bool, detail: str) -> bool:
        line = f"{'PASS' if passed else 'FAIL'} {name}: {detail}"
        _acceptance_lines.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)
