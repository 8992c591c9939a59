import numpy as np
import pytest

from tsan import tensor as T
from tsan.blocks import CSB, DRB, MCAB, RAB, BlockConfig, Triplet1, Triplet2, drb_param_count, receptive_field
from tsan.gradsuite import run_blocks
from tsan.nn import cost_trace, count_params
from tsan.tensor import Tensor, count_ops


def zero(*convs):
    for c in convs:
        c.weight.data[...] = 0
        c.bias.data[...] = 0


def rand(shape, seed=0):
    return Tensor(np.random.default_rng(seed).uniform(-1, 1, shape))


@pytest.mark.parametrize("style", ["drb", "cascaded", "parallel"])
def test_drb_zero_fusion_is_identity(style):
    drb = DRB(16, 2, style, rng=np.random.default_rng(0))
    zero(drb.fuse)
    x = rand((2, 16, 7, 5))
    np.testing.assert_array_equal(drb(x).data, x.data)


@pytest.mark.parametrize("style", ["drb", "cascaded", "parallel"])
@pytest.mark.parametrize("dilation,h,w", [(1, 5, 5), (2, 6, 9), (3, 4, 11)])
def test_drb_preserves_shape(style, dilation, h, w):
    assert DRB(8, dilation, style)(rand((1, 8, h, w))).shape == (1, 8, h, w)


def test_drb_styles_share_parameter_count():
    counts = {s: count_params(DRB(64, 1, s)) for s in ("drb", "cascaded", "parallel")}
    assert set(counts.values()) == {168_320}
    assert drb_param_count(64) == 168_320


def test_drb_tap_wiring():
    """Tap order is [A1, B1, A2, B2]: A2 is taps[1] applied to A1, B2 is taps[3] applied to B1."""
    drb = DRB(4, 1, "drb", rng=np.random.default_rng(1))
    f = rand((1, 4, 5, 5))
    a1, b1, a2, b2 = drb._taps(f)
    np.testing.assert_array_equal(a1.data, drb.taps[0](f).data)
    np.testing.assert_array_equal(b1.data, drb.taps[2](f).data)
    np.testing.assert_array_equal(a2.data, drb.taps[1](a1).data)
    np.testing.assert_array_equal(b2.data, drb.taps[3](b1).data)


def test_cascaded_and_parallel_wiring():
    casc = DRB(4, 1, "cascaded", rng=np.random.default_rng(2))
    f = rand((1, 4, 5, 5))
    taps = casc._taps(f)
    np.testing.assert_array_equal(taps[3].data, casc.taps[3](casc.taps[2](casc.taps[1](casc.taps[0](f)))).data)
    par = DRB(4, 1, "parallel", rng=np.random.default_rng(2))
    for conv, tap in zip(par.taps, par._taps(f)):
        np.testing.assert_array_equal(tap.data, conv(f).data)


def test_receptive_fields():
    assert receptive_field("cascaded", 1) == 9
    assert receptive_field("drb", 1) == 5
    assert receptive_field("parallel", 1) == 3
    assert receptive_field("drb", 3) == 13


def _identity_csb(c, n):
    csb = CSB(c, n)
    zero(csb.conv)
    for i in range(c * n * n):
        csb.conv.weight.data[i, i, 1, 1] = 1
    return csb


@pytest.mark.parametrize("h,w", [(4, 6), (5, 7), (1, 3), (9, 9)])
def test_csb_identity_conv_is_identity(h, w):
    csb = _identity_csb(3, 2)
    x = rand((2, 3, h, w))
    np.testing.assert_array_equal(csb(x).data, x.data)


def test_csb_cut_splice_roundtrip_bit_exact():
    csb = CSB(4, 3)
    x = rand((1, 4, 6, 9))
    np.testing.assert_array_equal(csb.splice(csb.cut(x)).data, x.data)


def test_csb_mixes_distant_cells():
    """A single output pixel depends on inputs from all four quadrants."""
    csb = CSB(1, 2, rng=np.random.default_rng(3))
    x = Tensor(np.zeros((1, 1, 8, 8)), requires_grad=True)
    y = csb(x)
    T.backward(T.sum_all(T.mul(y, Tensor(_onehot(8, 1, 1)))))
    g = np.abs(x.grad[0, 0])
    assert g[:4, :4].sum() > 0 and g[:4, 4:].sum() > 0 and g[4:, :4].sum() > 0 and g[4:, 4:].sum() > 0


def _onehot(n, i, j):
    a = np.zeros((1, 1, n, n))
    a[0, 0, i, j] = 1
    return a


def test_triplet1_zero_preactivations_give_two_and_a_half_x():
    tr = Triplet1(8, 4)
    zero(tr.mlp_out, tr.row, tr.col)
    x = rand((2, 8, 5, 6))
    np.testing.assert_allclose(tr(x).data, 2.5 * x.data, atol=1e-6)


def test_triplet1_hw_only_has_one_gate():
    tr = Triplet1(8, 4, hw_only=True)
    zero(tr.mlp_out)
    x = rand((1, 8, 4, 4))
    np.testing.assert_allclose(tr(x).data, 1.5 * x.data, atol=1e-6)


def test_triplet1_gate_shapes():
    gates = Triplet1(8, 4).gates(rand((2, 8, 5, 6)))
    assert [g.shape for g in gates] == [(2, 8, 1, 1), (2, 1, 5, 1), (2, 1, 1, 6)]
    assert all(np.all((g.data > 0) & (g.data < 1)) for g in gates)


def test_triplet2_zero_affine_gives_two_and_a_half_x():
    tr = Triplet2()
    zero(tr.hw, tr.ch, tr.cw)
    x = rand((2, 8, 5, 6))
    np.testing.assert_allclose(tr(x).data, 2.5 * x.data, atol=1e-6)


def test_triplet2_gate_shapes_and_constant_input():
    tr = Triplet2(rng=np.random.default_rng(4))
    gates = tr.gates(rand((2, 8, 5, 6)))
    assert [g.shape for g in gates] == [(2, 1, 5, 6), (2, 8, 5, 1), (2, 8, 1, 6)]
    x = Tensor(np.full((1, 3, 4, 5), 0.7))
    y = tr(x).data
    assert np.ptp(y) < 1e-6


def test_mcab_zero_fuse_and_gate_is_identity():
    cfg = BlockConfig(channels=8)
    mcab = MCAB(cfg, (1, 2, 3), rng=np.random.default_rng(5))
    zero(mcab.fuse, mcab.gate)
    x = rand((1, 8, 6, 6))
    np.testing.assert_array_equal(mcab(x).data, x.data)


def test_mcab_dense_connectivity():
    cfg = BlockConfig(channels=8)
    mcab = MCAB(cfg, (1, 2, 3), rng=np.random.default_rng(6))
    x = rand((1, 8, 5, 5))
    inputs = mcab.drb_inputs(x)
    np.testing.assert_array_equal(inputs[0].data, x.data)
    f1 = mcab.drbs[0](x)
    f2 = mcab.drbs[1](inputs[1])
    np.testing.assert_array_equal(inputs[1].data, mcab.compress[0](T.concat([x, f1])).data)
    np.testing.assert_array_equal(inputs[2].data, mcab.compress[1](T.concat([x, f1, f2])).data)
    assert mcab.fuse.spec.in_channels == 4 * 8


def test_mcab_ablation_flags_remove_modules():
    cfg = BlockConfig(channels=8, use_csb=False, use_triplet1=False, use_triplet2=False)
    mcab = MCAB(cfg, (1,))
    assert not any(k in mcab._modules for k in ("csb", "triplet1", "triplet2"))
    assert mcab(rand((1, 8, 4, 4))).shape == (1, 8, 4, 4)


def test_rab_zero_projection_gives_one_and_a_half_y():
    rab = RAB(3, 64)
    zero(rab.project)
    y = rand((1, 3, 6, 6))
    assert np.max(np.abs(rab(y).data - 1.5 * y.data)) < 1e-6


@pytest.mark.parametrize(
    "block,shape",
    [
        (DRB(8, 2), (1, 8, 6, 7)),
        (CSB(8, 2), (1, 8, 5, 7)),
        (Triplet1(8, 4), (2, 8, 5, 6)),
        (Triplet2(), (2, 8, 5, 6)),
        (MCAB(BlockConfig(channels=8), (1, 2)), (1, 8, 7, 6)),
        (RAB(3, 8), (1, 3, 6, 6)),
    ],
)
def test_block_trace_matches_runtime_tally(block, shape):
    with count_ops() as c:
        block(Tensor(np.zeros(shape)))
    tr = cost_trace(block, shape)
    assert sum(r.macs for r in tr.rows) == c.macs
    assert sum(r.other for r in tr.rows) == c.other


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_every_block_passes_gradcheck(seed):
    results = run_blocks(seed)
    assert {r.name for r in results} >= {"drb", "csb", "triplet1", "triplet2", "mcab", "rab"}
    bad = [(r.name, r.error) for r in results if not r.passed]
    assert not bad
