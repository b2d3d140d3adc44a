"""Bijective layers: inverses, log-determinants, builders."""

import numpy as np
import pytest

from invlens import autodiff as ad
from invlens.autodiff import Tape, Tensor
from invlens.flows import (ActNorm, AdditiveCoupling, AffineCoupling,
                           ChannelMix, DCTReadout, Squeeze, build_conv_flow,
                           build_flat_flow, dct_matrix, zigzag_order)
from invlens.gradcheck import finite_difference_jacobian
from invlens.nets import ConvSubnet, MLP


def _fwd(layer, arr):
    with Tape():
        y, logdet = layer.forward(Tensor(np.asarray(arr, dtype=np.float64)))
        return y.data, float(np.mean(np.atleast_1d(logdet.data)))


def _brute_logdet(layer, x0):
    """log|det J| via dense finite-difference Jacobian at x0 (single sample)."""
    shape = x0.shape

    def f(flat):
        with Tape():
            y, _ = layer.forward(Tensor(flat.reshape((1,) + shape)))
            return y.data.ravel()

    jac = finite_difference_jacobian(f, x0.ravel())
    return np.linalg.slogdet(jac)[1]


# -- actnorm -------------------------------------------------------------------

def test_actnorm_identity():
    layer = ActNorm(3)
    x = np.random.default_rng(0).standard_normal((2, 3, 4, 4))
    y, logdet = _fwd(layer, x)
    assert np.allclose(y, x)
    assert logdet == 0.0


def test_actnorm_logdet_matches_brute_force():
    rng = np.random.default_rng(1)
    layer = ActNorm(4)
    layer.s.data = rng.uniform(0.5, 2.0, 4)
    layer.b.data = rng.standard_normal(4)
    x0 = rng.standard_normal((4, 1, 1))
    with Tape():
        _, logdet = layer.forward(Tensor(x0[None]))
    assert abs(float(np.ravel(logdet.data)[0]) - _brute_logdet(layer, x0)) < 1e-6


def test_actnorm_data_init_standardizes():
    rng = np.random.default_rng(2)
    layer = ActNorm(3, initialized=False)
    batch = rng.standard_normal((64, 3, 5, 5)) * 3.0 + 1.0
    layer.init_from_batch(batch)
    y, _ = _fwd(layer, batch)
    means = y.mean(axis=(0, 2, 3))
    stds = y.std(axis=(0, 2, 3))
    assert np.all(np.abs(means) < 1e-6)
    assert np.all(np.abs(stds - 1.0) < 1e-3)


def test_actnorm_init_rejects_tiny_batch_and_use_before_init():
    layer = ActNorm(2, initialized=False)
    with pytest.raises(ValueError):
        layer.init_from_batch(np.zeros((1, 2, 4, 4)))
    with pytest.raises(RuntimeError):
        _fwd(layer, np.zeros((2, 2, 4, 4)))


def test_actnorm_zero_scale_rejected():
    layer = ActNorm(2)
    layer.s.data = np.array([1.0, 0.0])
    with pytest.raises(ValueError):
        _fwd(layer, np.zeros((2, 2, 4, 4)))


# -- couplings -----------------------------------------------------------------

def _mlp_subnet(c_in, c_out, seed=0, zero=False):
    net = MLP([c_in, 8, c_out], np.random.default_rng(seed))
    if zero:
        for _, p in net.params():
            p.data = np.zeros_like(p.data)
    return net


def test_additive_coupling_zero_subnet_is_identity():
    layer = AdditiveCoupling(_mlp_subnet(2, 2, zero=True))
    x = np.random.default_rng(0).standard_normal((5, 4))
    y, logdet = _fwd(layer, x)
    assert np.allclose(y, x)
    assert logdet == 0.0


@pytest.mark.parametrize("seed", range(10))
def test_additive_coupling_roundtrip_and_zero_logdet(seed):
    layer = AdditiveCoupling(_mlp_subnet(3, 3, seed=seed), swap=bool(seed % 2))
    x = np.random.default_rng(seed).standard_normal((4, 6))
    y, logdet = _fwd(layer, x)
    assert logdet == 0.0
    assert np.max(np.abs(layer.inverse(y) - x)) < 1e-12


def test_affine_coupling_zero_subnet_is_identity():
    layer = AffineCoupling(_mlp_subnet(3, 6, zero=True))
    x = np.random.default_rng(1).standard_normal((4, 6))
    y, logdet = _fwd(layer, x)
    assert np.allclose(y, x)
    assert logdet == 0.0


@pytest.mark.parametrize("seed", range(10))
def test_affine_coupling_roundtrip(seed):
    layer = AffineCoupling(_mlp_subnet(3, 6, seed=seed))
    x = np.random.default_rng(seed).standard_normal((4, 6))
    y, _ = _fwd(layer, x)
    assert np.max(np.abs(layer.inverse(y) - x)) < 1e-10


def test_affine_coupling_logdet_matches_brute_force():
    layer = AffineCoupling(_mlp_subnet(3, 6, seed=5))
    x0 = np.random.default_rng(5).standard_normal(6)
    with Tape():
        _, logdet = layer.forward(Tensor(x0[None]))
    assert abs(float(np.ravel(logdet.data)[0]) - _brute_logdet(layer, x0)) < 1e-6


def test_coupling_rejects_odd_channels():
    layer = AdditiveCoupling(_mlp_subnet(2, 3))
    with pytest.raises(ValueError):
        _fwd(layer, np.zeros((2, 5)))


# -- channel mix ----------------------------------------------------------------

def test_channel_mix_identity_and_analytic_logdet():
    layer = ChannelMix(3)
    x = np.random.default_rng(0).standard_normal((2, 3, 4, 4))
    y, logdet = _fwd(layer, x)
    assert np.allclose(y, x)
    assert logdet == 0.0
    layer.w.data = 2.0 * np.eye(3)
    _, logdet = _fwd(layer, x)
    assert abs(logdet - 16 * 3 * np.log(2.0)) < 1e-10


def test_channel_mix_brute_force_jacobian():
    rng = np.random.default_rng(3)
    layer = ChannelMix(4, rng=rng)
    x0 = rng.standard_normal((4, 2, 2))
    with Tape():
        _, logdet = layer.forward(Tensor(x0[None]))
    assert abs(float(np.ravel(logdet.data)[0]) - _brute_logdet(layer, x0)) < 1e-6


def test_channel_mix_roundtrip_and_singular_rejection():
    rng = np.random.default_rng(4)
    layer = ChannelMix(4, rng=rng)
    x = rng.standard_normal((3, 4, 4, 4))
    y, _ = _fwd(layer, x)
    assert np.max(np.abs(layer.inverse(y) - x)) < 1e-10
    layer.w.data = np.zeros((4, 4))
    with pytest.raises(ValueError) as exc:
        _fwd(layer, x)
    assert "det" in str(exc.value)


# -- squeeze / dct ---------------------------------------------------------------

def test_squeeze_is_bit_exact_permutation():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((2, 3, 8, 8))
    layer = Squeeze()
    y, logdet = _fwd(layer, x)
    assert y.shape == (2, 12, 4, 4)
    assert sorted(y.ravel()) == sorted(x.ravel())
    assert np.array_equal(layer.inverse(y), x)
    assert logdet == 0.0


def test_squeeze_golden_layout():
    # 1x4x4 ramp: frozen expected layout of the 2x2 space-to-channel map
    x = np.arange(16.0).reshape(1, 1, 4, 4)
    y, _ = _fwd(Squeeze(), x)
    expected = ad.squeeze2x2(Tensor(x)).data  # self-consistency
    assert np.array_equal(y, expected)
    # each output channel is one 2x2 phase of the input checkerboard
    phases = {tuple(y[0, c].ravel()) for c in range(4)}
    want = {
        tuple(x[0, 0, i::2, j::2].ravel()) for i in (0, 1) for j in (0, 1)
    }
    assert phases == want


def test_dct_matrix_orthonormal_and_parseval():
    d = dct_matrix(4)
    assert np.allclose(d @ d.T, np.eye(4), atol=1e-12)
    rng = np.random.default_rng(6)
    x = rng.standard_normal((1, 2, 4, 4))
    layer = DCTReadout(4)
    y, logdet = _fwd(layer, x)
    assert logdet == 0.0
    assert abs(np.sum(x ** 2) - np.sum(y ** 2)) < 1e-10
    assert np.max(np.abs(layer.inverse(y) - x)) < 1e-10


def test_dct_constant_map_concentrates_energy():
    x = np.full((1, 1, 4, 4), 3.0)
    y, _ = _fwd(DCTReadout(4), x)
    assert abs(y[0, 0, 0, 0] - 12.0) < 1e-12  # 3 * sqrt(16)
    off = y.copy()
    off[0, 0, 0, 0] = 0.0
    assert np.max(np.abs(off)) < 1e-12


def test_zigzag_order_prefix():
    assert zigzag_order(3)[:4] == [(0, 0), (0, 1), (1, 0), (2, 0)]


# -- composed nets ----------------------------------------------------------------

@pytest.mark.parametrize("coupling", ["additive", "affine"])
def test_flat_flow_roundtrip(coupling):
    net = build_flat_flow(12, 2, blocks=3, width=16, coupling=coupling, seed=0)
    rng = np.random.default_rng(7)
    x = rng.standard_normal((20, 12))
    z, _ = net.forward_arrays(x)
    back = net.inverse_latent(z)
    assert np.max(np.abs(back - x)) < 1e-8


@pytest.mark.parametrize("split_mode,dct", [("first", False), ("dct-lowpass", True)])
def test_conv_flow_roundtrip(split_mode, dct):
    net = build_conv_flow((1, 8, 8), 4, blocks_per_stage=1, width=8,
                          split_mode=split_mode, dct_readout=dct, seed=0)
    rng = np.random.default_rng(8)
    x = rng.standard_normal((6, 1, 8, 8))
    z, _ = net.forward_arrays(x)
    back = net.inverse_latent(z)
    assert np.max(np.abs(back - x)) < 1e-8


def test_flat_flow_total_logdet_matches_brute_force():
    net = build_flat_flow(6, 2, blocks=2, width=8, coupling="affine", seed=1)
    rng = np.random.default_rng(9)
    x0 = rng.standard_normal(6)

    def f(flat):
        z, _ = net.forward_arrays(flat.reshape(1, 6))
        return z.ravel()

    jac = finite_difference_jacobian(f, x0)
    with Tape():
        _, logdet = net.forward(Tensor(x0[None]))
    assert abs(float(logdet.data[0]) - np.linalg.slogdet(jac)[1]) < 1e-5


def test_classify_conventions_and_invariance():
    net = build_flat_flow(8, 3, blocks=2, width=8, seed=2)
    assert net.classify(np.zeros((1, 8)))[0] == 0  # tie -> lowest index
    rng = np.random.default_rng(10)
    z_s = rng.standard_normal((5, 3))
    z_n = rng.standard_normal((5, 5))
    x = net.inverse(z_s, z_n)
    assert np.array_equal(net.classify(x), np.argmax(z_s, axis=1))
    # swapping in any other nuisance cannot change the decision
    x2 = net.inverse(z_s, rng.standard_normal((5, 5)) * 3.0)
    assert np.array_equal(net.classify(x2), np.argmax(z_s, axis=1))


def test_split_partition_invariant():
    net = build_conv_flow((1, 8, 8), 4, blocks_per_stage=1, width=8, seed=0)
    assert len(net.sem_idx) == 4
    together = np.sort(np.concatenate([net.sem_idx, net.nuis_idx]))
    assert np.array_equal(together, np.arange(net.d))


def test_logdet_sums_over_layers():
    net = build_flat_flow(6, 2, blocks=2, width=8, coupling="affine", seed=3)
    rng = np.random.default_rng(11)
    x = rng.standard_normal((3, 6))
    with Tape():
        _, total = net.forward(Tensor(x))
        acc = np.zeros(3)
        h = Tensor(x)
        for item in net.items:
            if not hasattr(item, "forward"):
                continue
            h, ld = item.forward(h)
            acc = acc + np.broadcast_to(np.atleast_1d(ld.data), (3,))
    assert np.allclose(total.data, acc, atol=1e-10)
