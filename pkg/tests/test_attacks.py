"""Attack and analysis instruments on small exactly-invertible models."""

import numpy as np
import pytest

from invlens.attacks import (adversarial_last_coordinate, interpolate_nuisance,
                             metamer_exact, metamer_gradient,
                             misaligned_sphere_classifier, preimage_membership,
                             scan_decision_slice, train_mlp_classifier,
                             train_posthoc_nuisance_probe)
from invlens.datagen import LabeledBatch, SpheresSpec, sample_spheres
from invlens.flows import build_flat_flow


@pytest.fixture(scope="module")
def net():
    return build_flat_flow(10, 2, blocks=3, width=16, seed=0)


def _pts(n, seed=0, d=10):
    return np.random.default_rng(seed).standard_normal((n, d))


# -- exact metamers --------------------------------------------------------------

def test_metamer_self_pair_is_identity(net):
    x = _pts(4, 1)
    res = metamer_exact(net, x, x)
    assert np.max(np.abs(res.metamer - x)) < 1e-8
    assert res.semantic_residual < 1e-9


def test_metamer_matches_semantics_exactly(net):
    xs, xn = _pts(6, 2), _pts(6, 3)
    res = metamer_exact(net, xs, xn)
    assert res.semantic_residual < 1e-9
    # decision agrees with the semantic source on every pair
    assert np.array_equal(net.classify(res.metamer), net.classify(xs))
    # and the metamer carries the nuisance of the other source
    z_met, _ = net.forward_arrays(res.metamer)
    z_n_src, _ = net.forward_arrays(xn)
    _, zn_met = net.split_latent_arrays(z_met)
    _, zn_src = net.split_latent_arrays(z_n_src)
    assert np.max(np.abs(zn_met - zn_src)) < 1e-8


def test_metamer_accepts_single_samples(net):
    res = metamer_exact(net, _pts(1, 4)[0], _pts(1, 5)[0])
    assert res.metamer.shape == (1, 10)


# -- nuisance interpolation -------------------------------------------------------

def test_interpolation_endpoints_and_logit_constancy(net):
    a, b = _pts(1, 6)[0], _pts(1, 7)[0]
    frames = interpolate_nuisance(net, a, b, steps=7)
    assert frames.shape == (7, 10)
    assert np.max(np.abs(frames[0] - a)) < 1e-8
    # every frame carries the source's semantic code exactly
    z, _ = net.forward_arrays(frames)
    z_a, _ = net.forward_arrays(a[None])
    assert np.max(np.abs(z[:, net.sem_idx] - z_a[:, net.sem_idx])) < 1e-8
    # final frame has the target's nuisance code
    z_b, _ = net.forward_arrays(b[None])
    assert np.max(np.abs(z[-1:, net.nuis_idx] - z_b[:, net.nuis_idx])) < 1e-8
    with pytest.raises(ValueError):
        interpolate_nuisance(net, a, b, steps=1)


# -- gradient metamer ---------------------------------------------------------------

class _LinearModel:
    input_shape = (3,)

    def __init__(self, w):
        from invlens.autodiff import Tensor
        self.w = Tensor(np.asarray(w, dtype=np.float64))

    def logits(self, x):
        from invlens import autodiff as ad
        return ad.matmul(x, self.w)


def test_gradient_metamer_zero_residual_at_solution():
    model = _LinearModel(np.eye(3))
    x = np.array([[0.3, -0.2, 0.5]])
    res = metamer_gradient(model, x, x, iters=50, lr=0.1)
    assert res.mse < 1e-20
    assert res.iterations <= 2  # converged immediately


def test_gradient_metamer_recovers_linear_targets():
    rng = np.random.default_rng(8)
    model = _LinearModel(rng.standard_normal((3, 2)))
    target_x = rng.standard_normal((1, 3))
    init = rng.standard_normal((1, 3))
    res = metamer_gradient(model, target_x, init, iters=2000, lr=0.05)
    assert res.mse < 1e-8
    assert res.achieved_logits.shape == res.target_logits.shape


def test_gradient_metamer_on_flow_baseline(net):
    xs, x0 = _pts(1, 9), _pts(1, 10)
    res = metamer_gradient(net, xs, x0, iters=600, lr=0.05)
    assert res.mse < 1e-4
    assert np.array_equal(net.classify(res.metamer), net.classify(xs))


# -- decision slices ----------------------------------------------------------------

def test_slice_scan_grid_and_plane_geometry():
    p0 = np.zeros(4)
    p1 = np.array([1.0, 0, 0, 0])
    p2 = np.array([0, 1.0, 0, 0])

    def clf(pts):
        return (pts[:, 0] > 0.25).astype(int)

    scan = scan_decision_slice({"halfspace": clf}, p0, p1, p2, grid_n=9, box=1.0)
    dec = scan.decisions["halfspace"]
    assert dec.shape == (9, 9)
    # decisions depend on the a-axis only: constant along b
    assert np.all(dec == dec[:, :1])
    # a-grid crosses 0.25 between indices: verify against the a values
    assert np.array_equal(dec[:, 0], (scan.a_values > 0.25).astype(int))
    # the three anchor points land on the grid at (a,b) = (0,0), (1,0), (0,1)
    pts = scan.points.reshape(9, 9, 4)
    ia = int(np.argmin(np.abs(scan.a_values - 0.0)))
    ib = int(np.argmin(np.abs(scan.a_values - 1.0)))
    assert np.allclose(pts[ia, ia], p0)
    assert np.allclose(pts[ib, ia], p1)
    assert np.allclose(pts[ia, ib], p2)


def test_slice_scan_rejects_collinear_plane():
    with pytest.raises(ValueError):
        scan_decision_slice(lambda p: np.zeros(len(p), dtype=int),
                            np.zeros(3), np.ones(3), 2.0 * np.ones(3), grid_n=4)


# -- pre-image membership -------------------------------------------------------------

def test_preimage_inclusion_chain(net):
    # metamers agree at the logit level, hence also at argmax, but generally
    # not at intermediate layers
    xs, xn = _pts(1, 11), _pts(1, 12)
    met = metamer_exact(net, xs, xn).metamer
    assert preimage_membership(net, xs, met, "logit", tol=1e-6)
    assert preimage_membership(net, xs, met, "argmax")
    assert not preimage_membership(net, xs, met, "layer_i", tol=1e-6,
                                   layer_index=0)
    # a point equal at an early layer is equal at every later level
    assert preimage_membership(net, xs, xs.copy(), "layer_i", tol=0.0,
                               layer_index=1)


def test_preimage_validation(net):
    x = _pts(1, 13)
    with pytest.raises(ValueError):
        preimage_membership(net, x, x, "layer_i")
    with pytest.raises(ValueError):
        preimage_membership(net, x, x, "pixel")


# -- misaligned sphere baseline --------------------------------------------------------

def test_misaligned_classifier_clean_accuracy_high():
    spec = SpheresSpec(d=50, n_train=2000, n_test=2000, seed=0)
    batch = sample_spheres(spec, "test_clean")
    pred = misaligned_sphere_classifier(batch.inputs)
    # dropping one of 50 coordinates barely moves the norm: near-perfect
    assert np.mean(pred == batch.labels) > 0.99


def test_adversarial_last_coordinate_fools_misaligned():
    spec = SpheresSpec(d=50, n_train=2000, n_test=2000, seed=1)
    batch = sample_spheres(spec, "test_clean")
    inner = batch.inputs[batch.labels == 0]
    # move inner-sphere points to the outer radius touching only coord d:
    # still classified inner by the misaligned rule, but truly outer
    x_star, kept = adversarial_last_coordinate(inner, target_radius=10.0)
    assert kept.all()
    assert np.max(np.abs(np.linalg.norm(x_star, axis=1) - 10.0)) < 1e-9
    assert np.max(np.abs(x_star[:, :-1] - inner[:, :-1])) == 0.0
    pred = misaligned_sphere_classifier(x_star)
    assert np.mean(pred == 0) > 0.99  # fooled: says inner


def test_adversarial_last_coordinate_drops_infeasible():
    x = np.array([[3.0, 0.0], [0.5, 0.2]])
    out, kept = adversarial_last_coordinate(x, target_radius=1.0)
    assert list(kept) == [False, True]
    assert len(out) == 1


def test_misaligned_classifier_rejects_1d():
    with pytest.raises(ValueError):
        misaligned_sphere_classifier(np.zeros((3, 1)))


# -- probes ------------------------------------------------------------------------------

def test_mlp_classifier_fits_separable_data():
    rng = np.random.default_rng(14)
    x = rng.standard_normal((200, 4))
    y = (x[:, 0] > 0).astype(np.int64)
    _, predict, report = train_mlp_classifier(x, y, 2, hidden=(16,), epochs=60,
                                              lr=1e-2, seed=0, features_test=x,
                                              labels_test=y)
    assert report["train_error"] < 0.05
    assert report["test_error"] == report["train_error"]
    assert set(np.unique(predict(x))) <= {0, 1}


def test_posthoc_probe_reads_label_from_untrained_flow(net):
    # an untrained flow leaks the input, so a probe on z_n can recover a
    # label that is a simple function of the input
    rng = np.random.default_rng(15)
    x = rng.standard_normal((300, 10))
    y = (x[:, 5] > 0).astype(np.int64)
    train = LabeledBatch(x, y)
    probe_net = build_flat_flow(10, 2, blocks=2, width=16, seed=4)
    _, report = train_posthoc_nuisance_probe(probe_net, train, train,
                                             hidden=(64,), epochs=30, lr=1e-2,
                                             seed=0)
    assert report["train_error"] < 0.1
    assert report["test_error"] < 0.1
