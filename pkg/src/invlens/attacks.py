"""Analysis instruments: metameric attacks, slice scans, pre-image checks,
the misaligned-sphere baseline, and post-hoc nuisance probes."""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, Tape, backward
from .nets import MLP
from .objectives import semantic_cross_entropy
from .optim import Adam


@dataclass
class MetamerResult:
    metamer: np.ndarray
    target_logits: np.ndarray
    achieved_logits: np.ndarray
    semantic_residual: float
    mse: float = 0.0
    iterations: int = 0


@dataclass
class SliceScan:
    p0: np.ndarray
    p1: np.ndarray
    p2: np.ndarray
    grid_n: int
    box: float
    a_values: np.ndarray = field(default=None)
    b_values: np.ndarray = field(default=None)
    decisions: dict = field(default_factory=dict)   # name -> (grid_n, grid_n) int map
    points: np.ndarray = field(default=None)        # (grid_n*grid_n, d)


def metamer_exact(net, x_semantic_source, x_nuisance_source):
    """x_met = F^-1(z_s from source 1, z_n from source 2); exact by inversion."""
    xs = np.asarray(x_semantic_source, dtype=np.float64)
    xn = np.asarray(x_nuisance_source, dtype=np.float64)
    if xs.ndim == len(net.input_shape):
        xs = xs[None]
    if xn.ndim == len(net.input_shape):
        xn = xn[None]
    zs_full, _ = net.forward_arrays(xs)
    zn_full, _ = net.forward_arrays(xn)
    z_s, _ = net.split_latent_arrays(zs_full)
    _, z_n = net.split_latent_arrays(zn_full)
    met = net.inverse(z_s, z_n)
    z_check, _ = net.forward_arrays(met)
    achieved = z_check[:, net.sem_idx]
    residual = float(np.max(np.abs(achieved - z_s)))
    return MetamerResult(metamer=met, target_logits=z_s, achieved_logits=achieved,
                         semantic_residual=residual)


def interpolate_nuisance(net, x, x_target, steps):
    """Hold z_s from x; linearly interpolate z_n toward the target's z_n."""
    if steps < 2:
        raise ValueError("need at least 2 interpolation steps")
    x = np.asarray(x, dtype=np.float64)
    x_target = np.asarray(x_target, dtype=np.float64)
    if x.ndim == len(net.input_shape):
        x = x[None]
    if x_target.ndim == len(net.input_shape):
        x_target = x_target[None]
    z0, _ = net.forward_arrays(x)
    z1, _ = net.forward_arrays(x_target)
    z_s, z_n0 = net.split_latent_arrays(z0)
    _, z_n1 = net.split_latent_arrays(z1)
    frames = []
    for t in np.linspace(0.0, 1.0, steps):
        z_n = (1.0 - t) * z_n0 + t * z_n1
        frames.append(net.inverse(z_s, z_n)[0])
    return np.stack(frames)


def metamer_gradient(model, x_logit_source, x_init, iters=3000, lr=0.01):
    """Adam descent on mean squared logit error; no input-norm constraint.

    `model` must expose logits(x: Tensor) -> Tensor.
    """
    xs = np.asarray(x_logit_source, dtype=np.float64)
    x0 = np.array(x_init, dtype=np.float64, copy=True)
    in_ndim = len(getattr(model, "input_shape", (None,)))
    if xs.ndim == in_ndim:
        xs = xs[None]
    if x0.ndim == in_ndim:
        x0 = x0[None]
    saved, ad._TAPE_STACK[:] = ad._TAPE_STACK[:], []
    try:
        target = model.logits(Tensor(xs)).data
    finally:
        ad._TAPE_STACK[:] = saved
    x = Tensor(x0, requires_grad=True)
    opt = Adam([x], lr=lr)
    k = target.shape[1]
    mse = np.inf
    for it in range(iters):
        with Tape():
            logits = model.logits(x)
            diff = ad.sub(logits, Tensor(target))
            loss = ad.mul(ad.tsum(ad.square(diff)), 1.0 / (k * target.shape[0]))
            mse = loss.item()
            if mse == 0.0:
                break
            backward(loss)
        opt.step()
        opt.zero_grad()
    saved, ad._TAPE_STACK[:] = ad._TAPE_STACK[:], []
    try:
        achieved = model.logits(x).data
    finally:
        ad._TAPE_STACK[:] = saved
    mse = float(np.mean((achieved - target) ** 2))
    return MetamerResult(metamer=x.data, target_logits=target, achieved_logits=achieved,
                         semantic_residual=float(np.max(np.abs(achieved - target))),
                         mse=mse, iterations=it + 1)


def scan_decision_slice(classifiers, p0, p1, p2, grid_n, box=1.5):
    """Evaluate classifiers on a grid over the plane p0 + a(p1-p0) + b(p2-p0)."""
    p0 = np.asarray(p0, dtype=np.float64).ravel()
    p1 = np.asarray(p1, dtype=np.float64).ravel()
    p2 = np.asarray(p2, dtype=np.float64).ravel()
    u, v = p1 - p0, p2 - p0
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0 or np.abs(np.dot(u, v)) / (nu * nv) > 1.0 - 1e-12:
        raise ValueError("slice plane is degenerate (collinear points)")
    a_vals = np.linspace(-box, box, grid_n)
    b_vals = np.linspace(-box, box, grid_n)
    aa, bb = np.meshgrid(a_vals, b_vals, indexing="ij")
    pts = p0[None, :] + aa.ravel()[:, None] * u[None, :] + bb.ravel()[:, None] * v[None, :]
    scan = SliceScan(p0=p0, p1=p1, p2=p2, grid_n=grid_n, box=box,
                     a_values=a_vals, b_values=b_vals, points=pts)
    if not isinstance(classifiers, dict):
        classifiers = {"classifier": classifiers}
    for name, clf in classifiers.items():
        scan.decisions[name] = np.asarray(clf(pts)).reshape(grid_n, grid_n)
    return scan


def preimage_membership(model, x, x_star, level, tol=1e-6, layer_index=None):
    """Membership of x_star in the pre-image of x at the given level.

    level: "layer_i" (needs layer_index and a model with .items), "logit",
    or "argmax".
    """
    x = np.asarray(x, dtype=np.float64)
    x_star = np.asarray(x_star, dtype=np.float64)
    if x.ndim == len(model.input_shape):
        x, x_star = x[None], x_star[None]
    if level == "argmax":
        return bool(np.all(model.classify(x) == model.classify(x_star)))
    if level == "logit":
        za, _ = model.forward_arrays(x)
        zb, _ = model.forward_arrays(x_star)
        return bool(np.max(np.abs(za[:, model.sem_idx] - zb[:, model.sem_idx])) <= tol)
    if level == "layer_i":
        if layer_index is None or not 0 <= layer_index < len(model.items):
            raise ValueError(f"invalid layer index {layer_index}")
        ha = _activations_at(model, x, layer_index)
        hb = _activations_at(model, x_star, layer_index)
        return bool(np.max(np.abs(ha - hb)) <= tol)
    raise ValueError(f"unknown pre-image level {level!r}")


def _activations_at(net, x_arr, layer_index):
    from .flows import FactorOut, _run_outside_tape
    h = np.asarray(x_arr, dtype=np.float64)
    for it in net.items[:layer_index + 1]:
        if isinstance(it, FactorOut):
            h = h[:, :h.shape[1] - it.channels]
        else:
            h, _ = _run_outside_tape(it.forward, h)
    return h


def misaligned_sphere_classifier(x, r1=1.0, r2=10.0):
    """Decision from the first d-1 coordinates only; 0 = inner, 1 = outer."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] < 2:
        raise ValueError("need dimension >= 2")
    partial = np.linalg.norm(x[:, :-1], axis=1)
    return (partial > 0.5 * (r1 + r2)).astype(np.int64)


def adversarial_last_coordinate(x, target_radius):
    """Move points to the target radius changing only the last coordinate.

    Requires ||x_{1..d-1}|| <= target_radius; infeasible rows are dropped.
    Returns (x_star, kept_mask).
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    partial_sq = np.sum(x[:, :-1] ** 2, axis=1)
    feasible = partial_sq <= target_radius ** 2
    out = x[feasible].copy()
    res = np.sqrt(target_radius ** 2 - partial_sq[feasible])
    sign = np.where(out[:, -1] >= 0, 1.0, -1.0)
    out[:, -1] = sign * res
    return out, feasible


def train_mlp_classifier(features, labels, num_classes, hidden=(512, 512),
                         epochs=20, batch_size=128, lr=1e-3, seed=0,
                         features_test=None, labels_test=None):
    """Train a fresh MLP classifier on raw feature arrays; returns (mlp, report)."""
    rng = np.random.default_rng(seed)
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    mlp = MLP([features.shape[1], *hidden, num_classes], rng)
    opt = Adam([p for _, p in mlp.params()], lr=lr)
    n = len(labels)
    for _ in range(epochs):
        order = rng.permutation(n)
        for i in range(0, n, batch_size):
            idx = order[i:i + batch_size]
            with Tape():
                logits = mlp(Tensor(features[idx]))
                loss = semantic_cross_entropy(logits, labels[idx])
                for p in opt.params:
                    p.grad = np.zeros_like(p.data)
                backward(loss)
            opt.step()
            opt.zero_grad()

    def predict(feats):
        saved, ad._TAPE_STACK[:] = ad._TAPE_STACK[:], []
        try:
            return np.argmax(mlp(Tensor(feats)).data, axis=1)
        finally:
            ad._TAPE_STACK[:] = saved

    report = {"train_error": float(np.mean(predict(features) != labels))}
    if features_test is not None:
        report["test_error"] = float(np.mean(predict(features_test)
                                             != np.asarray(labels_test)))
    return mlp, predict, report


def train_posthoc_nuisance_probe(net, train_batch, test_batch=None,
                                 hidden=(512, 512), epochs=20, lr=1e-3, seed=0):
    """Train a fresh classifier on frozen nuisance codes; the invariance meter."""
    z_tr, _ = net.forward_arrays(train_batch.inputs)
    _, zn_tr = net.split_latent_arrays(z_tr)
    zn_te, y_te = None, None
    if test_batch is not None:
        z_te, _ = net.forward_arrays(test_batch.inputs)
        _, zn_te = net.split_latent_arrays(z_te)
        y_te = test_batch.labels
    _, predict, report = train_mlp_classifier(
        zn_tr, train_batch.labels, net.num_classes, hidden=hidden,
        epochs=epochs, lr=lr, seed=seed, features_test=zn_te, labels_test=y_te)
    return predict, report
