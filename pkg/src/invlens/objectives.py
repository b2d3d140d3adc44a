"""Losses and the alternating minimax trainer.

The min player (feature extractor theta plus the factorial Gaussian prior)
descends  sCE + lambda_n * nCE + lambda_m * MLE_n ; the max player (the
nuisance classifier) ascends nCE with the nuisance code treated as a
constant. nCE is normalized by the nuisance dimensionality for both
players.
"""

import csv
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, Tape, backward
from .nets import MLP

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class LossReport:
    step: int
    sCE: float
    nCE: float
    MLE_n: float
    total_min_objective: float
    total_max_objective: float
    mi_lower_bound: float
    mi_lower_bound_raw: float
    semantic_train_acc: float
    nuisance_train_acc: float


class NuisanceClassifier:
    """Fully connected ReLU classifier on the nuisance code.

    With logit_bound > 0 the logits are squashed through bound * tanh(./bound),
    capping the classifier's confidence. That keeps the minimax gradient from
    vanishing once the classifier would otherwise saturate, at the price of a
    slightly looser variational family (max log-margin ~ 2 * bound).

    With input_noise > 0 the input is perturbed by Gaussian noise whose scale
    is input_noise times the per-dimension batch std. The resulting stochastic
    classifier is still a valid variational family (Jensen only loosens the
    bound), but its Bayes accuracy stays below 1, so it cannot memorise small
    training sets and the minimax gradient never dies.
    """

    def __init__(self, dim_in, num_classes, depth=3, width=512, seed=0,
                 logit_bound=0.0, input_noise=0.0):
        rng = np.random.default_rng(seed)
        sizes = [dim_in] + [width] * (depth - 1) + [num_classes]
        self.mlp = MLP(sizes, rng)
        self.dim_in = dim_in
        self.num_classes = num_classes
        self.logit_bound = float(logit_bound)
        self.input_noise = float(input_noise)
        self._noise_rng = np.random.default_rng(seed + 0x5EED)
        self.arch = {"kind": "nuisance-classifier", "dim_in": dim_in,
                     "num_classes": num_classes, "depth": depth,
                     "width": width, "seed": seed,
                     "logit_bound": self.logit_bound,
                     "input_noise": self.input_noise}

    def __call__(self, z_n):
        if self.input_noise > 0.0:
            sd = np.std(z_n.data, axis=0, keepdims=True) + 1e-8
            eps = self._noise_rng.standard_normal(z_n.data.shape)
            z_n = ad.add(z_n, Tensor(self.input_noise * sd * eps))
        out = self.mlp(z_n)
        if self.logit_bound > 0.0:
            out = ad.mul(ad.tanh(ad.mul(out, 1.0 / self.logit_bound)),
                         self.logit_bound)
        return out

    def log_probs(self, z_n):
        return ad.log_softmax(self(z_n), axis=1)

    def classify(self, z_n_arr):
        saved, ad._TAPE_STACK[:] = ad._TAPE_STACK[:], []
        try:
            return np.argmax(self.mlp(Tensor(z_n_arr)).data, axis=1)
        finally:
            ad._TAPE_STACK[:] = saved

    def params(self):
        return self.mlp.params()


class GaussianPrior:
    """Factorial Gaussian with learned per-dimension mean and scale."""

    def __init__(self, dim):
        self.dim = dim
        self.beta = Tensor(np.zeros(dim), requires_grad=True)
        self.rho = Tensor(np.zeros(dim), requires_grad=True)  # softplus(0) ~ 0.693

    def gamma(self):
        return ad.add(ad.softplus(self.rho), 1e-6)

    def log_prob(self, z_n):
        """Per-sample sum over dimensions of log N(z; beta, gamma)."""
        g = self.gamma()
        diff = ad.sub(z_n, self.beta)
        quad = ad.div(ad.square(diff), ad.mul(ad.square(g), 2.0))
        per_dim = ad.sub(Tensor(-0.5 * LOG_2PI), ad.add(ad.log(g), quad))
        return ad.tsum(per_dim, axis=1)

    def params(self):
        return [("prior.beta", self.beta), ("prior.rho", self.rho)]


def _check_labels(labels, num_classes):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ValueError(f"label out of range [0, {num_classes}): {labels.max()}")
    return labels


def semantic_cross_entropy(z_s, labels):
    """Mean over the batch of -log softmax(z_s)[label], via logsumexp."""
    labels = _check_labels(labels, z_s.shape[1])
    logp = ad.log_softmax(z_s, axis=1)
    return ad.mul(ad.tmean(_pick(logp, labels)), -1.0)


def _pick(mat, labels):
    """mat[i, labels[i]] as a (N,) Tensor."""
    n, c = mat.shape
    flat = ad.reshape(mat, (n * c, 1))
    idx = np.arange(n) * c + labels
    return ad.reshape(ad.gather_rows(flat, idx), (n,))


def nuisance_cross_entropy(z_n, labels, nc, normalize=True):
    """Mean of +log D_nc(z_n)[label]; maximized in the nc, minimized in theta.

    Normalized by the nuisance dimensionality (applied to both players).
    """
    if z_n.shape[1] != nc.dim_in:
        raise ValueError(f"nuisance dim mismatch: code {z_n.shape[1]}, "
                         f"classifier expects {nc.dim_in}")
    labels = _check_labels(labels, nc.num_classes)
    logp = nc.log_probs(z_n)
    val = ad.tmean(_pick(logp, labels))
    if normalize:
        val = ad.mul(val, 1.0 / z_n.shape[1])
    return val


def mle_nuisance(z_n, logdet, prior):
    """Negative mean log-likelihood of z_n under the prior, with logdet credit."""
    lp = ad.tmean(prior.log_prob(z_n))
    ld = logdet if logdet.ndim == 0 else ad.tmean(logdet)
    return ad.mul(ad.add(lp, ld), -1.0)


def label_entropy(labels, num_classes):
    """Empirical entropy (nats) of batch label frequencies."""
    counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=num_classes)
    p = counts / counts.sum()
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def mi_lower_bound(z_n_arr, labels, nc):
    """Variational lower bound on I(y; z_n) in nats: h(y) + E log D_nc(z_n)[y].

    Returns (clamped-at-zero value, raw value).
    """
    labels = _check_labels(labels, nc.num_classes)
    saved, ad._TAPE_STACK[:] = ad._TAPE_STACK[:], []
    try:
        logp = nc.log_probs(Tensor(z_n_arr)).data
    finally:
        ad._TAPE_STACK[:] = saved
    raw = label_entropy(labels, nc.num_classes) + float(np.mean(logp[np.arange(len(labels)), labels]))
    return max(raw, 0.0), raw


def total_objective(z_s, z_n, logdet, labels, nc=None, prior=None,
                    lambda_n=1.0, lambda_m=1.0, step=0):
    """Assemble the full LossReport for one batch (no parameter updates)."""
    if lambda_n < 0 or lambda_m < 0:
        raise ValueError("loss weights must be >= 0")
    sce = semantic_cross_entropy(z_s, labels)
    total = sce
    nce_val, mle_val = 0.0, 0.0
    mi_clamped, mi_raw = 0.0, 0.0
    nuis_acc = 0.0
    if nc is not None and lambda_n > 0.0:
        nce = nuisance_cross_entropy(z_n, labels, nc)
        total = ad.add(total, ad.mul(nce, lambda_n))
        nce_val = nce.item()
    if prior is not None and lambda_m > 0.0:
        mle = mle_nuisance(z_n, logdet, prior)
        total = ad.add(total, ad.mul(mle, lambda_m))
        mle_val = mle.item()
    if nc is not None:
        mi_clamped, mi_raw = mi_lower_bound(z_n.data, labels, nc)
        nuis_acc = float(np.mean(nc.classify(z_n.data) == np.asarray(labels)))
    labels = np.asarray(labels, dtype=np.int64)
    report = LossReport(
        step=step, sCE=sce.item(), nCE=nce_val, MLE_n=mle_val,
        total_min_objective=total.item(), total_max_objective=nce_val,
        mi_lower_bound=mi_clamped, mi_lower_bound_raw=mi_raw,
        semantic_train_acc=float(np.mean(np.argmax(z_s.data, axis=1) == labels)),
        nuisance_train_acc=nuis_acc)
    return total, report


class Trainer:
    """Alternating minimax trainer; plain CE training is the nc=None case."""

    def __init__(self, net, opt_theta, nc=None, opt_nc=None, prior=None,
                 lambda_n=1.0, lambda_m=1.0, k_nc=1):
        if lambda_n < 0 or lambda_m < 0:
            raise ValueError("loss weights must be >= 0")
        self.net = net
        self.nc = nc
        self.prior = prior
        self.opt_theta = opt_theta
        self.opt_nc = opt_nc
        self.lambda_n = lambda_n
        self.lambda_m = lambda_m
        self.k_nc = k_nc
        self.step_count = 0

    def _zero_fill(self, opt):
        for p in opt.params:
            p.grad = np.zeros_like(p.data)

    def step(self, x_arr, labels):
        """One alternating update; returns a LossReport."""
        self.step_count += 1
        labels = np.asarray(labels, dtype=np.int64)
        nce_val = 0.0
        nuis_acc = 0.0
        mi_clamped, mi_raw = 0.0, 0.0

        if self.nc is not None and self.k_nc > 0:
            # max player: nuisance code treated as a constant
            z_const, _ = self.net.forward_arrays(x_arr)
            _, z_n_const = self.net.split_latent_arrays(z_const)
            for _ in range(self.k_nc):
                with Tape():
                    nce = nuisance_cross_entropy(Tensor(z_n_const), labels, self.nc)
                    self._zero_fill(self.opt_nc)
                    backward(ad.mul(nce, -1.0))  # ascend nCE
                self.opt_nc.step()
                self.opt_nc.zero_grad()

        # min player
        with Tape():
            z, logdet = self.net.forward(Tensor(np.asarray(x_arr, dtype=np.float64)))
            z_s, z_n = self.net.split_latent(z)
            sce = semantic_cross_entropy(z_s, labels)
            total = sce
            mle_val = 0.0
            if self.nc is not None and self.lambda_n > 0.0:
                nce = nuisance_cross_entropy(z_n, labels, self.nc)
                total = ad.add(total, ad.mul(nce, self.lambda_n))
                nce_val = nce.item()
            if self.prior is not None and self.lambda_m > 0.0:
                mle = mle_nuisance(z_n, logdet, self.prior)
                total = ad.add(total, ad.mul(mle, self.lambda_m))
                mle_val = mle.item()
            self._zero_fill(self.opt_theta)
            backward(total)
            sce_val = sce.item()
            total_val = total.item()
            sem_acc = float(np.mean(np.argmax(z_s.data, axis=1) == labels))
            z_n_data = z_n.data
        self.opt_theta.step()
        self.opt_theta.zero_grad()
        if self.nc is not None:
            self.opt_nc.zero_grad()  # drop gradients leaked from the min step
            mi_clamped, mi_raw = mi_lower_bound(z_n_data, labels, self.nc)
            nuis_acc = float(np.mean(self.nc.classify(z_n_data) == labels))
            if self.lambda_n == 0.0:
                saved, ad._TAPE_STACK[:] = ad._TAPE_STACK[:], []
                try:
                    nce_val = nuisance_cross_entropy(Tensor(z_n_data), labels, self.nc).item()
                finally:
                    ad._TAPE_STACK[:] = saved
        return LossReport(
            step=self.step_count, sCE=sce_val, nCE=nce_val, MLE_n=mle_val,
            total_min_objective=total_val, total_max_objective=nce_val,
            mi_lower_bound=mi_clamped, mi_lower_bound_raw=mi_raw,
            semantic_train_acc=sem_acc, nuisance_train_acc=nuis_acc)


METRIC_FIELDS = ["step", "sCE", "nCE", "MLE_n", "mi_lower_bound",
                 "semantic_train_acc", "nuisance_train_acc"]


class MetricsWriter:
    """Appends one CSV row per training step."""

    def __init__(self, path):
        self.path = path
        self._fh = open(path, "w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(METRIC_FIELDS)

    def write(self, report):
        self._writer.writerow([report.step] +
                              [repr(getattr(report, f)) for f in METRIC_FIELDS[1:]])
        self._fh.flush()

    def close(self):
        self._fh.close()
