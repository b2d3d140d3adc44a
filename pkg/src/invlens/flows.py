"""Invertible layer zoo and the fully invertible classifier network.

Every layer provides forward(x) -> (y, logdet) on Tensors (batched, batch
axis 0, channel/feature axis 1) and an exact inverse(arr) -> arr on raw
numpy arrays. Layers work on flat (N, d) inputs as well as (N, C, H, W)
feature maps; "channel" means axis 1 in both cases.
"""

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nets import MLP, ConvSubnet


def _spatial_size(shape):
    return int(np.prod(shape[2:])) if len(shape) > 2 else 1


def _no_tape_eval(fn, arr):
    """Evaluate a Tensor function on a raw array outside any tape."""
    tape_stack = ad._TAPE_STACK
    saved, ad._TAPE_STACK[:] = tape_stack[:], []
    try:
        return fn(Tensor(arr)).data
    finally:
        ad._TAPE_STACK[:] = saved


class ActNorm:
    """Per-channel affine y = s * (x + b) with data-dependent initialization."""

    kind = "actnorm"

    def __init__(self, channels, initialized=True):
        self.channels = channels
        self.s = Tensor(np.ones(channels), requires_grad=True)
        self.b = Tensor(np.zeros(channels), requires_grad=True)
        self.initialized = initialized

    def _chan_shape(self, ndim):
        return (1, self.channels) + (1,) * (ndim - 2)

    def _check_invertible(self):
        if np.any(self.s.data == 0.0):
            raise ValueError("actnorm has a zero scale; layer not invertible")

    def init_from_batch(self, arr):
        """Set s, b so the batch becomes per-channel zero-mean unit-variance."""
        if arr.shape[0] < 2:
            raise ValueError("actnorm init needs batch size >= 2")
        axes = tuple(i for i in range(arr.ndim) if i != 1)
        mean = arr.mean(axis=axes)
        std = arr.std(axis=axes)
        self.b.data = -mean
        self.s.data = 1.0 / (std + 1e-6)
        self.initialized = True

    def forward(self, x):
        if not self.initialized:
            raise RuntimeError("actnorm used before data-dependent initialization")
        self._check_invertible()
        cs = self._chan_shape(x.ndim)
        y = ad.mul(ad.add(x, ad.reshape(self.b, cs)), ad.reshape(self.s, cs))
        logdet = ad.mul(ad.tsum(ad.logabs(self.s)), float(_spatial_size(x.shape)))
        return y, logdet

    def inverse(self, arr):
        self._check_invertible()
        cs = self._chan_shape(arr.ndim)
        return arr / self.s.data.reshape(cs) - self.b.data.reshape(cs)

    def params(self):
        return [("s", self.s), ("b", self.b)]


class AdditiveCoupling:
    """y_passive = passive; y_active = active + t(passive). logdet exactly 0."""

    kind = "additive-coupling"

    def __init__(self, subnet, swap=False):
        self.subnet = subnet
        self.swap = swap

    def _split(self, x):
        c = x.shape[1]
        if c % 2:
            raise ValueError(f"coupling needs an even channel count, got {c}")
        a = ad.narrow(x, 1, 0, c // 2)
        b = ad.narrow(x, 1, c // 2, c // 2)
        return (b, a) if self.swap else (a, b)

    def forward(self, x):
        passive, active = self._split(x)
        out_active = ad.add(active, self.subnet(passive))
        parts = (out_active, passive) if self.swap else (passive, out_active)
        return ad.concat(parts, axis=1), Tensor(0.0)

    def inverse(self, arr):
        c = arr.shape[1]
        first, second = arr[:, :c // 2], arr[:, c // 2:]
        passive, active = (second, first) if self.swap else (first, second)
        t = _no_tape_eval(self.subnet, passive)
        rec = active - t
        parts = (rec, passive) if self.swap else (passive, rec)
        return np.ascontiguousarray(np.concatenate(parts, axis=1))

    def params(self):
        return [(f"subnet.{n}", p) for n, p in self.subnet.params()]


class AffineCoupling:
    """y_active = active * exp(clamp(raw, +-2)) + t; logdet = sum clamp(raw)."""

    kind = "affine-coupling"
    CLAMP = 2.0

    def __init__(self, subnet, swap=False):
        # subnet maps passive channels -> 2x active channels: [raw_scale, t]
        self.subnet = subnet
        self.swap = swap

    def _split(self, x):
        c = x.shape[1]
        if c % 2:
            raise ValueError(f"coupling needs an even channel count, got {c}")
        a = ad.narrow(x, 1, 0, c // 2)
        b = ad.narrow(x, 1, c // 2, c // 2)
        return (b, a) if self.swap else (a, b)

    def _scale_translate(self, passive):
        st = self.subnet(passive)
        half = st.shape[1] // 2
        raw = ad.clamp(ad.narrow(st, 1, 0, half), -self.CLAMP, self.CLAMP)
        t = ad.narrow(st, 1, half, half)
        return raw, t

    def forward(self, x):
        passive, active = self._split(x)
        raw, t = self._scale_translate(passive)
        out_active = ad.add(ad.mul(active, ad.exp(raw)), t)
        axes = tuple(range(1, len(raw.shape)))
        logdet = raw
        for ax in reversed(axes):
            logdet = ad.tsum(logdet, axis=ax)
        parts = (out_active, passive) if self.swap else (passive, out_active)
        return ad.concat(parts, axis=1), logdet

    def inverse(self, arr):
        c = arr.shape[1]
        first, second = arr[:, :c // 2], arr[:, c // 2:]
        passive, active = (second, first) if self.swap else (first, second)
        st = _no_tape_eval(self.subnet, passive)
        half = st.shape[1] // 2
        raw = np.clip(st[:, :half], -self.CLAMP, self.CLAMP)
        t = st[:, half:]
        rec = (active - t) * np.exp(-raw)
        parts = (rec, passive) if self.swap else (passive, rec)
        return np.ascontiguousarray(np.concatenate(parts, axis=1))

    def params(self):
        return [(f"subnet.{n}", p) for n, p in self.subnet.params()]


class ChannelMix:
    """Invertible 1x1 channel mixing y = W x per location (or y = W x for flat)."""

    kind = "channel-mix-1x1"
    DET_FLOOR = 1e-12

    def __init__(self, channels, rng=None):
        if rng is not None:
            q, _ = np.linalg.qr(rng.standard_normal((channels, channels)))
            w = q
        else:
            w = np.eye(channels)
        self.channels = channels
        self.w = Tensor(w, requires_grad=True)

    def _check_det(self):
        det = abs(float(np.linalg.det(self.w.data)))
        if det <= self.DET_FLOOR:
            raise ValueError(f"1x1 mix near-singular: |det W| = {det:.3e}")

    def forward(self, x):
        self._check_det()
        spatial = _spatial_size(x.shape)
        if x.ndim == 2:
            y = ad.matmul(x, ad.transpose(self.w))
        else:
            n, c = x.shape[0], x.shape[1]
            rest = x.shape[2:]
            t = ad.reshape(ad.transpose(x, (1, 0, 2, 3)), (c, n * spatial))
            y = ad.matmul(self.w, t)
            y = ad.transpose(ad.reshape(y, (c, n) + rest), (1, 0, 2, 3))
        logdet = ad.mul(ad.logabsdet(self.w), float(spatial))
        return y, logdet

    def inverse(self, arr):
        self._check_det()
        w_inv = np.linalg.inv(self.w.data)
        if arr.ndim == 2:
            return arr @ w_inv.T
        n, c = arr.shape[0], arr.shape[1]
        rest = arr.shape[2:]
        t = arr.transpose(1, 0, 2, 3).reshape(c, -1)
        x = (w_inv @ t).reshape((c, n) + rest).transpose(1, 0, 2, 3)
        return np.ascontiguousarray(x)

    def params(self):
        return [("w", self.w)]


class Squeeze:
    """2x2 space-to-channel permutation; volume preserving."""

    kind = "squeeze"

    def forward(self, x):
        return ad.squeeze2x2(x), Tensor(0.0)

    def inverse(self, arr):
        return ad.unsqueeze2x2(arr)

    def params(self):
        return []


def dct_matrix(n):
    """Orthonormal DCT-II matrix: row k, column j."""
    j = np.arange(n)
    d = np.cos(np.pi * (2 * j[None, :] + 1) * j[:, None] / (2 * n)) * np.sqrt(2.0 / n)
    d[0, :] = np.sqrt(1.0 / n)
    return d


def zigzag_order(n):
    """(u, v) index pairs of an n x n grid in JPEG zig-zag order."""
    order = []
    for s in range(2 * n - 1):
        ij = [(i, s - i) for i in range(max(0, s - n + 1), min(s, n - 1) + 1)]
        if s % 2 == 0:
            ij.reverse()
        order.extend(ij)
    return order


class DCTReadout:
    """Orthonormal 2D DCT-II applied per channel; logdet 0 (orthogonal)."""

    kind = "dct-readout"

    def __init__(self, size):
        self.size = size
        self.d = dct_matrix(size)

    def forward(self, x):
        if x.ndim != 4 or x.shape[2] != x.shape[3]:
            raise ValueError(f"dct readout needs square maps, got {x.shape}")
        return ad.mat_sandwich(x, self.d), Tensor(0.0)

    def inverse(self, arr):
        return np.einsum("ji,ncjk,kl->ncil", self.d, arr, self.d, optimize=True)

    def params(self):
        return []


class FactorOut:
    """Marker: route the last `channels` channels straight to the final latent."""

    kind = "factor-out"

    def __init__(self, channels):
        self.channels = channels

    def params(self):
        return []


class FullyInvertibleNet:
    """Composition of bijective layers with latent split (z_s, z_n).

    The final latent vector is laid out as
        [flatten(last-stage output), flatten(deepest factor-out), ...,
         flatten(first factor-out)]
    where flatten is row-major over (channel, height, width). Split mode
    "first" takes the first C latent coordinates as logits; "dct-lowpass"
    takes the C lowest-frequency DCT coefficients of the last-stage maps in
    zig-zag order (channels ascending within one frequency).
    """

    def __init__(self, items, input_shape, num_classes, split_mode="first", arch=None):
        self.items = list(items)
        self.input_shape = tuple(input_shape)
        self.num_classes = num_classes
        self.split_mode = split_mode
        self.arch = arch or {}
        self._simulate_shapes()
        self._compute_split()

    # -- static shape bookkeeping ----------------------------------------
    def _simulate_shapes(self):
        shape = self.input_shape
        factored = []
        for it in self.items:
            if isinstance(it, FactorOut):
                c = shape[0]
                if it.channels >= c:
                    raise ValueError("factor-out must keep at least one channel")
                factored.append((it.channels,) + shape[1:])
                shape = (c - it.channels,) + shape[1:]
            elif isinstance(it, Squeeze):
                c, h, w = shape
                if h % 2 or w % 2:
                    raise ValueError(f"squeeze on odd spatial size {h}x{w}")
                shape = (4 * c, h // 2, w // 2)
        self.final_shape = shape
        self.factored_shapes = factored
        self.segment_shapes = [shape] + list(reversed(factored))
        self.d = int(sum(np.prod(s) for s in self.segment_shapes))
        if self.num_classes >= self.d:
            raise ValueError("latent dimension must exceed class count")

    def _compute_split(self):
        c = self.num_classes
        if self.split_mode == "first":
            sem = np.arange(c)
        elif self.split_mode == "dct-lowpass":
            if len(self.final_shape) != 3:
                raise ValueError("dct-lowpass split needs feature-map output")
            ch, h, w = self.final_shape
            order = []
            for (u, v) in zigzag_order(h):
                for cc in range(ch):
                    order.append(cc * h * w + u * w + v)
            sem = np.array(order[:c])
        else:
            raise ValueError(f"unknown split mode {self.split_mode!r}")
        self.sem_idx = np.sort(sem)
        mask = np.ones(self.d, dtype=bool)
        mask[self.sem_idx] = False
        self.nuis_idx = np.nonzero(mask)[0]

    # -- forward / inverse -------------------------------------------------
    def forward(self, x):
        """x: Tensor of shape (N,) + input_shape. Returns (z, logdet)."""
        factored = []
        logdet = Tensor(0.0)
        h = x
        for it in self.items:
            if isinstance(it, FactorOut):
                c = h.shape[1]
                keep = ad.narrow(h, 1, 0, c - it.channels)
                out = ad.narrow(h, 1, c - it.channels, it.channels)
                factored.append(ad.flatten(out))
                h = keep
            else:
                h, ld = it.forward(h)
                logdet = ad.add(logdet, ld)
        parts = [ad.flatten(h)] + list(reversed(factored))
        z = parts[0] if len(parts) == 1 else ad.concat(parts, axis=1)
        return z, logdet

    def forward_arrays(self, x_arr):
        """No-grad forward on raw arrays; returns (z, logdet) arrays."""
        z, ld = _run_outside_tape(self.forward, x_arr)
        return z, ld

    def inverse_latent(self, z_arr):
        """Map a full latent batch (N, d) back to input space."""
        n = z_arr.shape[0]
        segs = []
        off = 0
        for s in self.segment_shapes:
            size = int(np.prod(s))
            segs.append(z_arr[:, off:off + size].reshape((n,) + s))
            off += size
        h = segs[0]
        factored = list(reversed(segs[1:]))  # back to forward encounter order
        for it in reversed(self.items):
            if isinstance(it, FactorOut):
                h = np.concatenate([h, factored.pop()], axis=1)
            else:
                h = it.inverse(h)
        return h

    def inverse(self, z_s, z_n):
        """Recombine semantic and nuisance codes and invert the network."""
        z_s = np.atleast_2d(np.asarray(z_s, dtype=np.float64))
        z_n = np.atleast_2d(np.asarray(z_n, dtype=np.float64))
        z = np.empty((z_s.shape[0], self.d))
        z[:, self.sem_idx] = z_s
        z[:, self.nuis_idx] = z_n
        return self.inverse_latent(z)

    def split_latent(self, z):
        """Tensor latent -> (z_s, z_n) Tensors."""
        return ad.take_cols(z, self.sem_idx), ad.take_cols(z, self.nuis_idx)

    def split_latent_arrays(self, z_arr):
        return z_arr[:, self.sem_idx], z_arr[:, self.nuis_idx]

    def logits(self, x):
        z, _ = self.forward(x)
        return ad.take_cols(z, self.sem_idx)

    def classify(self, x_arr):
        """argmax over z_s; ties resolve to the lowest class index."""
        z, _ = self.forward_arrays(np.asarray(x_arr, dtype=np.float64))
        return np.argmax(z[:, self.sem_idx], axis=1)

    def init_actnorms(self, batch_arr):
        """Data-dependent actnorm init, propagating the batch layer by layer."""
        h = np.asarray(batch_arr, dtype=np.float64)
        for it in self.items:
            if isinstance(it, FactorOut):
                h = h[:, :h.shape[1] - it.channels]
            else:
                if isinstance(it, ActNorm) and not it.initialized:
                    it.init_from_batch(h)
                h, _ = _run_outside_tape(it.forward, h)

    def params(self):
        out = []
        for i, it in enumerate(self.items):
            for n, p in it.params():
                out.append((f"layer{i}.{it.kind}.{n}", p))
        return out


def _run_outside_tape(fn, arr):
    saved, ad._TAPE_STACK[:] = ad._TAPE_STACK[:], []
    try:
        y, ld = fn(Tensor(np.asarray(arr, dtype=np.float64)))
        return y.data, ld.data
    finally:
        ad._TAPE_STACK[:] = saved


# -- architecture builders ----------------------------------------------------

def build_flat_flow(dim, num_classes, blocks=4, width=128, coupling="additive",
                    actnorm=True, actnorm_data_init=False, seed=0):
    """Fully connected invertible net for flat inputs (spheres)."""
    rng = np.random.default_rng(seed)
    if dim % 2:
        raise ValueError("flat flow needs an even input dimension")
    half = dim // 2
    items = []
    for i in range(blocks):
        if actnorm:
            items.append(ActNorm(dim, initialized=not actnorm_data_init))
        if coupling == "additive":
            subnet = MLP([half, width, width, half], rng, zero_init_last=True)
            items.append(AdditiveCoupling(subnet, swap=i % 2 == 1))
        else:
            subnet = MLP([half, width, width, 2 * half], rng, zero_init_last=True)
            items.append(AffineCoupling(subnet, swap=i % 2 == 1))
    arch = {"kind": "flat-flow", "dim": dim, "num_classes": num_classes,
            "blocks": blocks, "width": width, "coupling": coupling,
            "actnorm": actnorm, "actnorm_data_init": actnorm_data_init,
            "seed": seed}
    return FullyInvertibleNet(items, (dim,), num_classes, split_mode="first", arch=arch)


def build_conv_flow(input_shape, num_classes, blocks_per_stage=2, width=32,
                    split_mode="first", dct_readout=False,
                    actnorm_data_init=False, seed=0):
    """Convolutional invertible net: squeeze / blocks / factor-out stages.

    For 28x28 single-channel input the stage plan is
      squeeze -> stage(4ch@14x14) -> factor 2 -> squeeze -> stage(8ch@7x7)
      -> factor 4 -> stage(4ch@7x7) [-> dct readout]
    which preserves d = 784.
    """
    rng = np.random.default_rng(seed)
    c, h, w = input_shape
    items = []

    def stage(channels, n_blocks):
        for i in range(n_blocks):
            items.append(ActNorm(channels, initialized=not actnorm_data_init))
            items.append(ChannelMix(channels, rng))
            subnet = ConvSubnet(channels // 2, channels // 2, width, rng)
            items.append(AdditiveCoupling(subnet, swap=i % 2 == 1))

    items.append(Squeeze())
    c1 = 4 * c
    stage(c1, blocks_per_stage)
    items.append(FactorOut(c1 // 2))
    items.append(Squeeze())
    c2 = 4 * (c1 // 2)
    stage(c2, blocks_per_stage)
    items.append(FactorOut(c2 // 2))
    c3 = c2 // 2
    stage(c3, blocks_per_stage)
    if dct_readout:
        items.append(DCTReadout(h // 4))
    arch = {"kind": "conv-flow", "input_shape": list(input_shape),
            "num_classes": num_classes, "blocks_per_stage": blocks_per_stage,
            "width": width, "split_mode": split_mode,
            "dct_readout": dct_readout,
            "actnorm_data_init": actnorm_data_init, "seed": seed}
    return FullyInvertibleNet(items, input_shape, num_classes,
                              split_mode=split_mode, arch=arch)
