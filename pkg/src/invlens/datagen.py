"""Dataset construction: adversarial spheres, IDX parsing, shiftMNIST variants.

Real MNIST is read from IDX files under INVLENS_DATA_DIR (or an explicit
directory). When no IDX files are available, a bundled stand-in is used:
the scikit-learn 8x8 digits upscaled to 28x28. All image batches are float64
in [0, 1] with shape (N, 1, 28, 28).
"""

import os
import struct
from dataclasses import dataclass

import numpy as np

from .textures import TextureBank, DirectoryTextureBank

IDX_MAGIC_IMAGES = 0x00000803
IDX_MAGIC_LABELS = 0x00000801


@dataclass
class LabeledBatch:
    inputs: np.ndarray
    labels: np.ndarray
    split_tag: str = "train"

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.inputs = np.asarray(self.inputs, dtype=np.float64)

    def __len__(self):
        return len(self.labels)


@dataclass
class SpheresSpec:
    d: int = 100
    r1: float = 1.0
    r2: float = 10.0
    n_train: int = 100_000
    n_test: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.r1 < self.r2):
            raise ValueError(f"need 0 < R1 < R2, got {self.r1}, {self.r2}")


def _sphere_points(n, d, radius, rng):
    v = rng.standard_normal((n, d))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * radius


def sample_spheres(spec, split="train"):
    """Balanced uniform-on-sphere samples; label 0 -> R1, label 1 -> R2."""
    n = spec.n_train if split == "train" else spec.n_test
    if n % 2:
        raise ValueError("sample count must be even for exact class balance")
    seed_off = {"train": 0, "test_clean": 1, "test_adv": 2}[split]
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, seed_off]))
    half = n // 2
    x = np.concatenate([_sphere_points(half, spec.d, spec.r1, rng),
                        _sphere_points(half, spec.d, spec.r2, rng)])
    y = np.concatenate([np.zeros(half, dtype=np.int64), np.ones(half, dtype=np.int64)])
    perm = rng.permutation(n)
    return LabeledBatch(x[perm], y[perm], split_tag=split)


def perturb_sphere_norm(x, target_radius):
    """Rescale to the target radius: the canonical semantic perturbation."""
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        raise ValueError("cannot rescale the zero vector")
    return x * (target_radius / norms)


def rotate_sphere(x, plane, angle):
    """Rotate in the (i, j) coordinate plane; norm-preserving nuisance."""
    i, j = plane
    out = np.array(x, dtype=np.float64)
    c, s = np.cos(angle), np.sin(angle)
    xi, xj = out[..., i].copy(), out[..., j].copy()
    out[..., i] = c * xi - s * xj
    out[..., j] = s * xi + c * xj
    return out


# -- IDX wire format ----------------------------------------------------------

def parse_idx(path):
    """Parse one IDX file; returns a float images array in [0,1] or labels."""
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 8:
        raise ValueError(f"{path}: truncated IDX header")
    (magic,) = struct.unpack(">I", data[:4])
    if magic == IDX_MAGIC_IMAGES:
        ndim = 3
    elif magic == IDX_MAGIC_LABELS:
        ndim = 1
    else:
        raise ValueError(f"{path}: bad IDX magic 0x{magic:08x} "
                         f"(expected 0x{IDX_MAGIC_IMAGES:08x} or 0x{IDX_MAGIC_LABELS:08x})")
    dims = struct.unpack(f">{ndim}I", data[4:4 + 4 * ndim])
    off = 4 + 4 * ndim
    count = int(np.prod(dims))
    if len(data) - off != count:
        raise ValueError(f"{path}: expected {count} payload bytes, found {len(data) - off}")
    raw = np.frombuffer(data, dtype=np.uint8, offset=off)
    if magic == IDX_MAGIC_LABELS:
        return raw.astype(np.int64)
    n, h, w = dims
    return raw.reshape(n, 1, h, w).astype(np.float64) / 255.0


def write_idx_images(path, images):
    """images: (N, 1, H, W) floats in [0,1]; stored as uint8."""
    n, _, h, w = images.shape
    arr = np.clip(np.round(images[:, 0] * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_MAGIC_IMAGES, n, h, w))
        f.write(arr.tobytes())


def write_idx_labels(path, labels):
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">II", IDX_MAGIC_LABELS, len(labels)))
        f.write(labels.tobytes())


def load_idx_pair(images_path, labels_path, split_tag):
    images = parse_idx(images_path)
    labels = parse_idx(labels_path)
    if images.ndim != 4:
        raise ValueError(f"{images_path} is not an images file")
    if labels.ndim != 1:
        raise ValueError(f"{labels_path} is not a labels file")
    if len(images) != len(labels):
        raise ValueError(f"image/label count mismatch: {len(images)} vs {len(labels)}")
    return LabeledBatch(images, labels, split_tag=split_tag)


# -- builtin digits fallback ---------------------------------------------------

_MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def load_builtin_digits(seed=0, train_fraction=0.8):
    """Upscaled scikit-learn digits (8x8 -> 28x28) as an MNIST stand-in."""
    from sklearn.datasets import load_digits
    raw = load_digits()
    imgs = raw.images / 16.0
    big = np.kron(imgs, np.ones((3, 3)))               # 8x8 -> 24x24
    big = np.pad(big, ((0, 0), (2, 2), (2, 2)))        # -> 28x28
    big = big[:, None, :, :]
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(big))
    big, labels = big[perm], raw.target[perm].astype(np.int64)
    n_train = int(len(big) * train_fraction)
    return (LabeledBatch(big[:n_train], labels[:n_train], "train"),
            LabeledBatch(big[n_train:], labels[n_train:], "test_clean"))


def load_mnist(data_dir=None, max_train=None, seed=0):
    """Real MNIST from IDX files if available, else the builtin stand-in.

    Returns (train, test_clean, source_name).
    """
    data_dir = data_dir or os.environ.get("INVLENS_DATA_DIR")
    if data_dir:
        ti, tl = (os.path.join(data_dir, f) for f in _MNIST_FILES["train"])
        vi, vl = (os.path.join(data_dir, f) for f in _MNIST_FILES["test"])
        if all(os.path.exists(p) for p in (ti, tl, vi, vl)):
            train = load_idx_pair(ti, tl, "train")
            test = load_idx_pair(vi, vl, "test_clean")
            if max_train is not None and len(train) > max_train:
                rng = np.random.default_rng(seed)
                keep = rng.permutation(len(train))[:max_train]
                train = LabeledBatch(train.inputs[keep], train.labels[keep], "train")
            return train, test, "mnist-idx"
    train, test = load_builtin_digits(seed=seed)
    return train, test, "builtin-digits"


def dequantize(images, seed):
    """Spread 256-level pixels over [0, 1): out = (255 * x + U[0, 1)) / 256."""
    rng = np.random.default_rng(seed)
    noise = rng.random(images.shape)
    return (images * 255.0 + noise) / 256.0


# -- shiftMNIST ----------------------------------------------------------------

def shortcut_pixel_row(label):
    return 2 + 2 * int(label)


def make_binary_shift(batch, coupling, seed=0):
    """Plant / remove / randomize the single-pixel class code at column 0."""
    if batch.inputs.shape[2] < 22 or batch.inputs.shape[3] < 1:
        raise ValueError("binary shift needs 28x28-style inputs")
    imgs = batch.inputs.copy()
    n = len(batch)
    if coupling == "planted":
        rows = [shortcut_pixel_row(y) for y in batch.labels]
        imgs[np.arange(n), 0, rows, 0] = 1.0
        tag = "train"
    elif coupling == "removed":
        tag = "test_adv"
    elif coupling == "randomized":
        rng = np.random.default_rng(seed)
        fake = rng.integers(0, 10, size=n)
        rows = [shortcut_pixel_row(y) for y in fake]
        imgs[np.arange(n), 0, rows, 0] = 1.0
        tag = "test_adv"
    else:
        raise ValueError(f"unknown coupling {coupling!r} "
                         "(allowed: planted, removed, randomized)")
    return LabeledBatch(imgs, batch.labels.copy(), split_tag=tag)


@dataclass
class ShiftSpec:
    variant: str = "texture"
    coupling: str = "planted"
    texture_source: str = "procedural"   # or a directory path
    mask_threshold: float = 0.3
    amplitude: float = 0.7
    seed: int = 0


def make_texture_shift(batch, coupling, spec=None):
    """Composite digit foregrounds over class-coded or random textures."""
    spec = spec or ShiftSpec(coupling=coupling)
    size = batch.inputs.shape[2]
    if spec.texture_source == "procedural":
        bank = TextureBank(size, amplitude=spec.amplitude)
    else:
        bank = DirectoryTextureBank(spec.texture_source, size)
    rng = np.random.default_rng(spec.seed)
    n = len(batch)
    if coupling == "planted":
        tex_classes = batch.labels
        tag = "train"
    elif coupling == "randomized":
        tex_classes = rng.integers(0, 10, size=n)
        tag = "test_adv"
    else:
        raise ValueError(f"unknown texture coupling {coupling!r} "
                         "(allowed: planted, randomized)")
    out = np.empty_like(batch.inputs)
    for i in range(n):
        digit = batch.inputs[i, 0]
        tex = bank.sample(int(tex_classes[i]), rng)
        mask = digit > spec.mask_threshold
        out[i, 0] = np.where(mask, digit, tex)
    return LabeledBatch(out, batch.labels.copy(), split_tag=tag)


def blank_foreground(batch, threshold=0.3, reference=None):
    """Zero the digit foreground (texture-only view for shortcut probing)."""
    ref = reference if reference is not None else batch.inputs
    masks = ref > threshold
    out = np.where(masks, 0.0, batch.inputs)
    return LabeledBatch(out, batch.labels.copy(), split_tag=batch.split_tag)


def augment_shift(images, max_shift=3, seed=0):
    """Random integer translations in [-max_shift, max_shift], zero padded."""
    rng = np.random.default_rng(seed)
    out = np.zeros_like(images)
    n, _, h, w = images.shape
    dy = rng.integers(-max_shift, max_shift + 1, size=n)
    dx = rng.integers(-max_shift, max_shift + 1, size=n)
    for i in range(n):
        sy, sx = int(dy[i]), int(dx[i])
        ys0, ys1 = max(0, sy), min(h, h + sy)
        xs0, xs1 = max(0, sx), min(w, w + sx)
        out[i, :, ys0:ys1, xs0:xs1] = images[i, :, ys0 - sy:ys1 - sy, xs0 - sx:xs1 - sx]
    return out


def plugin_mutual_information(a, b):
    """Plug-in MI estimate (nats) between two integer feature arrays."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    na, nb = a.max() + 1, b.max() + 1
    joint = np.zeros((na, nb))
    np.add.at(joint, (a, b), 1.0)
    joint /= joint.sum()
    pa = joint.sum(axis=1, keepdims=True)
    pb = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    return float(np.sum(joint[nz] * np.log(joint[nz] / (pa @ pb)[nz])))
