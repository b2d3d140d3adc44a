"""Procedural texture bank and the PGM texture-directory loader.

Ten parameterized families, one per class id:
  0-4  stripes at orientations 0, 36, 72, 108, 144 degrees (random frequency/phase)
  5    checkerboard (random cell size)
  6    dot grid (random pitch)
  7-9  value noise at grid scales 2, 4, 7 (bilinearly upsampled)
All patches are float64 in [0, amplitude].
"""

import os

import numpy as np

from .pgm import read_pgm

NUM_FAMILIES = 10


def _stripes(size, angle_deg, rng):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    th = np.deg2rad(angle_deg)
    freq = rng.uniform(0.25, 0.5)
    phase = rng.uniform(0, 2 * np.pi)
    return 0.5 + 0.5 * np.sin(2 * np.pi * freq * (xx * np.cos(th) + yy * np.sin(th)) + phase)


def _checker(size, rng):
    p = int(rng.integers(3, 6))
    yy, xx = np.mgrid[0:size, 0:size]
    return (((xx // p) + (yy // p)) % 2).astype(np.float64)


def _dots(size, rng):
    pitch = int(rng.integers(4, 7))
    off = int(rng.integers(0, pitch))
    img = np.zeros((size, size))
    img[off::pitch, off::pitch] = 1.0
    # dilate to 2x2 dots
    img = np.maximum(img, np.roll(img, 1, axis=0))
    img = np.maximum(img, np.roll(img, 1, axis=1))
    return img


def _value_noise(size, scale, rng):
    grid = rng.random((scale + 1, scale + 1))
    xs = np.linspace(0, scale, size)
    i = np.minimum(xs.astype(int), scale - 1)
    f = xs - i
    # bilinear interpolation of the coarse grid
    g00 = grid[np.ix_(i, i)]
    g10 = grid[np.ix_(i + 1, i)]
    g01 = grid[np.ix_(i, i + 1)]
    g11 = grid[np.ix_(i + 1, i + 1)]
    fy = f[:, None]
    fx = f[None, :]
    img = (g00 * (1 - fy) * (1 - fx) + g10 * fy * (1 - fx)
           + g01 * (1 - fy) * fx + g11 * fy * fx)
    img -= img.min()
    rng_span = img.max() - img.min()
    return img / rng_span if rng_span > 0 else img


def make_texture(family, size, rng, amplitude=0.7):
    if family < 5:
        img = _stripes(size, 36.0 * family, rng)
    elif family == 5:
        img = _checker(size, rng)
    elif family == 6:
        img = _dots(size, rng)
    elif family in (7, 8, 9):
        img = _value_noise(size, {7: 2, 8: 4, 9: 7}[family], rng)
    else:
        raise ValueError(f"texture family must be in [0, {NUM_FAMILIES}), got {family}")
    return img * amplitude


class TextureBank:
    """Maps (class id, rng) -> texture patch."""

    def __init__(self, size, amplitude=0.7):
        self.size = size
        self.amplitude = amplitude

    def sample(self, class_id, rng):
        return make_texture(class_id, self.size, rng, self.amplitude)


class DirectoryTextureBank:
    """Loads patches from <root>/<class_id>/*.pgm (8-bit binary PGM)."""

    def __init__(self, root, size):
        self.size = size
        self.patches = {}
        if not os.path.isdir(root):
            raise FileNotFoundError(f"texture directory not found: {root}")
        for cid in range(NUM_FAMILIES):
            cdir = os.path.join(root, str(cid))
            files = sorted(os.listdir(cdir)) if os.path.isdir(cdir) else []
            imgs = [read_pgm(os.path.join(cdir, f)) / 255.0
                    for f in files if f.endswith(".pgm")]
            if not imgs:
                raise FileNotFoundError(f"no PGM textures for class {cid} under {root}")
            self.patches[cid] = imgs

    def sample(self, class_id, rng):
        imgs = self.patches[class_id]
        img = imgs[int(rng.integers(len(imgs)))]
        h, w = img.shape
        if h < self.size or w < self.size:
            raise ValueError(f"texture smaller than patch size {self.size}: {img.shape}")
        y = int(rng.integers(h - self.size + 1))
        x = int(rng.integers(w - self.size + 1))
        return img[y:y + self.size, x:x + self.size]
