"""8-bit binary PGM ("P5") read/write and image-grid tiling."""

import numpy as np


def write_pgm(path, img):
    """img: 2D array, floats in [0,1] or uint8."""
    arr = np.asarray(img)
    if arr.dtype != np.uint8:
        arr = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(arr.tobytes())


def read_pgm(path):
    """Returns a uint8 2D array scaled as stored (0..255)."""
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary P5 PGM")
    # header: magic, width, height, maxval; comments allowed
    tokens = []
    i = 2
    while len(tokens) < 3:
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if data[i:i + 1] == b"#":
            while i < len(data) and data[i] != 0x0A:
                i += 1
            continue
        j = i
        while j < len(data) and not data[j:j + 1].isspace():
            j += 1
        tokens.append(int(data[i:j]))
        i = j
    i += 1  # single whitespace after maxval
    w, h, maxval = tokens
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM supported, maxval={maxval}")
    pixels = np.frombuffer(data[i:i + w * h], dtype=np.uint8)
    if pixels.size != w * h:
        raise ValueError(f"{path}: truncated pixel data")
    return pixels.reshape(h, w).copy()


def tile_grid(images, rows, cols, pad=1, pad_value=0.25):
    """Tile a list of equally sized 2D float images into one image."""
    h, w = images[0].shape
    out = np.full((rows * (h + pad) + pad, cols * (w + pad) + pad), pad_value)
    for k, img in enumerate(images):
        if k >= rows * cols:
            break
        r, c = divmod(k, cols)
        y = pad + r * (h + pad)
        x = pad + c * (w + pad)
        out[y:y + h, x:x + w] = np.clip(img, 0.0, 1.0)
    return out
