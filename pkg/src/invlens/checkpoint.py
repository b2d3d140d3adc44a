"""Binary checkpoint format.

Layout: magic b"FIREV1", then a u64 little-endian byte length followed by a
UTF-8 JSON manifest (architecture description plus parameter names/shapes),
then raw little-endian float64 parameter blobs in manifest order.
"""

import json
import struct

import numpy as np

MAGIC = b"FIREV1"


def save_checkpoint(path, arch, named_params):
    manifest = {
        "arch": arch,
        "params": [{"name": n, "shape": list(p.data.shape)} for n, p in named_params],
    }
    text = json.dumps(manifest).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(text)))
        f.write(text)
        for _, p in named_params:
            f.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Returns (arch, list of (name, array))."""
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"bad checkpoint magic {magic!r}, expected {MAGIC!r}")
        (length,) = struct.unpack("<Q", f.read(8))
        manifest = json.loads(f.read(length).decode("utf-8"))
        blobs = []
        for entry in manifest["params"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = f.read(count * 8)
            if len(raw) != count * 8:
                raise ValueError(f"truncated checkpoint: parameter {entry['name']}")
            blobs.append((entry["name"], np.frombuffer(raw, dtype="<f8").reshape(shape).copy()))
    return manifest["arch"], blobs


def restore_params(named_params, blobs):
    """Copy loaded blobs into live parameters, validating names and shapes."""
    if len(named_params) != len(blobs):
        raise ValueError(f"parameter count mismatch: model has {len(named_params)}, "
                         f"checkpoint has {len(blobs)}")
    for (name, p), (bname, arr) in zip(named_params, blobs):
        if name != bname:
            raise ValueError(f"parameter name mismatch: {name} vs {bname}")
        if p.data.shape != arr.shape:
            raise ValueError(f"shape mismatch for {name}: model {p.data.shape}, "
                             f"checkpoint {arr.shape}")
        p.data = arr
