"""Model construction from architecture dicts, plus checkpoint save/load."""

import numpy as np

from .checkpoint import load_checkpoint, restore_params, save_checkpoint
from .flows import ActNorm, build_conv_flow, build_flat_flow
from .nets import BaselineNet, FlatBaselineNet
from .objectives import NuisanceClassifier


def build_baseline_conv(input_shape, num_classes, width=8, seed=0):
    net = BaselineNet(input_shape, num_classes, np.random.default_rng(seed), width=width)
    net.arch = {"kind": "baseline-conv", "input_shape": list(input_shape),
                "num_classes": num_classes, "width": width, "seed": seed}
    return net


def build_baseline_flat(input_dim, num_classes, width=128, seed=0):
    net = FlatBaselineNet(input_dim, num_classes, np.random.default_rng(seed), width=width)
    net.arch = {"kind": "baseline-flat", "input_dim": input_dim,
                "num_classes": num_classes, "width": width, "seed": seed}
    return net


def build_from_arch(arch):
    kind = arch["kind"]
    if kind == "flat-flow":
        return build_flat_flow(arch["dim"], arch["num_classes"], blocks=arch["blocks"],
                               width=arch["width"], coupling=arch["coupling"],
                               actnorm=arch["actnorm"],
                               actnorm_data_init=arch.get("actnorm_data_init", False),
                               seed=arch["seed"])
    if kind == "conv-flow":
        return build_conv_flow(tuple(arch["input_shape"]), arch["num_classes"],
                               blocks_per_stage=arch["blocks_per_stage"],
                               width=arch["width"], split_mode=arch["split_mode"],
                               dct_readout=arch["dct_readout"],
                               actnorm_data_init=arch.get("actnorm_data_init", False),
                               seed=arch["seed"])
    if kind == "baseline-conv":
        return build_baseline_conv(tuple(arch["input_shape"]), arch["num_classes"],
                                   width=arch["width"], seed=arch["seed"])
    if kind == "baseline-flat":
        return build_baseline_flat(arch["input_dim"], arch["num_classes"],
                                   width=arch["width"], seed=arch["seed"])
    if kind == "nuisance-classifier":
        return NuisanceClassifier(arch["dim_in"], arch["num_classes"],
                                  depth=arch["depth"], width=arch["width"],
                                  seed=arch["seed"],
                                  logit_bound=arch.get("logit_bound", 0.0),
                                  input_noise=arch.get("input_noise", 0.0))
    raise ValueError(f"unknown architecture kind {kind!r}")


def save_model(path, model):
    save_checkpoint(path, model.arch, model.params())


def load_model(path):
    arch, blobs = load_checkpoint(path)
    model = build_from_arch(arch)
    restore_params(model.params(), blobs)
    if hasattr(model, "items"):
        for it in model.items:
            if isinstance(it, ActNorm):
                it.initialized = True
    return model
