"""Flat key=value experiment configs with [section] headers, plus seeding.

Unknown sections or keys are rejected with the allowed alternatives named.
One master seed expands into per-component seeds via a splitmix64-style
derivation: fold the component tag bytes into the state, then scramble.
"""


class ConfigError(Exception):
    pass


def _bool(s):
    if s in ("true", "True", "1", "yes"):
        return True
    if s in ("false", "False", "0", "no"):
        return False
    raise ConfigError(f"not a boolean: {s!r}")


# section -> key -> (parser, default)
SCHEMA = {
    "experiment": {
        "id": (str, "experiment"),
        "seed": (int, 0),
        "out": (str, ""),
        "figure": (str, ""),
    },
    "dataset": {
        "kind": (str, "spheres"),  # spheres | mnist | shiftmnist-binary | shiftmnist-texture
        "d": (int, 100),
        "r1": (float, 1.0),
        "r2": (float, 10.0),
        "n_train": (int, 100_000),
        "n_test": (int, 10_000),
        "max_train": (int, 0),      # 0 = all
        "dequantize": (_bool, False),
        "augment": (_bool, False),
        "texture_source": (str, "procedural"),
        "mask_threshold": (float, 0.3),
        "amplitude": (float, 0.7),
        "data_dir": (str, ""),
    },
    "model": {
        "kind": (str, "flat-flow"),  # flat-flow | conv-flow | baseline
        "blocks": (int, 4),
        "blocks_per_stage": (int, 2),
        "width": (int, 128),
        "coupling": (str, "additive"),
        "actnorm": (_bool, True),
        "actnorm_data_init": (_bool, True),
        "split_mode": (str, "first"),
        "dct_readout": (_bool, False),
    },
    "objective": {
        "kind": (str, "ce"),  # ce | ice
        "lambda_n": (float, 1.0),
        "lambda_m": (float, 1.0),
        "k_nc": (int, 1),
        "nc_depth": (int, 3),
        "nc_width": (int, 512),
        "nc_lr": (float, 0.001),
        "nc_logit_bound": (float, 0.0),   # 0 = unbounded logits
        "nc_input_noise": (float, 0.0),   # relative Gaussian noise on z_n
        "train_prior": (bool, True),      # learn the nuisance prior's mean/scale
    },
    "optimizer": {
        "kind": (str, "adam"),  # adam | sgd-momentum
        "lr": (float, 0.0001),
        "momentum": (float, 0.9),
        "beta1": (float, 0.9),
        "beta2": (float, 0.999),
        "epsilon": (float, 1e-8),
        "weight_decay": (float, 0.0),
    },
    "train": {
        "epochs": (int, 10),
        "batch_size": (int, 128),
        "lr_decay": (float, 1.0),      # multiply lr by this every lr_decay_every
        "lr_decay_every": (int, 0),    # 0 = no decay
        "lr_decay_at": (str, ""),      # comma-separated epochs, overrides _every
    },
    "attack": {
        "checkpoint": (str, ""),
        "kind": (str, "exact"),  # exact | gradient | interpolate
        "n_pairs": (int, 8),
        "steps": (int, 8),
        "iters": (int, 3000),
        "lr": (float, 0.01),
    },
    "eval": {
        "checkpoint": (str, ""),
        "probe_epochs": (int, 20),
    },
    "slice": {
        "checkpoint": (str, ""),
        "grid_n": (int, 64),
        "box": (float, 1.5),
    },
}

_ALLOWED_KINDS = {
    ("dataset", "kind"): {"spheres", "mnist", "shiftmnist-binary", "shiftmnist-texture"},
    ("model", "kind"): {"flat-flow", "conv-flow", "baseline"},
    ("objective", "kind"): {"ce", "ice"},
    ("optimizer", "kind"): {"adam", "sgd-momentum"},
    ("attack", "kind"): {"exact", "gradient", "interpolate"},
}


def default_config():
    return {sec: {k: v for k, (_, v) in keys.items()} for sec, keys in SCHEMA.items()}


def parse_config_text(text):
    cfg = default_config()
    section = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"line {lineno}: unknown section [{section}]; "
                                  f"allowed: {sorted(SCHEMA)}")
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        if section is None:
            raise ConfigError(f"line {lineno}: key outside any [section]")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA[section]:
            raise ConfigError(f"line {lineno}: unknown key {key!r} in [{section}]; "
                              f"allowed: {sorted(SCHEMA[section])}")
        parser = SCHEMA[section][key][0]
        try:
            cfg[section][key] = parser(val)
        except (ValueError, ConfigError) as e:
            raise ConfigError(f"line {lineno}: bad value for {section}.{key}: {e}")
    _validate(cfg)
    return cfg


def _validate(cfg):
    for (sec, key), allowed in _ALLOWED_KINDS.items():
        v = cfg[sec][key]
        if v not in allowed:
            raise ConfigError(f"{sec}.{key} = {v!r} not in {sorted(allowed)}")
    if cfg["objective"]["lambda_n"] < 0 or cfg["objective"]["lambda_m"] < 0:
        raise ConfigError("objective lambdas must be >= 0")
    if parse_decay_epochs(cfg["train"]["lr_decay_at"]) is None:
        raise ConfigError(f"train.lr_decay_at = {cfg['train']['lr_decay_at']!r} "
                          "must be comma-separated epoch numbers")


def parse_decay_epochs(text):
    """'15,23' -> {15, 23}; '' -> empty set; malformed -> None."""
    text = text.strip()
    if not text:
        return set()
    try:
        return {int(tok) for tok in text.split(",")}
    except ValueError:
        return None


def load_config(path):
    try:
        with open(path) as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}")
    return parse_config_text(text)


def config_to_text(cfg):
    lines = []
    for sec in SCHEMA:
        lines.append(f"[{sec}]")
        for k in SCHEMA[sec]:
            lines.append(f"{k} = {cfg[sec][k]}")
        lines.append("")
    return "\n".join(lines)


_MASK = (1 << 64) - 1


def _splitmix64(x):
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_seed(master, tag):
    """Per-component seed: fold tag bytes into the splitmix64 stream."""
    s = _splitmix64(master & _MASK)
    for b in tag.encode("utf-8"):
        s = _splitmix64(s ^ b)
    return int(s & 0x7FFFFFFF)
