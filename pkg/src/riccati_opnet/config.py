"""Experiment configuration: schema, validation and presets."""

import copy
import json
import os

from .errors import ConfigError

DEEPONET = "deeponet"
PROGRESSIVE = "progressive"

# Allowed keys per section, with defaults.  ``None`` defers to the module default.
SCHEMA = {
    "name": "custom",
    "seed": 0,
    "trials": 1,
    "output_dir": None,
    "generator": {
        "kind": "are", "n": 3, "m": None, "count": 100, "split": 0.8,
        "partitions": None, "classes": None, "encoding": None, "n_steps": None,
        "horizon": 1.0, "r_base": 2,
    },
    "model": {
        "type": DEEPONET, "branch_widths": None, "trunk_widths": None,
        "activation": "tanh", "views": 1, "embed_hidden": None, "lift_hidden": None,
    },
    "train": {
        "epochs": 100, "lr": 1e-3, "batch_size": 128, "beta1": 0.9, "beta2": 0.999,
        "eps": 1e-8, "schedule": "constant", "lr_min": 0.0,
    },
    "eval": {"x0": "random", "max_test_loss": None, "min_stable_rate": None},
    "theorem": {
        "n": 3, "instances": 100, "horizon": 10.0, "n_steps": 1000,
        "epsilons": [0.0, 1e-4, 1e-3, 1e-2, 1e-1],
        "perturbations": ["identity", "random"], "probes": 20,
    },
    "bench": {"instances": 20, "repetitions": 100, "warmup": 10, "n_steps": 100,
              "self_check": False},
}


def _merge(base, override, path):
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be an object")
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = copy.deepcopy(value)
    return out


def resolve(raw):
    """Fill defaults and reject unknown keys at every level."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    cfg = _merge(SCHEMA, raw, "")
    g = cfg["generator"]
    if g["kind"] not in ("are", "dre"):
        raise ConfigError(f"generator.kind must be 'are' or 'dre', got {g['kind']!r}")
    if cfg["model"]["type"] not in (DEEPONET, PROGRESSIVE):
        raise ConfigError(f"unknown model.type {cfg['model']['type']!r}")
    if int(cfg["trials"]) < 1:
        raise ConfigError("trials must be >= 1")
    if cfg["train"]["epochs"] < 1 or cfg["train"]["lr"] < 0:
        raise ConfigError("train.epochs must be >= 1 and train.lr >= 0")
    return cfg


def _preset(name, generator, model, train, **extra):
    doc = {"name": name, "generator": generator, "model": model, "train": train}
    doc.update(extra)
    return doc


_ARE3_MODEL = {"branch_widths": [36, 512, 256, 128, 256], "trunk_widths": [2, 128, 256, 256],
               "activation": "tanh"}
_ARE4_MODEL = {"branch_widths": [64, 512, 256, 128, 256], "trunk_widths": [2, 128, 256, 256],
               "activation": "tanh"}
_ARE10_MODEL = {"branch_widths": [211, 256, 64], "trunk_widths": [2, 128, 64],
                "activation": "tanh"}
_DRE3_MODEL = {"branch_widths": [135, 256, 256, 128], "trunk_widths": [2, 128, 128, 128],
               "activation": "gelu"}
_DRE10_MODEL = {"branch_widths": [1500, 512, 256, 128], "trunk_widths": [2, 128, 128, 128],
                "activation": "gelu"}
_ADAM = {"lr": 1e-3, "schedule": "cosine", "lr_min": 1e-5}

PRESETS = {
    "are-3d": _preset("are-3d", {"kind": "are", "n": 3, "count": 5000}, _ARE3_MODEL,
                      dict(_ADAM, epochs=500, batch_size=128), trials=3),
    "are-4d": _preset("are-4d", {"kind": "are", "n": 4, "count": 5000}, _ARE4_MODEL,
                      dict(_ADAM, epochs=300, batch_size=128), trials=3),
    "are-4d-progressive": _preset(
        "are-4d-progressive", {"kind": "are", "n": 4, "count": 5000},
        {"type": PROGRESSIVE, "views": 4, "activation": "tanh"},
        dict(_ADAM, epochs=300, batch_size=128), trials=3),
    "are-10d": _preset("are-10d", {"kind": "are", "n": 10, "count": 1000,
                                   "classes": ["stable", "unstable"]},
                       _ARE10_MODEL, dict(_ADAM, epochs=200, batch_size=64), trials=3),
    "dre-3d": _preset("dre-3d", {"kind": "dre", "n": 3, "count": 300}, _DRE3_MODEL,
                      {"lr": 1e-3, "epochs": 60, "batch_size": 32}, trials=3),
    "dre-10d": _preset("dre-10d", {"kind": "dre", "n": 10, "count": 100}, _DRE10_MODEL,
                       {"lr": 1e-3, "epochs": 60, "batch_size": 32}, trials=3),
}

# Full-scale counterparts: larger corpora and longer training, ten trials.
_FULL = {
    "are-3d": ({"count": 15000}, {"epochs": 1500}),
    "are-4d": ({"count": 15000}, {"epochs": 1500}),
    "are-4d-progressive": ({"count": 15000}, {"epochs": 1500}),
    "are-10d": ({"count": 7500}, {"epochs": 3000}),
    "dre-3d": ({"count": 1000}, {"epochs": 60}),
    "dre-10d": ({"count": 3000}, {"epochs": 60}),
}
for _name, (_gen, _train) in _FULL.items():
    _doc = copy.deepcopy(PRESETS[_name])
    _doc["name"] = f"{_name}-full"
    _doc["generator"].update(_gen)
    _doc["train"].update(_train)
    _doc["trials"] = 10
    PRESETS[f"{_name}-full"] = _doc


def load(source):
    """Resolve a preset name or a JSON file path."""
    if source in PRESETS:
        return resolve(PRESETS[source])
    if not os.path.exists(source):
        raise ConfigError(f"{source!r} is neither a preset ({', '.join(sorted(PRESETS))}) "
                          "nor a readable file")
    try:
        with open(source) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: invalid JSON ({exc})") from exc
    return resolve(raw)


def dump(cfg, path):
    with open(path, "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")
