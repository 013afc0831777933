"""Versioned JSON checkpoints for trained velocity models.

Floats are written with ``repr`` precision (shortest round-trip form), so a
reload reproduces every weight bit for bit. Array order per network is
``W0, b0, W1, b1, ...`` with ``W`` stored row-major as (fan_out, fan_in).
"""
from __future__ import annotations

import json
from dataclasses import asdict

import numpy as np

from .cfm import ArchConfig, ScalerStats, TrainConfig, VelocityModel
from .errors import ConfigurationError
from .field import BlockTriangularField, PicnnParams
from .nn import MlpParams

VERSION = 1


def _arr(a):
    a = np.asarray(a, dtype=float)
    return {"shape": list(a.shape), "data": [float(v) for v in a.ravel()]}


def _unarr(obj):
    try:
        return np.array(obj["data"], dtype=float).reshape(obj["shape"])
    except (KeyError, TypeError, ValueError) as err:
        raise ConfigurationError(f"malformed array in checkpoint: {err}") from None


def _mlp_to(p: MlpParams):
    return {"layer_dims": list(p.layer_dims), "activation": p.activation,
            "weights": [_arr(w) for w in p.weights], "biases": [_arr(b) for b in p.biases]}


def _mlp_from(obj):
    return MlpParams(list(obj["layer_dims"]), obj["activation"],
                     [_unarr(w) for w in obj["weights"]], [_unarr(b) for b in obj["biases"]])


def _picnn_to(p: PicnnParams):
    return {"n": p.n, "d": p.d, "hidden": list(p.hidden), "context": _mlp_to(p.context),
            "A": [_arr(a) for a in p.A], "V": [_arr(v) for v in p.V], "w": _arr(p.w),
            "alpha": _arr(p.alpha), "alpha_trainable": bool(p.alpha_trainable)}


def _picnn_from(obj):
    return PicnnParams(obj["n"], obj["d"], list(obj["hidden"]), _mlp_from(obj["context"]),
                       [_unarr(a) for a in obj["A"]], [_unarr(v) for v in obj["V"]],
                       _unarr(obj["w"]), _unarr(obj["alpha"]), bool(obj["alpha_trainable"]))


def model_to_dict(model: VelocityModel):
    f = model.field
    g = _mlp_to(f.g_net) if f.kind == "plain" else _picnn_to(f.g_net)
    return {
        "version": VERSION,
        "n": f.n,
        "d": f.d,
        "kind": f.kind,
        "source": model.source,
        "arch": model.arch.to_dict(),
        "train_config": asdict(model.config),
        "seed": model.config.seed,
        "scaler": {"mean": _arr(model.scaler.mean), "std": _arr(model.scaler.std)},
        "f_net": _mlp_to(f.f_net),
        "g_net": g,
    }


def model_from_dict(obj):
    if not isinstance(obj, dict) or "version" not in obj:
        raise ConfigurationError("not a checkpoint document")
    if obj["version"] != VERSION:
        raise ConfigurationError(
            f"checkpoint version {obj['version']} does not match supported version {VERSION}")
    try:
        kind = obj["kind"]
        g = _mlp_from(obj["g_net"]) if kind == "plain" else _picnn_from(obj["g_net"])
        field = BlockTriangularField(obj["n"], obj["d"], _mlp_from(obj["f_net"]), g, kind)
        scaler = ScalerStats(_unarr(obj["scaler"]["mean"]), _unarr(obj["scaler"]["std"]))
        arch = ArchConfig.from_dict(obj["arch"])
        config = TrainConfig(**obj["train_config"])
    except (KeyError, TypeError) as err:
        raise ConfigurationError(f"malformed checkpoint: {err}") from None
    return VelocityModel(field, scaler, obj["source"], arch, config)


def save_model(model: VelocityModel, path):
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh)


def load_model(path):
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as err:
        raise ConfigurationError(f"checkpoint {path} is not valid JSON: {err}") from None
    return model_from_dict(obj)
