"""Versioned JSON files for forests and trained models.

Serialization is canonical (sorted keys, fixed separators), so the same
model always produces byte-identical files.
"""

from __future__ import annotations

import json

import numpy as np

from .attention import AttentionConfig, SatRfModel
from .forest import Forest

MODEL_FORMAT = "satforest-model"
MODEL_VERSION = 1


def _dump(obj: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def save_forest(forest: Forest, path) -> None:
    _dump(forest.to_dict(), path)


def load_forest(path) -> Forest:
    with open(path) as fh:
        return Forest.from_dict(json.load(fh))


def save_model(model: SatRfModel, path) -> None:
    obj = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "config": {
            "epsilon": model.config.epsilon,
            "gamma": model.config.gamma,
            "tau": model.config.tau,
            "kappa": model.config.kappa,
            "variant": model.config.variant,
            "loss": model.config.loss,
        },
        "w": model.w.tolist(),
        "v": model.v.tolist(),
        "feature_loc": None if model.feature_loc is None else model.feature_loc.tolist(),
        "feature_scale": None
        if model.feature_scale is None
        else model.feature_scale.tolist(),
        "forest": model.forest.to_dict(),
    }
    _dump(obj, path)


def load_model(path) -> SatRfModel:
    with open(path) as fh:
        obj = json.load(fh)
    if obj.get("format") != MODEL_FORMAT:
        raise ValueError("not a model file")
    if obj.get("version") != MODEL_VERSION:
        raise ValueError(f"unsupported model version {obj.get('version')!r}")
    return SatRfModel(
        forest=Forest.from_dict(obj["forest"]),
        config=AttentionConfig(**obj["config"]),
        w=np.asarray(obj["w"], dtype=np.float64),
        v=np.asarray(obj["v"], dtype=np.float64),
        feature_loc=None
        if obj["feature_loc"] is None
        else np.asarray(obj["feature_loc"], dtype=np.float64),
        feature_scale=None
        if obj["feature_scale"] is None
        else np.asarray(obj["feature_scale"], dtype=np.float64),
    )
