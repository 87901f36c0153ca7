"""Python bindings for the weakheight height-estimation toolkit.

Patches are plain dicts of numpy arrays: ``image`` (channels, rows, cols)
float32, ``height`` (rows, cols) float32 meters, ``instances`` (rows, cols)
uint32 with 0 as background, plus ``quality``, ``domain_tag`` and the optional
low-quality fields ``floors`` and ``assumed_floor_height``.
"""

import json as _json

import torch as _torch  # noqa: F401  loads the libtorch shared libraries

from ._core import (
    ConfigError,
    DataError,
    FormatError,
    Model,
    NumericError,
    building_medians,
    building_rmse,
    config_help,
    decay_eta,
    degrade_to_low,
    degrade_to_mid,
    height_classes,
    load_patch,
    ordinal_pair_loss,
    save_patch,
    sid_thresholds,
    soft_height_residual,
)
from . import _core

__all__ = [
    "ConfigError",
    "DataError",
    "FormatError",
    "Model",
    "NumericError",
    "building_medians",
    "building_rmse",
    "config_help",
    "decay_eta",
    "default_config",
    "degrade_to_low",
    "degrade_to_mid",
    "evaluate",
    "generate_city",
    "height_classes",
    "load_patch",
    "load_report",
    "ordinal_pair_loss",
    "save_patch",
    "sid_thresholds",
    "soft_height_residual",
    "validate_config",
]


def default_config():
    return _json.loads(_core.default_config_json())


def validate_config(config):
    """Returns the fully populated config; raises ConfigError on bad input."""
    return _json.loads(_core.validate_config_json(_json.dumps(config)))


def generate_city(n, rows=64, cols=64, style=None):
    return _core.generate_city(n, rows, cols, _json.dumps(style or {}))


def evaluate(checkpoint, manifest, split="test"):
    return _json.loads(_core.evaluate_checkpoint(str(checkpoint), str(manifest), split))


def load_report(path):
    with open(path) as f:
        return _json.loads(_core.normalize_report_json(f.read()))
