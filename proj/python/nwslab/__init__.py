"""Python access to the nwslab weight-space toolkit."""

import json

from . import _core
from ._core import ConfigError, Error, FormatError, SvmModel, cnn_counts, dmc_counts, fit_ols, fit_svm, load_svm, pca, stat_names, stats16

__all__ = [
    "ConfigError",
    "Error",
    "FormatError",
    "SvmModel",
    "cnn_counts",
    "dmc_counts",
    "fit_ols",
    "fit_svm",
    "load_svm",
    "pca",
    "read_manifest",
    "read_snapshot",
    "run_stages",
    "stat_names",
    "stats16",
]


def read_snapshot(path):
    """Weight vector (float32 array), group table and metadata of a .nws file."""
    snap = _core.read_snapshot(str(path))
    snap["meta"] = json.loads(snap["meta"])
    return snap


def read_manifest(path):
    """Run records of a manifest as dictionaries."""
    return [json.loads(line) for line in _core.read_manifest(str(path))]


def run_stages(stages, config=None, **overrides):
    """Run pipeline stages from a config file; keyword overrides use dotted keys with '__' for '.'."""
    if isinstance(stages, str):
        stages = [stages]
    flat = {k.replace("__", "."): str(v) for k, v in overrides.items()}
    return _core.run_stages(list(stages), str(config) if config else "", flat)
