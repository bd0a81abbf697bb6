"""Python bindings for the RFA-Net C++ core."""

import json as _json

from ._rfa import (
    ConfigError,
    ContractError,
    DataError,
    Error,
    FormatError,
    IoError,
    Model,
    RankSvm,
    cmc,
    cosine_score,
    embed_sequence,
    feature_dim,
    frame_feature,
    lbp_code,
    make_splits,
    softmax,
    train_ranksvm,
)
from ._rfa import desk_config as _desk_config
from ._rfa import full_config as _full_config


def desk_config():
    """Built-in desk-scale configuration as a dict."""
    return _json.loads(_desk_config())


def full_config():
    """Built-in full-scale configuration as a dict."""
    return _json.loads(_full_config())


__all__ = [
    "ConfigError",
    "ContractError",
    "DataError",
    "Error",
    "FormatError",
    "IoError",
    "Model",
    "RankSvm",
    "cmc",
    "cosine_score",
    "desk_config",
    "embed_sequence",
    "feature_dim",
    "frame_feature",
    "lbp_code",
    "make_splits",
    "full_config",
    "softmax",
    "train_ranksvm",
]
