"""Convolutional sentence encoders.

``msnn`` runs parallel width-1/3/5 branches straight off the embedding
matrix and stacks their outputs channel-wise.  ``single_cnn`` is one
width-3 layer, ``multi_cnn`` two stacked width-3 layers.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from . import tensor as T
from .errors import ConfigError

VARIANTS = ("msnn", "single_cnn", "multi_cnn")


@dataclass
class EncoderConfig:
    variant: str = "msnn"
    # (width, channels) per msnn branch
    branches: List[Tuple[int, int]] = field(default_factory=lambda: [(1, 100), (3, 100), (5, 100)])
    channels: int = 300
    width: int = 3
    layers: int = 2
    activation: str = "relu"

    def __post_init__(self):
        self.branches = [(int(k), int(c)) for k, c in self.branches]
        self.validate()

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown encoder variant {self.variant!r}; expected one of {VARIANTS}")
        if self.activation not in ("relu", "tanh", "sigmoid"):
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.variant == "msnn":
            if not self.branches:
                raise ConfigError("msnn needs at least one branch")
            widths = [k for k, _ in self.branches]
            if len(set(widths)) != len(widths):
                raise ConfigError(f"msnn branch widths must be distinct, got {widths}")
            for k, c in self.branches:
                if k < 1 or k % 2 == 0:
                    raise ConfigError(f"branch width must be a positive odd integer, got {k}")
                if c < 1:
                    raise ConfigError(f"branch of width {k} needs at least one channel")
        else:
            if self.width < 1 or self.width % 2 == 0:
                raise ConfigError(f"filter width must be a positive odd integer, got {self.width}")
            if self.channels < 1:
                raise ConfigError("channels must be >= 1")
        if self.variant == "multi_cnn" and self.layers != 2:
            raise ConfigError("multi_cnn is defined with exactly two layers")

    @property
    def c_total(self) -> int:
        if self.variant == "msnn":
            return sum(c for _, c in self.branches)
        return self.channels

    def layer_specs(self, d: int) -> List[Tuple[str, int, int, int]]:
        """``(name, width, in_dim, out_channels)`` for every convolution."""
        if self.variant == "msnn":
            return [(f"branch.k{k}", k, d, c) for k, c in self.branches]
        if self.variant == "single_cnn":
            return [("conv1", self.width, d, self.channels)]
        return [
            ("conv1", self.width, d, self.channels),
            ("conv2", self.width, self.channels, self.channels),
        ]


@dataclass
class ConvParams:
    filters: T.Tensor
    bias: T.Tensor

    @property
    def width(self) -> int:
        return self.filters.shape[2]


@dataclass
class EncoderParams:
    layers: Dict[str, ConvParams]

    def named_tensors(self) -> List[Tuple[str, T.Tensor]]:
        out = []
        for name, p in self.layers.items():
            out.append((f"{name}.filters", p.filters))
            out.append((f"{name}.bias", p.bias))
        return out


def init_encoder(config: EncoderConfig, d: int, seed: Union[int, np.random.Generator]) -> EncoderParams:
    """Fan-in scaled uniform init: U(-sqrt(1/(in*k)), +sqrt(1/(in*k)))."""
    rng = np.random.default_rng(seed)
    layers = {}
    for name, k, din, c in config.layer_specs(d):
        bound = np.sqrt(1.0 / (din * k))
        filters = T.Tensor(rng.uniform(-bound, bound, size=(c, din, k)), requires_grad=True,
                           name=f"{name}.filters")
        bias = T.Tensor(rng.uniform(-bound, bound, size=(c,)), requires_grad=True,
                        name=f"{name}.bias")
        layers[name] = ConvParams(filters, bias)
    return EncoderParams(layers)


@dataclass
class FeatureMap:
    """c_total x L convolution outputs plus the sentence's true length."""

    values: T.Tensor
    length: int

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def padded_length(self) -> int:
        return self.values.shape[1]


def branch_forward(emb: T.Tensor, params: ConvParams, kind: str = "relu") -> T.Tensor:
    return T.activation(T.conv1d_same(emb, params.filters, params.bias), kind)


def encode_feature_map(emb: T.Tensor, config: EncoderConfig, params: EncoderParams,
                       length: Optional[int] = None) -> FeatureMap:
    """c_total x L feature map of a d x L embedded sentence.

    Convolutions run over the first ``length`` columns with zero padding on
    both sides, so positions past the true length act exactly like padding;
    the masked columns of the result are zero.
    """
    L = emb.shape[1]
    if length is None:
        length = L
    x = T.narrow(emb, 1, length)
    kind = config.activation
    if config.variant == "msnn":
        outs = [branch_forward(x, params.layers[f"branch.k{k}"], kind) for k, _ in config.branches]
        values = outs[0] if len(outs) == 1 else T.concat(*outs, axis=0)
    elif config.variant == "single_cnn":
        values = branch_forward(x, params.layers["conv1"], kind)
    elif config.variant == "multi_cnn":
        hidden = branch_forward(x, params.layers["conv1"], kind)
        values = branch_forward(hidden, params.layers["conv2"], kind)
    else:
        raise ConfigError(f"unknown encoder variant {config.variant!r}")
    return FeatureMap(T.pad_zeros(values, (values.shape[0], L)), length)


def pool_encoding(fm: FeatureMap) -> T.Tensor:
    """Per-channel max over the unpadded columns."""
    valid = T.narrow(fm.values, 1, fm.length)
    pooled, _ = T.max_reduce(valid, T.ROWS)
    return pooled
