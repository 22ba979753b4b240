"""Encoders for the tabular report features."""

from __future__ import annotations

import numpy as np

from mmfusion.autodiff.tensor import relu
from mmfusion.errors import DimensionError
from mmfusion.nn.module import Dropout, Linear, Module
from mmfusion.nn.recurrent import LSTM
from mmfusion.nn.specs import TextEncoderSpec


class ANNEncoder(Module):
    """linear -> ReLU -> dropout -> linear on the flat (N, num_features) vector."""

    def __init__(self, spec: TextEncoderSpec, rng: np.random.Generator, dropout: float = 0.2):
        self.spec = spec
        self.fc1 = Linear(spec.num_features, spec.hidden_dim, rng)
        self.drop = Dropout(dropout, np.random.default_rng(rng.integers(2**63)))
        self.fc2 = Linear(spec.hidden_dim, spec.feature_dim, rng)

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.spec.num_features:
            raise DimensionError(f"ANN text encoder expects (N, {self.spec.num_features}), got {x.shape}")
        return self.fc2(self.drop(relu(self.fc1(x))))


class LSTMEncoder(Module):
    """Reads the fields as a token sequence; final hidden state -> linear."""

    def __init__(self, spec: TextEncoderSpec, rng: np.random.Generator):
        self.spec = spec
        self.lstm = LSTM(spec.token_dim, spec.hidden_dim, rng)
        self.proj = Linear(spec.hidden_dim, spec.feature_dim, rng)

    def forward(self, seq):
        if seq.ndim != 3 or seq.shape[1] != self.spec.num_features:
            raise DimensionError(
                f"LSTM text encoder expects (N, {self.spec.num_features}, {self.spec.token_dim}), got {seq.shape}")
        return self.proj(self.lstm(seq))


def build_text_encoder(spec: TextEncoderSpec, rng: np.random.Generator, dropout: float = 0.2) -> Module:
    spec.validate()
    if spec.kind == "ann":
        return ANNEncoder(spec, rng, dropout)
    return LSTMEncoder(spec, rng)
