"""Single-layer LSTM over short sequences."""

from __future__ import annotations

import numpy as np

from mmfusion.autodiff.tensor import Tensor, sigmoid, tanh
from mmfusion.errors import ContractError, DimensionError
from mmfusion.nn.module import Module, Parameter


class LSTM(Module):
    """Gate layout along the 4H axis is (input, forget, candidate, output)."""

    def __init__(self, input_dim: int, hidden: int, rng: np.random.Generator):
        self.input_dim, self.hidden = input_dim, hidden
        bound = 1.0 / np.sqrt(hidden)
        self.w_ih = Parameter(rng.uniform(-bound, bound, (input_dim, 4 * hidden)))
        self.w_hh = Parameter(rng.uniform(-bound, bound, (hidden, 4 * hidden)))
        self.bias = Parameter(np.zeros(4 * hidden))

    def cell(self, x_t: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        H = self.hidden
        z = x_t @ self.w_ih + h @ self.w_hh + self.bias
        i = sigmoid(z[:, :H])
        f = sigmoid(z[:, H:2 * H])
        g = tanh(z[:, 2 * H:3 * H])
        o = sigmoid(z[:, 3 * H:])
        c = f * c + i * g
        return o * tanh(c), c

    def forward(self, seq: Tensor) -> Tensor:
        """(N, T, input_dim) -> final hidden state (N, hidden)."""
        if seq.ndim != 3 or seq.shape[-1] != self.input_dim:
            raise DimensionError(f"LSTM expects (N, T, {self.input_dim}), got {seq.shape}")
        n, t, _ = seq.shape
        if t < 1:
            raise ContractError("LSTM needs at least one time step")
        h = Tensor(np.zeros((n, self.hidden)))
        c = Tensor(np.zeros((n, self.hidden)))
        for step in range(t):
            h, c = self.cell(seq[:, step], h, c)
        return h
