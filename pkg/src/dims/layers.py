"""Parameterized building blocks: linear maps and LSTM recurrences."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import ParameterStore, Tensor


class Linear:
    """y = W x + b, applied to a vector or to every row of a matrix."""

    def __init__(self, store: ParameterStore, name: str, in_dim: int, out_dim: int,
                 rng: np.random.Generator, std: float):
        self.w = store.add(f"{name}.w", (out_dim, in_dim), rng, std)
        self.b = store.add(f"{name}.b", (out_dim,), rng, std)

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim == 1:
            return T.matmul(self.w, x) + self.b
        return T.add_rowvec(T.matmul(x, T.transpose(self.w)), self.b)


class LstmCell:
    """Single-direction LSTM with one fused gate matrix (order: i, f, g, o)."""

    def __init__(self, store: ParameterStore, name: str, input_dim: int, hidden_dim: int,
                 rng: np.random.Generator, std: float):
        self.hidden_dim = hidden_dim
        self.w = store.add(f"{name}.w", (4 * hidden_dim, input_dim + hidden_dim), rng, std)
        self.b = store.add(f"{name}.b", (4 * hidden_dim,), rng, std)

    def step(self, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        hd = self.hidden_dim
        z = T.matmul(self.w, T.concat([x, h])) + self.b
        i = T.sigmoid(z[0:hd])
        f = T.sigmoid(z[hd:2 * hd])
        g = T.tanh(z[2 * hd:3 * hd])
        o = T.sigmoid(z[3 * hd:4 * hd])
        c_new = f * c + i * g
        h_new = o * T.tanh(c_new)
        return h_new, c_new

    def zero_state(self) -> tuple[Tensor, Tensor]:
        return T.zeros(self.hidden_dim), T.zeros(self.hidden_dim)


class BiLstm:
    """Forward and backward LSTM passes with concatenated per-step states.

    encode() returns the (seq_len, 2H) state matrix and the (2H,) vector
    joining the two directions' final states.
    """

    def __init__(self, store: ParameterStore, name: str, input_dim: int, hidden_dim: int,
                 rng: np.random.Generator, std: float):
        if hidden_dim % 2 != 0:
            raise ValueError("BiLstm hidden_dim must be even")
        half = hidden_dim // 2
        self.fwd = LstmCell(store, f"{name}.fwd", input_dim, half, rng, std)
        self.bwd = LstmCell(store, f"{name}.bwd", input_dim, half, rng, std)

    def encode(self, inputs: list[Tensor]) -> tuple[Tensor, Tensor]:
        if not inputs:
            raise ValueError("BiLstm.encode needs at least one step")
        h, c = self.fwd.zero_state()
        fwd_states = []
        for x in inputs:
            h, c = self.fwd.step(x, h, c)
            fwd_states.append(h)
        fwd_final = h

        h, c = self.bwd.zero_state()
        bwd_states: list[Tensor] = []
        for x in reversed(inputs):
            h, c = self.bwd.step(x, h, c)
            bwd_states.append(h)
        bwd_final = h
        bwd_states.reverse()

        states = T.stack([T.concat([f, b]) for f, b in zip(fwd_states, bwd_states)])
        final = T.concat([fwd_final, bwd_final])
        return states, final
