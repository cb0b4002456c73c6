"""Transformer encoder with KAN (or feed-forward) sublayers."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from lobsrv import tensor as T
from lobsrv.model.kan import KANLayer
from lobsrv.model.nn import Dropout, LayerNorm, Linear, Module, parameter, sinusoidal_positions
from lobsrv.tensor import DimensionError, Tensor


@dataclass(frozen=True)
class EncoderConfig:
    n_layers: int = 2
    n_heads: int = 2
    hidden_size: int = 16
    dropout_rate: float = 0.1
    use_kan: bool = True
    use_dcc: bool = False
    dcc_kernel: int = 3
    dcc_dilation: int = 1
    grid_size: int = 5
    spline_order: int = 3
    positional: bool = True

    def __post_init__(self):
        if self.hidden_size % self.n_heads:
            raise ValueError(f"hidden_size {self.hidden_size} not divisible by n_heads {self.n_heads}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate {self.dropout_rate} outside [0, 1)")


class SelfAttention(Module):
    """Multi-head self-attention; queries/keys/values come from linear maps or causal convolutions."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        h = cfg.hidden_size
        self._heads = cfg.n_heads
        self._dcc = cfg.use_dcc
        self._dilation = cfg.dcc_dilation
        if cfg.use_dcc:
            bound = 1.0 / math.sqrt(h * cfg.dcc_kernel)
            self.q_kernel = parameter(rng.uniform(-bound, bound, size=(cfg.dcc_kernel, h, h)))
            self.k_kernel = parameter(rng.uniform(-bound, bound, size=(cfg.dcc_kernel, h, h)))
            self.v_kernel = parameter(rng.uniform(-bound, bound, size=(cfg.dcc_kernel, h, h)))
        else:
            self.query = Linear(h, h, rng)
            self.key = Linear(h, h, rng)
            self.value = Linear(h, h, rng)
        self.out = Linear(h, h, rng)
        self.last_qkv: tuple | None = None
        self.last_weights: np.ndarray | None = None

    def project(self, x: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        if self._dcc:
            return tuple(T.dilated_causal_conv1d(x, k, self._dilation) for k in (self.q_kernel, self.k_kernel, self.v_kernel))
        return self.query(x), self.key(x), self.value(x)

    def _split(self, x: Tensor) -> Tensor:
        B, L, H = x.shape
        return x.reshape(B, L, self._heads, H // self._heads).transpose(0, 2, 1, 3)

    def __call__(self, x: Tensor) -> Tensor:
        B, L, H = x.shape
        q, k, v = self.project(x)
        self.last_qkv = (q.data, k.data, v.data)
        q, k, v = self._split(q), self._split(k), self._split(v)
        scores = T.matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(H // self._heads))
        weights = T.softmax_lastdim(scores)
        self.last_weights = weights.data
        ctx = T.matmul(weights, v).transpose(0, 2, 1, 3).reshape(B, L, H)
        return self.out(ctx)


class FeedForward(Module):
    def __init__(self, h: int, rng: np.random.Generator):
        self.inner = Linear(h, h, rng)
        self.outer = Linear(h, h, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.outer(T.silu(self.inner(x)))


class EncoderBlock(Module):
    """Pre-norm block: ``x + attn(norm(x))`` then ``x + mix(norm(x))``."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        h = cfg.hidden_size
        self.norm_attn = LayerNorm(h)
        self.attn = SelfAttention(cfg, rng)
        self.norm_mix = LayerNorm(h)
        self.mix = KANLayer(h, h, rng, cfg.grid_size, cfg.spline_order) if cfg.use_kan else FeedForward(h, rng)
        self.drop_attn = Dropout(cfg.dropout_rate, rng)
        self.drop_mix = Dropout(cfg.dropout_rate, rng)

    def __call__(self, x: Tensor) -> Tensor:
        x = x + self.drop_attn(self.attn(self.norm_attn(x)))
        return x + self.drop_mix(self.mix(self.norm_mix(x)))


class Encoder(Module):
    """Sequence ``[B, L, width]`` to a mean-pooled embedding ``[B, hidden]``."""

    def __init__(self, in_width: int, cfg: EncoderConfig, rng: np.random.Generator):
        self.in_width = in_width
        self._cfg = cfg
        self.proj = Linear(in_width, cfg.hidden_size, rng)
        self.blocks = [EncoderBlock(cfg, rng) for _ in range(cfg.n_layers)]
        self.norm = LayerNorm(cfg.hidden_size)

    @property
    def config(self) -> EncoderConfig:
        return self._cfg

    def __call__(self, seq: Tensor) -> Tensor:
        if seq.ndim != 3 or seq.shape[-1] != self.in_width:
            raise DimensionError(f"encoder expects [B, L, {self.in_width}], got {seq.shape}")
        x = self.proj(seq)
        if self._cfg.positional:
            x = x + sinusoidal_positions(seq.shape[1], self._cfg.hidden_size)
        for block in self.blocks:
            x = block(x)
        return self.norm(x).mean(axis=1)
