"""
GeoLab - Layers
Linear, LayerNorm, feed-forward, attention and transformer layers over a ParameterStore
"""
from typing import Optional

import numpy as np

from geolab.nn import ops
from geolab.nn.params import ParameterStore
from geolab.nn.tensor import Tensor


class Linear:
    def __init__(self, store: ParameterStore, name: str, in_dim: int, out_dim: int,
                 rng: np.random.Generator, std: float = 0.02, bias: bool = True):
        self.name = name
        self.weight = store.create(f'{name}.W', (in_dim, out_dim), rng, std=std)
        self.bias = store.create(f'{name}.b', (out_dim,), init='zeros') if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return ops.affine(x, self.weight, self.bias)


class LayerNorm:
    def __init__(self, store: ParameterStore, name: str, dim: int, eps: float = 1e-5):
        self.gamma = store.create(f'{name}.gamma', (dim,), init='ones')
        self.beta = store.create(f'{name}.beta', (dim,), init='zeros')
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gamma, self.beta, self.eps)


class FeedForward:
    def __init__(self, store: ParameterStore, name: str, dim: int, hidden: int,
                 rng: np.random.Generator, std: float = 0.02):
        self.up = Linear(store, f'{name}.up', dim, hidden, rng, std)
        self.down = Linear(store, f'{name}.down', hidden, dim, rng, std)

    def __call__(self, x: Tensor) -> Tensor:
        return self.down(ops.gelu(self.up(x)))


class MultiHeadAttention:
    def __init__(self, store: ParameterStore, name: str, dim: int, num_heads: int,
                 rng: np.random.Generator, std: float = 0.02):
        if dim % num_heads:
            raise ValueError(f"{name}: dim {dim} not divisible by {num_heads} heads")
        self.num_heads = num_heads
        self.q = Linear(store, f'{name}.q', dim, dim, rng, std)
        self.k = Linear(store, f'{name}.k', dim, dim, rng, std)
        self.v = Linear(store, f'{name}.v', dim, dim, rng, std)
        self.o = Linear(store, f'{name}.o', dim, dim, rng, std)

    def __call__(self, query: Tensor, memory: Tensor, key_mask: Optional[np.ndarray] = None) -> Tensor:
        return ops.multi_head_attention(
            query, memory,
            self.q.weight, self.q.bias, self.k.weight, self.k.bias,
            self.v.weight, self.v.bias, self.o.weight, self.o.bias,
            self.num_heads, key_mask)


class EncoderLayer:
    """Pre-norm self-attention block followed by a pre-norm feed-forward block"""

    def __init__(self, store: ParameterStore, name: str, dim: int, num_heads: int, ffn_dim: int,
                 rng: np.random.Generator, std: float = 0.02):
        self.norm_attn = LayerNorm(store, f'{name}.ln1', dim)
        self.attn = MultiHeadAttention(store, f'{name}.attn', dim, num_heads, rng, std)
        self.norm_ffn = LayerNorm(store, f'{name}.ln2', dim)
        self.ffn = FeedForward(store, f'{name}.ffn', dim, ffn_dim, rng, std)

    def __call__(self, x: Tensor, key_mask: Optional[np.ndarray] = None) -> Tensor:
        h = self.norm_attn(x)
        x = ops.add(x, self.attn(h, h, key_mask))
        return ops.add(x, self.ffn(self.norm_ffn(x)))


class CrossAttentionDecoderLayer:
    """Decoder block without self-attention: queries attend to memory, then feed-forward"""

    def __init__(self, store: ParameterStore, name: str, dim: int, num_heads: int, ffn_dim: int,
                 rng: np.random.Generator, std: float = 0.02):
        self.norm_query = LayerNorm(store, f'{name}.ln1', dim)
        self.norm_memory = LayerNorm(store, f'{name}.ln_mem', dim)
        self.cross = MultiHeadAttention(store, f'{name}.cross', dim, num_heads, rng, std)
        self.norm_ffn = LayerNorm(store, f'{name}.ln2', dim)
        self.ffn = FeedForward(store, f'{name}.ffn', dim, ffn_dim, rng, std)

    def __call__(self, query: Tensor, memory: Tensor) -> Tensor:
        x = ops.add(query, self.cross(self.norm_query(query), self.norm_memory(memory)))
        return ops.add(x, self.ffn(self.norm_ffn(x)))


class Embedding:
    def __init__(self, store: ParameterStore, name: str, rows: int, dim: int,
                 rng: np.random.Generator, std: float = 0.02):
        self.table = store.create(name, (rows, dim), rng, std=std)

    def __call__(self, ids) -> Tensor:
        return ops.embedding_lookup(self.table, ids)
