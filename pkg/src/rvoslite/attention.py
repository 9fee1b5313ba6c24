"""Attention primitives shared by the fusion, decoding, and query modules.

All stacks are pre-norm residual. Output projections (the attention output
map and the second feed-forward linear) are zero-initialized by default, so
every freshly built stack is the identity map and training starts from the
unmodified query path.
"""

from __future__ import annotations

import math

import torch
from torch import nn


class MultiheadAttention(nn.Module):
    """Scaled dot-product attention over (L, C) or (B, L, C) tensors."""

    def __init__(self, dim: int, heads: int, zero_init: bool = True,
                 dtype=torch.float64):
        super().__init__()
        if dim % heads != 0:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.q_proj = nn.Linear(dim, dim, dtype=dtype)
        self.k_proj = nn.Linear(dim, dim, dtype=dtype)
        self.v_proj = nn.Linear(dim, dim, dtype=dtype)
        self.out_proj = nn.Linear(dim, dim, dtype=dtype)
        self.reset_parameters(zero_init)

    def reset_parameters(self, zero_init: bool):
        for proj in (self.q_proj, self.k_proj, self.v_proj):
            nn.init.xavier_uniform_(proj.weight)
            nn.init.zeros_(proj.bias)
        if zero_init:
            nn.init.zeros_(self.out_proj.weight)
        else:
            nn.init.xavier_uniform_(self.out_proj.weight)
        nn.init.zeros_(self.out_proj.bias)

    def forward(self, query: torch.Tensor, key: torch.Tensor,
                value: torch.Tensor) -> torch.Tensor:
        squeeze = query.ndim == 2
        if squeeze:
            query, key, value = query[None], key[None], value[None]
        if query.shape[-1] != self.dim or key.shape[-1] != self.dim:
            raise ValueError(f"expected width {self.dim}, got query "
                             f"{query.shape[-1]} / key {key.shape[-1]}")
        b, lq, _ = query.shape
        lk = key.shape[1]

        def split(x, proj, length):
            return proj(x).view(b, length, self.heads, self.head_dim).transpose(1, 2)

        q = split(query, self.q_proj, lq)
        k = split(key, self.k_proj, lk)
        v = split(value, self.v_proj, lk)
        attn = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(self.head_dim), dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, lq, self.dim)
        out = self.out_proj(out)
        return out[0] if squeeze else out


class CrossAttentionLayer(nn.Module):
    """x + Attn(LN(x) + query_pos, memory + memory_pos, memory)."""

    def __init__(self, dim: int, heads: int, zero_init: bool = True,
                 dtype=torch.float64):
        super().__init__()
        self.norm = nn.LayerNorm(dim, dtype=dtype)
        self.attn = MultiheadAttention(dim, heads, zero_init, dtype)

    def forward(self, x, memory, query_pos=None, memory_pos=None):
        q = self.norm(x)
        if query_pos is not None:
            q = q + query_pos
        k = memory if memory_pos is None else memory + memory_pos
        return x + self.attn(q, k, memory)


class SelfAttentionLayer(nn.Module):
    """x + Attn(LN(x) + pos, LN(x) + pos, LN(x))."""

    def __init__(self, dim: int, heads: int, zero_init: bool = True,
                 dtype=torch.float64):
        super().__init__()
        self.norm = nn.LayerNorm(dim, dtype=dtype)
        self.attn = MultiheadAttention(dim, heads, zero_init, dtype)

    def forward(self, x, pos=None):
        h = self.norm(x)
        qk = h if pos is None else h + pos
        return x + self.attn(qk, qk, h)


class FeedForwardLayer(nn.Module):
    """x + W2(gelu(W1(LN(x)))); W2 zero-initialized by default."""

    def __init__(self, dim: int, hidden: int, zero_init: bool = True,
                 dtype=torch.float64):
        super().__init__()
        self.norm = nn.LayerNorm(dim, dtype=dtype)
        self.fc1 = nn.Linear(dim, hidden, dtype=dtype)
        self.fc2 = nn.Linear(hidden, dim, dtype=dtype)
        nn.init.xavier_uniform_(self.fc1.weight)
        nn.init.zeros_(self.fc1.bias)
        if zero_init:
            nn.init.zeros_(self.fc2.weight)
        else:
            nn.init.xavier_uniform_(self.fc2.weight)
        nn.init.zeros_(self.fc2.bias)

    def forward(self, x):
        return x + self.fc2(torch.nn.functional.gelu(self.fc1(self.norm(x))))


class QueryAttentionBlock(nn.Module):
    """Cross-attention to a token sequence, self-attention over the query rows,
    then feed-forward. Used both to fold instance features into the video query
    and as the temporal-interaction decoder."""

    def __init__(self, dim: int, heads: int, self_layers: int = 1,
                 ffn_mult: int = 4, zero_init: bool = True, dtype=torch.float64):
        super().__init__()
        self.cross = CrossAttentionLayer(dim, heads, zero_init, dtype)
        self.selfs = nn.ModuleList(
            SelfAttentionLayer(dim, heads, zero_init, dtype) for _ in range(self_layers))
        self.ffn = FeedForwardLayer(dim, ffn_mult * dim, zero_init, dtype)

    def forward(self, query: torch.Tensor, memory: torch.Tensor) -> torch.Tensor:
        if query.ndim != 2 or memory.ndim != 2:
            raise ValueError(f"expected 2D query/memory, got {query.shape} / "
                             f"{memory.shape}")
        if query.shape[1] != memory.shape[1]:
            raise ValueError(f"width mismatch: query {query.shape[1]} vs memory "
                             f"{memory.shape[1]}")
        x = self.cross(query, memory)
        for layer in self.selfs:
            x = layer(x)
        x = self.ffn(x)
        if not torch.isfinite(x).all():
            raise FloatingPointError("non-finite values in attention block output")
        return x


def sincos_position_1d(length: int, dim: int, dtype=torch.float64) -> torch.Tensor:
    """Fixed sinusoidal encoding, (length, dim)."""
    if dim % 2 != 0:
        raise ValueError("dim must be even")
    pos = torch.arange(length, dtype=dtype)[:, None]
    freq = torch.exp(torch.arange(0, dim, 2, dtype=dtype) * (-math.log(1e4) / dim))
    enc = torch.zeros(length, dim, dtype=dtype)
    enc[:, 0::2] = torch.sin(pos * freq)
    enc[:, 1::2] = torch.cos(pos * freq)
    return enc


def sincos_position_2d(h: int, w: int, dim: int, dtype=torch.float64) -> torch.Tensor:
    """Fixed 2D sinusoidal encoding flattened row-major, (h*w, dim)."""
    if dim % 2 != 0:
        raise ValueError("dim must be even")
    half = dim // 2
    if half % 2 != 0:
        half += 1  # keep each axis encoding even-sized
    rows = sincos_position_1d(h, half, dtype)
    cols = sincos_position_1d(w, half, dtype)
    grid = torch.cat([
        rows[:, None, :].expand(h, w, half),
        cols[None, :, :].expand(h, w, half),
    ], dim=-1)[..., :dim]
    return grid.reshape(h * w, -1)[:, :dim]


def randomize_parameters(module: nn.Module, seed: int, scale: float = 0.2):
    """Re-initialize every parameter randomly (gradient-check setup: the default
    zero output projections would hide most of the parameter space)."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, nn.LayerNorm):
                m.weight.normal_(1.0, 0.1, generator=gen)
                m.bias.normal_(0.0, 0.1, generator=gen)
        for name, p in module.named_parameters():
            owner = module
            parts = name.split(".")
            for part in parts[:-1]:
                owner = getattr(owner, part)
            if isinstance(owner, nn.LayerNorm):
                continue
            p.normal_(0.0, scale, generator=gen)
