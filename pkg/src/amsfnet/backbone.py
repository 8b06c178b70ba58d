"""Compact ViT-style encoder over separate spatial and frequency token streams."""
from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .acasff import CLS, FREQUENCY, SPATIAL, merge_heads, scaled_attention, split_heads


@dataclass
class TokenSequence:
    tokens: torch.Tensor  # (B, 1 + T_s + T_f, d_model)
    tags: tuple  # per-token CLS / SPATIAL / FREQUENCY
    grid: tuple  # (H_p, W_p) per domain

    @property
    def patch_tokens(self):
        """All non-CLS tokens, shape (B, T_s + T_f, d_model)."""
        keep = [i for i, t in enumerate(self.tags) if t != CLS]
        return self.tokens[:, keep]

    def replace(self, tokens):
        return TokenSequence(tokens, self.tags, self.grid)


class DomainProjection(nn.Module):
    """Pointwise (1x1) projections of the LL and HF channel groups to ``c_proj`` channels each."""

    def __init__(self, c_low: int = 1, c_high: int = 1, c_proj: int = 8):
        super().__init__()
        self.c_low, self.c_high = c_low, c_high
        self.spatial = nn.Linear(c_low, c_proj)
        self.frequency = nn.Linear(c_high, c_proj)

    @staticmethod
    def _pointwise(layer, x):
        return layer(x.movedim(1, -1)).movedim(-1, 1)

    def forward(self, x):
        if x.shape[1] != self.c_low + self.c_high:
            raise ValueError(f"expected {self.c_low + self.c_high} channels, got {x.shape[1]}")
        return (
            self._pointwise(self.spatial, x[:, : self.c_low]),
            self._pointwise(self.frequency, x[:, self.c_low :]),
        )


def patchify(f, p):
    """(B, C, H, W) -> (B, T, C*p*p) non-overlapping patches in row-major grid order."""
    b, c, h, w = f.shape
    return f.reshape(b, c, h // p, p, w // p, p).permute(0, 2, 4, 1, 3, 5).reshape(b, (h // p) * (w // p), c * p * p)


class Embedding(nn.Module):
    """Channel-concatenated [F_s, F_f] -> CLS + spatial tokens + frequency tokens.

    Each domain's channel group is patchified and linearly embedded on its own
    so the resulting tokens keep a domain tag.
    """

    def __init__(self, c_proj: int, d_model: int, patch: int, image_size: int, dropout: float = 0.0):
        super().__init__()
        if image_size % patch:
            raise ValueError(f"image size {image_size} not divisible by patch {patch}")
        self.c_proj = c_proj
        self.patch = patch
        self.grid = (image_size // patch, image_size // patch)
        n = self.grid[0] * self.grid[1]
        self.spatial = nn.Linear(c_proj * patch * patch, d_model)
        self.frequency = nn.Linear(c_proj * patch * patch, d_model)
        self.cls = nn.Parameter(torch.zeros(1, 1, d_model))
        self.pos = nn.Parameter(torch.randn(1, 1 + 2 * n, d_model) * 0.02)
        self.dropout = nn.Dropout(dropout)
        self.tags = (CLS,) + (SPATIAL,) * n + (FREQUENCY,) * n

    def forward(self, f) -> TokenSequence:
        h, w = f.shape[-2:]
        if h % self.patch or w % self.patch:
            raise ValueError(f"map {(h, w)} not divisible by patch {self.patch}")
        if (h // self.patch, w // self.patch) != self.grid:
            raise ValueError(f"map {(h, w)} does not match the configured grid {self.grid}")
        z_s = self.spatial(patchify(f[:, : self.c_proj], self.patch))
        z_f = self.frequency(patchify(f[:, self.c_proj :], self.patch))
        psi = torch.cat([self.cls.expand(f.shape[0], -1, -1), z_s, z_f], dim=1)
        return TokenSequence(self.dropout(psi + self.pos), self.tags, self.grid)


class EncoderBlock(nn.Module):
    """Pre-norm multi-head self-attention and GELU MLP, both residual."""

    def __init__(self, d_model: int, heads: int, mlp_ratio: int = 4):
        super().__init__()
        if d_model % heads:
            raise ValueError(f"heads={heads} must divide d_model={d_model}")
        self.heads = heads
        self.norm1 = nn.LayerNorm(d_model)
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.proj = nn.Linear(d_model, d_model)
        self.norm2 = nn.LayerNorm(d_model)
        self.fc1 = nn.Linear(d_model, mlp_ratio * d_model)
        self.fc2 = nn.Linear(mlp_ratio * d_model, d_model)

    def attention(self, x):
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        h = self.heads
        return self.proj(merge_heads(scaled_attention(split_heads(q, h), split_heads(k, h), split_heads(v, h))))

    def forward(self, x):
        x = x + self.attention(self.norm1(x))
        return x + self.fc2(nn.functional.gelu(self.fc1(self.norm2(x))))


class Backbone(nn.Module):
    def __init__(
        self,
        d_model: int = 64,
        depth: int = 4,
        heads: int = 4,
        patch: int = 8,
        image_size: int = 32,
        c_proj: int = 8,
        dropout: float = 0.0,
    ):
        super().__init__()
        self.depth = depth
        self.project = DomainProjection(1, 1, c_proj)
        self.embed = Embedding(c_proj, d_model, patch, image_size, dropout)
        self.blocks = nn.ModuleList(EncoderBlock(d_model, heads) for _ in range(depth))
        self.norm = nn.LayerNorm(d_model)

    def project_domains(self, x):
        return self.project(x)

    def forward(self, x, insertion_layer: int | None = None, fuse=None) -> TokenSequence:
        """Blocks [0, insertion_layer), then ``fuse``, then the rest and a final LayerNorm.

        ``fuse`` maps (tokens, tags) -> tokens; without it the encoder runs plain.
        """
        if insertion_layer is None:
            insertion_layer = self.depth - 1
        if not 0 <= insertion_layer < self.depth:
            raise ValueError(f"insertion_layer must be in [0, {self.depth}), got {insertion_layer}")
        f_s, f_f = self.project(x)
        seq = self.embed(torch.cat([f_s, f_f], dim=1))
        z = seq.tokens
        for i, block in enumerate(self.blocks):
            if i == insertion_layer and fuse is not None:
                z = fuse(z, seq.tags)
            z = block(z)
        return seq.replace(self.norm(z))
