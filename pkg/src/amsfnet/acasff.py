"""Cross-domain attention between spatial and frequency token streams, with adaptive fusion."""
from __future__ import annotations

import math

import torch
from torch import nn

CLS, SPATIAL, FREQUENCY = 0, 1, 2


def scaled_attention(q, k, v, return_weights: bool = False):
    """softmax(q k^T / sqrt(d)) v over the last two axes; d is q's last dim."""
    if q.shape[-1] != k.shape[-1]:
        raise ValueError(f"query/key width mismatch: {q.shape[-1]} vs {k.shape[-1]}")
    if k.shape[-2] != v.shape[-2]:
        raise ValueError(f"key/value length mismatch: {k.shape[-2]} vs {v.shape[-2]}")
    w = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1]), dim=-1)
    out = w @ v
    return (out, w) if return_weights else out


def split_heads(x, heads):
    b, t, d = x.shape
    return x.view(b, t, heads, d // heads).transpose(1, 2)


def merge_heads(x):
    b, h, t, dh = x.shape
    return x.transpose(1, 2).reshape(b, t, h * dh)


class CrossDomainAttention(nn.Module):
    """Spatial queries attend to frequency keys/values and vice versa."""

    def __init__(self, d_model: int, heads: int = 1):
        super().__init__()
        if d_model % heads:
            raise ValueError(f"heads={heads} must divide d_model={d_model}")
        self.heads = heads
        self.d_model = d_model
        self.q_s = nn.Linear(d_model, d_model, bias=False)
        self.k_f = nn.Linear(d_model, d_model, bias=False)
        self.v_f = nn.Linear(d_model, d_model, bias=False)
        self.q_f = nn.Linear(d_model, d_model, bias=False)
        self.k_s = nn.Linear(d_model, d_model, bias=False)
        self.v_s = nn.Linear(d_model, d_model, bias=False)
        self.last_weights = None

    def _attend(self, q, k, v):
        h = self.heads
        out, w = scaled_attention(split_heads(q, h), split_heads(k, h), split_heads(v, h), return_weights=True)
        return merge_heads(out), w

    def forward(self, phi_s, phi_f):
        """Returns (phi_sf, phi_fs): spatial->frequency and frequency->spatial outputs."""
        if phi_s.shape[-1] != self.d_model or phi_f.shape[-1] != self.d_model:
            raise ValueError(f"token width must be {self.d_model}")
        phi_sf, w_sf = self._attend(self.q_s(phi_s), self.k_f(phi_f), self.v_f(phi_f))
        phi_fs, w_fs = self._attend(self.q_f(phi_f), self.k_s(phi_s), self.v_s(phi_s))
        self.last_weights = (w_sf, w_fs)
        return phi_sf, phi_fs


def residual_enhance(phi_s, phi_f, phi_sf, phi_fs):
    """Omega_s = phi_s + phi_fs, Omega_f = phi_f + phi_sf (cross pairing as published)."""
    if not (phi_s.shape == phi_f.shape == phi_sf.shape == phi_fs.shape):
        raise ValueError("residual inputs must share one shape")
    return phi_s + phi_fs, phi_f + phi_sf


class AdaptiveFusion(nn.Module):
    """One softmax pair (w1, w2) per sequence from token-pooled [Omega_f, Omega_s]."""

    def __init__(self, d_model: int, hidden: int = 16):
        super().__init__()
        self.fc1 = nn.Linear(2 * d_model, hidden)
        self.fc2 = nn.Linear(hidden, 2)
        self.last_weights = None

    def weights(self, omega_f, omega_s):
        desc = torch.cat([omega_f.mean(dim=-2), omega_s.mean(dim=-2)], dim=-1)
        return torch.softmax(self.fc2(torch.relu(self.fc1(desc))), dim=-1)

    def forward(self, omega_f, omega_s):
        if omega_f.shape != omega_s.shape:
            raise ValueError("fusion inputs must share one shape")
        w = self.weights(omega_f, omega_s)
        self.last_weights = w
        return w[..., 0, None, None] * omega_f + w[..., 1, None, None] * omega_s


class FuseBlock(nn.Module):
    """Split a tagged sequence by domain, cross-attend, enhance, fuse, write back.

    The fused stream replaces both domain slots so the token count is unchanged.
    With ``fuse_cls`` the CLS token joins both streams and takes the fused value;
    otherwise it passes through untouched.
    """

    def __init__(self, d_model: int, heads: int = 1, hidden: int = 16, fuse_cls: bool = False):
        super().__init__()
        self.cross = CrossDomainAttention(d_model, heads)
        self.fusion = AdaptiveFusion(d_model, hidden)
        self.fuse_cls = fuse_cls

    def forward(self, tokens: torch.Tensor, tags) -> torch.Tensor:
        tags = torch.as_tensor(tags)
        s_idx = torch.nonzero(tags == SPATIAL).flatten()
        f_idx = torch.nonzero(tags == FREQUENCY).flatten()
        c_idx = torch.nonzero(tags == CLS).flatten()
        if len(s_idx) == 0 or len(f_idx) == 0:
            raise ValueError("sequence lacks spatial or frequency tokens")
        if len(s_idx) != len(f_idx):
            raise ValueError("spatial and frequency streams must have equal length")
        phi_s, phi_f = tokens[:, s_idx], tokens[:, f_idx]
        if self.fuse_cls and len(c_idx):
            cls = tokens[:, c_idx]
            phi_s = torch.cat([cls, phi_s], dim=1)
            phi_f = torch.cat([cls, phi_f], dim=1)
        phi_sf, phi_fs = self.cross(phi_s, phi_f)
        omega_s, omega_f = residual_enhance(phi_s, phi_f, phi_sf, phi_fs)
        fused = self.fusion(omega_f, omega_s)
        out = tokens.clone()
        if self.fuse_cls and len(c_idx):
            n = len(c_idx)
            out[:, c_idx] = fused[:, :n]
            fused = fused[:, n:]
        out[:, s_idx] = fused
        out[:, f_idx] = fused
        return out
