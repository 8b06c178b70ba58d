"""Adaptive multi-scale feature fusion: directional and scale gating over Haar detail maps."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from . import wavelet


def directional_descriptors(h_l: torch.Tensor, pool: str = "mean") -> torch.Tensor:
    """Global average of each directional map.

    ``h_l`` has shape (..., 3, H, W); the result is (..., 3) in (LH, HL, HH) order.
    ``pool="abs_mean"`` averages magnitudes instead of signed values.
    """
    if h_l.numel() == 0 or h_l.shape[-1] == 0 or h_l.shape[-2] == 0:
        raise ValueError("empty directional map")
    if pool == "abs_mean":
        h_l = h_l.abs()
    elif pool != "mean":
        raise ValueError(f"unknown descriptor pooling {pool!r}")
    return h_l.mean(dim=(-2, -1))


class GateMLP(nn.Module):
    """Descriptor vector -> softmax weights, through one ReLU hidden layer."""

    def __init__(self, n_in: int, n_out: int, hidden: int = 16):
        super().__init__()
        self.fc1 = nn.Linear(n_in, hidden)
        self.fc2 = nn.Linear(hidden, n_out)

    def forward(self, d):
        return torch.softmax(self.fc2(torch.relu(self.fc1(d))), dim=-1)


def directional_gate(descriptors: torch.Tensor, mlp: GateMLP) -> torch.Tensor:
    if descriptors.shape[-1] != mlp.fc1.in_features:
        raise ValueError(f"expected {mlp.fc1.in_features} descriptors, got {descriptors.shape[-1]}")
    return mlp(descriptors)


scale_gate = directional_gate


def fuse_directions(r_lh, r_hl, r_hh, gate: torch.Tensor) -> torch.Tensor:
    """alpha*LH + beta*HL + gamma*HH with ``gate`` of shape (..., 3) broadcast over (H, W)."""
    if not (r_lh.shape == r_hl.shape == r_hh.shape):
        raise ValueError("directional maps must share one shape")
    g = gate[..., None, None]
    return g[..., 0, :, :] * r_lh + g[..., 1, :, :] * r_hl + g[..., 2, :, :] * r_hh


def fuse_scales(maps, eta: torch.Tensor) -> torch.Tensor:
    """Sum over levels of eta_l * map_l; ``eta`` has shape (..., L)."""
    if len({tuple(m.shape) for m in maps}) != 1:
        raise ValueError("per-level maps must share one shape")
    if eta.shape[-1] != len(maps):
        raise ValueError(f"{eta.shape[-1]} scale weights for {len(maps)} maps")
    out = torch.zeros_like(maps[0])
    for l, m in enumerate(maps):
        out = out + eta[..., l, None, None] * m
    return out


@dataclass
class GateWeights:
    directional: torch.Tensor  # (B, L, 3)
    scale: torch.Tensor  # (B, L)
    directional_descriptors: torch.Tensor  # (B, L, 3)
    scale_descriptors: torch.Tensor  # (B, L)


@dataclass
class AmffOutput:
    x: torch.Tensor  # (B, 2, H, W): channel 0 low-frequency, channel 1 fused high-frequency
    gates: GateWeights

    @property
    def low(self):
        return self.x[:, :1]

    @property
    def high(self):
        return self.x[:, 1:]


def wavelet_inputs(images, levels: int, dtype=torch.float32):
    """Run the fixed Haar front-end on a batch (B, H, W) or (B, 1, H, W).

    Returns (ll, hf) with ll of shape (B, 1, H, W) and hf of shape (B, L, 3, H, W).
    """
    arr = images.detach().cpu().numpy() if torch.is_tensor(images) else np.asarray(images)
    if arr.ndim == 4:
        if arr.shape[1] != 1:
            raise ValueError("AMFF expects single-channel images")
        arr = arr[:, 0]
    ll, hf = wavelet.wavelet_features(arr, levels)
    return torch.as_tensor(ll[:, None], dtype=dtype), torch.as_tensor(hf, dtype=dtype)


class AMFF(nn.Module):
    """Directional gating per level, scale gating across levels, stacked with the LL_1 map.

    The Haar stage carries no parameters, so gradients reach only the gating MLPs.
    """

    def __init__(self, levels: int = 3, hidden: int = 16, pool: str = "mean"):
        super().__init__()
        if not 1 <= levels <= wavelet.MAX_LEVELS:
            raise wavelet.LevelError(f"levels must be in 1..{wavelet.MAX_LEVELS}")
        self.levels = levels
        self.pool = pool
        self.directional = nn.ModuleList(GateMLP(3, 3, hidden) for _ in range(levels))
        self.scale = GateMLP(levels, levels, hidden)
        self.last_gates = None

    def fuse(self, ll: torch.Tensor, hf: torch.Tensor) -> AmffOutput:
        fused, gates, descs = [], [], []
        for l in range(self.levels):
            h_l = hf[:, l]
            d = directional_descriptors(h_l, self.pool)
            g = directional_gate(d, self.directional[l])
            fused.append(fuse_directions(h_l[:, 0], h_l[:, 1], h_l[:, 2], g))
            gates.append(g)
            descs.append(d)
        s = torch.stack([directional_descriptors(f[:, None], self.pool)[:, 0] for f in fused], dim=-1)
        eta = scale_gate(s, self.scale)
        i_hf = fuse_scales(fused, eta)
        x = torch.cat([ll, i_hf[:, None]], dim=1)
        self.last_gates = GateWeights(torch.stack(gates, 1), eta, torch.stack(descs, 1), s)
        return AmffOutput(x, self.last_gates)

    def forward(self, images) -> AmffOutput:
        dtype = self.scale.fc1.weight.dtype
        ll, hf = wavelet_inputs(images, self.levels, dtype=dtype)
        return self.fuse(ll.to(self.scale.fc1.weight.device), hf.to(self.scale.fc1.weight.device))
