"""AMSF-Net assembly: wavelet front-end, dual-domain encoder with fusion block, episodic head."""
from __future__ import annotations

import torch
from torch import nn

from .acasff import FuseBlock
from .amff import AMFF, wavelet_inputs
from .backbone import Backbone
from .config import ModelConfig
from .similarity import ProtoHead, RidgeHead


def standardize(x, eps: float = 1e-6):
    """Zero mean, unit variance per image and channel of a (B, C, H, W) tensor."""
    mean = x.mean(dim=(-2, -1), keepdim=True)
    var = x.var(dim=(-2, -1), unbiased=False, keepdim=True)
    return (x - mean) / torch.sqrt(var + eps)


class AMSFNet(nn.Module):
    """Full model and its ablations.

    Without AMFF both projection heads read the raw image; without ACA-SFF the
    encoder runs with no fusion block.
    """

    def __init__(self, cfg: ModelConfig = ModelConfig()):
        super().__init__()
        self.cfg = cfg
        self.amff = AMFF(cfg.dwt_levels, cfg.gate_hidden_width, cfg.descriptor_pool) if cfg.use_amff else None
        self.backbone = Backbone(
            cfg.d_model, cfg.depth, cfg.heads, cfg.patch_size, cfg.image_size, cfg.c_proj, cfg.dropout_rate
        )
        self.fuse = (
            FuseBlock(cfg.d_model, cfg.heads, cfg.fusion_mlp_hidden, cfg.fuse_cls) if cfg.use_acasff else None
        )
        if cfg.head == "ridge":
            self.head = RidgeHead(cfg.tau_init, cfg.gamma, cfg.eps)
        elif cfg.head == "proto":
            self.head = ProtoHead()
        else:
            raise ValueError(f"unknown head {cfg.head!r}")

    @property
    def dtype(self):
        return self.backbone.norm.weight.dtype

    def stem(self, images):
        """(B, 1, H, W) images -> (B, 2, H, W) low/high channel pair fed to the encoder."""
        if self.amff is not None:
            ll, hf = wavelet_inputs(images, self.amff.levels, dtype=self.dtype)
            x = self.amff.fuse(ll, hf).x
        else:
            images = torch.as_tensor(images, dtype=self.dtype)
            x = torch.cat([images, images], dim=1)
        return standardize(x) if self.cfg.stem_norm else x

    def features(self, images):
        """Final patch tokens (CLS excluded), shape (B, r, d_model)."""
        seq = self.backbone(self.stem(images), self.cfg.resolved_insertion, self.fuse)
        return seq.patch_tokens

    def embed(self, images):
        """Token-averaged feature vector per image, shape (B, d_model)."""
        return self.features(images).mean(dim=1)

    def forward(self, support, query):
        """support (N, K, 1, H, W), query (Q, 1, H, W) -> ClassScores over the N classes."""
        n, k = support.shape[:2]
        feats = self.features(torch.cat([support.flatten(0, 1), query], dim=0))
        s = feats[: n * k].unflatten(0, (n, k))
        return self.head(feats[n * k :], s)
