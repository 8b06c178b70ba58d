"""Ridge-reconstruction episodic classifier and a prototype baseline head."""
from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn
from torch.nn import functional as F

NORM_EPS = 1e-12
TAU_RANGE = (0.1, 100.0)


def l2_normalize(x, dim: int = -1):
    """Unit-norm rows along ``dim``; rows with norm below 1e-12 are returned unchanged."""
    norm = x.norm(dim=dim, keepdim=True)
    return torch.where(norm > NORM_EPS, x / norm.clamp_min(NORM_EPS), x)


def aggregate_support(shots):
    """Mean over the shot axis (-3) of (..., K, r, d) features, then row normalization."""
    if shots.shape[-3] == 0:
        raise ValueError("at least one support shot is required")
    return l2_normalize(shots.mean(dim=-3))


def _check_lam(lam):
    if torch.is_tensor(lam):
        if (lam <= 0).any():
            raise ValueError("ridge penalty must be positive")
    elif lam <= 0:
        raise ValueError("ridge penalty must be positive")


def reconstruction_matrix(s, lam, form: str = "auto"):
    """(S^T S + lam I_d)^-1 S^T S for S of shape (..., r, d).

    The dual form S^T (S S^T + lam I_r)^-1 S is used when r < d (``form="auto"``).
    """
    _check_lam(lam)
    r, d = s.shape[-2:]
    if form == "auto":
        form = "dual" if r < d else "primal"
    st = s.transpose(-2, -1)
    if form == "dual":
        gram = s @ st + lam * torch.eye(r, dtype=s.dtype, device=s.device)
        return st @ torch.linalg.solve(gram, s)
    if form == "primal":
        sts = st @ s
        return torch.linalg.solve(sts + lam * torch.eye(d, dtype=s.dtype, device=s.device), sts)
    raise ValueError(f"unknown form {form!r}")


def reconstruct(f_q, w, rho):
    if f_q.shape[-1] != w.shape[-2]:
        raise ValueError(f"feature width {f_q.shape[-1]} does not match reconstruction matrix {tuple(w.shape)}")
    return rho * (f_q @ w)


def score(f_q, f_hat):
    """Negative mean over positions of the squared reconstruction error."""
    if f_q.shape != f_hat.shape:
        raise ValueError(f"shape mismatch {tuple(f_q.shape)} vs {tuple(f_hat.shape)}")
    return -((f_q - f_hat) ** 2).sum(dim=-1).mean(dim=-1)


@dataclass
class ClassScores:
    scores: torch.Tensor  # (Q, N) negative reconstruction errors (or negative distances)
    logits: torch.Tensor  # tau * scores

    @property
    def log_probabilities(self):
        return torch.log_softmax(self.logits, dim=-1)

    @property
    def probabilities(self):
        return torch.softmax(self.logits, dim=-1)

    @property
    def prediction(self):
        # argmax returns the first maximal index, i.e. the lowest class index on ties
        return self.logits.argmax(dim=-1)


class RidgeHead(nn.Module):
    """Scores each query by how well class support features reconstruct it.

    lam = softplus(alpha) * gamma + eps, rho = 1 + sigmoid(beta), and tau is clamped
    to [0.1, 100] when used.
    """

    def __init__(self, tau_init: float = 15.0, gamma: float = 10.0, eps: float = 0.01):
        super().__init__()
        self.alpha = nn.Parameter(torch.zeros(()))
        self.beta = nn.Parameter(torch.zeros(()))
        self.tau = nn.Parameter(torch.tensor(float(tau_init)))
        self.gamma = gamma
        self.eps = eps

    @property
    def lam(self):
        return F.softplus(self.alpha) * self.gamma + self.eps

    @property
    def rho(self):
        return 1 + torch.sigmoid(self.beta)

    @property
    def temperature(self):
        return self.tau.clamp(*TAU_RANGE)

    def class_scores(self, f_q, prototypes):
        """Scores for queries (Q, r, d) against aggregated class maps (N, r, d) -> (Q, N)."""
        if prototypes.shape[0] == 0:
            raise ValueError("empty class set")
        f_q = l2_normalize(f_q)
        s = prototypes
        st = s.transpose(-2, -1)
        r, d = s.shape[-2:]
        # F_q W_c evaluated without forming the d x d matrix when r < d
        if r < d:
            gram = s @ st + self.lam * torch.eye(r, dtype=s.dtype, device=s.device)
            coef = torch.linalg.solve(gram, s)  # (N, r, d)
            recon = (f_q[:, None] @ st[None]) @ coef[None]
        else:
            w = reconstruction_matrix(s, self.lam, "primal")
            recon = f_q[:, None] @ w[None]
        return score(f_q[:, None].expand_as(recon), self.rho * recon)

    def forward(self, f_q, support) -> ClassScores:
        """``support`` has shape (N, K, r, d)."""
        sc = self.class_scores(f_q, aggregate_support(support))
        return ClassScores(sc, self.temperature * sc)


class ProtoHead(nn.Module):
    """Negative squared Euclidean distance to class means of token-pooled features."""

    def forward(self, f_q, support) -> ClassScores:
        if support.shape[0] == 0:
            raise ValueError("empty class set")
        protos = support.mean(dim=(1, 2))
        q = f_q.mean(dim=1)
        sc = -((q[:, None] - protos[None]) ** 2).sum(-1)
        return ClassScores(sc, sc)
