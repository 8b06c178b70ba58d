"""Episodic training: loss, warm-up/step schedule, loop and checkpoints."""
from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig
from .datasets import AugmentPolicy, augment
from .episodes import episode_batcher
from .model import AMSFNet

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "amsfnet-checkpoint"
CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    pass


def episodic_loss(probabilities, labels, atol: float = 1e-6):
    """Mean -log p(true class) over an episode's queries."""
    p = torch.as_tensor(probabilities)
    if not torch.allclose(p.sum(-1), torch.ones((), dtype=p.dtype), atol=atol):
        raise ValueError("probability rows must sum to 1")
    labels = torch.as_tensor(labels)
    return -torch.log(p.gather(-1, labels[:, None])).mean()


def episodic_nll(log_probabilities, labels):
    """Same loss from log-probabilities; stable when probabilities underflow."""
    return -log_probabilities.gather(-1, torch.as_tensor(labels)[:, None]).mean()


def lr_at(t: int, cfg) -> float:
    """Linear warm-up from 0 over ``cfg.warmup`` episodes, halved (x decay) at each milestone."""
    warm = min(1.0, t / cfg.warmup) if cfg.warmup > 0 else 1.0
    return cfg.lr * warm * cfg.decay ** sum(t >= m for m in cfg.milestones)


def episode_tensors(ep, store, rng=None, policy: AugmentPolicy | None = None, dtype=torch.float32):
    """EpisodeSpec -> support (N, K, 1, H, W), query (N*Q, 1, H, W), labels (N*Q,)."""

    def load(it):
        img = store[it.item_id]
        if policy is not None:
            img = augment(img, rng, policy)
        return img

    sup = np.stack([[load(it) for it in row] for row in ep.support])
    qry = np.stack([load(it) for row in ep.query for it in row])
    labels = np.repeat(np.arange(ep.n_way), [len(row) for row in ep.query])
    return (
        torch.as_tensor(sup[:, :, None], dtype=dtype),
        torch.as_tensor(qry[:, None], dtype=dtype),
        torch.as_tensor(labels),
    )


@dataclass
class TrainResult:
    model: AMSFNet
    config: RunConfig
    history: list = field(default_factory=list)  # one dict per episode
    validation: list = field(default_factory=list)  # (episode, accuracy)
    best_episode: int | None = None


def smoothed(values, window: int = 20):
    v = np.asarray(values, dtype=float)
    if len(v) < window:
        return v
    return np.convolve(v, np.ones(window) / window, mode="valid")


def train(cfg: RunConfig, manifest, store, split="train", out_dir=None) -> TrainResult:
    """Per-episode AdamW steps; keeps the best-validation weights when validation is on."""
    from .evaluation import evaluate

    tc, ec = cfg.train, cfg.episodes
    torch.manual_seed(tc.seed)
    rng = np.random.default_rng(tc.seed)
    model = AMSFNet(cfg.model)
    opt = torch.optim.AdamW(model.parameters(), lr=tc.lr, weight_decay=tc.weight_decay)
    policy = AugmentPolicy() if tc.augment else None
    result = TrainResult(model, cfg)
    best_acc, best_state = -math.inf, None
    stream = episode_batcher(manifest, split, ec.n_way, ec.k_shot, ec.n_query, tc.episodes, tc.seed)
    for t, ep in enumerate(stream):
        lr = lr_at(t, tc)
        for g in opt.param_groups:
            g["lr"] = lr
        model.train()
        support, query, labels = episode_tensors(ep, store, rng, policy)
        scores = model(support, query)
        loss = episodic_nll(scores.log_probabilities, labels)
        if not torch.isfinite(loss):
            _dump_state(out_dir, t, lr, loss, model)
            raise TrainingDiverged(f"non-finite loss at episode {t} (lr={lr:g})")
        opt.zero_grad()
        loss.backward()
        opt.step()
        acc = (scores.prediction == labels).double().mean().item()
        result.history.append({"episode": t, "lr": lr, "loss": loss.item(), "accuracy": acc})
        if tc.val_every and tc.val_split and (t + 1) % tc.val_every == 0:
            rep = evaluate(model, manifest, store, tc.val_split, tc.val_episodes, seed=tc.seed + 1,
                           n_way=ec.n_way, k_shot=ec.eval_shot or ec.k_shot,
                           n_query=ec.eval_query or ec.n_query)
            result.validation.append((t + 1, rep.accuracy))
            log.info("episode %d: val accuracy %.4f", t + 1, rep.accuracy)
            if rep.accuracy > best_acc:
                best_acc, best_state = rep.accuracy, copy.deepcopy(model.state_dict())
                result.best_episode = t + 1
    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(out_dir / "checkpoint.pt", model, cfg)
        write_history(out_dir / "train_metrics.csv", result.history)
    return result


def _dump_state(out_dir, t, lr, loss, model):
    state = {
        "episode": t,
        "lr": lr,
        "loss": loss.item(),
        "param_norms": {k: float(v.norm()) for k, v in model.state_dict().items()},
    }
    log.error("training diverged: %s", json.dumps({k: state[k] for k in ("episode", "lr", "loss")}))
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "diverged.json").write_text(json.dumps(state, indent=2))


def write_history(path, rows):
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write("episode,lr,loss,accuracy\n")
        for r in rows:
            fh.write(f"{r['episode']},{r['lr']!r},{r['loss']!r},{r['accuracy']!r}\n")


def save_checkpoint(path, model: AMSFNet, cfg: RunConfig):
    torch.save(
        {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": cfg.to_dict(),
            "fingerprint": cfg.fingerprint(),
            "state_dict": model.state_dict(),
        },
        path,
    )


def load_checkpoint(path):
    """Returns (model, config); rejects foreign or mismatched containers."""
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(blob, dict) or blob.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not an AMSF-Net checkpoint")
    if blob.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {blob.get('version')}")
    cfg = RunConfig.from_dict(blob["config"])
    if cfg.fingerprint() != blob["fingerprint"]:
        raise ValueError("checkpoint config does not match its fingerprint")
    model = AMSFNet(cfg.model)
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return model, cfg
