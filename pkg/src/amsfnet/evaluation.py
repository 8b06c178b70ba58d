"""Episodic evaluation with 95% confidence intervals, confusion matrices and embedding export."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .episodes import episode_batcher
from .similarity import ClassScores
from .training import episode_tensors


def confidence_interval(accuracies) -> float:
    """Half-width 1.96 * s / sqrt(T), s the sample standard deviation."""
    a = np.asarray(accuracies, dtype=float)
    if len(a) < 2:
        return 0.0
    return float(1.96 * a.std(ddof=1) / np.sqrt(len(a)))


@dataclass
class EvalReport:
    accuracy: float
    ci95: float
    episodes: int
    classes: list
    confusion: np.ndarray  # rows true class, columns predicted class
    per_episode: list = field(default_factory=list)
    fingerprint: str = ""

    @property
    def precision(self):
        col = self.confusion.sum(axis=0)
        return np.divide(np.diag(self.confusion), col, out=np.zeros(len(col)), where=col > 0)

    @property
    def recall(self):
        row = self.confusion.sum(axis=1)
        return np.divide(np.diag(self.confusion), row, out=np.zeros(len(row)), where=row > 0)

    def to_dict(self):
        return {
            "accuracy": self.accuracy,
            "ci95": self.ci95,
            "episodes": self.episodes,
            "classes": list(self.classes),
            "confusion": self.confusion.tolist(),
            "precision": self.precision.tolist(),
            "recall": self.recall.tolist(),
            "fingerprint": self.fingerprint,
        }

    def write(self, out_dir):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "eval_summary.json").write_text(json.dumps(self.to_dict(), indent=2))
        with (out_dir / "eval_episodes.csv").open("w", encoding="utf-8") as fh:
            fh.write("episode,accuracy\n")
            for i, a in enumerate(self.per_episode):
                fh.write(f"{i},{a!r}\n")
        with (out_dir / "confusion.csv").open("w", encoding="utf-8") as fh:
            fh.write("true\\pred," + ",".join(self.classes) + "\n")
            for c, row in zip(self.classes, self.confusion):
                fh.write(c + "," + ",".join(str(int(v)) for v in row) + "\n")


def evaluate(model, manifest, store, split, episodes: int, seed: int = 0,
             n_way: int = 4, k_shot: int = 5, n_query: int = 15, fingerprint: str = "") -> EvalReport:
    """Accuracy over a seeded episode stream.

    ``model`` is any callable (support, query) -> ClassScores or logits; modules
    are switched to eval mode. The confusion matrix is indexed by the split's
    sorted class names, so episode label order does not matter.
    """
    if isinstance(model, torch.nn.Module):
        model.eval()
    dtype = model.dtype if hasattr(model, "dtype") else torch.float32
    classes = sorted({it.label for it in manifest.split_items(split)})
    index = {c: i for i, c in enumerate(classes)}
    confusion = np.zeros((len(classes), len(classes)), dtype=np.int64)
    accs = []
    with torch.no_grad():
        for ep in episode_batcher(manifest, split, n_way, k_shot, n_query, episodes, seed):
            support, query, labels = episode_tensors(ep, store, dtype=dtype)
            out = model(support, query)
            pred = out.prediction if isinstance(out, ClassScores) else torch.as_tensor(out).argmax(-1)
            pred, labels = pred.numpy(), labels.numpy()
            glob = np.array([index[c] for c in ep.classes])
            np.add.at(confusion, (glob[labels], glob[pred]), 1)
            accs.append(float((pred == labels).mean()))
    total = confusion.sum()
    acc = float(np.trace(confusion) / total) if total else 0.0
    return EvalReport(acc, confidence_interval(accs), len(accs), classes, confusion, accs, fingerprint)


def export_embeddings(model, manifest, store, split, count: int, path, batch: int = 64):
    """CSV of item_id, patient_id, label and the pooled feature vector, sorted by item id."""
    items = sorted(manifest.split_items(split), key=lambda it: it.item_id)[:count]
    width = model.cfg.d_model
    model.eval()
    rows = []
    with torch.no_grad():
        for i in range(0, len(items), batch):
            chunk = items[i : i + batch]
            imgs = torch.as_tensor(np.stack([store[it.item_id] for it in chunk])[:, None], dtype=model.dtype)
            rows.extend(model.embed(imgs).double().numpy())
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write("item_id,patient_id,label," + ",".join(f"f{j}" for j in range(width)) + "\n")
        for it, vec in zip(items, rows):
            fh.write(f"{it.item_id},{it.patient_id},{it.label}," + ",".join(repr(float(v)) for v in vec) + "\n")
    return len(items)
