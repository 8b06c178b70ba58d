"""Patient-level splitting and subject-disjoint N-way K-shot episode sampling."""
from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

SPLITS = ("train", "val", "test")
MANIFEST_FIELDS = ("item_id", "relative_path", "class_label", "patient_id")


class EpisodeError(ValueError):
    pass


@dataclass(frozen=True)
class Item:
    item_id: str
    path: str
    label: str
    patient_id: str


@dataclass
class DatasetManifest:
    items: list
    splits: dict = field(default_factory=dict)  # patient_id -> split name

    @property
    def classes(self):
        return sorted({it.label for it in self.items})

    def patients(self, label=None):
        return sorted({it.patient_id for it in self.items if label is None or it.label == label})

    def split_items(self, split):
        """Items whose patient is assigned to ``split`` (a name or a collection of names)."""
        names = {split} if isinstance(split, str) else set(split)
        if not self.splits:
            raise EpisodeError("manifest has no split assignment")
        return [it for it in self.items if self.splits.get(it.patient_id) in names]

    def write(self, path):
        path = Path(path)
        cols = MANIFEST_FIELDS + (("split",) if self.splits else ())
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for it in self.items:
                row = [it.item_id, it.path, it.label, it.patient_id]
                if self.splits:
                    row.append(self.splits.get(it.patient_id, ""))
                w.writerow(row)

    @classmethod
    def read(cls, path):
        with Path(path).open(newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            missing = set(MANIFEST_FIELDS) - set(reader.fieldnames or ())
            if missing:
                raise ValueError(f"manifest header lacks {sorted(missing)}")
            items, splits = [], {}
            for row in reader:
                items.append(Item(row["item_id"], row["relative_path"], row["class_label"], row["patient_id"]))
                if row.get("split"):
                    splits[row["patient_id"]] = row["split"]
        return cls(items, splits)


def split_counts(n: int, ratios) -> list:
    """Integer patient counts per split: largest remainder, every split non-empty."""
    ratios = np.asarray(ratios, dtype=float)
    target = n * ratios / ratios.sum()
    counts = np.floor(target).astype(int)
    order = np.argsort(-(target - counts), kind="stable")
    for i in order[: n - counts.sum()]:
        counts[i] += 1
    for i in np.flatnonzero(counts == 0):
        j = int(np.argmax(counts))
        counts[j] -= 1
        counts[i] += 1
    return counts.tolist()


def split_by_patient(manifest: DatasetManifest, ratios=(5, 3, 2), seed: int = 0) -> DatasetManifest:
    """Assign whole patients to train/val/test, per class, deterministically in ``seed``."""
    labels_of = defaultdict(set)
    for it in manifest.items:
        labels_of[it.patient_id].add(it.label)
    mixed = sorted(p for p, ls in labels_of.items() if len(ls) > 1)
    if mixed:
        raise EpisodeError(f"patients carry several class labels: {mixed}")
    rng = np.random.default_rng(seed)
    splits = {}
    for label in manifest.classes:
        patients = manifest.patients(label)
        if len(patients) < len(ratios):
            raise EpisodeError(f"class {label!r} has {len(patients)} patients; {len(ratios)} needed")
        patients = [patients[i] for i in rng.permutation(len(patients))]
        start = 0
        for name, c in zip(SPLITS, split_counts(len(patients), ratios)):
            for p in patients[start : start + c]:
                splits[p] = name
            start += c
    return replace(manifest, splits=splits)


@dataclass
class EpisodeSpec:
    n_way: int
    k_shot: int
    n_query: int
    classes: list  # class names; position = episode label
    support: list  # n_way lists of K items
    query: list  # n_way lists of Q items

    @property
    def label_map(self):
        return {c: i for i, c in enumerate(self.classes)}

    def support_patients(self, c):
        return {it.patient_id for it in self.support[c]}

    def query_patients(self, c):
        return {it.patient_id for it in self.query[c]}


def _sample_class(items, label, k, q, rng):
    by_patient = defaultdict(list)
    for it in items:
        by_patient[it.patient_id].append(it)
    patients = sorted(by_patient)
    if len(patients) < 2:
        raise EpisodeError(f"class {label!r} has a single patient; support and query cannot be patient-disjoint")
    order = [patients[i] for i in rng.permutation(len(patients))]
    sizes = np.cumsum([len(by_patient[p]) for p in order])
    total = sizes[-1]
    # the first `cut` permuted patients form the support pool, the rest the query pool
    feasible = [cut for cut in range(1, len(order)) if sizes[cut - 1] >= k and total - sizes[cut - 1] >= q]
    if not feasible:
        raise EpisodeError(f"class {label!r}: not enough items for {k} support + {q} query with disjoint patients")
    cut = feasible[rng.integers(len(feasible))]
    s_pool = [it for p in order[:cut] for it in by_patient[p]]
    q_pool = [it for p in order[cut:] for it in by_patient[p]]
    s = [s_pool[i] for i in rng.choice(len(s_pool), k, replace=False)]
    qs = [q_pool[i] for i in rng.choice(len(q_pool), q, replace=False)]
    return s, qs


def sample_episode(manifest: DatasetManifest, split, n_way: int, k_shot: int, n_query: int, rng) -> EpisodeSpec:
    """Draw one task; per class, support and query come from disjoint patient pools."""
    items = manifest.split_items(split)
    by_class = defaultdict(list)
    for it in items:
        by_class[it.label].append(it)
    classes = sorted(by_class)
    if n_way > len(classes):
        raise EpisodeError(f"{n_way}-way episode requested but split {split!r} has {len(classes)} classes")
    chosen = [classes[i] for i in rng.choice(len(classes), n_way, replace=False)]
    support, query = [], []
    for c in chosen:
        s, q = _sample_class(sorted(by_class[c], key=lambda it: it.item_id), c, k_shot, n_query, rng)
        support.append(s)
        query.append(q)
    return EpisodeSpec(n_way, k_shot, n_query, chosen, support, query)


def episode_batcher(manifest, split, n_way, k_shot, n_query, count: int, seed: int):
    """Yield ``count`` independent episodes from a generator seeded with ``seed``."""
    rng = np.random.default_rng(seed)
    for _ in range(count):
        yield sample_episode(manifest, split, n_way, k_shot, n_query, rng)
