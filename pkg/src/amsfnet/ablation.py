"""Ablation runners: module switches, fusion insertion depth and DWT level."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .config import RunConfig
from .evaluation import evaluate
from .training import train

log = logging.getLogger(__name__)

AXES = ("modules", "insertion_depth", "dwt_level")
MODULE_VARIANTS = {
    "baseline": dict(use_amff=False, use_acasff=False),
    "+AMFF": dict(use_amff=True, use_acasff=False),
    "+ACA-SFF": dict(use_amff=False, use_acasff=True),
    "full": dict(use_amff=True, use_acasff=True),
}
STAGES = ("early", "middle", "deep", "ours")
# reference positions in a 12-block encoder
_STAGE_INDEX = {"early": 3, "middle": 6, "deep": 9, "ours": 11}


def insertion_stages(depth: int) -> dict:
    """Stage name -> block index for an encoder of ``depth`` blocks.

    Reference indices are rescaled to ``depth``; when rounding collapses
    stages (shallow encoders) they are spread evenly over 0..depth-1 instead,
    with "ours" always at depth - 1.
    """
    idx = {s: min(depth - 1, round(i * depth / 12)) for s, i in _STAGE_INDEX.items()}
    idx["ours"] = depth - 1
    if len(set(idx.values())) < len(idx):
        if depth < len(STAGES):
            raise ValueError(f"depth {depth} cannot host {len(STAGES)} distinct insertion stages")
        idx = dict(zip(STAGES, np.round(np.linspace(0, depth - 1, len(STAGES))).astype(int).tolist()))
    return idx


def default_grid(axis: str, depth: int = 4):
    if axis == "modules":
        return list(MODULE_VARIANTS)
    if axis == "insertion_depth":
        return list(STAGES)
    if axis == "dwt_level":
        return [1, 2, 3, 4]
    raise ValueError(f"unknown ablation axis {axis!r}; expected one of {AXES}")


def variant_config(base: RunConfig, axis: str, point) -> RunConfig:
    m = base.model
    if axis == "modules":
        if point not in MODULE_VARIANTS:
            raise ValueError(f"unknown module variant {point!r}")
        m = replace(m, **MODULE_VARIANTS[point])
    elif axis == "insertion_depth":
        layer = insertion_stages(m.depth)[point] if isinstance(point, str) else int(point)
        m = replace(m, use_acasff=True, insertion_layer=layer)
    elif axis == "dwt_level":
        m = replace(m, use_amff=True, dwt_levels=int(point))
    else:
        raise ValueError(f"unknown ablation axis {axis!r}; expected one of {AXES}")
    return replace(base, model=m)


@dataclass
class AblationRow:
    setting: str
    accuracies: list  # one per seed
    ci95: list
    fingerprint: str
    reports: list = field(default_factory=list, repr=False)
    rank: int = 0

    @property
    def median(self) -> float:
        return float(np.median(self.accuracies))


@dataclass
class AblationTable:
    axis: str
    rows: list
    seeds: tuple

    def row(self, setting):
        for r in self.rows:
            if r.setting == str(setting):
                return r
        raise KeyError(setting)

    def write(self, path):
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["axis", "setting", "rank", "median_accuracy"] + [f"seed{s}" for s in self.seeds] + ["fingerprint"])
            for r in self.rows:
                w.writerow([self.axis, r.setting, r.rank, repr(r.median)] + [repr(a) for a in r.accuracies] + [r.fingerprint])


def run_ablation(axis, base: RunConfig, manifest, store, grid=None, seeds=(0,), eval_split="test",
                 eval_episodes: int = 500, train_split="train", eval_query: int | None = None) -> AblationTable:
    """Train and evaluate each grid point once per seed; rows keep grid order, ``rank`` orders by median."""
    grid = default_grid(axis, base.model.depth) if grid is None else list(grid)
    ec = base.episodes
    rows = []
    for point in grid:
        cfg = variant_config(base, axis, point)
        accs, cis, reports = [], [], []
        for seed in seeds:
            run = replace(cfg, train=replace(cfg.train, seed=seed))
            res = train(run, manifest, store, split=train_split)
            rep = evaluate(res.model, manifest, store, eval_split, eval_episodes, seed=seed,
                           n_way=ec.n_way, k_shot=ec.eval_shot or ec.k_shot,
                           n_query=eval_query or ec.eval_query or ec.n_query, fingerprint=run.fingerprint())
            log.info("%s=%s seed %d: %.4f", axis, point, seed, rep.accuracy)
            accs.append(rep.accuracy)
            cis.append(rep.ci95)
            reports.append(rep)
        rows.append(AblationRow(str(point), accs, cis, cfg.fingerprint(), reports))
    order = sorted(range(len(rows)), key=lambda i: -rows[i].median)
    for rank, i in enumerate(order, 1):
        rows[i].rank = rank
    return AblationTable(axis, rows, tuple(seeds))
