"""Command line entry point: ``amsfnet <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np
import yaml

from . import wavelet
from .ablation import AXES, run_ablation
from .config import RunConfig
from .datasets import (
    ImageStore,
    PreprocessPolicy,
    SyntheticRecipe,
    generate_synthetic,
    level3_classes,
    preprocess,
    read_image,
    write_image,
)
from .episodes import DatasetManifest, split_by_patient
from .evaluation import evaluate, export_embeddings
from .training import load_checkpoint, train

log = logging.getLogger("amsfnet")


def _split_arg(value):
    parts = [p.strip() for p in value.split(",") if p.strip()]
    return parts[0] if len(parts) == 1 else tuple(parts)


def _ints(value):
    return tuple(int(v) for v in value.split(","))


def _load_yaml(path):
    if path is None:
        return {}
    with Path(path).open(encoding="utf-8") as fh:
        return yaml.safe_load(fh) or {}


def _run_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    return cfg.override(args.set or [])


def _store(args, manifest):
    root = Path(args.root) if args.root else Path(args.manifest).parent
    return ImageStore(manifest, root=root)


def _write_json(path, obj):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2, default=list))


def cmd_generate(args):
    recipe = SyntheticRecipe.from_dict(_load_yaml(args.recipe))
    if args.level3:
        recipe.classes = level3_classes()
    if args.seed is not None:
        recipe.seed = args.seed
    m = generate_synthetic(recipe, args.out)
    _write_json(Path(args.out) / "recipe.json", recipe.to_dict())
    print(f"wrote {len(m.items)} images to {args.out}")


def cmd_preprocess(args):
    policy = PreprocessPolicy(**_load_yaml(args.policy))
    manifest = DatasetManifest.read(args.manifest)
    src = Path(args.root) if args.root else Path(args.manifest).parent
    out = Path(args.out)
    for it in manifest.items:
        dst = out / it.path
        dst.parent.mkdir(parents=True, exist_ok=True)
        write_image(dst, preprocess(read_image(src / it.path), policy))
    manifest.write(out / "manifest.csv")
    _write_json(out / "policy.json", asdict(policy))
    print(f"preprocessed {len(manifest.items)} images into {out}")


def cmd_split(args):
    m = split_by_patient(DatasetManifest.read(args.manifest), _ints(args.ratios), args.seed)
    m.write(args.out)
    counts = {s: sum(v == s for v in m.splits.values()) for s in ("train", "val", "test")}
    print(json.dumps({"patients": counts}))


def cmd_train(args):
    cfg = _run_config(args)
    manifest = DatasetManifest.read(args.manifest)
    out = Path(args.out)
    res = train(cfg, manifest, _store(args, manifest), split=_split_arg(args.split), out_dir=out)
    summary = {
        "fingerprint": cfg.fingerprint(),
        "episodes": len(res.history),
        "final_loss": res.history[-1]["loss"] if res.history else None,
        "validation": res.validation,
        "best_episode": res.best_episode,
    }
    cfg.dump(out / "config.yaml")
    _write_json(out / "train_summary.json", summary)
    print(json.dumps(summary))


def cmd_eval(args):
    model, cfg = load_checkpoint(args.checkpoint)
    manifest = DatasetManifest.read(args.manifest)
    ec = cfg.episodes
    rep = evaluate(model, manifest, _store(args, manifest), _split_arg(args.split),
                   args.episodes if args.episodes is not None else ec.episodes_eval, seed=args.seed,
                   n_way=ec.n_way, k_shot=args.shot or ec.eval_shot or ec.k_shot,
                   n_query=args.query or ec.eval_query or ec.n_query, fingerprint=cfg.fingerprint())
    rep.write(args.out)
    print(json.dumps({"accuracy": rep.accuracy, "ci95": rep.ci95, "episodes": rep.episodes}))


def cmd_ablate(args):
    cfg = _run_config(args)
    manifest = DatasetManifest.read(args.manifest)
    grid = None
    if args.grid:
        grid = [int(g) if g.lstrip("-").isdigit() else g for g in args.grid.split(",")]
    table = run_ablation(args.axis, cfg, manifest, _store(args, manifest), grid=grid, seeds=_ints(args.seeds),
                         eval_split=_split_arg(args.eval_split), eval_episodes=args.eval_episodes,
                         train_split=_split_arg(args.split))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table.write(out / f"ablation_{args.axis}.csv")
    summary = [{"setting": r.setting, "rank": r.rank, "median": r.median, "accuracies": r.accuracies} for r in table.rows]
    _write_json(out / f"ablation_{args.axis}.json", summary)
    for r in table.rows:
        print(f"{r.rank}\t{r.setting}\t{r.median:.4f}")


def cmd_export(args):
    model, _ = load_checkpoint(args.checkpoint)
    manifest = DatasetManifest.read(args.manifest)
    n = export_embeddings(model, manifest, _store(args, manifest), _split_arg(args.split), args.count, args.out)
    print(f"exported {n} embeddings to {args.out}")


def cmd_inspect_dwt(args):
    img = read_image(args.image)
    pyr = wavelet.dwt_cascade(img, args.levels)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    arrays = {"ll": pyr.ll[-1]}
    energy = {"image": float((wavelet.pad_to_multiple(img, 2**args.levels) ** 2).sum())}
    for lvl in range(1, args.levels + 1):
        for name in wavelet.DIRECTIONS:
            band = pyr.band(name, lvl)
            arrays[f"{name}{lvl}"] = band
            energy[f"{name}{lvl}"] = float((band**2).sum())
    energy["LL"] = float((pyr.ll[-1] ** 2).sum())
    np.savez(out / "subbands.npz", **arrays)
    maps = wavelet.directional_maps(pyr)
    for lvl in range(args.levels):
        for j, name in enumerate(wavelet.DIRECTIONS):
            m = maps[lvl][j]
            span = np.abs(m).max() or 1.0
            write_image(out / f"{name}{lvl + 1}.png", 0.5 + 0.5 * m / span)
    energy["subbands_total"] = sum(v for k, v in energy.items() if k != "image")
    _write_json(out / "energy.json", energy)
    print(json.dumps(energy))


def build_parser():
    p = argparse.ArgumentParser(prog="amsfnet", description="Few-shot spatial-frequency fusion network tools")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write the synthetic dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--recipe", help="YAML recipe overrides")
    g.add_argument("--level3", action="store_true", help="plant all class signal in level-3 bands")
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_generate)

    pp = sub.add_parser("preprocess", help="window, crop and resize every image of a manifest")
    pp.add_argument("--manifest", required=True)
    pp.add_argument("--root")
    pp.add_argument("--out", required=True)
    pp.add_argument("--policy", help="YAML preprocessing policy")
    pp.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("split", help="assign patients to train/val/test")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--ratios", default="5,3,2")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_split)

    def data_args(q, split="train"):
        q.add_argument("--manifest", required=True)
        q.add_argument("--root", help="image root (default: manifest directory)")
        q.add_argument("--split", default=split, help="split name or comma list")

    def config_args(q):
        q.add_argument("--config", help="YAML run config")
        q.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="config override")

    t = sub.add_parser("train", help="episodic training")
    data_args(t)
    config_args(t)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="episodic evaluation of a checkpoint")
    data_args(e, "test")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--episodes", type=int)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--shot", type=int)
    e.add_argument("--query", type=int)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="train and evaluate an ablation grid")
    data_args(a)
    config_args(a)
    a.add_argument("--axis", required=True, choices=AXES)
    a.add_argument("--grid", help="comma list of grid points (default: the axis' standard grid)")
    a.add_argument("--seeds", default="0")
    a.add_argument("--eval-split", default="test")
    a.add_argument("--eval-episodes", type=int, default=500)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_ablate)

    x = sub.add_parser("export-embeddings", help="write pooled features for external projection")
    data_args(x, "test")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--count", type=int, default=10**9)
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export)

    d = sub.add_parser("inspect-dwt", help="dump Haar subbands and energies of one image")
    d.add_argument("--image", required=True)
    d.add_argument("--levels", type=int, default=3)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_inspect_dwt)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
