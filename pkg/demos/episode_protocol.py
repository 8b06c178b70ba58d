"""
Patient-level splits and subject-disjoint episodes
==================================================

Every patient lives in exactly one split, and within an episode the support
and query images of a class never come from the same patient.
"""

from amsfnet.datasets import SyntheticRecipe, render_synthetic
from amsfnet.episodes import episode_batcher, split_by_patient

manifest, _ = render_synthetic(SyntheticRecipe())
manifest = split_by_patient(manifest, ratios=(5, 3, 2), seed=0)
for split in ("train", "val", "test"):
    patients = sorted(p for p, s in manifest.splits.items() if s == split)
    print(split, len(patients), "patients")

ep = next(episode_batcher(manifest, "train", n_way=4, k_shot=5, n_query=3, count=1, seed=0))
for c, label in enumerate(ep.classes):
    print(f"{label:10s} support from {sorted(ep.support_patients(c))}, query from {sorted(ep.query_patients(c))}")

# sweep many episodes and count any leak
leaks = 0
for ep in episode_batcher(manifest, "train", 4, 5, 5, 1000, seed=1):
    leaks += sum(bool(ep.support_patients(c) & ep.query_patients(c)) for c in range(ep.n_way))
print("support/query patient overlaps over 1000 episodes:", leaks)
