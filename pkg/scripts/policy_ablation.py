"""Informed versus random action selection under per-cell flip noise, paired by seed."""

import argparse
import os
from pathlib import Path

import numpy as np

from tactile_filter.bank import PegImageBank
from tactile_filter.geometry import glyph_library, make_pose_grid, parse_glyph_set
from tactile_filter.harness import ablate_policies
from tactile_filter.sensing import NoiseModel
from tactile_filter.similarity import GeometricOracle


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scale", choices=["small", "large"], default="large")
    ap.add_argument("--seeds", type=int, default=50)
    ap.add_argument("--per-category", type=int, default=2, help="fixed poses per category, replayed under every seed")
    ap.add_argument("--flip", type=float, default=0.05)
    ap.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    ap.add_argument("--out", type=Path, default=Path("results/ablation"))
    a = ap.parse_args()

    bank = PegImageBank.build(glyph_library(parse_glyph_set("A-L"), a.scale), make_pose_grid(a.scale))
    rng = np.random.default_rng(0)
    poses = list(bank.grid.poses())
    trials = [(c, poses[int(i)]) for c in bank.categories for i in rng.choice(len(poses), a.per_category, replace=False)]
    ab = ablate_policies(bank, GeometricOracle(), range(a.seeds), noise=NoiseModel(flip_prob=a.flip), trials=trials, jobs=a.jobs)
    a.out.mkdir(parents=True, exist_ok=True)
    (a.out / "ablation.csv").write_text(ab.to_csv())
    print(ab.to_csv(), end="")


if __name__ == "__main__":
    main()
