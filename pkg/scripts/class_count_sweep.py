"""Mean touches to termination as the number of candidate classes grows, with truths and seeds held fixed."""

import argparse
import os

from tactile_filter.bank import PegImageBank
from tactile_filter.geometry import glyph_library, make_pose_grid, parse_glyph_set
from tactile_filter.harness import run_experiment, stratified_trials
from tactile_filter.similarity import GeometricOracle


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scale", choices=["small", "large"], default="small")
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    a = ap.parse_args()

    bank = PegImageBank.build(glyph_library(parse_glyph_set("A-L"), a.scale), make_pose_grid(a.scale))
    trials = stratified_trials(bank, 0.1, 0, categories=list("ABCD"))
    for letters in ("ABCD", "ABCDEFGH", "ABCDEFGHIJKL"):
        rep = run_experiment(bank.subset(list(letters)), GeometricOracle(), range(a.seeds), trials=trials, jobs=a.jobs)
        print(f"{len(letters):2d} classes: touches {rep.mean_touches():.2f}, accuracy@10 {rep.accuracy(10):.1f}%")


if __name__ == "__main__":
    main()
