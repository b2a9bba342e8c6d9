"""Accuracy and pose exactness of the filter as the oracle's sharpness grows."""

import argparse
import csv
import os
import sys

from tactile_filter.bank import PegImageBank
from tactile_filter.geometry import glyph_library, make_pose_grid, parse_glyph_set
from tactile_filter.harness import run_experiment
from tactile_filter.similarity import GeometricOracle


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scale", choices=["small", "large"], default="small")
    ap.add_argument("--sharpness", default="2,4,8,16,32,64")
    ap.add_argument("--seeds", type=int, default=2)
    ap.add_argument("--subsample", type=float, default=0.1)
    ap.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    a = ap.parse_args()

    bank = PegImageBank.build(glyph_library(parse_glyph_set("A-L"), a.scale), make_pose_grid(a.scale))
    w = csv.writer(sys.stdout)
    w.writerow(["sharpness", "acc_n1", "acc_n10", "pose_exact", "touches"])
    for s in (float(v) for v in a.sharpness.split(",")):
        rep = run_experiment(bank, GeometricOracle(sharpness=s), seeds=range(a.seeds), subsample=a.subsample, jobs=a.jobs)
        w.writerow([s, f"{rep.accuracy(1):.1f}", f"{rep.accuracy(10):.1f}", f"{rep.pose_exact_rate():.1f}", f"{rep.mean_touches():.2f}"])
        sys.stdout.flush()


if __name__ == "__main__":
    main()
