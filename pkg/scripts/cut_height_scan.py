"""Number of core clusters against cut height for a saved merge tree (e.g. demo output)."""
import argparse

import numpy as np

from extremeregions.cluster import MergeTree, core_clusters, cut


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("tree")
    ap.add_argument("--min-core-size", type=int, default=10)
    ap.add_argument("--lo", type=float, default=0.05)
    ap.add_argument("--hi", type=float, default=1 / 6)
    ap.add_argument("--steps", type=int, default=24)
    args = ap.parse_args()

    with open(args.tree) as fh:
        tree = MergeTree.load(fh)
    print(f"{'height':>8} {'clusters':>9} {'core':>5}")
    for h in np.linspace(args.lo, args.hi, args.steps):
        p = cut(tree, h)
        print(f"{h:8.4f} {p.n_clusters:9d} {core_clusters(p, args.min_core_size).n_clusters:5d}")


if __name__ == "__main__":
    main()
