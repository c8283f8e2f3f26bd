"""Contrast PAM and average-linkage clustering on a dense blob with sparse outliers."""
import argparse

import numpy as np

from extremeregions.cluster import cut_k, hierarchical, kmedoids


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--blob", type=int, default=50)
    ap.add_argument("--outliers", type=int, default=4)
    ap.add_argument("--far", type=float, default=0.16)
    ap.add_argument("--k", type=int, default=5)
    args = ap.parse_args()

    x = np.linspace(0, 1, args.blob)
    n = args.blob + args.outliers
    D = np.full((n, n), args.far)
    D[: args.blob, : args.blob] = 0.05 * np.abs(x[:, None] - x[None, :])
    np.fill_diagonal(D, 0)

    h = cut_k(hierarchical(D, "average"), args.k)
    pam = kmedoids(D, args.k)
    for name, p in (("hierarchical", h), ("kmedoids", pam)):
        labs = [p.labels[str(i)] for i in range(n)]
        print(f"{name:>12}: blob labels {sorted(set(labs[: args.blob]))}, outlier labels {labs[args.blob:]}")
    print(f"PAM medoids {pam.medoids}, cost trace {np.round(pam.cost_trace, 4).tolist()}")
    med = [int(m) for m in pam.medoids]
    far = [(i, float(D[i, med[pam.labels[str(i)] - 1]])) for i in range(args.blob, n)]
    print("outlier distance to own medoid:", far)


if __name__ == "__main__":
    main()
