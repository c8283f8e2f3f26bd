"""Repeated composite-likelihood fits of Sigma on simulated Smith data."""
import argparse
import time

import numpy as np

from extremeregions.smith import SmithParams, build_pairs, fit_sigma, simulate_smith


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sigma", default="120,40,90", help="true s11,s12,s22 in km^2")
    ap.add_argument("--stations", type=int, default=25)
    ap.add_argument("--years", type=int, default=60)
    ap.add_argument("--box-km", type=float, default=50.0)
    ap.add_argument("--seeds", type=int, default=20)
    args = ap.parse_args()

    truth = SmithParams.from_entries(*map(float, args.sigma.split(",")))
    est = []
    for seed in range(args.seeds):
        t0 = time.perf_counter()
        rng = np.random.default_rng(seed)
        xy = rng.uniform(0, args.box_km, (args.stations, 2))
        z = simulate_smith(xy, truth, args.years, rng)
        ids = [str(i) for i in range(args.stations)]
        fr = {s: dict(enumerate(z[:, i].tolist())) for i, s in enumerate(ids)}
        fit = fit_sigma(build_pairs(fr, dict(zip(ids, xy))))
        est.append(fit.params.entries)
        print(f"seed {seed:2d}: {np.round(fit.params.entries, 1).tolist()} {fit.n_evaluations} evals, "
              f"{'converged' if fit.converged else 'NOT converged'}, {time.perf_counter() - t0:.1f}s")
    med = np.median(est, axis=0)
    print("truth ", truth.entries)
    print("median", np.round(med, 2).tolist(), "relative error", np.round(np.abs(med / truth.entries - 1), 3).tolist())


if __name__ == "__main__":
    main()
