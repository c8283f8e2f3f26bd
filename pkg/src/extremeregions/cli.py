"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical
non-convergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import classify, cluster, geometry, ingest, madogram, smith
from .distance import project_local
from .pipeline import (
    EXIT_DATA, EXIT_NONCONVERGENCE, EXIT_OK, EXIT_USAGE,
    PipelineConfig, StageError, demo, run_pipeline, write_bins, write_ellipses, write_fit,
)

logger = logging.getLogger("extremeregions")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str, n: int, what: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"{what} must be {n} comma-separated numbers") from None
    if len(vals) != n:
        raise UsageError(f"{what} must be {n} comma-separated numbers")
    return vals


def cmd_maxima(args) -> int:
    with open(args.stations) as fh:
        coords = ingest.read_stations(fh)
    fmt = ingest.DailyFormat(delimiter=args.delimiter)
    with open(args.daily) as fh:
        records, report = ingest.parse_daily(fh, fmt)
    for lineno, msg in report.errors[:20]:
        logger.warning("line %d: %s", lineno, msg)
    if report.n_errors > 20:
        logger.warning("... %d more row errors", report.n_errors - 20)
    logger.info("%d rows, %d skipped as missing, %d errors", report.n_rows, report.n_skipped_missing, report.n_errors)
    series = ingest.block_maxima(
        records, coords, args.completeness, args.min_years, args.block_start_month,
        args.year_min, args.year_max, args.exclude_flag or (),
    )
    with open(args.out, "w") as fh:
        ingest.write_maxima(series, fh)
    logger.info("%d stations written to %s", len(series), args.out)
    return EXIT_OK


def cmd_distances(args) -> int:
    with open(args.maxima) as fh:
        series = ingest.read_maxima(fh)
    m = madogram.fmadogram_matrix(series, args.min_overlap, args.metric)
    if not args.no_interpolate:
        coords = np.array([[s.lon, s.lat] for s in series])
        m = madogram.interpolate_missing(m, coords, args.far_km, args.block_deg, args.metric)
    with open(args.out, "w") as fh:
        madogram.write_dist(m, fh)
    return EXIT_OK


def cmd_hexbin(args) -> int:
    with open(args.dist) as fh:
        m = madogram.read_dist(fh)
    with open(args.out, "w") as fh:
        write_bins(madogram.hexbin_diagnostic(m, args.bins), fh)
    return EXIT_OK


def _complete_dist(path: str) -> madogram.DissimilarityMatrix:
    with open(path) as fh:
        m = madogram.read_dist(fh)
    if not m.is_complete():
        raise ValueError(f"{path} has missing dissimilarities; run distances with interpolation")
    return m


def cmd_cluster(args) -> int:
    tree = cluster.hierarchical(_complete_dist(args.dist), args.linkage)
    with open(args.out, "w") as fh:
        tree.dump(fh)
    return EXIT_OK


def cmd_cut(args) -> int:
    with open(args.tree) as fh:
        tree = cluster.MergeTree.load(fh)
    p = cluster.cut(tree, args.height)
    if args.min_core_size > 1:
        p = cluster.core_clusters(p, args.min_core_size)
    with open(args.out, "w") as fh:
        cluster.write_labels(p, fh)
    return EXIT_OK


def cmd_kmedoids(args) -> int:
    p = cluster.kmedoids(_complete_dist(args.dist), args.k, seed=args.seed, n_restarts=args.restarts)
    with open(args.out, "w") as fh:
        cluster.write_labels(p, fh)
    return EXIT_OK


def cmd_classify(args) -> int:
    with open(args.labels) as fh:
        part = cluster.read_labels(fh)
    with open(args.stations) as fh:
        coords = ingest.read_stations(fh)
    grid = classify.GridSpec(*_floats(args.bbox, 4, "--bbox"), step=args.step)
    r = classify.classify_grid(part, coords, grid, args.knn, args.mask_km, args.metric)
    with open(args.out, "w") as fh:
        json.dump(classify.boundaries_geojson(classify.region_boundaries(r)), fh)
        fh.write("\n")
    if args.grid_out:
        with open(args.grid_out, "w") as fh:
            classify.write_grid(r, fh)
    return EXIT_OK


def cmd_fit_smith(args) -> int:
    with open(args.maxima) as fh:
        series = ingest.read_maxima(fh)
    with open(args.labels) as fh:
        part = cluster.read_labels(fh)
    members = {s for s, lab in part.labels.items() if str(lab) == str(args.region)}
    chosen = [s for s in series if s.station_id in members]
    if len(chosen) < 2:
        raise ValueError(f"region {args.region} has {len(chosen)} stations with maxima; need at least 2")
    fit = smith.fit_region(
        {s.station_id: s.maxima for s in chosen},
        {s.station_id: (s.lon, s.lat) for s in chosen},
        str(args.region), args.units, args.bootstrap, args.seed, args.max_pair_distance,
    )
    write_fit(fit, Path(args.out))
    if not fit.converged:
        logger.error("composite likelihood did not converge; best iterate written to %s", args.out)
        return EXIT_NONCONVERGENCE
    return EXIT_OK


def cmd_simulate_smith(args) -> int:
    s11, s12, s22 = _floats(args.sigma, 3, "--sigma")
    params = smith.SmithParams.from_entries(s11, s12, s22, args.units)
    if args.stations:
        with open(args.stations) as fh:
            coords = ingest.read_stations(fh)
        ids = sorted(coords)
        lonlat = np.array([coords[s] for s in ids], dtype=float)
    else:
        if not args.bbox:
            raise UsageError("simulate-smith needs --bbox or --stations")
        lonlat = smith.grid_points(_floats(args.bbox, 4, "--bbox"), args.step)
        ids = [f"G{k + 1:06d}" for k in range(len(lonlat))]
    if args.units == "km":
        origin = tuple(lonlat.mean(axis=0))
        xy = project_local(lonlat, origin)
    else:
        xy = lonlat
    z = smith.simulate_smith(xy, params, args.years, args.seed)
    series = [
        ingest.StationSeries(sid, float(lonlat[i, 0]), float(lonlat[i, 1]),
                             {args.start_year + y: float(z[y, i]) for y in range(args.years)})
        for i, sid in enumerate(ids)
    ]
    with open(args.out, "w") as fh:
        ingest.write_maxima(series, fh)
    return EXIT_OK


def cmd_ellipses(args) -> int:
    fits = []
    for path in args.fits:
        with open(path) as fh:
            fits.append(smith.SmithFit.from_json(json.load(fh)))
    es = [geometry.fit_ellipse(f, args.level, args.n_points) for f in fits]
    ov = geometry.overlap_matrix(es, args.samples, args.seed)
    overlap_out = args.overlap_out or str(Path(args.out).with_suffix("")) + "_overlap.csv"
    write_ellipses(fits, es, ov, Path(args.out), Path(overlap_out), args.level)
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    for key in ("daily", "stations", "maxima", "out_dir", "seed"):
        val = getattr(args, key)
        if val is not None:
            setattr(cfg, key, val)
    man = run_pipeline(cfg)
    print(json.dumps({"exit_code": man.exit_code, "outputs": len(man.entries), "manifest": str(man.out_dir / "manifest.json")}))
    return man.exit_code


def cmd_demo(args) -> int:
    man, _ = demo(args.out_dir, args.seed, bootstrap=args.bootstrap)
    print(json.dumps({"exit_code": man.exit_code, "outputs": len(man.entries), "manifest": str(man.out_dir / "manifest.json")}))
    return man.exit_code


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="extremeregions", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    q = sub.add_parser("maxima", help="annual block maxima from daily records")
    q.add_argument("--daily", required=True)
    q.add_argument("--stations", required=True)
    q.add_argument("--completeness", type=float, default=0.9)
    q.add_argument("--min-years", type=int, default=20)
    q.add_argument("--block-start-month", type=int, default=1)
    q.add_argument("--year-min", type=int)
    q.add_argument("--year-max", type=int)
    q.add_argument("--exclude-flag", action="append", help="quality flag to drop (repeatable)")
    q.add_argument("--delimiter", default=",")
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_maxima)

    q = sub.add_parser("distances", help="pairwise F-madogram with interpolation of missing pairs")
    q.add_argument("--maxima", required=True)
    q.add_argument("--min-overlap", type=int, default=20)
    q.add_argument("--far-km", type=float, default=500.0)
    q.add_argument("--block-deg", type=float, default=5.0)
    q.add_argument("--metric", choices=["great_circle", "planar"], default="great_circle")
    q.add_argument("--no-interpolate", action="store_true")
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_distances)

    q = sub.add_parser("hexbin", help="binned euclidean vs F-madogram distances")
    q.add_argument("--dist", required=True)
    q.add_argument("--bins", type=int, default=30)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_hexbin)

    q = sub.add_parser("cluster", help="agglomerative hierarchical clustering")
    q.add_argument("--dist", required=True)
    q.add_argument("--linkage", choices=cluster.LINKAGES, default="average")
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_cluster)

    q = sub.add_parser("cut", help="flat partition at a cut height")
    q.add_argument("--tree", required=True)
    q.add_argument("--height", type=float, required=True)
    q.add_argument("--min-core-size", type=int, default=1)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_cut)

    q = sub.add_parser("kmedoids", help="PAM K-medoids partition")
    q.add_argument("--dist", required=True)
    q.add_argument("--k", type=int, required=True)
    q.add_argument("--seed", type=int)
    q.add_argument("--restarts", type=int, default=0)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_kmedoids)

    q = sub.add_parser("classify", help="weighted k-NN regionalisation on a grid")
    q.add_argument("--labels", required=True)
    q.add_argument("--stations", required=True)
    q.add_argument("--bbox", required=True, help="lonmin,latmin,lonmax,latmax")
    q.add_argument("--step", type=float, default=0.05)
    q.add_argument("--knn", type=int, default=15)
    q.add_argument("--mask-km", type=float, default=50.0)
    q.add_argument("--metric", choices=["great_circle", "planar"], default="great_circle")
    q.add_argument("--out", required=True)
    q.add_argument("--grid-out")
    q.set_defaults(func=cmd_classify)

    q = sub.add_parser("fit-smith", help="fit the Smith model to one region")
    q.add_argument("--maxima", required=True)
    q.add_argument("--labels", required=True)
    q.add_argument("--region", required=True)
    q.add_argument("--bootstrap", type=int, default=0)
    q.add_argument("--seed", type=int, default=1)
    q.add_argument("--units", choices=["km", "deg"], default="km")
    q.add_argument("--max-pair-distance", type=float)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_fit_smith)

    q = sub.add_parser("simulate-smith", help="simulate annual maxima from a Smith process")
    q.add_argument("--sigma", required=True, help="s11,s12,s22")
    q.add_argument("--bbox", help="lonmin,latmin,lonmax,latmax")
    q.add_argument("--step", type=float, default=0.1)
    q.add_argument("--stations", help="simulate at these stations instead of a grid")
    q.add_argument("--units", choices=["km", "deg"], default="km")
    q.add_argument("--years", type=int, default=60)
    q.add_argument("--start-year", type=int, default=1960)
    q.add_argument("--seed", type=int, default=1)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_simulate_smith)

    q = sub.add_parser("ellipses", help="dependence level curves from fitted regions")
    q.add_argument("--fits", nargs="+", required=True)
    q.add_argument("--level", type=float, default=0.99)
    q.add_argument("--n-points", type=int, default=360)
    q.add_argument("--samples", type=int, default=100_000)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out", required=True)
    q.add_argument("--overlap-out")
    q.set_defaults(func=cmd_ellipses)

    q = sub.add_parser("pipeline", help="run every stage from a config file")
    q.add_argument("--config")
    q.add_argument("--daily")
    q.add_argument("--stations")
    q.add_argument("--maxima")
    q.add_argument("--out-dir", dest="out_dir")
    q.add_argument("--seed", type=int)
    q.set_defaults(func=cmd_pipeline)

    q = sub.add_parser("demo", help="synthetic two-region end-to-end run")
    q.add_argument("--out-dir", default="demo_out")
    q.add_argument("--seed", type=int, default=1)
    q.add_argument("--bootstrap", type=int, default=0)
    q.set_defaults(func=cmd_demo)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # argparse usage errors and --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except smith.GevFitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
