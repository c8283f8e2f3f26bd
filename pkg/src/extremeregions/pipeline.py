"""Stage orchestration: daily data -> maxima -> distances -> clusters -> regions -> Smith fits -> ellipses."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import classify, cluster, geometry, ingest, madogram, smith, synthetic

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NONCONVERGENCE = 0, 1, 2, 3


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException, exit_code: int = EXIT_DATA):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = exit_code


@dataclass
class IngestConfig:
    completeness: float = 0.9
    min_years: int = 20
    block_start_month: int = 1
    year_min: int | None = None
    year_max: int | None = None
    exclude_flags: list[str] = field(default_factory=list)


@dataclass
class DistanceConfig:
    min_overlap: int = 20
    far_km: float = 500.0
    block_deg: float = 5.0
    metric: str = "great_circle"
    hexbin_bins: int = 30


@dataclass
class ClusterConfig:
    linkage: str = "average"
    cut_heights: list[float] = field(default_factory=lambda: [0.11, 0.13])
    region_cut: float | None = None  # defaults to the first cut height
    min_core_size: int = 10


@dataclass
class ClassifyConfig:
    step: float = 0.05
    knn: int = 15
    mask_km: float = 50.0
    bbox: list[float] | None = None  # lonmin, latmin, lonmax, latmax
    margin_deg: float = 0.5


@dataclass
class SmithConfig:
    units: str = "km"
    bootstrap: int = 0
    max_pair_distance: float | None = None
    tol: float = 1e-8
    max_eval: int = 2000


@dataclass
class EllipseConfig:
    level: float = 0.99
    n_points: int = 360
    overlap_samples: int = 100_000


@dataclass
class PipelineConfig:
    stations: str | None = None
    daily: str | None = None
    maxima: str | None = None  # skip the ingest stage when given
    out_dir: str = "out"
    seed: int = 1
    ingest: IngestConfig = field(default_factory=IngestConfig)
    distances: DistanceConfig = field(default_factory=DistanceConfig)
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    classify: ClassifyConfig = field(default_factory=ClassifyConfig)
    smith: SmithConfig = field(default_factory=SmithConfig)
    ellipses: EllipseConfig = field(default_factory=EllipseConfig)

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "PipelineConfig":
        raw = dict(raw or {})
        sections = {f.name: f.type for f in dataclasses.fields(cls)}
        kwargs: dict[str, Any] = {}
        nested = {
            "ingest": IngestConfig, "distances": DistanceConfig, "cluster": ClusterConfig,
            "classify": ClassifyConfig, "smith": SmithConfig, "ellipses": EllipseConfig,
        }
        for key, value in raw.items():
            if key not in sections:
                raise ValueError(f"unknown config key {key!r}")
            if key in nested:
                sub = nested[key]
                known = {f.name for f in dataclasses.fields(sub)}
                bad = set(value or {}) - known
                if bad:
                    raise ValueError(f"unknown keys in [{key}]: {sorted(bad)}")
                kwargs[key] = sub(**(value or {}))
            else:
                kwargs[key] = value
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh) or {})

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def dump(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False)


def derive_seed(root: int, *path: int) -> int:
    """Independent per-stage integer seed from the root seed."""
    return int(np.random.SeedSequence([root, *path]).generate_state(1)[0])


def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class Manifest:
    out_dir: Path
    entries: list[dict[str, str]] = field(default_factory=list)
    exit_code: int = EXIT_OK
    notes: list[str] = field(default_factory=list)

    def add(self, stage: str, path: Path) -> None:
        self.entries.append({"stage": stage, "path": path.relative_to(self.out_dir).as_posix(), "sha256": sha256(path)})

    def hashes(self) -> dict[str, str]:
        return {e["path"]: e["sha256"] for e in self.entries}

    def write(self) -> Path:
        path = self.out_dir / "manifest.json"
        with open(path, "w") as fh:
            json.dump({"exit_code": self.exit_code, "notes": self.notes, "outputs": self.entries}, fh, indent=1)
            fh.write("\n")
        return path


def _fmt_height(h: float) -> str:
    return f"{h:.4f}".rstrip("0").rstrip(".")


def write_ellipses(fits, ellipses, overlap, geojson_path: Path, overlap_path: Path, level: float) -> None:
    features = []
    for fit, e in zip(fits, ellipses):
        s11, s12, s22 = fit.params.entries
        features.append({
            "type": "Feature",
            "properties": {
                "region": fit.region, "level": level, "r": e.r, "units": fit.units,
                "s11": s11, "s12": s12, "s22": s22,
                "center_lon": float(e.center[0]), "center_lat": float(e.center[1]),
            },
            "geometry": {"type": "Polygon", "coordinates": [e.boundary.tolist()]},
        })
    with open(geojson_path, "w") as fh:
        json.dump({"type": "FeatureCollection", "features": features}, fh)
        fh.write("\n")
    with open(overlap_path, "w") as fh:
        fh.write("region_i,region_j,overlap\n")
        for i in range(len(fits)):
            for j in range(i + 1, len(fits)):
                fh.write(f"{fits[i].region},{fits[j].region},{overlap[i, j]:.17g}\n")


@contextmanager
def _stage(name: str):
    try:
        yield
    except StageError:
        raise
    except smith.GevFitError as exc:
        raise StageError(name, exc, EXIT_NONCONVERGENCE) from exc
    except (OSError, ValueError, KeyError) as exc:
        raise StageError(name, exc, EXIT_DATA) from exc


def write_bins(rows, stream) -> None:
    stream.write("euclid_lo,euclid_hi,d_lo,d_hi,count\n")
    for row in rows:
        stream.write(",".join(f"{v:.17g}" for v in row[:4]) + f",{row[4]}\n")


def write_fit(fit: "smith.SmithFit", path: Path) -> None:
    with open(path, "w") as fh:
        json.dump(fit.to_json(), fh, indent=1)
        fh.write("\n")


def run_pipeline(config: PipelineConfig) -> Manifest:
    """Run every stage in order, writing artefacts under `config.out_dir`.

    Raises StageError naming the failing stage; outputs already written are
    kept. Non-converged Smith fits do not abort the run but set the
    manifest exit code to 3.
    """
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    man = Manifest(out)

    # ---- maxima
    with _stage("maxima"):
        if config.maxima:
            with open(config.maxima) as fh:
                series = ingest.read_maxima(fh)
        else:
            if not config.daily or not config.stations:
                raise ValueError("config needs either 'maxima' or both 'daily' and 'stations'")
            with open(config.stations) as fh:
                coords = ingest.read_stations(fh)
            if not coords:
                raise ValueError(f"station file {config.stations} lists no stations")
            with open(config.daily) as fh:
                records, report = ingest.parse_daily(fh)
            if report.errors:
                logger.warning("%d malformed daily rows skipped", report.n_errors)
            c = config.ingest
            series = ingest.block_maxima(
                records, coords, c.completeness, c.min_years, c.block_start_month,
                c.year_min, c.year_max, c.exclude_flags,
            )
        if len(series) < 2:
            raise ValueError(f"only {len(series)} stations pass the completeness filters")
        path = out / "maxima.csv"
        with open(path, "w") as fh:
            ingest.write_maxima(series, fh)
        man.add("maxima", path)

    coords = {s.station_id: (s.lon, s.lat) for s in series}
    lonlat = np.array([coords[s.station_id] for s in series])

    # ---- distances
    with _stage("distances"):
        c = config.distances
        dist = madogram.fmadogram_matrix(series, c.min_overlap, c.metric)
        dist = madogram.interpolate_missing(dist, lonlat, c.far_km, c.block_deg, c.metric)
        path = out / "dist.csv"
        with open(path, "w") as fh:
            madogram.write_dist(dist, fh)
        man.add("distances", path)
        path = out / "bins.csv"
        with open(path, "w") as fh:
            write_bins(madogram.hexbin_diagnostic(dist, c.hexbin_bins), fh)
        man.add("hexbin", path)

    # ---- cluster + cuts
    cc = config.cluster
    with _stage("cluster"):
        tree = cluster.hierarchical(dist, cc.linkage)
        path = out / "tree.json"
        with open(path, "w") as fh:
            tree.dump(fh)
        man.add("cluster", path)

    region_cut = cc.region_cut if cc.region_cut is not None else cc.cut_heights[0]
    with _stage("cut"):
        parts = {}
        for h in sorted(set(cc.cut_heights) | {region_cut}):
            parts[h] = cluster.cut(tree, h)
            path = out / f"labels_h{_fmt_height(h)}.csv"
            with open(path, "w") as fh:
                cluster.write_labels(parts[h], fh)
            man.add("cut", path)
        regions = cluster.core_clusters(parts[region_cut], cc.min_core_size)
        if regions.n_clusters == 0:
            raise ValueError(f"no cluster at cut {region_cut} has {cc.min_core_size} or more stations")
        path = out / "labels.csv"
        with open(path, "w") as fh:
            cluster.write_labels(regions, fh)
        man.add("cut", path)

    # ---- classify
    with _stage("classify"):
        c = config.classify
        if c.bbox is not None:
            bbox = list(c.bbox)
        else:
            lo, hi = lonlat.min(axis=0) - c.margin_deg, lonlat.max(axis=0) + c.margin_deg
            bbox = [float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])]
        grid = classify.GridSpec(*bbox, step=c.step)
        n_train = sum(1 for v in regions.labels.values() if v != cluster.UNASSIGNED)
        knn = min(c.knn, n_train - 1)
        if knn < c.knn:
            man.notes.append(f"classify: k_nn reduced to {knn} for {n_train} training stations")
        regionalisation = classify.classify_grid(regions, coords, grid, knn, c.mask_km, config.distances.metric)
        path = out / "regions.geojson"
        with open(path, "w") as fh:
            json.dump(classify.boundaries_geojson(classify.region_boundaries(regionalisation)), fh)
            fh.write("\n")
        man.add("classify", path)
        path = out / "grid.csv"
        with open(path, "w") as fh:
            classify.write_grid(regionalisation, fh)
        man.add("classify", path)

    # ---- fit-smith
    with _stage("fit-smith"):
        c = config.smith
        fits = []
        fit_dir = out / "fits"
        fit_dir.mkdir(exist_ok=True)
        for lab, members in regions.clusters().items():
            keep = set(members)
            maxima = {s.station_id: s.maxima for s in series if s.station_id in keep}
            fit = smith.fit_region(
                maxima, coords, str(lab), c.units, c.bootstrap, derive_seed(config.seed, 6, lab),
                c.max_pair_distance, tol=c.tol, max_eval=c.max_eval,
            )
            if not fit.converged:
                man.notes.append(f"region {lab}: composite likelihood did not converge")
                man.exit_code = EXIT_NONCONVERGENCE
            path = fit_dir / f"fit_{lab}.json"
            write_fit(fit, path)
            man.add("fit-smith", path)
            fits.append(fit)

    # ---- ellipses
    with _stage("ellipses"):
        c = config.ellipses
        ellipses = [geometry.fit_ellipse(f, c.level, c.n_points) for f in fits]
        overlap = geometry.overlap_matrix(ellipses, c.overlap_samples, derive_seed(config.seed, 7))
        gpath, opath = out / "ellipses.geojson", out / "overlap.csv"
        write_ellipses(fits, ellipses, overlap, gpath, opath, c.level)
        man.add("ellipses", gpath)
        man.add("ellipses", opath)

    man.write()
    return man


def demo(out_dir: str | Path, seed: int = 1, n_years: int = 50, bootstrap: int = 0) -> tuple[Manifest, synthetic.Scenario]:
    """Generate the two-region synthetic network and run the full pipeline on it."""
    out = Path(out_dir)
    inputs = out / "input"
    inputs.mkdir(parents=True, exist_ok=True)
    sc = synthetic.two_region_scenario()
    sc.n_years = n_years
    synthetic.generate_maxima(sc, derive_seed(seed, 0))
    short = ingest.StationSeries("X001", 140.3, -29.9, {y: 60.0 + (y % 7) for y in range(sc.start_year, sc.start_year + 12)})
    with open(inputs / "stations.csv", "w") as fh:
        synthetic.write_stations(sc.series + [short], fh)
    with open(inputs / "daily.csv", "w") as fh:
        synthetic.write_daily(sc.series + [short], fh, derive_seed(seed, 1))
    cfg = PipelineConfig(
        stations=str(inputs / "stations.csv"),
        daily=str(inputs / "daily.csv"),
        out_dir=str(out / "results"),
        seed=seed,
        cluster=ClusterConfig(cut_heights=[0.1, 0.12, 0.14], region_cut=0.12, min_core_size=10),
        smith=SmithConfig(bootstrap=bootstrap),
    )
    cfg.dump(inputs / "config.yaml")
    return run_pipeline(cfg), sc
