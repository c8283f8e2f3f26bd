"""Synthetic station networks with known regional dependence.

The two-region scenario places two station boxes side by side; each box
gets annual maxima from its own Smith process (independent between
boxes), pushed through station-specific GEV margins, and is expanded into
daily records so the whole pipeline can run from raw input.
"""
from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field
from typing import TextIO

import numpy as np

from .distance import project_local
from .ingest import StationSeries, block_length
from .smith import GevParams, SmithParams, gev_quantile, simulate_smith


@dataclass
class RegionSpec:
    name: str
    bbox: tuple[float, float, float, float]  # lonmin, latmin, lonmax, latmax
    sigma_km: tuple[float, float, float]  # s11, s12, s22
    n_stations: int = 25


@dataclass
class Scenario:
    regions: list[RegionSpec]
    n_years: int = 50
    start_year: int = 1960
    gev_loc: tuple[float, float] = (50.0, 80.0)
    gev_scale: tuple[float, float] = (15.0, 25.0)
    gev_shape: tuple[float, float] = (0.0, 0.15)
    series: list[StationSeries] = field(default_factory=list)
    truth: dict[str, str] = field(default_factory=dict)
    gev: dict[str, GevParams] = field(default_factory=dict)


def two_region_scenario() -> Scenario:
    return Scenario(
        regions=[
            RegionSpec("west", (140.0, -30.25, 140.5, -29.75), (1600.0, 600.0, 1000.0)),
            RegionSpec("east", (144.0, -30.25, 144.5, -29.75), (1000.0, -480.0, 2000.0)),
        ]
    )


def generate_maxima(sc: Scenario, seed: int | None = 0) -> Scenario:
    """Fill `sc.series`, `sc.truth` and `sc.gev` with simulated annual maxima."""
    rng = np.random.default_rng(seed)
    sc.series, sc.truth, sc.gev = [], {}, {}
    years = list(range(sc.start_year, sc.start_year + sc.n_years))
    for r, reg in enumerate(sc.regions):
        lon0, lat0, lon1, lat1 = reg.bbox
        lonlat = np.column_stack([rng.uniform(lon0, lon1, reg.n_stations), rng.uniform(lat0, lat1, reg.n_stations)])
        lonlat = np.round(lonlat, 4)
        origin = ((lon0 + lon1) / 2, (lat0 + lat1) / 2)
        z = simulate_smith(project_local(lonlat, origin), SmithParams.from_entries(*reg.sigma_km), sc.n_years, rng)
        for i in range(reg.n_stations):
            sid = f"{reg.name[0].upper()}{i + 1:03d}"
            g = GevParams(rng.uniform(*sc.gev_loc), rng.uniform(*sc.gev_scale), rng.uniform(*sc.gev_shape))
            vals = np.round(gev_quantile(np.exp(-1.0 / z[:, i]), g), 2)
            sc.series.append(StationSeries(sid, float(lonlat[i, 0]), float(lonlat[i, 1]), dict(zip(years, vals.tolist()))))
            sc.truth[sid] = reg.name
            sc.gev[sid] = g
    return sc


def write_stations(series, stream: TextIO) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["station_id", "lon", "lat"])
    for s in series:
        writer.writerow([s.station_id, f"{s.lon:.17g}", f"{s.lat:.17g}"])


def write_daily(
    series,
    stream: TextIO,
    seed: int | None = 0,
    wet_fraction: float = 0.3,
    missing_fraction: float = 0.02,
) -> None:
    """Expand annual maxima into daily rows whose block maxima reproduce them.

    Non-maximum days are dry or a fraction of the year's maximum; a small
    share of days is left out (never the maximum day).
    """
    rng = np.random.default_rng(seed)
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["station_id", "date", "rainfall", "flag"])
    for s in series:
        for year in s.years:
            ndays = block_length(year)
            start = dt.date(year, 1, 1)
            peak = s.maxima[year]
            wet = rng.uniform(size=ndays) < wet_fraction
            vals = np.where(wet, np.round(rng.uniform(0.0, 0.6, ndays) * peak, 2), 0.0)
            keep = rng.uniform(size=ndays) >= missing_fraction
            day_max = int(rng.integers(ndays))
            vals[day_max] = peak
            keep[day_max] = True
            for k in np.flatnonzero(keep):
                writer.writerow([s.station_id, (start + dt.timedelta(days=int(k))).isoformat(), f"{vals[k]:.2f}", ""])
