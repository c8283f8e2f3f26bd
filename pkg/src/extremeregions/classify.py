"""Turn a station partition into a spatial regionalisation.

Grid points are labelled by a weighted k-nearest-neighbour vote: the
(k+1)-th nearest station sets the distance scale, and each of the k
nearest votes with weight (distance to the (k+1)-th) / (its own distance).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence, TextIO

import numpy as np
from scipy.spatial import cKDTree
from shapely.geometry import box, mapping
from shapely.ops import unary_union

from .cluster import UNASSIGNED, Partition
from .distance import EARTH_RADIUS_KM

UNCLASSIFIED = 0


@dataclass(frozen=True)
class GridSpec:
    lon_min: float
    lat_min: float
    lon_max: float
    lat_max: float
    step: float = 0.05

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        nx = int(np.floor((self.lon_max - self.lon_min) / self.step + 1e-9)) + 1
        ny = int(np.floor((self.lat_max - self.lat_min) / self.step + 1e-9)) + 1
        return self.lon_min + self.step * np.arange(nx), self.lat_min + self.step * np.arange(ny)

    def points(self) -> np.ndarray:
        """(ny*nx, 2) lon/lat array, row-major with longitude varying fastest."""
        lons, lats = self.axes()
        lon, lat = np.meshgrid(lons, lats)
        return np.column_stack([lon.ravel(), lat.ravel()])

    @classmethod
    def parse_bbox(cls, text: str, step: float) -> "GridSpec":
        parts = [float(v) for v in text.split(",")]
        if len(parts) != 4:
            raise ValueError("bbox must be lonmin,latmin,lonmax,latmax")
        if parts[2] < parts[0] or parts[3] < parts[1]:
            raise ValueError("bbox max must not be below min")
        return cls(*parts, step=step)


@dataclass
class Regionalisation:
    grid: GridSpec
    labels: np.ndarray  # (ny, nx), UNCLASSIFIED where masked
    source: Partition
    k_nn: int
    mask_km: float

    @property
    def n_classified(self) -> int:
        return int((self.labels != UNCLASSIFIED).sum())


def _to_xyz(lonlat: np.ndarray) -> np.ndarray:
    lon, lat = np.radians(lonlat[:, 0]), np.radians(lonlat[:, 1])
    return np.column_stack([np.cos(lat) * np.cos(lon), np.cos(lat) * np.sin(lon), np.sin(lat)])


def _chord_to_km(chord: np.ndarray) -> np.ndarray:
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.clip(chord / 2, 0.0, 1.0))


def nearest_stations(points, stations, k: int, metric: str = "great_circle") -> tuple[np.ndarray, np.ndarray]:
    """Distances and indices of the k nearest stations for every point, nearest first."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    stations = np.atleast_2d(np.asarray(stations, dtype=float))
    if metric == "great_circle":
        tree = cKDTree(_to_xyz(stations))
        dist, idx = tree.query(_to_xyz(points), k=k)
        dist = _chord_to_km(np.asarray(dist))
    elif metric == "planar":
        tree = cKDTree(stations)
        dist, idx = tree.query(points, k=k)
    else:
        raise ValueError(f"unknown metric {metric!r}")
    return np.asarray(dist).reshape(len(points), k), np.asarray(idx).reshape(len(points), k)


def wknn_label(dist: np.ndarray, labels: np.ndarray) -> int:
    """Vote for one point given the k+1 nearest distances (ascending) and their labels."""
    if dist[0] == 0.0:
        return int(labels[0])
    far = dist[-1]
    if far == 0.0:
        return int(labels[0])
    weights = far / dist[:-1]
    votes: dict[int, float] = {}
    for w, lab in zip(weights, labels[:-1]):
        votes[int(lab)] = votes.get(int(lab), 0.0) + float(w)
    top = max(votes.values())
    return min(lab for lab, v in votes.items() if v == top)


def classify_points(
    points,
    station_coords,
    station_labels: Sequence[int],
    k_nn: int = 15,
    mask_km: float | None = 50.0,
    metric: str = "great_circle",
) -> np.ndarray:
    """Weighted k-NN labels for arbitrary points; UNCLASSIFIED beyond `mask_km` of every station."""
    station_coords = np.asarray(station_coords, dtype=float)
    station_labels = np.asarray(station_labels, dtype=int)
    n = len(station_labels)
    if not 1 <= k_nn <= n - 1:
        raise ValueError(f"k_nn must lie in 1..{n - 1} for {n} training stations")
    points = np.atleast_2d(np.asarray(points, dtype=float))
    dist, idx = nearest_stations(points, station_coords, k_nn + 1, metric)
    out = np.empty(len(points), dtype=int)
    for p in range(len(points)):
        if mask_km is not None and dist[p, 0] > mask_km:
            out[p] = UNCLASSIFIED
        else:
            out[p] = wknn_label(dist[p], station_labels[idx[p]])
    return out


def classify_grid(
    p: Partition,
    coords: dict[str, tuple[float, float]],
    grid: GridSpec,
    k_nn: int = 15,
    mask_km: float | None = 50.0,
    metric: str = "great_circle",
) -> Regionalisation:
    """Classify every grid point from the labelled stations of `p`.

    Unassigned stations (label 0) are left out of the training set;
    stations without coordinates raise KeyError.
    """
    train = [s for s, lab in p.labels.items() if lab != UNASSIGNED]
    xy = np.array([coords[s] for s in train], dtype=float).reshape(len(train), 2)
    labs = np.array([p.labels[s] for s in train], dtype=int)
    lons, lats = grid.axes()
    flat = classify_points(grid.points(), xy, labs, k_nn, mask_km, metric)
    return Regionalisation(grid, flat.reshape(len(lats), len(lons)), p, k_nn, mask_km)


def region_boundaries(r: Regionalisation) -> dict[int, object]:
    """Per-label polygons made of the grid cells carrying that label.

    Each grid point owns a `step` x `step` cell centred on it. Returns a
    shapely Polygon or MultiPolygon per label; cells that touch only at a
    corner stay separate parts.
    """
    lons, lats = r.grid.axes()
    half = r.grid.step / 2.0
    out = {}
    for lab in sorted(set(np.unique(r.labels).tolist()) - {UNCLASSIFIED}):
        rects = []
        for row, lat in enumerate(lats):
            mask = r.labels[row] == lab
            if not mask.any():
                continue
            # collapse horizontal runs before the union
            edges = np.diff(np.concatenate([[0], mask.astype(np.int8), [0]]))
            starts, stops = np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)
            for a, b in zip(starts, stops):
                rects.append(box(lons[a] - half, lat - half, lons[b - 1] + half, lat + half))
        out[lab] = unary_union(rects)
    return out


def boundaries_geojson(polys: dict[int, object]) -> dict:
    features = []
    for lab, geom in polys.items():
        features.append({"type": "Feature", "properties": {"label": int(lab)}, "geometry": mapping(geom)})
    return {"type": "FeatureCollection", "features": features}


def write_grid(r: Regionalisation, stream: TextIO) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["lon", "lat", "label"])
    lons, lats = r.grid.axes()
    for row, lat in enumerate(lats):
        for col, lon in enumerate(lons):
            writer.writerow([f"{lon:.17g}", f"{lat:.17g}", int(r.labels[row, col])])
