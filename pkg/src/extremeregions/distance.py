"""Coordinate distances shared by the madogram, classify and smith modules."""
from __future__ import annotations

import numpy as np

EARTH_RADIUS_KM = 6371.0088

METRICS = ("great_circle", "planar")


def great_circle_km(lon1, lat1, lon2, lat2):
    """Haversine distance in km; broadcasts over array inputs."""
    lon1, lat1, lon2, lat2 = (np.radians(np.asarray(v, dtype=float)) for v in (lon1, lat1, lon2, lat2))
    a = np.sin((lat2 - lat1) / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def pairwise_distance(coords, metric: str = "great_circle") -> np.ndarray:
    """Symmetric matrix of distances between rows of an (n, 2) lon/lat array.

    "great_circle" returns km, "planar" returns plain euclidean distance in
    coordinate units (degrees for lon/lat input).
    """
    xy = np.asarray(coords, dtype=float)
    if metric == "great_circle":
        d = great_circle_km(xy[:, None, 0], xy[:, None, 1], xy[None, :, 0], xy[None, :, 1])
    elif metric == "planar":
        d = np.hypot(xy[:, None, 0] - xy[None, :, 0], xy[:, None, 1] - xy[None, :, 1])
    else:
        raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")
    np.fill_diagonal(d, 0.0)
    return d


def km_per_degree(lat0: float) -> tuple[float, float]:
    """Local equirectangular scale factors (km per degree of lon, of lat) at latitude `lat0`."""
    k = np.pi * EARTH_RADIUS_KM / 180.0
    return k * np.cos(np.radians(lat0)), k


def project_local(lonlat, origin) -> np.ndarray:
    """Equirectangular projection of lon/lat degrees to km about `origin`."""
    lonlat = np.asarray(lonlat, dtype=float)
    kx, ky = km_per_degree(origin[1])
    return np.column_stack([(lonlat[..., 0] - origin[0]) * kx, (lonlat[..., 1] - origin[1]) * ky])


def unproject_local(xy, origin) -> np.ndarray:
    xy = np.asarray(xy, dtype=float)
    kx, ky = km_per_degree(origin[1])
    return np.column_stack([origin[0] + xy[..., 0] / kx, origin[1] + xy[..., 1] / ky])
