"""F-madogram dissimilarities between stations.

The estimator works on ranks: each station's maxima are mapped through its
own empirical CDF (strict inequality, divided by the number of years), and
the dissimilarity between two stations is half the mean absolute
difference of those values over the years both stations observed.
For a bivariate extreme value pair, d = (theta - 1) / (2 (theta + 1)),
so the theoretical range is [0, 1/6].
"""
from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass
from typing import Sequence, TextIO

import numpy as np

from .distance import pairwise_distance
from .ingest import StationSeries

logger = logging.getLogger(__name__)

D_INDEPENDENT = 1.0 / 6.0

OBSERVED = "observed"
ASSUMED_INDEPENDENT = "assumed_independent"
ASSUMED_IDENTICAL = "assumed_identical"
MODEL_INTERPOLATED = "model_interpolated"
MISSING = "missing"
PROVENANCES = (OBSERVED, ASSUMED_INDEPENDENT, ASSUMED_IDENTICAL, MODEL_INTERPOLATED, MISSING)


class InterpolationError(ValueError):
    pass


@dataclass
class DissimilarityMatrix:
    ids: list[str]
    d: np.ndarray
    provenance: np.ndarray
    overlap: np.ndarray
    euclid: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.ids)
        for name in ("d", "provenance", "overlap"):
            if getattr(self, name).shape != (n, n):
                raise ValueError(f"{name} must be {n}x{n}")

    @property
    def n(self) -> int:
        return len(self.ids)

    def missing_mask(self) -> np.ndarray:
        return self.provenance == MISSING

    def is_complete(self) -> bool:
        return not self.missing_mask().any() and bool(np.isfinite(self.d).all())

    def subset(self, ids: Sequence[str]) -> "DissimilarityMatrix":
        idx = [self.ids.index(s) for s in ids]
        sel = np.ix_(idx, idx)
        eu = None if self.euclid is None else self.euclid[sel]
        return DissimilarityMatrix(list(ids), self.d[sel], self.provenance[sel], self.overlap[sel], eu)


def empirical_cdf_values(series: StationSeries) -> dict[int, float]:
    """F_i(M_i^(y)) for every year y of the station: count of strictly smaller maxima / n."""
    years = series.years
    if not years:
        raise ValueError(f"station {series.station_id} has no maxima")
    values = np.array([series.maxima[y] for y in years])
    below = np.searchsorted(np.sort(values), values, side="left")
    return dict(zip(years, (below / len(values)).tolist()))


def fmadogram(a: StationSeries, b: StationSeries, min_overlap: int = 1) -> tuple[float, int]:
    """F-madogram between two stations and the number of shared years.

    Each ECDF uses the station's full record; only the shared years enter
    the average. With fewer than `min_overlap` shared years the distance is
    NaN (treated as missing downstream).
    """
    fa, fb = empirical_cdf_values(a), empirical_cdf_values(b)
    common = sorted(set(fa) & set(fb))
    if len(common) < max(min_overlap, 1):
        return float("nan"), len(common)
    diff = sum(abs(fa[y] - fb[y]) for y in common)
    return diff / (2 * len(common)), len(common)


def ecdf_table(series: Sequence[StationSeries]) -> tuple[np.ndarray, list[int]]:
    """Stations x years array of ECDF values, NaN where a year is absent."""
    years = sorted(set().union(*(s.maxima for s in series))) if series else []
    col = {y: k for k, y in enumerate(years)}
    table = np.full((len(series), len(years)), np.nan)
    for i, s in enumerate(series):
        for y, f in empirical_cdf_values(s).items():
            table[i, col[y]] = f
    return table, years


def fmadogram_matrix(
    series: Sequence[StationSeries],
    min_overlap: int = 20,
    metric: str = "great_circle",
) -> DissimilarityMatrix:
    """All-pairs F-madogram; pairs below `min_overlap` shared years are marked missing."""
    n = len(series)
    table, _ = ecdf_table(series)
    present = np.isfinite(table)
    filled = np.where(present, table, 0.0)
    d = np.zeros((n, n))
    overlap = np.zeros((n, n), dtype=int)
    for i in range(n):
        both = present[i] & present[i:]
        cnt = both.sum(axis=1)
        tot = (np.abs(filled[i] - filled[i:]) * both).sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            row = tot / (2 * cnt)
        d[i, i:] = row
        d[i:, i] = row
        overlap[i, i:] = cnt
        overlap[i:, i] = cnt
    prov = np.full((n, n), OBSERVED, dtype=object)
    lacking = overlap < max(min_overlap, 1)
    np.fill_diagonal(lacking, False)
    prov[lacking] = MISSING
    d[lacking] = np.nan
    np.fill_diagonal(d, 0.0)
    coords = np.array([[s.lon, s.lat] for s in series], dtype=float).reshape(n, 2)
    euclid = pairwise_distance(coords, metric) if n else np.zeros((0, 0))
    return DissimilarityMatrix([s.station_id for s in series], d, prov, overlap, euclid)


def d_from_theta(theta):
    """Theoretical F-madogram for extremal coefficient theta in [1, 2]."""
    t = np.asarray(theta, dtype=float)
    if np.any((t < 1.0) | (t > 2.0)) or np.any(~np.isfinite(t)):
        raise ValueError("extremal coefficient must lie in [1, 2]")
    out = (t - 1.0) / (2.0 * (t + 1.0))
    return float(out) if out.ndim == 0 else out


def theta_from_d(d):
    """Extremal coefficient implied by an F-madogram value.

    Values in (1/6, 1/2) are clamped to 1/6 (independence) with a warning;
    values outside [0, 1/2) are a domain error.
    """
    x = np.asarray(d, dtype=float)
    if np.any((x < 0.0) | (x >= 0.5)) or np.any(~np.isfinite(x)):
        raise ValueError("F-madogram value must lie in [0, 1/2)")
    if np.any(x > D_INDEPENDENT):
        warnings.warn("F-madogram above 1/6 clamped to 1/6 for conversion", RuntimeWarning, stacklevel=2)
        x = np.minimum(x, D_INDEPENDENT)
    out = (1.0 + 2.0 * x) / (1.0 - 2.0 * x)
    return float(out) if out.ndim == 0 else out


def _fit_log_linear(logh: np.ndarray, d: np.ndarray) -> tuple[float, float] | None:
    if len(d) < 3 or np.ptp(logh) == 0:
        return None
    X = np.column_stack([np.ones_like(logh), logh])
    (alpha, beta), *_ = np.linalg.lstsq(X, d, rcond=None)
    return float(alpha), float(beta)


def interpolate_missing(
    m: DissimilarityMatrix,
    coords,
    far_threshold: float = 500.0,
    block_deg: float = 5.0,
    metric: str = "great_circle",
    blocks: Sequence | None = None,
) -> DissimilarityMatrix:
    """Fill missing dissimilarities.

    Missing pairs at zero distance become 0, pairs at or beyond
    `far_threshold` become 1/6, and the rest are predicted by a linear
    model d ~ alpha + beta * log(distance) fitted to observed pairs in the
    same block, clipped to [0, 1/6]. Blocks default to a `block_deg` grid on
    the pair midpoint; `blocks` may instead give one region label per
    station, a pair belonging to a block only when both ends share the
    label. Blocks with fewer than 3 usable observed pairs use the global model.
    Observed entries are never changed.
    """
    coords = np.asarray(coords, dtype=float).reshape(m.n, 2)
    dist = pairwise_distance(coords, metric)
    d = m.d.copy()
    prov = m.provenance.copy()

    iu, ju = np.triu_indices(m.n, k=1)
    miss = prov[iu, ju] == MISSING
    if not miss.any():
        return DissimilarityMatrix(list(m.ids), d, prov, m.overlap.copy(), dist)

    if blocks is None:
        mid = (coords[iu] + coords[ju]) / 2.0
        cells = np.floor(mid / block_deg).astype(int)
        pair_block = [tuple(c) for c in cells]
    else:
        lab = list(blocks)
        pair_block = [lab[i] if lab[i] == lab[j] else None for i, j in zip(iu, ju)]

    h = dist[iu, ju]
    obs = (prov[iu, ju] == OBSERVED) & (h > 0) & np.isfinite(d[iu, ju])
    logh = np.log(np.where(h > 0, h, 1.0))

    global_model = _fit_log_linear(logh[obs], d[iu, ju][obs])
    block_models: dict = {}
    for key in set(pair_block):
        if key is None:
            continue
        sel = obs & np.array([b == key for b in pair_block])
        block_models[key] = _fit_log_linear(logh[sel], d[iu, ju][sel])

    for k in np.flatnonzero(miss):
        i, j = iu[k], ju[k]
        if h[k] == 0:
            val, tag = 0.0, ASSUMED_IDENTICAL
        elif h[k] >= far_threshold:
            val, tag = D_INDEPENDENT, ASSUMED_INDEPENDENT
        else:
            model = block_models.get(pair_block[k]) or global_model
            if model is None:
                raise InterpolationError("no observed pairs available to fit the distance model")
            alpha, beta = model
            val = float(np.clip(alpha + beta * logh[k], 0.0, D_INDEPENDENT))
            tag = MODEL_INTERPOLATED
        d[i, j] = d[j, i] = val
        prov[i, j] = prov[j, i] = tag

    return DissimilarityMatrix(list(m.ids), d, prov, m.overlap.copy(), dist)


def hexbin_diagnostic(
    m: DissimilarityMatrix,
    n_bins: int = 30,
    euclid_range: tuple[float, float] | None = None,
    d_range: tuple[float, float] | None = None,
) -> list[tuple[float, float, float, float, int]]:
    """2-D histogram of (euclidean distance, F-madogram) over observed pairs i < j.

    Returns (euclid_lo, euclid_hi, d_lo, d_hi, count) for every non-empty bin.
    """
    if m.euclid is None:
        raise ValueError("dissimilarity matrix carries no euclidean distances")
    iu, ju = np.triu_indices(m.n, k=1)
    keep = m.provenance[iu, ju] == OBSERVED
    e, dv = m.euclid[iu, ju][keep], m.d[iu, ju][keep]
    if e.size == 0:
        return []
    rng = [euclid_range or _span(e), d_range or _span(dv)]
    counts, e_edges, d_edges = np.histogram2d(e, dv, bins=n_bins, range=rng)
    rows = []
    for a, b in zip(*np.nonzero(counts)):
        rows.append((float(e_edges[a]), float(e_edges[a + 1]), float(d_edges[b]), float(d_edges[b + 1]), int(counts[a, b])))
    return rows


def _span(x: np.ndarray) -> tuple[float, float]:
    lo, hi = float(x.min()), float(x.max())
    if hi <= lo:
        pad = 0.5 if lo == 0 else abs(lo) * 0.5
        return lo - pad, hi + pad
    return lo, hi


DIST_COLUMNS = ("station_i", "station_j", "d", "overlap", "provenance", "euclid")


def write_dist(m: DissimilarityMatrix, stream: TextIO) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(DIST_COLUMNS)
    for i, j in zip(*np.triu_indices(m.n, k=1)):
        eu = "" if m.euclid is None else f"{m.euclid[i, j]:.17g}"
        dv = "" if not np.isfinite(m.d[i, j]) else f"{m.d[i, j]:.17g}"
        writer.writerow([m.ids[i], m.ids[j], dv, int(m.overlap[i, j]), m.provenance[i, j], eu])


def read_dist(stream: TextIO) -> DissimilarityMatrix:
    reader = csv.DictReader(stream)
    if reader.fieldnames is None or not {"station_i", "station_j", "d"} <= set(reader.fieldnames):
        raise ValueError("dist table needs station_i, station_j, d columns")
    rows = list(reader)
    ids: list[str] = []
    index: dict[str, int] = {}
    for r in rows:
        for s in (r["station_i"], r["station_j"]):
            if s not in index:
                index[s] = len(ids)
                ids.append(s)
    n = len(ids)
    d = np.full((n, n), np.nan)
    np.fill_diagonal(d, 0.0)
    prov = np.full((n, n), MISSING, dtype=object)
    np.fill_diagonal(prov, OBSERVED)
    overlap = np.zeros((n, n), dtype=int)
    euclid = np.full((n, n), np.nan)
    np.fill_diagonal(euclid, 0.0)
    for r in rows:
        i, j = index[r["station_i"]], index[r["station_j"]]
        val = float(r["d"]) if r["d"].strip() else np.nan
        tag = r.get("provenance") or (OBSERVED if np.isfinite(val) else MISSING)
        if tag not in PROVENANCES:
            raise ValueError(f"unknown provenance {tag!r}")
        d[i, j] = d[j, i] = val
        prov[i, j] = prov[j, i] = tag
        if r.get("overlap"):
            overlap[i, j] = overlap[j, i] = int(r["overlap"])
        if r.get("euclid"):
            euclid[i, j] = euclid[j, i] = float(r["euclid"])
    has_euclid = bool(rows) and all(r.get("euclid") for r in rows)
    return DissimilarityMatrix(ids, d, prov, overlap, euclid if has_euclid else None)
