"""Daily rainfall parsing and annual block maxima.

Daily records come in as delimited text with a header row; station
coordinates come from a separate metadata table joined on station id.
"""
from __future__ import annotations

import calendar
import csv
import datetime as dt
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, TextIO

logger = logging.getLogger(__name__)


class IngestError(ValueError):
    """Fatal input problem (bad header, conflicting metadata, ...)."""


@dataclass(frozen=True)
class DailyRecord:
    station_id: str
    date: dt.date
    rainfall: float
    quality_flag: str | None = None


@dataclass
class StationSeries:
    station_id: str
    lon: float
    lat: float
    maxima: dict[int, float] = field(default_factory=dict)

    @property
    def years(self) -> list[int]:
        return sorted(self.maxima)


@dataclass
class DailyFormat:
    station_col: str = "station_id"
    date_col: str = "date"
    value_col: str = "rainfall"
    flag_col: str | None = "flag"
    delimiter: str = ","
    date_format: str | None = None  # None -> ISO 8601
    missing_values: tuple[str, ...] = ("", "NA", "NaN", "nan", "-9999")


@dataclass
class ParseReport:
    n_rows: int = 0
    n_skipped_missing: int = 0
    errors: list[tuple[int, str]] = field(default_factory=list)

    @property
    def n_errors(self) -> int:
        return len(self.errors)


def _parse_date(text: str, fmt: str | None) -> dt.date:
    text = text.strip()
    if fmt is None:
        return dt.date.fromisoformat(text)
    return dt.datetime.strptime(text, fmt).date()


def parse_daily(stream: TextIO, fmt: DailyFormat | None = None) -> tuple[list[DailyRecord], ParseReport]:
    """Parse daily rainfall rows.

    Rows with a missing value are skipped and counted. Malformed dates,
    unparsable or negative values and duplicated (station, date) rows are
    collected in the report rather than raised. A header that lacks the
    station, date or value column raises `IngestError`.
    """
    fmt = fmt or DailyFormat()
    reader = csv.reader(stream, delimiter=fmt.delimiter)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise IngestError("daily input is empty (no header)") from None
    except csv.Error as exc:
        raise IngestError(f"unreadable header: {exc}") from None

    cols = {name: i for i, name in enumerate(header)}
    for need in (fmt.station_col, fmt.date_col, fmt.value_col):
        if need not in cols:
            raise IngestError(f"header {header} lacks required column {need!r}")
    i_st, i_dt, i_val = cols[fmt.station_col], cols[fmt.date_col], cols[fmt.value_col]
    i_flag = cols.get(fmt.flag_col) if fmt.flag_col else None
    width = max(i_st, i_dt, i_val, -1 if i_flag is None else i_flag) + 1

    missing = set(fmt.missing_values)
    report = ParseReport()
    records: list[DailyRecord] = []
    seen: set[tuple[str, dt.date]] = set()

    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        report.n_rows += 1
        if len(row) < width:
            report.errors.append((lineno, f"expected at least {width} fields, got {len(row)}"))
            continue
        raw = row[i_val].strip()
        if raw in missing:
            report.n_skipped_missing += 1
            continue
        station = row[i_st].strip()
        try:
            date = _parse_date(row[i_dt], fmt.date_format)
        except ValueError:
            report.errors.append((lineno, f"malformed date {row[i_dt]!r}"))
            continue
        try:
            value = float(raw)
        except ValueError:
            report.errors.append((lineno, f"malformed value {raw!r}"))
            continue
        if not value >= 0.0:
            report.errors.append((lineno, f"negative rainfall {value}"))
            continue
        key = (station, date)
        if key in seen:
            report.errors.append((lineno, f"duplicate record for {station} on {date}"))
            continue
        seen.add(key)
        flag = row[i_flag].strip() or None if i_flag is not None else None
        records.append(DailyRecord(station, date, value, flag))

    return records, report


def read_stations(stream: TextIO, delimiter: str = ",") -> dict[str, tuple[float, float]]:
    """Read a station metadata table with columns station_id, lon, lat.

    Repeated ids with identical coordinates are merged; conflicting
    coordinates are fatal.
    """
    reader = csv.DictReader(stream, delimiter=delimiter)
    if reader.fieldnames is None:
        raise IngestError("station table is empty")
    fields = [f.strip() for f in reader.fieldnames]
    id_col = "station_id" if "station_id" in fields else ("id" if "id" in fields else None)
    if id_col is None or "lon" not in fields or "lat" not in fields:
        raise IngestError(f"station table header {fields} needs station_id (or id), lon, lat")
    reader.fieldnames = fields

    coords: dict[str, tuple[float, float]] = {}
    for lineno, row in enumerate(reader, start=2):
        sid = row[id_col].strip()
        try:
            lon, lat = float(row["lon"]), float(row["lat"])
        except (TypeError, ValueError):
            raise IngestError(f"line {lineno}: bad coordinates for station {sid!r}") from None
        if sid in coords and coords[sid] != (lon, lat):
            raise IngestError(f"station {sid!r} has conflicting coordinates {coords[sid]} and {(lon, lat)}")
        coords[sid] = (lon, lat)
    return coords


def block_year(date: dt.date, block_start_month: int = 1) -> int:
    """Label of the block containing `date`; a block is named by the year it starts in."""
    return date.year if date.month >= block_start_month else date.year - 1


def block_length(year: int, block_start_month: int = 1) -> int:
    """Number of days in the block starting on the first of `block_start_month` in `year`."""
    if block_start_month == 1:
        return 366 if calendar.isleap(year) else 365
    start = dt.date(year, block_start_month, 1)
    end = dt.date(year + 1, block_start_month, 1)
    return (end - start).days


def block_maxima(
    records: Iterable[DailyRecord],
    coords: dict[str, tuple[float, float]],
    completeness: float = 0.9,
    min_years: int = 20,
    block_start_month: int = 1,
    year_min: int | None = None,
    year_max: int | None = None,
    exclude_flags: Iterable[str] = (),
) -> list[StationSeries]:
    """Annual maxima per station after the completeness filters.

    A block contributes its maximum only if observed days / days in block
    is at least `completeness`. Stations keeping fewer than `min_years`
    blocks are dropped, as are stations missing from `coords`.
    Output is sorted by station id.
    """
    if not 0.0 < completeness <= 1.0:
        raise ValueError(f"completeness must lie in (0, 1], got {completeness}")
    if min_years < 1:
        raise ValueError(f"min_years must be >= 1, got {min_years}")
    if not 1 <= block_start_month <= 12:
        raise ValueError(f"block_start_month must be 1..12, got {block_start_month}")
    excluded = set(exclude_flags)

    counts: dict[str, dict[int, int]] = defaultdict(lambda: defaultdict(int))
    maxima: dict[str, dict[int, float]] = defaultdict(dict)
    for rec in records:
        if rec.quality_flag is not None and rec.quality_flag in excluded:
            continue
        year = block_year(rec.date, block_start_month)
        if (year_min is not None and year < year_min) or (year_max is not None and year > year_max):
            continue
        counts[rec.station_id][year] += 1
        best = maxima[rec.station_id].get(year)
        if best is None or rec.rainfall > best:
            maxima[rec.station_id][year] = rec.rainfall

    out = []
    for sid in sorted(counts):
        kept = {
            year: maxima[sid][year]
            for year in sorted(counts[sid])
            if counts[sid][year] / block_length(year, block_start_month) >= completeness
        }
        if len(kept) < min_years:
            continue
        if sid not in coords:
            logger.warning("station %s has no coordinates; excluded", sid)
            continue
        lon, lat = coords[sid]
        out.append(StationSeries(sid, lon, lat, kept))
    return out


MAXIMA_COLUMNS = ("station_id", "lon", "lat", "year", "maximum")


def write_maxima(series: Iterable[StationSeries], stream: TextIO) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(MAXIMA_COLUMNS)
    for s in series:
        for year in s.years:
            writer.writerow([s.station_id, f"{s.lon:.17g}", f"{s.lat:.17g}", year, f"{s.maxima[year]:.17g}"])


def read_maxima(stream: TextIO) -> list[StationSeries]:
    """Inverse of `write_maxima`; stations keep first-seen coordinates and come back sorted by id."""
    reader = csv.DictReader(stream)
    if reader.fieldnames is None or not set(MAXIMA_COLUMNS) <= set(reader.fieldnames):
        raise IngestError(f"maxima table needs columns {MAXIMA_COLUMNS}")
    series: dict[str, StationSeries] = {}
    for lineno, row in enumerate(reader, start=2):
        sid = row["station_id"]
        try:
            lon, lat = float(row["lon"]), float(row["lat"])
            year, value = int(row["year"]), float(row["maximum"])
        except ValueError:
            raise IngestError(f"line {lineno}: malformed maxima row {row}") from None
        s = series.get(sid)
        if s is None:
            s = series[sid] = StationSeries(sid, lon, lat, {})
        elif (s.lon, s.lat) != (lon, lat):
            raise IngestError(f"station {sid!r} has conflicting coordinates in maxima table")
        s.maxima[year] = value
    return [series[k] for k in sorted(series)]
