"""Access-log ingestion and the persisted per-interval counts format."""
from __future__ import annotations

import csv
import gzip
import io
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone, tzinfo
from pathlib import Path
from typing import IO, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from . import export, metrics, schema
from .safety import sanitize_for_log

logger = logging.getLogger(__name__)

DEFAULT_INTERVAL_S = 300
EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)
CSV_HEADER = ("timestamp", "count")

_MONTHS = {
    "Jan": 1, "Feb": 2, "Mar": 3, "Apr": 4, "May": 5, "Jun": 6,
    "Jul": 7, "Aug": 8, "Sep": 9, "Oct": 10, "Nov": 11, "Dec": 12,
}

# host ident authuser [timestamp] "request" status bytes ["referer" "agent"]
_CLF_RE = re.compile(
    r'^(?P<host>\S+) (?P<ident>\S+) (?P<user>\S+) \[(?P<ts>[^\]]+)\] '
    r'"(?P<request>(?:[^"\\]|\\.)*)" (?P<status>\d{3}|-) (?P<size>\d+|-)'
    r'(?: "(?:[^"\\]|\\.)*" "(?:[^"\\]|\\.)*")?\s*$'
)
_TS_RE = re.compile(
    r"^(?P<day>\d{2})/(?P<mon>[A-Z][a-z]{2})/(?P<year>\d{4}):"
    r"(?P<h>\d{2}):(?P<m>\d{2}):(?P<s>\d{2}) (?P<sign>[+-])(?P<oh>\d{2})(?P<om>\d{2})$"
)

_COUNT_RE = re.compile(r"[0-9]+")

Window = Tuple[datetime, datetime]


class SchemaError(ValueError):
    """Raised when a counts file violates the documented format."""

    def __init__(self, message: str, line_number: Optional[int] = None) -> None:
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class LogRecord:
    timestamp: datetime
    utc_offset: timedelta
    host: str
    request: str
    status: Optional[int]
    size: Optional[int]


@dataclass
class ParseStats:
    """Running totals for one or more parsed log streams."""

    lines: int = 0
    parsed: int = 0
    malformed: int = 0
    filtered: int = 0
    first_offset: Optional[timedelta] = None

    def merge(self, other: "ParseStats") -> None:
        self.lines += other.lines
        self.parsed += other.parsed
        self.malformed += other.malformed
        self.filtered += other.filtered
        if self.first_offset is None:
            self.first_offset = other.first_offset


@dataclass(frozen=True)
class TrafficSeries:
    """Dense arrival counts on a fixed grid of intervals.

    Interval ``i`` covers [start + i * interval, start + (i + 1) * interval).
    A ``None`` count marks an interval flagged missing (for example a
    maintenance window); it is never the same thing as zero arrivals.
    """

    start: datetime
    interval_seconds: int = DEFAULT_INTERVAL_S
    counts: Tuple[Optional[int], ...] = ()
    source: str = field(default="", compare=False)
    excluded: int = field(default=0, compare=False)

    def __post_init__(self) -> None:
        if self.interval_seconds <= 0:
            raise ValueError("interval_seconds must be positive")
        if self.start.tzinfo is None:
            raise ValueError("start must be timezone-aware")
        if self.start.utcoffset() != timedelta(0):
            object.__setattr__(self, "start", self.start.astimezone(timezone.utc))
        if self.start.microsecond:
            raise ValueError("start must have whole-second precision")
        object.__setattr__(self, "counts", tuple(self.counts))
        for value in self.counts:
            if value is not None and (isinstance(value, bool) or int(value) != value or value < 0):
                raise ValueError(f"invalid count {value!r}")

    def __len__(self) -> int:
        return len(self.counts)

    @property
    def observed(self) -> List[int]:
        return [int(x) for x in self.counts if x is not None]

    @property
    def total_arrivals(self) -> int:
        return sum(self.observed)

    @property
    def missing(self) -> int:
        return sum(1 for x in self.counts if x is None)

    def timestamp(self, index: int) -> datetime:
        return self.start + timedelta(seconds=index * self.interval_seconds)

    @property
    def end(self) -> datetime:
        return self.timestamp(len(self.counts))


def _parse_timestamp(text: str) -> Optional[Tuple[datetime, timedelta]]:
    match = _TS_RE.match(text)
    if match is None:
        return None
    month = _MONTHS.get(match.group("mon"))
    if month is None:
        return None
    offset = timedelta(hours=int(match.group("oh")), minutes=int(match.group("om")))
    if match.group("sign") == "-":
        offset = -offset
    try:
        local = datetime(
            int(match.group("year")), month, int(match.group("day")),
            int(match.group("h")), int(match.group("m")), int(match.group("s")),
            tzinfo=timezone(offset),
        )
    except ValueError:
        return None
    return local.astimezone(timezone.utc), offset


def parse_clf_line(line: str, stats: Optional[ParseStats] = None) -> Optional[LogRecord]:
    """Parse one Common or Combined Log Format line.

    Returns ``None`` for a line that cannot be parsed and counts it in
    ``stats.malformed``; a bad line never raises.
    """

    if stats is not None:
        stats.lines += 1
    metrics.inc("log_lines_total")
    match = _CLF_RE.match(line.rstrip("\r\n"))
    parsed = _parse_timestamp(match.group("ts")) if match else None
    if match is None or parsed is None:
        if stats is not None:
            stats.malformed += 1
        metrics.inc("log_lines_malformed_total")
        logger.debug("malformed log line: %s", sanitize_for_log(line))
        return None
    timestamp, offset = parsed
    status = match.group("status")
    size = match.group("size")
    if stats is not None:
        stats.parsed += 1
        if stats.first_offset is None:
            stats.first_offset = offset
    return LogRecord(
        timestamp=timestamp,
        utc_offset=offset,
        host=match.group("host"),
        request=match.group("request"),
        status=None if status == "-" else int(status),
        size=None if size == "-" else int(size),
    )


def status_matcher(patterns: Sequence[str]):
    """Return a predicate accepting statuses such as ``"200"`` or ``"2xx"``."""

    cleaned = [p.strip().lower() for p in patterns if p.strip()]

    def accept(status: Optional[int]) -> bool:
        if not cleaned:
            return True
        if status is None:
            return False
        text = str(status)
        for pattern in cleaned:
            if pattern.endswith("xx") and text[:1] == pattern[:1]:
                return True
            if pattern == text:
                return True
        return False

    return accept


def _open_log(path: Path) -> IO[str]:
    if path.suffix == ".gz":
        return gzip.open(path, "rt", encoding="latin-1", errors="replace")
    return open(path, "r", encoding="latin-1", errors="replace")


def iter_timestamps(
    lines: Iterable[str],
    stats: ParseStats,
    status_filter: Sequence[str] = (),
) -> Iterator[datetime]:
    accept = status_matcher(status_filter)
    for line in lines:
        record = parse_clf_line(line, stats)
        if record is None:
            continue
        if not accept(record.status):
            stats.filtered += 1
            continue
        yield record.timestamp


def read_log(path: Path, status_filter: Sequence[str] = ()) -> Tuple[List[datetime], ParseStats]:
    """Parse one access log (optionally gzip-compressed) in a single pass."""

    stats = ParseStats()
    with _open_log(Path(path)) as handle:
        timestamps = list(iter_timestamps(handle, stats, status_filter))
    return timestamps, stats


def parse_logs(
    paths: Sequence[Path],
    status_filter: Sequence[str] = (),
    workers: int = 1,
) -> Tuple[List[datetime], ParseStats]:
    """Parse several logs, concurrently when ``workers > 1``, and merge them.

    The merged timestamps are sorted so the result does not depend on which
    file finished first.
    """

    if workers > 1 and len(paths) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda p: read_log(p, status_filter), paths))
    else:
        results = [read_log(p, status_filter) for p in paths]
    stats = ParseStats()
    timestamps: List[datetime] = []
    for found, file_stats in results:
        timestamps.extend(found)
        stats.merge(file_stats)
    timestamps.sort()
    logger.info(
        json.dumps(
            {
                "event": "ingest",
                "files": len(paths),
                "lines": stats.lines,
                "parsed": stats.parsed,
                "malformed": stats.malformed,
                "filtered": stats.filtered,
            }
        )
    )
    return timestamps, stats


def _epoch_seconds(moment: datetime) -> int:
    if moment.tzinfo is None:
        raise ValueError("timestamps must be timezone-aware")
    return int((moment - EPOCH) // timedelta(seconds=1))


def bin_counts(
    timestamps: Iterable[datetime],
    interval_seconds: int = DEFAULT_INTERVAL_S,
    window: Optional[Window] = None,
    maintenance: Sequence[Window] = (),
    source: str = "",
) -> TrafficSeries:
    """Count arrivals per right-open interval.

    Without a window the bins are aligned to multiples of ``interval_seconds``
    since the Unix epoch and span the first to the last arrival. Bins that
    overlap a maintenance window are flagged missing; the arrivals that fell
    into them are reported in ``excluded``.
    """

    if interval_seconds <= 0:
        raise ValueError("interval_seconds must be positive")
    seconds = np.array([_epoch_seconds(t) for t in timestamps], dtype=np.int64)

    if window is not None:
        start_s, end_s = _epoch_seconds(window[0]), _epoch_seconds(window[1])
        if end_s <= start_s:
            raise ValueError("window end must be after its start")
        n_bins = -(-(end_s - start_s) // interval_seconds)
        seconds = seconds[(seconds >= start_s) & (seconds < end_s)]
    elif seconds.size == 0:
        return TrafficSeries(EPOCH, interval_seconds, (), source)
    else:
        start_s = int(seconds.min()) // interval_seconds * interval_seconds
        n_bins = (int(seconds.max()) - start_s) // interval_seconds + 1

    index = (seconds - start_s) // interval_seconds
    totals = np.bincount(index, minlength=n_bins) if index.size else np.zeros(n_bins, dtype=np.int64)

    flagged = np.zeros(n_bins, dtype=bool)
    for begin, finish in maintenance:
        lo = (_epoch_seconds(begin) - start_s) // interval_seconds
        hi = -(-(_epoch_seconds(finish) - start_s) // interval_seconds)
        flagged[max(lo, 0):max(min(hi, n_bins), 0)] = True

    excluded = int(totals[flagged].sum())
    counts = tuple(None if flagged[i] else int(totals[i]) for i in range(n_bins))
    metrics.inc("arrivals_binned_total", value=float(totals.sum()) - excluded)
    metrics.inc("intervals_missing_total", value=float(flagged.sum()))
    return TrafficSeries(
        EPOCH + timedelta(seconds=int(start_s)),
        interval_seconds,
        counts,
        source,
        excluded,
    )


def format_timestamp(moment: datetime) -> str:
    return moment.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_timestamp(text: str) -> datetime:
    """Parse an ISO-8601 timestamp; naive values are taken as UTC."""

    value = text.strip()
    if value.endswith(("Z", "z")):
        value = value[:-1] + "+00:00"
    moment = datetime.fromisoformat(value)
    if moment.tzinfo is None:
        moment = moment.replace(tzinfo=timezone.utc)
    return moment.astimezone(timezone.utc)


def format_utc_offset(offset: timedelta) -> str:
    minutes = int(offset.total_seconds()) // 60
    sign = "-" if minutes < 0 else "+"
    hours, minutes = divmod(abs(minutes), 60)
    return f"{sign}{hours:02d}:{minutes:02d}"


@dataclass(frozen=True)
class CountsMeta:
    """What a counts CSV cannot carry itself: the bin width and the log's UTC offset."""

    interval_seconds: Optional[int] = None
    utc_offset: Optional[timedelta] = None

    def to_dict(self) -> dict:
        return {
            "interval_seconds": self.interval_seconds,
            "utc_offset": None if self.utc_offset is None else format_utc_offset(self.utc_offset),
        }

    @property
    def log_timezone(self) -> Optional[tzinfo]:
        return None if self.utc_offset is None else timezone(self.utc_offset)


def meta_path(counts_path: Path) -> Path:
    """``counts.csv`` -> ``counts.meta.json``."""

    return Path(counts_path).with_suffix(".meta.json")


def read_counts_meta(counts_path: Path) -> CountsMeta:
    """Load the sidecar of ``counts_path``; a missing sidecar gives an empty CountsMeta."""

    path = meta_path(counts_path)
    if not path.exists():
        return CountsMeta()
    try:
        normalized = schema.validate_counts_meta(json.loads(path.read_text(encoding="utf-8")))
    except (UnicodeDecodeError, TypeError, ValueError) as exc:
        raise SchemaError(f"{path.name}: {exc}", 1) from None
    offset = normalized["utc_offset"]
    return CountsMeta(
        interval_seconds=normalized["interval_seconds"],
        utc_offset=None if offset is None else schema.parse_timezone(offset).utcoffset(None),
    )


def write_counts(path: Path, series: TrafficSeries) -> None:
    Path(path).write_bytes(export.series_to_csv(series))


def read_counts(
    path: Path,
    interval_seconds: int = DEFAULT_INTERVAL_S,
    source: Optional[str] = None,
) -> TrafficSeries:
    """Read a counts CSV; ``interval_seconds`` only matters for single-row files."""

    data = Path(path).read_bytes()
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        line_number = data[: exc.start].count(b"\n") + 1
        raise SchemaError(f"invalid UTF-8 byte at offset {exc.start}", line_number) from None
    return parse_counts(text, interval_seconds, source or str(path))


def load_counts(path: Path) -> Tuple[TrafficSeries, CountsMeta]:
    """Read a counts CSV together with its sidecar, if there is one."""

    meta = read_counts_meta(path)
    series = read_counts(path, meta.interval_seconds or DEFAULT_INTERVAL_S)
    if meta.interval_seconds is not None and series.interval_seconds != meta.interval_seconds:
        raise SchemaError(
            f"{meta_path(path).name} says interval_seconds={meta.interval_seconds}"
            f" but rows are {series.interval_seconds}s apart",
            1,
        )
    return series, meta


def parse_counts(
    text: str, interval_seconds: int = DEFAULT_INTERVAL_S, source: str = ""
) -> TrafficSeries:
    reader = csv.reader(io.StringIO(text))
    try:
        rows = list(reader)
    except csv.Error as exc:
        raise SchemaError(str(exc), reader.line_num) from None
    if not rows:
        raise SchemaError("missing header", 1)
    if tuple(cell.strip() for cell in rows[0]) != CSV_HEADER:
        raise SchemaError(f"header must be {','.join(CSV_HEADER)}", 1)

    stamps: List[datetime] = []
    counts: List[Optional[int]] = []
    step: Optional[int] = None
    for line_number, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 2:
            raise SchemaError(f"expected 2 fields, found {len(row)}", line_number)
        try:
            moment = parse_timestamp(row[0])
        except ValueError:
            raise SchemaError(f"invalid timestamp {row[0]!r}", line_number) from None
        if moment.microsecond:
            raise SchemaError("timestamps must have whole-second precision", line_number)
        raw = row[1].strip()
        if raw == "":
            count: Optional[int] = None
        elif _COUNT_RE.fullmatch(raw):
            count = int(raw)
        else:
            raise SchemaError(f"invalid count {raw!r}", line_number)
        if stamps:
            gap = int((moment - stamps[-1]).total_seconds())
            if gap <= 0:
                raise SchemaError("timestamp is not after the previous row", line_number)
            if step is None:
                step = gap
            elif gap != step:
                raise SchemaError(
                    f"expected {format_timestamp(stamps[-1] + timedelta(seconds=step))}",
                    line_number,
                )
        stamps.append(moment)
        counts.append(count)

    if not stamps:
        return TrafficSeries(EPOCH, interval_seconds, (), source)
    return TrafficSeries(stamps[0], step or interval_seconds, tuple(counts), source)


def split_days(series: TrafficSeries, tz: tzinfo) -> List[TrafficSeries]:
    """Split ``series`` at local midnights of ``tz``, one series per calendar day."""

    days: List[TrafficSeries] = []
    current: List[Optional[int]] = []
    current_start: Optional[datetime] = None
    current_date = None
    for i, value in enumerate(series.counts):
        moment = series.timestamp(i)
        local_date = moment.astimezone(tz).date()
        if current_date is not None and local_date != current_date:
            days.append(
                TrafficSeries(current_start, series.interval_seconds, tuple(current),
                              f"{series.source}#{current_date.isoformat()}")
            )
            current = []
        if not current:
            current_start = moment
            current_date = local_date
        current.append(value)
    if current:
        days.append(
            TrafficSeries(current_start, series.interval_seconds, tuple(current),
                          f"{series.source}#{current_date.isoformat()}")
        )
    return days
