"""Access-log parsing, binning and counts-file tests."""
from __future__ import annotations

import gzip
import random
from datetime import datetime, timedelta, timezone
from pathlib import Path

import pytest

from traffic_forecast import export, ingest, metrics
from traffic_forecast.ingest import ParseStats, SchemaError, TrafficSeries

FIXTURES = Path(__file__).parent / "fixtures"
SMALL_LOG = FIXTURES / "access_small.log"
T0 = datetime(2005, 3, 17, 15, 0, tzinfo=timezone.utc)


def _clf(moment: datetime, status: int = 200) -> str:
    stamp = moment.astimezone(timezone(timedelta(hours=9))).strftime("%d/%b/%Y:%H:%M:%S +0900")
    return f'192.168.1.20 - - [{stamp}] "GET /page HTTP/1.1" {status} 1043\n'


def test_parse_reference_line() -> None:
    stats = ParseStats()
    record = ingest.parse_clf_line(
        '127.0.0.1 - - [18/Mar/2005:00:00:07 +0900] "GET / HTTP/1.0" 200 1043', stats
    )
    assert record is not None
    assert record.timestamp == datetime(2005, 3, 17, 15, 0, 7, tzinfo=timezone.utc)
    assert record.utc_offset == timedelta(hours=9)
    assert record.status == 200
    assert record.size == 1043
    assert stats.first_offset == timedelta(hours=9)


def test_parse_combined_format_and_dash_fields() -> None:
    record = ingest.parse_clf_line(
        '10.0.0.3 - bob [01/Apr/2005:12:30:00 -0500] "GET /x?a=\\"b\\" HTTP/1.1" 304 - '
        '"http://example.org/" "curl/7.12"'
    )
    assert record is not None
    assert record.timestamp == datetime(2005, 4, 1, 17, 30, tzinfo=timezone.utc)
    assert record.size is None


def test_empty_line_is_skipped_and_counted() -> None:
    stats = ParseStats()
    assert ingest.parse_clf_line("", stats) is None
    assert stats.malformed == 1
    assert metrics.get("log_lines_malformed_total") == 1


def test_malformed_lines_are_logged_with_addresses_masked(caplog: pytest.LogCaptureFixture) -> None:
    with caplog.at_level("DEBUG", logger="traffic_forecast.ingest"):
        ingest.parse_clf_line("10.1.2.3 garbage without a timestamp")
    assert "10.*.*.*" in caplog.text
    assert "10.1.2.3" not in caplog.text


def test_fixture_with_corrupted_lines() -> None:
    timestamps, stats = ingest.read_log(SMALL_LOG)
    assert len(timestamps) == 8
    assert stats.lines == 10
    assert stats.malformed == 2
    assert stats.parsed == 8


def test_fixture_bins_into_five_minute_counts() -> None:
    timestamps, _ = ingest.read_log(SMALL_LOG)
    series = ingest.bin_counts(timestamps, 300)
    assert series.start == T0
    assert series.counts == (4, 2, 2)
    assert series.end == T0 + timedelta(minutes=15)


def test_status_filter_keeps_matching_classes() -> None:
    timestamps, stats = ingest.read_log(SMALL_LOG, ["2xx"])
    assert stats.filtered == 3
    assert ingest.bin_counts(timestamps, 300).counts == (2, 1, 2)
    accept = ingest.status_matcher(["200", "3xx"])
    assert accept(200) and accept(304) and not accept(404) and not accept(None)


def test_gzip_logs_are_read(tmp_path: Path) -> None:
    packed = tmp_path / "access.log.gz"
    with gzip.open(packed, "wt", encoding="latin-1") as handle:
        handle.write(SMALL_LOG.read_text(encoding="latin-1"))
    timestamps, stats = ingest.read_log(packed)
    assert len(timestamps) == 8 and stats.malformed == 2


def test_parsing_several_files_is_order_independent(tmp_path: Path) -> None:
    first = tmp_path / "a.log"
    second = tmp_path / "b.log"
    first.write_text("".join(_clf(T0 + timedelta(seconds=s)) for s in (900, 10, 400)), encoding="utf-8")
    second.write_text("".join(_clf(T0 + timedelta(seconds=s)) for s in (20, 650)), encoding="utf-8")
    serial, _ = ingest.parse_logs([first, second])
    threaded, stats = ingest.parse_logs([second, first], workers=2)
    assert serial == threaded == sorted(serial)
    assert stats.parsed == 5


def test_unreadable_input_raises(tmp_path: Path) -> None:
    with pytest.raises(OSError):
        ingest.read_log(tmp_path / "nope.log")


def test_three_arrivals_in_one_interval() -> None:
    stamps = [T0 + timedelta(seconds=s) for s in (3, 100, 299)]
    assert ingest.bin_counts(stamps, 300).counts == (3,)


def test_bins_are_right_open() -> None:
    assert ingest.bin_counts([T0, T0 + timedelta(seconds=300)], 300).counts == (1, 1)


def test_binning_conserves_arrivals_and_ignores_order() -> None:
    rng = random.Random(1000)
    stamps = [T0 + timedelta(seconds=rng.randrange(3600)) for _ in range(1000)]
    window = (T0, T0 + timedelta(hours=1))
    series = ingest.bin_counts(stamps, 300, window=window)
    assert len(series) == 12
    assert series.total_arrivals == 1000
    rng.shuffle(stamps)
    assert ingest.bin_counts(stamps, 300, window=window) == series


def test_window_drops_arrivals_outside_it() -> None:
    stamps = [T0 - timedelta(seconds=1), T0, T0 + timedelta(seconds=601)]
    series = ingest.bin_counts(stamps, 300, window=(T0, T0 + timedelta(seconds=600)))
    assert series.counts == (1, 0)


def test_empty_input_gives_empty_series() -> None:
    series = ingest.bin_counts([], 300)
    assert series.counts == ()
    assert len(series) == 0


def test_maintenance_bins_are_flagged_missing() -> None:
    stamps = [T0 + timedelta(seconds=s) for s in (10, 20, 310, 320, 330, 700)]
    maintenance = [(T0 + timedelta(seconds=300), T0 + timedelta(seconds=600))]
    series = ingest.bin_counts(stamps, 300, maintenance=maintenance)
    assert series.counts == (2, None, 1)
    assert series.excluded == 3
    assert series.total_arrivals + series.excluded == len(stamps)
    assert series.missing == 1
    assert metrics.get("intervals_missing_total") == 1


def test_gaps_without_arrivals_are_zero() -> None:
    stamps = [T0, T0 + timedelta(seconds=1000)]
    assert ingest.bin_counts(stamps, 300).counts == (1, 0, 0, 1)


def test_counts_round_trip(tmp_path: Path) -> None:
    series = TrafficSeries(T0, 300, (4, None, 0, 17), "fixture")
    path = tmp_path / "counts.csv"
    ingest.write_counts(path, series)
    assert path.read_text(encoding="utf-8").splitlines() == [
        "timestamp,count",
        "2005-03-17T15:00:00Z,4",
        "2005-03-17T15:05:00Z,",
        "2005-03-17T15:10:00Z,0",
        "2005-03-17T15:15:00Z,17",
    ]
    loaded = ingest.read_counts(path)
    assert loaded == series
    rewritten = tmp_path / "again.csv"
    ingest.write_counts(rewritten, loaded)
    assert rewritten.read_bytes() == path.read_bytes()


def test_log_to_counts_round_trip_is_deterministic(tmp_path: Path) -> None:
    timestamps, _ = ingest.read_log(SMALL_LOG)
    first = tmp_path / "first.csv"
    second = tmp_path / "second.csv"
    ingest.write_counts(first, ingest.bin_counts(timestamps, 300))
    ingest.write_counts(second, ingest.bin_counts(list(reversed(timestamps)), 300))
    assert first.read_bytes() == second.read_bytes()
    assert ingest.read_counts(first).total_arrivals == len(timestamps)


def test_gap_row_is_flagged_missing() -> None:
    text = "timestamp,count\n2005-03-17T15:00:00Z,3\n2005-03-17T15:05:00Z,\n2005-03-17T15:10:00Z,5\n"
    series = ingest.parse_counts(text)
    assert series.counts == (3, None, 5)
    assert series.interval_seconds == 300


def test_out_of_order_rows_name_the_line() -> None:
    text = "timestamp,count\n2005-03-17T15:05:00Z,3\n2005-03-17T15:00:00Z,1\n"
    with pytest.raises(SchemaError) as excinfo:
        ingest.parse_counts(text)
    assert excinfo.value.line_number == 3
    assert str(excinfo.value).startswith("line 3:")


@pytest.mark.parametrize(
    "text, line",
    [
        ("time,count\n", 1),
        ("", 1),
        ("timestamp,count\n2005-03-17T15:00:00Z,-4\n", 2),
        ("timestamp,count\nyesterday,4\n", 2),
        ("timestamp,count\n2005-03-17T15:00:00Z,\u00b2\n", 2),
        ("timestamp,count\n2005-03-17T15:00:00Z,\u0663\n", 2),
        ("timestamp,count\n2005-03-17T15:00:00Z,1,2\n", 2),
        (
            "timestamp,count\n2005-03-17T15:00:00Z,1\n2005-03-17T15:05:00Z,1\n2005-03-17T15:15:00Z,1\n",
            4,
        ),
    ],
)
def test_schema_violations(text: str, line: int) -> None:
    with pytest.raises(SchemaError) as excinfo:
        ingest.parse_counts(text)
    assert excinfo.value.line_number == line


def test_series_validation() -> None:
    with pytest.raises(ValueError):
        TrafficSeries(T0, 0, ())
    with pytest.raises(ValueError):
        TrafficSeries(datetime(2005, 3, 17), 300, ())
    with pytest.raises(ValueError):
        TrafficSeries(T0, 300, (1, -2))
    shifted = TrafficSeries(datetime(2005, 3, 18, 0, 0, tzinfo=timezone(timedelta(hours=9))), 300, (1,))
    assert shifted.start == T0


def test_split_days_at_local_midnight() -> None:
    start = datetime(2005, 3, 17, 14, 50, tzinfo=timezone.utc)
    series = TrafficSeries(start, 300, (1, 2, 3, 4), "log")
    tokyo = timezone(timedelta(hours=9))
    days = ingest.split_days(series, tokyo)
    assert [d.counts for d in days] == [(1, 2), (3, 4)]
    assert days[1].start == datetime(2005, 3, 17, 15, 0, tzinfo=timezone.utc)
    assert [d.source for d in days] == ["log#2005-03-17", "log#2005-03-18"]
    assert ingest.split_days(series, timezone.utc) == [series]


def test_a_day_of_five_minute_bins_has_288_intervals() -> None:
    start = datetime(2005, 3, 18, tzinfo=timezone.utc)
    series = TrafficSeries(start, 300, tuple([1] * 288 * 3))
    days = ingest.split_days(series, timezone.utc)
    assert [len(d) for d in days] == [288, 288, 288]


def test_timestamp_helpers() -> None:
    assert ingest.format_timestamp(T0) == "2005-03-17T15:00:00Z"
    assert ingest.parse_timestamp("2005-03-18T00:00:00+09:00") == T0
    assert ingest.parse_timestamp("2005-03-17T15:00:00") == T0


def test_invalid_utf8_is_a_schema_error(tmp_path: Path) -> None:
    path = tmp_path / "counts.csv"
    path.write_bytes(b"timestamp,count\n2005-03-17T15:00:00Z,1\n2005-03-17T15:05:00Z,\xff\n")
    with pytest.raises(SchemaError) as excinfo:
        ingest.read_counts(path)
    assert excinfo.value.line_number == 3


def test_sidecar_restores_interval_and_offset(tmp_path: Path) -> None:
    path = tmp_path / "counts.csv"
    ingest.write_counts(path, TrafficSeries(T0, 60, (5,), "one row"))
    meta = ingest.CountsMeta(60, timedelta(hours=9))
    ingest.meta_path(path).write_bytes(export.to_json(meta.to_dict()))

    series, loaded = ingest.load_counts(path)

    assert ingest.meta_path(path).name == "counts.meta.json"
    assert series.interval_seconds == 60
    assert loaded == meta
    assert loaded.to_dict()["utc_offset"] == "+09:00"
    assert loaded.log_timezone == timezone(timedelta(hours=9))


def test_counts_without_sidecar_load_with_defaults(tmp_path: Path) -> None:
    path = tmp_path / "counts.csv"
    ingest.write_counts(path, TrafficSeries(T0, 300, (1, 2)))
    series, meta = ingest.load_counts(path)
    assert meta == ingest.CountsMeta()
    assert meta.log_timezone is None
    assert series.counts == (1, 2)


@pytest.mark.parametrize(
    "sidecar",
    [
        b"not json",
        b'{"interval_seconds": 0}',
        b'{"utc_offset": "Asia/Tokyo"}',
        b'{"interval_seconds": 60}',
    ],
)
def test_bad_or_mismatched_sidecar_is_a_schema_error(tmp_path: Path, sidecar: bytes) -> None:
    path = tmp_path / "counts.csv"
    ingest.write_counts(path, TrafficSeries(T0, 300, (1, 2, 3)))
    ingest.meta_path(path).write_bytes(sidecar)
    with pytest.raises(SchemaError):
        ingest.load_counts(path)


def test_negative_offsets_are_formatted_with_sign() -> None:
    assert ingest.format_utc_offset(timedelta(hours=-5, minutes=-30)) == "-05:30"
    assert ingest.format_utc_offset(timedelta(0)) == "+00:00"
