from collections import Counter

import numpy as np
import pytest

from event_records.event_reader import EventRecordReader
from robust_fpca.errors import ConfigError, DataFileError, InsufficientSampleError
from robust_fpca.metric_core import adjacency_of

NODES = ["A", "B", "C", "D"]


def write_events(path, rows, header="timestamp,origin,destination"):
    path.write_text("\n".join([header] + [",".join(r) for r in rows]) + "\n")
    return str(path)


def test_single_event(tmp_path):
    events = write_events(tmp_path / "events.csv", [("2017-03-01 08:10:00", "A", "C")])
    reader = EventRecordReader(events, NODES)
    sample = reader.load_sample()
    assert sample.n == 1 and len(sample.grid) == 72
    A = adjacency_of(sample.subjects[0])
    k = 8 * 3  # 08:10 falls in the 25th twenty-minute bin
    assert A[k, 0, 2] == 1.0 and A[k, 2, 0] == 1.0
    assert A.sum() == 2.0
    assert reader.summary()["days"] == ["2017-03-01"]


def test_grid_uses_bin_midpoints(tmp_path):
    events = write_events(tmp_path / "events.csv", [])
    reader = EventRecordReader(events, NODES, bin_minutes=360)
    assert np.allclose(reader.grid().points, [0.125, 0.375, 0.625, 0.875])


def test_no_events_in_date_range_gives_empty_graphs(tmp_path):
    events = write_events(tmp_path / "events.csv", [])
    reader = EventRecordReader(events, NODES, start_date="2017-03-01", end_date="2017-03-03")
    sample = reader.load_sample()
    assert sample.n == 3
    assert np.array_equal(sample.subjects, np.zeros_like(sample.subjects))


def test_no_events_without_range_is_insufficient(tmp_path):
    events = write_events(tmp_path / "events.csv", [])
    with pytest.raises(InsufficientSampleError):
        EventRecordReader(events, NODES).load_sample()


def test_counts_match_a_direct_tally(tmp_path):
    rng = np.random.default_rng(17)
    rows, expected = [], Counter()
    for _ in range(1000):
        day = int(rng.integers(1, 4))
        minute = int(rng.integers(0, 1440))
        u, v = rng.choice(len(NODES), size=2, replace=False)
        rows.append((f"2017-03-0{day} {minute // 60:02d}:{minute % 60:02d}:00", NODES[u], NODES[v]))
        expected[(day - 1, minute // 30, min(u, v), max(u, v))] += 1
    events = write_events(tmp_path / "events.csv", rows)
    sample = EventRecordReader(events, NODES, bin_minutes=30).load_sample()
    A = adjacency_of(sample.subjects)
    for (d, k, u, v), count in expected.items():
        assert A[d, k, u, v] == count and A[d, k, v, u] == count
    assert A.sum() == 2 * 1000


def test_skipped_records_are_counted(tmp_path, warnings_handler):
    rows = [
        ("2017-03-01 00:00:00", "A", "B"),
        ("2017-03-01 00:05:00", "A", "Z"),
        ("2017-03-01 00:06:00", "C", "C"),
        ("2017-03-05 00:06:00", "C", "D"),
    ]
    events = write_events(tmp_path / "events.csv", rows)
    reader = EventRecordReader(events, NODES, start_date="2017-03-01", end_date="2017-03-02")
    sample = reader.load_sample()
    assert adjacency_of(sample.subjects).sum() == 2.0
    summary = reader.summary()
    assert summary["skipped"] == {"unknown_node": 1, "self_loop": 1, "out_of_range": 1}
    assert summary["unknown_nodes"] == ["Z"]
    assert any("unknown node ids" in w for w in warnings_handler.log_records)


def test_custom_columns_and_timezones(tmp_path):
    rows = [("2017-03-01T23:50:00+05:00", "B", "D")]
    events = write_events(tmp_path / "events.csv", rows, header="when,src,dst")
    reader = EventRecordReader(events, NODES, timestamp_column="when", origin_column="src", destination_column="dst")
    A = adjacency_of(reader.load_sample().subjects[0])
    assert A[-1, 1, 3] == 1.0, "wall-clock time is used as written"


def test_bad_timestamp_reports_line(tmp_path):
    rows = [("2017-03-01 00:00:00", "A", "B"), ("yesterday-ish", "A", "B")]
    events = write_events(tmp_path / "events.csv", rows)
    with pytest.raises(DataFileError) as info:
        EventRecordReader(events, NODES).load_sample()
    assert info.value.line == 3


def test_missing_column(tmp_path):
    events = write_events(tmp_path / "events.csv", [("2017-03-01", "A")], header="timestamp,origin")
    with pytest.raises(DataFileError):
        EventRecordReader(events, NODES).load_records()


def test_reader_validation(tmp_path):
    with pytest.raises(ConfigError):
        EventRecordReader("events.csv", [])
    with pytest.raises(ConfigError):
        EventRecordReader("events.csv", ["A", "A"])
    with pytest.raises(ConfigError):
        EventRecordReader("events.csv", NODES, bin_minutes=7)
    with pytest.raises(ConfigError):
        EventRecordReader("events.csv", NODES, start_date="not a date")
