"""EventRecordReader class for turning trip/event records into daily Laplacian trajectories."""

import logging
from collections import Counter
from datetime import date, datetime, timedelta
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from dateutil import parser as date_parser

from robust_fpca.config import DefaultIngest
from robust_fpca.errors import ConfigError, DataFileError, InsufficientSampleError
from robust_fpca.metric_core import LaplacianSpace, graph_laplacian
from robust_fpca.trajectory import ObjectTrajectorySample, TimeGrid

MINUTES_PER_DAY = 24 * 60


class EventRecordReader:
    """Reader for a CSV of (timestamp, origin, destination) event records."""

    def __init__(
        self,
        events: str,
        nodes: List[str],
        bin_minutes: int = DefaultIngest.BIN_MINUTES,
        start_date: Optional[str] = None,
        end_date: Optional[str] = None,
        timestamp_column: str = DefaultIngest.TIMESTAMP_COLUMN,
        origin_column: str = DefaultIngest.ORIGIN_COLUMN,
        destination_column: str = DefaultIngest.DESTINATION_COLUMN,
    ) -> None:
        """Initialize the reader.

        Each calendar day becomes one subject; the day is split into bins of
        ``bin_minutes`` and every bin yields the Laplacian of the undirected
        event-count network among ``nodes``.

        Args:
        events (str): path to the events CSV file.
        nodes (List[str]): the fixed node universe; events touching any other
            node id are skipped and counted.
        bin_minutes (int): bin width, must divide a day evenly. Defaults to 20.
        start_date (Optional[str]): first day to include; defaults to the day
            of the earliest event.
        end_date (Optional[str]): last day to include (inclusive); defaults to
            the day of the latest event.
        timestamp_column (str): name of the timestamp column.
        origin_column (str): name of the origin node column.
        destination_column (str): name of the destination node column.
        """
        if not nodes:
            raise ConfigError("the node list must not be empty", key="ingest.nodes")
        if len(set(nodes)) != len(nodes):
            raise ConfigError("the node list contains duplicates", key="ingest.nodes")
        if bin_minutes < 1 or MINUTES_PER_DAY % bin_minutes:
            raise ConfigError(f"bin_minutes must divide {MINUTES_PER_DAY}, got {bin_minutes}",
                              key="ingest.bin_minutes")

        self.events = events
        self.nodes = [str(node) for node in nodes]
        self.bin_minutes = bin_minutes
        self.start_date = self._parse_day(start_date, "ingest.start_date")
        self.end_date = self._parse_day(end_date, "ingest.end_date")
        self.timestamp_column = timestamp_column
        self.origin_column = origin_column
        self.destination_column = destination_column

        self.node_index = {node: i for i, node in enumerate(self.nodes)}
        self.skipped = Counter()
        self.unknown_nodes = set()
        self.days: List[date] = []

    @staticmethod
    def _parse_day(value, key) -> Optional[date]:
        if value is None:
            return None
        if isinstance(value, date):
            return value if not isinstance(value, datetime) else value.date()
        try:
            return date_parser.parse(str(value)).date()
        except (ValueError, OverflowError) as e:
            raise ConfigError(f"'{key}' is not a date: {value!r}", key=key) from e

    @property
    def bins_per_day(self) -> int:
        return MINUTES_PER_DAY // self.bin_minutes

    def grid(self) -> TimeGrid:
        """Bin midpoints as fractions of the day."""
        K = self.bins_per_day
        return TimeGrid((np.arange(K) + 0.5) / K)

    def load_records(self) -> pd.DataFrame:
        """Read the CSV and parse timestamps; columns ``timestamp, origin, destination``."""
        columns = [self.timestamp_column, self.origin_column, self.destination_column]
        try:
            frame = pd.read_csv(self.events, dtype=str, keep_default_na=False)
        except OSError as e:
            raise DataFileError(f"cannot read: {e}", path=self.events) from e
        except pd.errors.EmptyDataError:
            frame = pd.DataFrame(columns=columns)
        except pd.errors.ParserError as e:
            raise DataFileError(f"malformed CSV: {e}", path=self.events) from e

        missing = [c for c in columns if c not in frame.columns]
        if missing:
            raise DataFileError(f"missing columns {missing}", path=self.events, line=1)

        timestamps = []
        for row, value in enumerate(frame[self.timestamp_column]):
            try:
                timestamps.append(date_parser.parse(value).replace(tzinfo=None))
            except (ValueError, OverflowError) as e:
                raise DataFileError(f"cannot parse timestamp {value!r}", path=self.events, line=row + 2) from e
        return pd.DataFrame({
            "timestamp": pd.Series(timestamps, dtype="datetime64[ns]"),
            "origin": frame[self.origin_column].str.strip(),
            "destination": frame[self.destination_column].str.strip(),
        })

    def _day_range(self, records: pd.DataFrame) -> List[date]:
        start, end = self.start_date, self.end_date
        if records.empty and (start is None or end is None):
            raise InsufficientSampleError("no event records and no date range to build days from")
        if start is None:
            start = records["timestamp"].min().date()
        if end is None:
            end = records["timestamp"].max().date()
        if end < start:
            raise ConfigError(f"end_date {end} precedes start_date {start}", key="ingest.end_date")
        return [start + timedelta(days=d) for d in range((end - start).days + 1)]

    def tally(self, records: pd.DataFrame) -> np.ndarray:
        """Symmetric event counts, shape (days, bins, p, p)."""
        self.skipped = Counter()
        self.unknown_nodes = set()
        self.days = self._day_range(records)
        p = len(self.nodes)
        counts = np.zeros((len(self.days), self.bins_per_day, p, p))
        first_day = self.days[0]

        origin = records["origin"].map(self.node_index)
        destination = records["destination"].map(self.node_index)
        unknown = origin.isna() | destination.isna()
        if unknown.any():
            for column, mapped in (("origin", origin), ("destination", destination)):
                self.unknown_nodes.update(records.loc[mapped.isna(), column])
            self.skipped["unknown_node"] = int(unknown.sum())

        self_loop = ~unknown & (records["origin"] == records["destination"])
        self.skipped["self_loop"] = int(self_loop.sum())

        timestamps = records["timestamp"]
        day = np.array([(ts.date() - first_day).days for ts in timestamps], dtype=int)
        minutes = (timestamps.dt.hour * 60 + timestamps.dt.minute).to_numpy(dtype=int)
        out_of_range = (day < 0) | (day >= len(self.days))
        self.skipped["out_of_range"] = int((out_of_range & ~unknown.to_numpy() & ~self_loop.to_numpy()).sum())

        keep = ~(unknown.to_numpy() | self_loop.to_numpy() | out_of_range)
        u = origin.to_numpy()[keep].astype(int)
        v = destination.to_numpy()[keep].astype(int)
        d = day[keep]
        k = minutes[keep] // self.bin_minutes
        np.add.at(counts, (d, k, u, v), 1.0)
        np.add.at(counts, (d, k, v, u), 1.0)

        if sum(self.skipped.values()):
            logging.getLogger().warning(f"skipped event records: {dict(self.skipped)}")
        if self.unknown_nodes:
            logging.getLogger().warning(f"unknown node ids: {sorted(self.unknown_nodes)}")
        logging.getLogger().info(f"tallied {int(keep.sum())} events over {len(self.days)} days")
        return counts

    def load_sample(self) -> ObjectTrajectorySample:
        counts = self.tally(self.load_records())
        return ObjectTrajectorySample(LaplacianSpace(len(self.nodes)), self.grid(), graph_laplacian(counts))

    def summary(self) -> Dict[str, object]:
        return {
            "days": [d.isoformat() for d in self.days],
            "skipped": dict(self.skipped),
            "unknown_nodes": sorted(self.unknown_nodes),
        }
