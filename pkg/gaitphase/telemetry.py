import logging
import os
import queue
from dataclasses import asdict
from typing import Dict, List, Optional, Sequence, Text

import numpy as np
import polars as pl
import smart_open

from gaitphase.control import TorqueCommand
from gaitphase.errors import DataError
from gaitphase.impedance import ankle_power, to_absolute
from gaitphase.signals import (
    DEFAULT_RATE_HZ,
    DEFAULT_THRESHOLD,
    SensorFrame,
    SignalConditioner,
    condition_stream,
    segment_strides,
    stride_labels,
)

logger = logging.getLogger(__name__)

TELEMETRY_SCHEMA = {
    "t": pl.Float64,
    "theta_ankle": pl.Float64,
    "theta_dot_ankle": pl.Float64,
    "tau_total": pl.Float64,
    "tau_pvic": pl.Float64,
    "tau_vc": pl.Float64,
    "s_est": pl.Float64,
    "phi": pl.Float64,
    "theta_eq": pl.Float64,
    "K": pl.Float64,
    "B": pl.Float64,
    "u": pl.Float64,
    "u_p": pl.Float64,
    "u_d": pl.Float64,
    "clamped": pl.Boolean,
    "fault": pl.Boolean,
    "tau_abs": pl.Float64,
    "power": pl.Float64,
    "stride": pl.Int64,
    "s_true": pl.Float64,
}


class TableStore:
    """
    Named polars tables under one output directory, saved and loaded as CSV through
    smart_open.
    """

    def __init__(self, path: Text):
        self.path = path
        self.tables: Dict[Text, pl.DataFrame] = {}
        self._pending: Dict[Text, List[Dict]] = {}

    def list_tables(self) -> List[Text]:
        return list(self.tables.keys())

    def create_table(self, table_name: Text, schema: Optional[Dict] = None):
        self.tables[table_name] = pl.DataFrame(schema=schema or {})
        self._pending[table_name] = []
        logger.debug(f"Table {table_name} created.")

    def insert_data(self, table_name: Text, data: Dict) -> int:
        # rows are buffered and concatenated on the next read
        if table_name not in self.tables:
            raise DataError(f"Table {table_name} does not exist.")
        self._pending[table_name].append(data)
        return len(self.tables[table_name]) + len(self._pending[table_name]) - 1

    def put_table(self, table_name: Text, df: pl.DataFrame):
        self.tables[table_name] = df
        self._pending[table_name] = []

    def select_table(self, table_name: Text) -> pl.DataFrame:
        if table_name not in self.tables:
            raise DataError(f"Table {table_name} does not exist, available tables are {self.list_tables()}.")
        pending = self._pending.get(table_name)
        if pending:
            table = self.tables[table_name]
            new_rows = pl.DataFrame(pending, schema=table.schema if table.width else None)
            self.tables[table_name] = pl.concat([table, new_rows]) if len(table) else new_rows
            self._pending[table_name] = []
        return self.tables[table_name]

    def table_path(self, table_name: Text) -> Text:
        return f"{self.path.removesuffix('/')}/{table_name}.csv"

    def save_table(self, table_name: Text) -> Text:
        path = self.table_path(table_name)
        if "://" not in path:
            os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        with smart_open.open(path, "w") as f:
            self.select_table(table_name).write_csv(f)
        logger.info(f"Save table {table_name} to {path}.")
        return path

    def load_tables(self, table_names: Sequence[Text]):
        for table_name in table_names:
            self.put_table(table_name, read_table_csv(self.table_path(table_name)))
            logger.info(f"Table {table_name} loaded from {self.path}.")


def read_table_csv(path: Text, schema: Optional[Dict] = None) -> pl.DataFrame:
    try:
        with smart_open.open(path, "rb") as f:
            df = pl.read_csv(f)
    except (OSError, pl.exceptions.PolarsError) as e:
        raise DataError(f"cannot read {path}: {e}") from e
    if schema is not None:
        missing = [c for c in schema if c not in df.columns]
        if missing:
            raise DataError(f"{path} is missing columns {missing}")
        try:
            df = df.select([pl.col(c).cast(t) for c, t in schema.items()])
        except pl.exceptions.PolarsError as e:
            raise DataError(f"{path} has values of the wrong type: {e}") from e
    return df


def read_telemetry(path: Text) -> pl.DataFrame:
    return read_table_csv(path, TELEMETRY_SCHEMA)


def telemetry_row(frame: SensorFrame, command: TorqueCommand, body_mass: float) -> Dict:
    row = {"t": frame.t, "theta_ankle": frame.theta_ankle, "theta_dot_ankle": frame.theta_dot_ankle}
    row.update({k: v for k, v in asdict(command).items() if k != "t"})
    row["tau_abs"] = to_absolute(command.tau_total, body_mass)
    row["power"] = float(ankle_power(command.tau_total, frame.theta_dot_ankle))
    return row


class TelemetryRecorder:
    """
    Consumer side of the control loop's output queue.

    ``put`` takes ``(frame, command)`` pairs in step order; ``None`` marks the end of
    the run. ``finish`` labels every row with its ground-truth stride and gait
    percentage, found by segmenting the recorded pressure trace.
    """

    def __init__(
        self,
        store: TableStore,
        table_name: Text = "telemetry",
        body_mass: float = 70.0,
        rate_hz: float = DEFAULT_RATE_HZ,
        threshold: float = DEFAULT_THRESHOLD,
    ):
        self.store = store
        self.table_name = table_name
        self.body_mass = body_mass
        self.rate_hz = rate_hz
        self.threshold = threshold
        self.frames: List[SensorFrame] = []
        self.closed = False
        store.create_table(table_name)

    def put(self, item):
        if item is None:
            self.closed = True
            return
        frame, command = item
        self.frames.append(frame)
        self.store.insert_data(self.table_name, telemetry_row(frame, command, self.body_mass))

    def drain(self, source: "queue.Queue"):
        while True:
            item = source.get()
            self.put(item)
            if item is None:
                return

    def finish(self) -> pl.DataFrame:
        df = self.store.select_table(self.table_name)
        n = len(self.frames)
        stride = np.full(n, -1, dtype=np.int64)
        s_true = np.full(n, np.nan)
        if n:
            # frames with faults cannot be conditioned, segment the finite ones
            finite = [i for i, f in enumerate(self.frames) if np.all(np.isfinite(list(asdict(f).values())))]
            kept = [self.frames[i] for i in finite]
            conditioned = condition_stream(kept, SignalConditioner(self.rate_hz))
            strides = segment_strides(conditioned, self.threshold)
            idx, pct = stride_labels(conditioned, strides)
            stride[finite] = idx
            s_true[finite] = pct
        else:
            df = pl.DataFrame(schema=TELEMETRY_SCHEMA)
        df = df.with_columns(pl.Series("stride", stride), pl.Series("s_true", s_true))
        df = df.select([pl.col(c).cast(t) for c, t in TELEMETRY_SCHEMA.items()])
        self.store.put_table(self.table_name, df)
        logger.info(f"telemetry: {n} steps, {int(stride.max(initial=-1)) + 1} labelled strides")
        return df
