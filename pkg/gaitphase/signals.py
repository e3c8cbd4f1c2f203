import logging
import math
from collections import deque
from dataclasses import astuple, dataclass, fields, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import polars as pl
import smart_open

from gaitphase.errors import (
    DataError,
    DegenerateStrideError,
    InvalidParameterError,
    SignalFaultError,
)

logger = logging.getLogger(__name__)

DEFAULT_RATE_HZ = 220.0
DEFAULT_THRESHOLD = 0.5
DEFAULT_REFRACTORY_S = 0.3

# moving-average windows (ms) for rectified EMG, pressure and tibia velocity
EMG_WINDOW_MS = 300.0
PRESSURE_WINDOW_MS = 60.0
VELOCITY_WINDOW_MS = 70.0

FRAME_COLUMNS = [
    "t",
    "theta_tib",
    "theta_dot_tib",
    "p_heel",
    "p_toe",
    "emg_gas",
    "emg_ta",
    "theta_ankle",
    "theta_dot_ankle",
]


@dataclass(frozen=True)
class SensorFrame:
    """
    One 220 Hz sample.

    Angles are degrees, velocities degrees/second, pressures normalized to [0, 1] and
    EMG in volts. The tibia angle is the global sagittal angle against gravity
    vertical; the ankle angle is dorsiflexion-positive.
    """

    t: float
    theta_tib: float
    theta_dot_tib: float
    p_heel: float
    p_toe: float
    emg_gas: float
    emg_ta: float
    theta_ankle: float
    theta_dot_ankle: float

    def check_finite(self) -> None:
        for f in fields(self):
            value = getattr(self, f.name)
            if not math.isfinite(value):
                raise SignalFaultError(f.name, value)


@dataclass
class Stride:
    """
    Frames between two consecutive heel strikes, with the ground-truth gait
    percentage of every frame.
    """

    frames: List[SensorFrame]
    t_start: float
    t_end: float
    pct: np.ndarray

    def __len__(self):
        return len(self.frames)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(f, name) for f in self.frames], dtype=float)


class MovingAverageState:
    """
    Streaming moving-average filter over a ring buffer with a running sum.

    Until the window has filled, the output is the mean of the samples seen so far.
    """

    def __init__(self, window_len: int):
        if window_len < 1:
            raise InvalidParameterError(f"window_len must be >= 1, got {window_len}")
        self.window_len = int(window_len)
        self._buffer = deque(maxlen=self.window_len)
        self._sum = 0.0
        self._steps = 0

    def __repr__(self):
        return f"MovingAverageState(window_len={self.window_len}, seen={len(self._buffer)})"

    @property
    def samples_seen(self) -> int:
        return self._steps

    def step(self, x: float) -> float:
        if not math.isfinite(x):
            raise SignalFaultError("filter input", x)
        if len(self._buffer) == self.window_len:
            self._sum -= self._buffer[0]
        self._buffer.append(x)
        self._sum += x
        self._steps += 1
        # resync the running sum once per window
        if self._steps % self.window_len == 0:
            self._sum = math.fsum(self._buffer)
        return self._sum / len(self._buffer)


def make_filter(window_ms: float, rate_hz: float) -> MovingAverageState:
    """
    Build a moving-average filter whose window spans ``window_ms`` at ``rate_hz``.

    The sample count is rounded half-to-even and never drops below one, so at 220 Hz
    the 300/60/70 ms windows hold 66/13/15 samples.
    """
    if not window_ms > 0 or not rate_hz > 0:
        raise InvalidParameterError(
            f"window_ms and rate_hz must be positive, got {window_ms}, {rate_hz}"
        )
    window_len = max(1, round(window_ms * rate_hz / 1000.0))
    return MovingAverageState(window_len)


def filter_step(state: MovingAverageState, x: float) -> float:
    return state.step(x)


def detect_heel_strike(prev_p: float, curr_p: float, threshold: float = DEFAULT_THRESHOLD) -> bool:
    """Rising edge of heel pressure through ``threshold``."""
    return prev_p < threshold <= curr_p


class HeelStrikeDetector:
    """
    Rising-edge heel-strike detection with a refractory lockout, so pressure ripple
    around the threshold cannot fire twice within ``refractory_s``.
    """

    def __init__(self, threshold: float = DEFAULT_THRESHOLD, refractory_s: float = DEFAULT_REFRACTORY_S):
        self.threshold = threshold
        self.refractory_s = refractory_s
        self._prev_p: Optional[float] = None
        self._last_strike: Optional[float] = None

    def update(self, t: float, p_heel: float) -> bool:
        prev = self._prev_p
        self._prev_p = p_heel
        if prev is None or not detect_heel_strike(prev, p_heel, self.threshold):
            return False
        if self._last_strike is not None and t - self._last_strike < self.refractory_s:
            logger.debug(f"heel strike at t={t:.4f} suppressed by refractory lockout")
            return False
        self._last_strike = t
        return True


def ground_truth_pct(t: float, t_hs: float, t_hs_next: float) -> float:
    duration = t_hs_next - t_hs
    if not duration > 0:
        raise DegenerateStrideError(
            f"stride from {t_hs} to {t_hs_next} has non-positive duration"
        )
    return 100.0 * (t - t_hs) / duration


def heel_strike_indices(
    stream: Sequence[SensorFrame],
    threshold: float = DEFAULT_THRESHOLD,
    refractory_s: float = DEFAULT_REFRACTORY_S,
) -> List[int]:
    detector = HeelStrikeDetector(threshold, refractory_s)
    return [i for i, frame in enumerate(stream) if detector.update(frame.t, frame.p_heel)]


def segment_strides(
    stream: Sequence[SensorFrame],
    threshold: float = DEFAULT_THRESHOLD,
    refractory_s: float = DEFAULT_REFRACTORY_S,
) -> List[Stride]:
    """
    Split a time-ordered stream into strides between consecutive heel strikes.

    Data before the first and after the last heel strike is discarded. Fewer than two
    strikes yields an empty list.
    """
    strikes = heel_strike_indices(stream, threshold, refractory_s)
    strides = []
    for start, end in zip(strikes[:-1], strikes[1:]):
        frames = list(stream[start:end])
        t_start, t_end = stream[start].t, stream[end].t
        pct = np.array([ground_truth_pct(f.t, t_start, t_end) for f in frames])
        strides.append(Stride(frames=frames, t_start=t_start, t_end=t_end, pct=pct))
    logger.debug(f"found {len(strikes)} heel strikes, {len(strides)} complete strides")
    return strides


def stride_labels(stream: Sequence[SensorFrame], strides: Sequence[Stride]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Per-frame stride index (-1 outside complete strides) and ground-truth percentage
    (NaN outside complete strides) aligned with ``stream``.
    """
    index = np.full(len(stream), -1, dtype=np.int64)
    pct = np.full(len(stream), np.nan)
    t = np.array([f.t for f in stream])
    for i, stride in enumerate(strides):
        lo = int(np.searchsorted(t, stride.t_start, side="left"))
        index[lo : lo + len(stride)] = i
        pct[lo : lo + len(stride)] = stride.pct
    return index, pct


class SignalConditioner:
    """
    Per-channel streaming conditioning: EMG is rectified and averaged over 300 ms,
    pressure over 60 ms and tibia angular velocity over 70 ms. Tibia angle and ankle
    channels pass through unchanged.
    """

    def __init__(
        self,
        rate_hz: float = DEFAULT_RATE_HZ,
        emg_ms: float = EMG_WINDOW_MS,
        pressure_ms: float = PRESSURE_WINDOW_MS,
        velocity_ms: float = VELOCITY_WINDOW_MS,
    ):
        self.rate_hz = rate_hz
        self._filters: Dict[str, MovingAverageState] = {
            "theta_dot_tib": make_filter(velocity_ms, rate_hz),
            "p_heel": make_filter(pressure_ms, rate_hz),
            "p_toe": make_filter(pressure_ms, rate_hz),
            "emg_gas": make_filter(emg_ms, rate_hz),
            "emg_ta": make_filter(emg_ms, rate_hz),
        }

    def condition(self, frame: SensorFrame) -> SensorFrame:
        # reject before touching any filter so a faulted frame leaves no trace
        frame.check_finite()
        return replace(
            frame,
            theta_dot_tib=self._filters["theta_dot_tib"].step(frame.theta_dot_tib),
            p_heel=self._filters["p_heel"].step(frame.p_heel),
            p_toe=self._filters["p_toe"].step(frame.p_toe),
            emg_gas=self._filters["emg_gas"].step(abs(frame.emg_gas)),
            emg_ta=self._filters["emg_ta"].step(abs(frame.emg_ta)),
        )


def condition_stream(frames: Iterable[SensorFrame], conditioner: Optional[SignalConditioner] = None) -> List[SensorFrame]:
    conditioner = conditioner or SignalConditioner()
    return [conditioner.condition(f) for f in frames]


def frames_to_columns(frames: Sequence[SensorFrame]) -> Dict[str, np.ndarray]:
    if not frames:
        return {name: np.empty(0) for name in FRAME_COLUMNS}
    matrix = np.array([astuple(f) for f in frames], dtype=float)
    return {name: matrix[:, i] for i, name in enumerate(FRAME_COLUMNS)}


def frames_to_dataframe(frames: Sequence[SensorFrame]) -> pl.DataFrame:
    return pl.DataFrame(frames_to_columns(frames))


def read_frames_csv(path: str) -> List[SensorFrame]:
    """
    Read a sensor CSV with the header
    ``t,theta_tib,theta_dot_tib,p_heel,p_toe,emg_gas,emg_ta,theta_ankle,theta_dot_ankle``.
    """
    try:
        with smart_open.open(path, "rb") as f:
            df = pl.read_csv(f)
    except (OSError, pl.exceptions.PolarsError) as e:
        raise DataError(f"cannot read sensor CSV {path}: {e}") from e
    if df.columns != FRAME_COLUMNS:
        raise DataError(f"sensor CSV {path} has columns {df.columns}, expected {FRAME_COLUMNS}")
    try:
        df = df.cast(pl.Float64)
    except pl.exceptions.PolarsError as e:
        raise DataError(f"sensor CSV {path} has non-numeric values: {e}") from e
    t = df["t"].to_numpy()
    if len(t) > 1 and not np.all(np.diff(t) > 0):
        raise DataError(f"sensor CSV {path} timestamps are not strictly increasing")
    logger.info(f"read {len(df)} frames from {path}")
    return [SensorFrame(*row) for row in df.iter_rows()]


def write_frames_csv(frames: Sequence[SensorFrame], path: str) -> None:
    with smart_open.open(path, "w") as f:
        frames_to_dataframe(frames).write_csv(f)
    logger.info(f"wrote {len(frames)} frames to {path}")


def read_mvic_csv(path: str) -> Tuple[np.ndarray, np.ndarray]:
    """Read one maximum-voluntary-contraction trial stored as ``t,emg``."""
    try:
        with smart_open.open(path, "rb") as f:
            df = pl.read_csv(f)
    except (OSError, pl.exceptions.PolarsError) as e:
        raise DataError(f"cannot read MVIC CSV {path}: {e}") from e
    if df.columns != ["t", "emg"]:
        raise DataError(f"MVIC CSV {path} has columns {df.columns}, expected ['t', 'emg']")
    df = df.cast(pl.Float64)
    return df["t"].to_numpy(), df["emg"].to_numpy()


def peak_filtered_emg(emg: np.ndarray, rate_hz: float = DEFAULT_RATE_HZ, window_ms: float = EMG_WINDOW_MS) -> float:
    """Peak of the rectified, moving-average filtered EMG of one trial."""
    state = make_filter(window_ms, rate_hz)
    peak = 0.0
    for x in np.abs(np.asarray(emg, dtype=float)):
        peak = max(peak, state.step(float(x)))
    return peak
