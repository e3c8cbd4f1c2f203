import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from gaitphase.errors import (
    CalibrationFailedError,
    DegenerateCalibrationError,
    InsufficientStridesError,
    InvalidCalibrationError,
    UndefinedPhaseError,
)
from gaitphase.signals import DEFAULT_THRESHOLD, Stride
from gaitphase.utils import circular_pct_error

logger = logging.getLogger(__name__)

MIN_CALIBRATION_STRIDES = 3
MAP_KNOTS = 101
# separation enforced between equal knots after monotonic repair
KNOT_EPSILON_DEG = 1e-6
# largest gait-% span monotonic repair may flatten before calibration is rejected
MAX_REPAIR_SPAN_PCT = 10.0
# pooled blocks whose phase rises less than this are jitter, not a reversal
REVERSAL_TOLERANCE_DEG = 5.0
# per-sample phase jumps above this are wrap events, not motion
MAX_PHASE_STEP_DEG = 90.0
# unwrapped phase this close to the last knot reads as 100 %
ENDPOINT_TOLERANCE_DEG = 1e-9


@dataclass(frozen=True)
class PhaseCalibration:
    """Critical-point-centering constants: ``Theta = theta - x0``, ``Theta_dot = k (theta_dot - y0)``."""

    x0: float
    y0: float
    k: float

    def __post_init__(self):
        if not (math.isfinite(self.x0) and math.isfinite(self.y0)):
            raise InvalidCalibrationError(f"x0 and y0 must be finite, got {self.x0}, {self.y0}")
        if not (math.isfinite(self.k) and self.k > 0):
            raise InvalidCalibrationError(f"k must be positive, got {self.k}")


@dataclass(frozen=True, eq=False)
class PhaseMap:
    """
    Monotonic map from phase variable to gait percentage.

    ``phi`` is unwrapped and strictly decreasing (the portrait runs clockwise), ``s``
    strictly increasing from 0 to 100.
    """

    phi: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=float)
        s = np.asarray(self.s, dtype=float)
        if phi.shape != s.shape or phi.ndim != 1 or len(phi) < 2:
            raise InvalidCalibrationError(
                f"phase map needs two equal-length knot arrays, got {phi.shape} and {s.shape}"
            )
        if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(s))):
            raise InvalidCalibrationError("phase map knots must be finite")
        if not np.all(np.diff(phi) < 0):
            raise InvalidCalibrationError("phase map phi knots must be strictly decreasing")
        if not np.all(np.diff(s) > 0) or s[0] != 0.0 or s[-1] != 100.0:
            raise InvalidCalibrationError("phase map s knots must increase strictly from 0 to 100")
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "s", s)

    def __eq__(self, other):
        return (
            isinstance(other, PhaseMap)
            and np.array_equal(self.phi, other.phi)
            and np.array_equal(self.s, other.s)
        )

    def __len__(self):
        return len(self.s)

    @property
    def span(self) -> float:
        return float(self.phi[0] - self.phi[-1])

    @property
    def phi_heel_strike(self) -> float:
        """Wrapped phase at 0 % gait."""
        return float(np.mod(self.phi[0], 360.0))


def scale_shift(theta, theta_dot, cal: PhaseCalibration):
    return theta - cal.x0, cal.k * (theta_dot - cal.y0)


def phase_variable(Theta: float, Theta_dot: float) -> float:
    """
    Angle of the calibrated portrait point in degrees, in [0, 360).

    Heel strike sits in the bottom-right quadrant (Theta > 0, Theta_dot < 0), which
    maps into (270, 360).
    """
    if Theta == 0.0 and Theta_dot == 0.0:
        raise UndefinedPhaseError("phase is undefined at the portrait origin")
    phi = math.degrees(math.atan2(Theta_dot, Theta)) % 360.0
    # -0.0 and values that round up to 360
    return 0.0 if phi >= 360.0 else phi + 0.0


def phase_variables(Theta: np.ndarray, Theta_dot: np.ndarray) -> np.ndarray:
    """Vectorised ``phase_variable``; origin samples come back as NaN."""
    Theta = np.asarray(Theta, dtype=float)
    Theta_dot = np.asarray(Theta_dot, dtype=float)
    phi = np.mod(np.degrees(np.arctan2(Theta_dot, Theta)), 360.0)
    phi[phi >= 360.0] = 0.0
    phi[(Theta == 0.0) & (Theta_dot == 0.0)] = np.nan
    return phi


def winding_number(Theta: np.ndarray, Theta_dot: np.ndarray) -> float:
    """
    Signed number of turns the closed portrait makes around the origin.

    Counter-clockwise is positive, so one walking stride gives -1.
    """
    phi = np.radians(phase_variables(Theta, Theta_dot))
    phi = phi[np.isfinite(phi)]
    if len(phi) < 2:
        return 0.0
    closed = np.append(phi, phi[0])
    steps = np.angle(np.exp(1j * np.diff(closed)))
    return float(np.sum(steps) / (2 * np.pi))


def _average_stride(strides: Sequence[Stride], columns: Sequence[str]) -> Dict[str, np.ndarray]:
    """Mean of each column over strides, resampled on the gait-% grid of the longest stride."""
    n = max(len(stride) for stride in strides)
    grid = 100.0 * np.arange(n) / n
    return {
        name: np.mean([np.interp(grid, stride.pct, stride.column(name)) for stride in strides], axis=0)
        for name in columns
    }


def calibrate_cpc(
    strides: Sequence[Stride],
    threshold: float = DEFAULT_THRESHOLD,
    min_strides: int = MIN_CALIBRATION_STRIDES,
) -> PhaseCalibration:
    """
    Critical-point-centering calibration on the averaged stride.

    Strides without stance (heel pressure at or above ``threshold``) are skipped. The
    critical point is the tibia angle at the signed maximum of the averaged tibia
    angular velocity over averaged stance; it gives ``x0``. ``y0`` centres the velocity
    extrema of the averaged stride and ``k`` equalises its angle and velocity ranges.
    """
    usable = []
    for i, stride in enumerate(strides):
        if not np.any(stride.column("p_heel") >= threshold):
            logger.warning(f"stride {i} has no stance samples, skipped for calibration")
            continue
        usable.append(stride)

    if len(usable) < min_strides:
        raise InsufficientStridesError(
            f"insufficient strides: need at least {min_strides} with stance, got {len(usable)}"
        )

    mean = _average_stride(usable, ("theta_tib", "theta_dot_tib", "p_heel"))
    theta, vel = mean["theta_tib"], mean["theta_dot_tib"]
    stance = np.flatnonzero(mean["p_heel"] >= threshold)
    if len(stance) == 0:
        raise DegenerateCalibrationError("averaged stride has no stance samples")

    vel_range = vel.max() - vel.min()
    if not (np.isfinite(vel_range) and vel_range > 0):
        raise DegenerateCalibrationError(f"tibia velocity range is {vel_range}")
    theta_range = theta.max() - theta.min()
    if not theta_range > 0:
        raise DegenerateCalibrationError(f"tibia angle range is {theta_range}")

    cp = stance[np.argmax(vel[stance])]
    cal = PhaseCalibration(
        x0=float(theta[cp]),
        y0=float((vel.max() + vel.min()) / 2.0),
        k=float(theta_range / vel_range),
    )
    logger.info(
        f"CPC calibration from {len(usable)} strides: x0={cal.x0:.4f} y0={cal.y0:.4f} k={cal.k:.6f}"
    )
    return cal


def pool_adjacent_violators(y: np.ndarray) -> Tuple[np.ndarray, List[Tuple[int, int]]]:
    """
    Least-squares non-increasing fit of ``y``.

    Returns the fitted values and the ``(first, last)`` index range of every pooled
    block longer than one sample.
    """
    values: List[float] = []
    weights: List[int] = []
    starts: List[int] = []
    for i, v in enumerate(np.asarray(y, dtype=float)):
        values.append(v)
        weights.append(1)
        starts.append(i)
        while len(values) > 1 and values[-2] < values[-1]:
            w = weights[-2] + weights[-1]
            v = (values[-2] * weights[-2] + values[-1] * weights[-1]) / w
            values[-2:] = [v]
            weights[-2:] = [w]
            starts.pop()
    fitted = np.repeat(values, weights)
    blocks = [(st, st + w - 1) for st, w in zip(starts, weights) if w > 1]
    return fitted, blocks


def reversal_depth(phi: np.ndarray) -> float:
    """Largest rise of ``phi`` over any earlier value; 0 for a non-increasing curve."""
    phi = np.asarray(phi, dtype=float)
    if len(phi) == 0:
        return 0.0
    return float(np.max(phi - np.minimum.accumulate(phi)))


def _stride_phase_curve(stride: Stride, cal: PhaseCalibration, grid: np.ndarray, anchor: Optional[float]) -> np.ndarray:
    Theta, Theta_dot = scale_shift(stride.column("theta_tib"), stride.column("theta_dot_tib"), cal)
    phi = phase_variables(Theta, Theta_dot)
    keep = np.isfinite(phi)
    phi = np.unwrap(phi[keep], period=360.0)
    pct = stride.pct[keep]
    if anchor is not None:
        phi = phi + 360.0 * np.round((anchor - phi[0]) / 360.0)
    # the next heel strike closes the loop one clockwise turn later
    pct = np.append(pct, 100.0)
    phi = np.append(phi, phi[0] - 360.0)
    return np.interp(grid, pct, phi)


def build_phase_map(
    strides: Sequence[Stride],
    cal: PhaseCalibration,
    n_knots: int = MAP_KNOTS,
    max_repair_pct: float = MAX_REPAIR_SPAN_PCT,
) -> PhaseMap:
    """
    Average the unwrapped phase of every stride on a uniform gait-percentage grid and
    repair it into a strictly decreasing, invertible map.
    """
    if not strides:
        raise InsufficientStridesError("insufficient strides: no strides to build a phase map from")
    grid = np.linspace(0.0, 100.0, n_knots)
    curves = []
    anchor = None
    for stride in strides:
        curve = _stride_phase_curve(stride, cal, grid, anchor)
        if anchor is None:
            anchor = curve[0]
        curves.append(curve)
    mean_phi = np.mean(curves, axis=0)

    fitted, blocks = pool_adjacent_violators(mean_phi)
    for first, last in blocks:
        span = grid[last] - grid[first]
        if span > max_repair_pct and reversal_depth(mean_phi[first : last + 1]) > REVERSAL_TOLERANCE_DEG:
            raise CalibrationFailedError(
                f"phase map is non-monotonic over {span:.1f}% of gait "
                f"from {grid[first]:.0f}% (limit {max_repair_pct}%)"
            )
    if blocks:
        repaired_pct = sum(grid[last] - grid[first] for first, last in blocks)
        logger.warning(f"phase map repaired over {repaired_pct:.1f}% of gait in {len(blocks)} blocks")

    phi = fitted.copy()
    for i in range(1, len(phi)):
        phi[i] = min(phi[i], phi[i - 1] - KNOT_EPSILON_DEG)

    phase_map = PhaseMap(phi=phi, s=grid)
    logger.info(
        f"phase map from {len(curves)} strides: phi_hs={phase_map.phi_heel_strike:.2f} span={phase_map.span:.2f}"
    )
    return phase_map


def gait_pct_from_progress(phase_map: PhaseMap, progress: float) -> float:
    """
    Gait percentage for ``progress`` degrees of clockwise phase past the heel-strike
    knot, clamped to 0 before the map and 100 past its end.
    """
    s = float(np.interp(progress, phase_map.phi[0] - phase_map.phi, phase_map.s))
    return min(100.0, max(0.0, s))


def estimate_gait_pct(phase_map: PhaseMap, phi: float, prev_estimate: float) -> float:
    """
    Gait percentage for a wrapped phase ``phi``.

    Phase is measured as clockwise progress from the heel-strike knot. The last knot
    gives 100. Progress that lands past the end of a map spanning less than a full
    turn holds 100 late in the stride and 0 early in it.
    """
    delta = phase_map.phi[0] - phi
    if math.isclose(delta, phase_map.span, rel_tol=0.0, abs_tol=ENDPOINT_TOLERANCE_DEG):
        return 100.0
    progress = delta % 360.0
    if progress > phase_map.span:
        return 100.0 if prev_estimate >= 50.0 else 0.0
    return gait_pct_from_progress(phase_map, progress)


class PhaseEstimator:
    """
    Runtime phase variable and gait-percentage estimation for one control loop.

    ``progress`` accumulates clockwise phase since the last heel strike, so small
    backward steps clamp the estimate instead of wrapping it. It resets when it
    completes a turn and re-anchors on wrapped phase after a jump.
    """

    def __init__(self, cal: PhaseCalibration, phase_map: PhaseMap):
        self.cal = cal
        self.phase_map = phase_map
        self.progress: Optional[float] = None
        self._phi: Optional[float] = None
        self._s = 0.0

    def __repr__(self):
        return f"PhaseEstimator(phi={self._phi}, progress={self.progress}, s={self._s:.2f})"

    def _anchor(self, phi: float) -> float:
        return (self.phase_map.phi[0] - phi) % 360.0

    def update(self, theta_tib: float, theta_dot_tib: float) -> Tuple[float, float]:
        Theta, Theta_dot = scale_shift(theta_tib, theta_dot_tib, self.cal)
        try:
            phi = phase_variable(Theta, Theta_dot)
        except UndefinedPhaseError:
            logger.debug("portrait origin reached, holding previous estimate")
            return (self._phi if self._phi is not None else self.phase_map.phi_heel_strike), self._s

        if self._phi is None:
            self.progress = self._anchor(phi)
        else:
            step = (self._phi - phi + 180.0) % 360.0 - 180.0
            if abs(step) > MAX_PHASE_STEP_DEG:
                logger.debug(f"phase jump of {step:.1f} deg, re-anchoring")
                self.progress = self._anchor(phi)
            else:
                # the running sum only picks the turn; the value comes from wrapped phase
                wrapped = self._anchor(phi)
                self.progress = wrapped + 360.0 * round((self.progress + step - wrapped) / 360.0)
                if self.progress >= 360.0:
                    self.progress -= 360.0
                elif self.progress < -180.0:
                    self.progress += 360.0

        s = gait_pct_from_progress(self.phase_map, self.progress)
        self._phi, self._s = phi, s
        return phi, s


def phase_map_slope(phase_map: PhaseMap) -> np.ndarray:
    """Gait percentage gained per degree of phase at every knot."""
    return np.abs(np.gradient(phase_map.s, phase_map.phi))


def map_hotspots(phase_map: PhaseMap, n: int = 3) -> List[Tuple[float, float]]:
    """
    The ``n`` gait percentages where the map is flattest in phase, as ``(s, slope)``
    with the steepest first. Estimation error concentrates there.
    """
    slope = phase_map_slope(phase_map)
    order = np.argsort(-slope, kind="stable")[:n]
    return [(float(phase_map.s[i]), float(slope[i])) for i in order]


def estimation_errors(s_est, s_true) -> np.ndarray:
    return circular_pct_error(s_est, s_true)


def replay_estimates(stream, cal: PhaseCalibration, phase_map: PhaseMap) -> np.ndarray:
    """Run a fresh ``PhaseEstimator`` over conditioned frames and return every estimate."""
    estimator = PhaseEstimator(cal, phase_map)
    return np.array([estimator.update(f.theta_tib, f.theta_dot_tib)[1] for f in stream])
