import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from functools import lru_cache
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.interpolate import CubicSpline

from gaitphase.errors import ConfigError, InvalidParameterError, SignalFaultError
from gaitphase.impedance import ReferenceTrajectories, reference_ankle
from gaitphase.signals import DEFAULT_RATE_HZ, PRESSURE_WINDOW_MS, SensorFrame

logger = logging.getLogger(__name__)

# tibia velocity shape over one stride, in stride fractions; the swing peak is solved
# so the velocity integrates to zero and the angle closes
_VELOCITY_KNOTS = np.array([0.0, 0.1, 0.3, 0.5, 0.62, 0.7, 0.8, 0.9, 0.95, 1.0])
_VELOCITY_VALUES = np.array([-0.6, -0.9, -0.4, -0.9, -0.7, 0.0, np.nan, 0.0, -0.4, -0.6])
_SWING_PEAK = 6


@dataclass(frozen=True)
class GaitSynthParams:
    """
    Synthetic walking. Burst tuples are ``(amplitude_volts, start_pct, end_pct)``.
    ``noise_frac`` scales per-channel Gaussian noise by that channel's range.
    """

    strides: int = 10
    stride_period: float = 1.4
    rate_hz: float = DEFAULT_RATE_HZ
    lead_in: float = 0.2
    tibia_amplitude: float = 24.0
    tibia_offset: float = 5.0
    stance_fraction: float = 0.62
    heel_off: float = 0.45
    toe_on: float = 0.08
    edge_width: float = 0.03
    ankle_scale: float = 1.0
    emg_baseline_gas: float = 0.02
    emg_baseline_ta: float = 0.02
    gas_burst: Optional[Tuple[float, float, float]] = None
    ta_burst: Optional[Tuple[float, float, float]] = None
    noise_frac: float = 0.0
    stride_amp_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.strides < 1:
            raise InvalidParameterError(f"strides must be >= 1, got {self.strides}")
        for name in ("stride_period", "rate_hz", "tibia_amplitude", "edge_width", "ankle_scale"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise InvalidParameterError(f"{name} must be positive, got {value}")
        if not 0.0 < self.stance_fraction < 1.0:
            raise InvalidParameterError(f"stance_fraction must be in (0, 1), got {self.stance_fraction}")
        if not 0.0 < self.heel_off < self.stance_fraction:
            raise InvalidParameterError("heel_off must lie inside stance")
        if not 0.0 <= self.toe_on < self.heel_off:
            raise InvalidParameterError("toe_on must precede heel_off")
        if not 0.0 <= self.lead_in < 1.0:
            raise InvalidParameterError(f"lead_in must be in [0, 1), got {self.lead_in}")
        for name in ("emg_baseline_gas", "emg_baseline_ta", "noise_frac", "stride_amp_std"):
            if getattr(self, name) < 0:
                raise InvalidParameterError(f"{name} must be non-negative")
        for name in ("gas_burst", "ta_burst"):
            burst = getattr(self, name)
            if burst is None:
                continue
            if len(burst) != 3:
                raise InvalidParameterError(f"{name} must be (amplitude, start_pct, end_pct)")
            amp, start, end = (float(b) for b in burst)
            if amp < 0 or not 0.0 <= start < end <= 100.0:
                raise InvalidParameterError(f"{name} {burst} is not a valid burst")
            object.__setattr__(self, name, (amp, start, end))

    @classmethod
    def from_dict(cls, data: Dict) -> "GaitSynthParams":
        data = dict(data)
        preset = data.pop("preset", None)
        if preset is not None and preset not in PRESETS:
            raise ConfigError(f"unknown synth preset {preset!r}")
        base = PRESETS[preset] if preset is not None else {}
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown synth parameters {sorted(unknown)}")
        merged = {**base, **data}
        for name in ("gas_burst", "ta_burst"):
            if merged.get(name) is not None:
                merged[name] = tuple(merged[name])
        return cls(**merged)

    def to_dict(self) -> Dict:
        return asdict(self)


PRESETS = {
    # baseline co-activation just under the decoder noise floor
    "low_intent": {"emg_baseline_gas": 0.04, "emg_baseline_ta": 0.04},
    "high_intent": {"gas_burst": (0.8, 40.0, 75.0)},
}


def low_intent(**overrides) -> GaitSynthParams:
    return GaitSynthParams(**{**PRESETS["low_intent"], **overrides})


def high_intent(**overrides) -> GaitSynthParams:
    return GaitSynthParams(**{**PRESETS["high_intent"], **overrides})


@lru_cache(maxsize=1)
def _tibia_template() -> Tuple[CubicSpline, CubicSpline, float, float]:
    values = _VELOCITY_VALUES.copy()
    values[_SWING_PEAK] = 0.0
    base = CubicSpline(_VELOCITY_KNOTS, values, bc_type="periodic")
    unit = np.zeros_like(values)
    unit[_SWING_PEAK] = 1.0
    bump = CubicSpline(_VELOCITY_KNOTS, unit, bc_type="periodic")
    values[_SWING_PEAK] = -base.integrate(0.0, 1.0) / bump.integrate(0.0, 1.0)
    velocity = CubicSpline(_VELOCITY_KNOTS, values, bc_type="periodic")
    angle = velocity.antiderivative()
    grid = np.linspace(0.0, 1.0, 2001)
    a = angle(grid)
    return velocity, angle, float((a.max() + a.min()) / 2.0), float((a.max() - a.min()) / 2.0)


def _raised_cosine_edge(x, width):
    """0 below ``-width/2``, 1 above ``width/2``, exactly 0.5 at 0."""
    x = np.clip(np.asarray(x, dtype=float) / width, -0.5, 0.5)
    return 0.5 * (1.0 + np.sin(np.pi * x))


def _pulse(s, on, off, width):
    """Periodic pressure pulse crossing 0.5 exactly at ``on`` and ``off``."""
    length = np.mod(off - on, 1.0)
    d = np.mod(s - on, 1.0)
    inside = np.minimum(_raised_cosine_edge(d, width), _raised_cosine_edge(length - d, width))
    # tails of the falling edge after ``off`` and of the rising edge before ``on``
    outside = np.maximum(_raised_cosine_edge(d - 1.0, width), _raised_cosine_edge(length - d, width))
    return np.where(d <= length, inside, outside)


def _burst(s, burst):
    if burst is None:
        return np.zeros_like(s)
    amp, start, end = burst
    a, b = start / 100.0, end / 100.0
    inside = (s >= a) & (s <= b)
    return np.where(inside, amp * 0.5 * (1.0 - np.cos(2.0 * np.pi * (s - a) / (b - a))), 0.0)


def pressure_lead(params: GaitSynthParams) -> float:
    """Group delay of the pressure moving average, in stride fractions."""
    window = max(1, round(PRESSURE_WINDOW_MS * params.rate_hz / 1000.0))
    return (window - 1) / 2.0 / (params.stride_period * params.rate_hz)


def synth_gait(params: GaitSynthParams, refs: Optional[ReferenceTrajectories] = None) -> List[SensorFrame]:
    """
    Generate a seeded 220 Hz sensor stream whose tibia portrait is a simple clockwise
    loop with heel strike in the bottom-right quadrant. The stream starts
    ``lead_in`` of a stride before the first heel strike.

    Pressure edges lead by the conditioning delay so conditioned heel strikes land on
    stride starts. The ankle follows the spline through the rows of ``refs`` (see
    :func:`gaitphase.impedance.reference_ankle`) scaled by ``ankle_scale``.
    """
    velocity, angle, center, half_range = _tibia_template()
    rng = np.random.default_rng(params.seed)
    period = params.stride_period
    n = int(round((params.strides + params.lead_in) * period * params.rate_hz))
    t = np.arange(n) / params.rate_hz
    cycle = t / period - params.lead_in
    s = np.mod(cycle, 1.0)

    scale = params.tibia_amplitude / half_range
    amp = np.ones(n)
    if params.stride_amp_std > 0:
        idx = np.arange(math.floor(cycle[0]), math.ceil(cycle[-1]) + 1)
        factors = 1.0 + params.stride_amp_std * rng.standard_normal(len(idx))
        amp = np.interp(cycle, idx, factors)
    theta_tib = params.tibia_offset + amp * scale * (angle(s) - center)
    theta_dot_tib = amp * scale * velocity(s) / period

    s_pressure = np.mod(s + pressure_lead(params), 1.0)
    p_heel = _pulse(s_pressure, 0.0, params.heel_off, params.edge_width)
    p_toe = _pulse(s_pressure, params.toe_on, params.stance_fraction, params.edge_width)
    emg_gas = params.emg_baseline_gas + _burst(s, params.gas_burst)
    emg_ta = params.emg_baseline_ta + _burst(s, params.ta_burst)

    ankle = reference_ankle(refs)
    theta_ankle = params.ankle_scale * ankle(s)
    theta_dot_ankle = params.ankle_scale * ankle(s, 1) / period

    channels = [theta_tib, theta_dot_tib, p_heel, p_toe, emg_gas, emg_ta, theta_ankle, theta_dot_ankle]
    if params.noise_frac > 0:
        channels = [c + params.noise_frac * np.ptp(c) * rng.standard_normal(n) for c in channels]
    theta_tib, theta_dot_tib, p_heel, p_toe, emg_gas, emg_ta, theta_ankle, theta_dot_ankle = channels
    p_heel, p_toe = np.clip(p_heel, 0.0, 1.0), np.clip(p_toe, 0.0, 1.0)
    emg_gas, emg_ta = np.maximum(emg_gas, 0.0), np.maximum(emg_ta, 0.0)

    rows = np.column_stack([t, theta_tib, theta_dot_tib, p_heel, p_toe, emg_gas, emg_ta, theta_ankle, theta_dot_ankle])
    logger.debug(f"synthesized {n} frames over {params.strides} strides (seed {params.seed})")
    return [SensorFrame(*map(float, row)) for row in rows]


@dataclass(frozen=True)
class AnkleParams:
    """Point-inertia ankle with stance ground spring and hard stops, per kg body mass."""

    inertia: float = 0.03
    damping: float = 0.02
    ground_stiffness: float = 0.5
    ground_damping: float = 0.01
    stop_stiffness: float = 20.0
    stop_damping: float = 0.2
    limit: float = 15.0

    def __post_init__(self):
        if not self.inertia > 0:
            raise InvalidParameterError(f"inertia must be positive, got {self.inertia}")
        for f in fields(self):
            value = getattr(self, f.name)
            if not (math.isfinite(value) and value >= 0):
                raise InvalidParameterError(f"{f.name} must be finite and non-negative, got {value}")

    @classmethod
    def from_dict(cls, data: Dict) -> "AnkleParams":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown plant parameters {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in data.items()})


@dataclass(frozen=True)
class AnkleState:
    theta: float = 0.0
    theta_dot: float = 0.0
    params: AnkleParams = field(default_factory=AnkleParams)

    def energy(self, stance: bool = False, ground_angle: float = 0.0) -> float:
        """Kinetic plus ground-spring energy in J/kg."""
        p = self.params
        kinetic = 0.5 * p.inertia * math.radians(self.theta_dot) ** 2
        potential = 0.0
        if stance:
            potential = 0.5 * math.degrees(p.ground_stiffness) * math.radians(self.theta - ground_angle) ** 2
        return kinetic + potential


def _implicit_step(state: AnkleState, tau: float, dt: float, c: float, k: float, target: float) -> Tuple[float, float]:
    p = state.params
    gain = math.degrees(1.0) / p.inertia  # deg/s^2 per Nm/kg
    v = (state.theta_dot + dt * gain * (tau - k * (state.theta - target))) / (
        1.0 + dt * gain * c + dt * dt * gain * k
    )
    return state.theta + dt * v, v


def plant_step(state: AnkleState, tau: float, stance: bool, dt: float, ground_angle: float = 0.0) -> AnkleState:
    """
    Advance the ankle one step. The commanded torque is explicit; joint damping, the
    stance ground spring and the hard stops are integrated implicitly.
    """
    if not 0.0 < dt <= 0.1:
        raise InvalidParameterError(f"dt must be in (0, 0.1], got {dt}")
    if not math.isfinite(tau):
        raise SignalFaultError("tau", tau)
    p = state.params
    c, k, target = p.damping, 0.0, 0.0
    if stance:
        c += p.ground_damping
        k, target = p.ground_stiffness, ground_angle
    theta, v = _implicit_step(state, tau, dt, c, k, target)

    if abs(theta) > p.limit:
        stop = math.copysign(p.limit, theta)
        k_all = k + p.stop_stiffness
        target_all = (k * target + p.stop_stiffness * stop) / k_all
        theta, v = _implicit_step(state, tau, dt, c + p.stop_damping, k_all, target_all)
    return replace(state, theta=theta, theta_dot=v)
