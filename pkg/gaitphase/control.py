import enum
import logging
import math
import time
from dataclasses import dataclass, replace
from typing import Callable, Iterable, List, Optional, Tuple

import numpy as np

from gaitphase.errors import CalibrationMissingError, InvalidParameterError, SignalFaultError
from gaitphase.impedance import (
    ImpedanceProfile,
    eval_profile,
    passive_profile,
    pvic_torque,
)
from gaitphase.phase import PhaseCalibration, PhaseEstimator, PhaseMap
from gaitphase.signals import DEFAULT_RATE_HZ, DEFAULT_THRESHOLD, SensorFrame, SignalConditioner
from gaitphase.volitional import IntentDecoder, VolitionalCalibration, volitional_torque

logger = logging.getLogger(__name__)

DEFAULT_TORQUE_LIMIT = 2.5
DEFAULT_BODY_MASS = 70.0
FAULT_HOLD_S = 0.05


class ControllerKind(enum.Enum):
    PASSIVE = "passive"
    PVIC = "pvic"
    PVIHVC = "pvi-hvc"

    @classmethod
    def parse(cls, value) -> "ControllerKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise InvalidParameterError(
                f"unknown controller {value!r}, expected one of {[k.value for k in cls]}"
            ) from None


@dataclass(frozen=True)
class ControllerConfig:
    kind: ControllerKind
    impedance: ImpedanceProfile
    phase_calibration: Optional[PhaseCalibration] = None
    phase_map: Optional[PhaseMap] = None
    volitional: Optional[VolitionalCalibration] = None
    body_mass: float = DEFAULT_BODY_MASS
    torque_limit: float = DEFAULT_TORQUE_LIMIT
    rate_hz: float = DEFAULT_RATE_HZ
    threshold: float = DEFAULT_THRESHOLD
    fault_hold_s: float = FAULT_HOLD_S

    def __post_init__(self):
        object.__setattr__(self, "kind", ControllerKind.parse(self.kind))
        for name in ("body_mass", "torque_limit", "rate_hz"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise InvalidParameterError(f"{name} must be positive, got {value}")
        if self.kind is not ControllerKind.PASSIVE and not self.has_phase:
            raise CalibrationMissingError(f"{self.kind.value} needs a phase calibration and phase map")
        if self.kind is ControllerKind.PVIHVC and self.volitional is None:
            raise CalibrationMissingError("pvi-hvc needs a volitional calibration")

    @property
    def has_phase(self) -> bool:
        return self.phase_calibration is not None and self.phase_map is not None

    @property
    def active_profile(self) -> ImpedanceProfile:
        if self.kind is ControllerKind.PASSIVE:
            return passive_profile(self.impedance.theta_max)
        return self.impedance


@dataclass(frozen=True)
class TorqueCommand:
    """
    One control step's output in body-mass-normalized units, with the impedance and
    intent terms that produced it.
    """

    t: float
    tau_total: float
    tau_pvic: float
    tau_vc: float
    s_est: float
    phi: float
    theta_eq: float
    K: float
    B: float
    u: float
    u_p: float
    u_d: float
    clamped: bool = False
    fault: bool = False


def clamp_command(tau: float, limit: float) -> float:
    if not limit > 0:
        raise InvalidParameterError(f"torque limit must be positive, got {limit}")
    return min(limit, max(-limit, tau))


class ControllerState:
    """Mutable per-loop state: channel filters, phase estimator, intent decoder and fault bookkeeping."""

    def __init__(
        self,
        conditioner: SignalConditioner,
        estimator: Optional[PhaseEstimator] = None,
        decoder: Optional[IntentDecoder] = None,
    ):
        self.conditioner = conditioner
        self.estimator = estimator
        self.decoder = decoder
        self.last_command: Optional[TorqueCommand] = None
        self.fault_since: Optional[float] = None
        self.clamp_events = 0
        self.fault_steps = 0

    @classmethod
    def from_config(cls, cfg: ControllerConfig) -> "ControllerState":
        estimator = PhaseEstimator(cfg.phase_calibration, cfg.phase_map) if cfg.has_phase else None
        decoder = IntentDecoder(cfg.volitional) if cfg.kind is ControllerKind.PVIHVC else None
        return cls(SignalConditioner(cfg.rate_hz), estimator, decoder)


def _fault_command(cfg: ControllerConfig, state: ControllerState, t: float, error: SignalFaultError) -> TorqueCommand:
    state.fault_steps += 1
    if state.fault_since is None:
        state.fault_since = t
        logger.debug(f"signal fault at t={t:.4f}: {error}")
    last = state.last_command
    if last is not None and t - state.fault_since <= cfg.fault_hold_s:
        return replace(last, t=t, fault=True)
    if last is not None and last.tau_total != 0.0:
        logger.debug(f"fault held past {cfg.fault_hold_s}s, zero torque")
    s_est = last.s_est if last is not None else math.nan
    phi = last.phi if last is not None else math.nan
    return TorqueCommand(
        t=t, tau_total=0.0, tau_pvic=0.0, tau_vc=0.0, s_est=s_est, phi=phi,
        theta_eq=0.0, K=0.0, B=0.0, u=0.0, u_p=0.0, u_d=0.0, clamped=False, fault=True,
    )


def controller_step(cfg: ControllerConfig, state: ControllerState, frame: SensorFrame) -> TorqueCommand:
    """
    Condition the frame, estimate gait percentage, evaluate the impedance schedule and
    add the volitional term for PVI-HVC, then clamp.

    A frame with a non-finite channel repeats the last command for ``fault_hold_s``
    and commands zero torque after that, leaving every filter untouched.
    """
    try:
        cond = state.conditioner.condition(frame)
    except SignalFaultError as e:
        # held and zeroed commands never replace last_command
        return _fault_command(cfg, state, frame.t, e)
    if state.fault_since is not None:
        logger.debug(f"signal recovered at t={frame.t:.4f}")
        state.fault_since = None

    phi, s_est = math.nan, math.nan
    if state.estimator is not None:
        phi, s_est = state.estimator.update(cond.theta_tib, cond.theta_dot_tib)

    profile = cfg.active_profile
    if cfg.kind is ControllerKind.PASSIVE:
        theta_eq, K, B = eval_profile(profile, 0.0)
    else:
        theta_eq, K, B = eval_profile(profile, s_est)
    tau_pvic = pvic_torque(cond.theta_ankle, cond.theta_dot_ankle, theta_eq, K, B)

    u, u_p, u_d, tau_vc = 0.0, 0.0, 0.0, 0.0
    if state.decoder is not None:
        intent = state.decoder.decode(cond.emg_gas, cond.emg_ta)
        u, u_p, u_d = intent.u, intent.u_p, intent.u_d
        tau_vc = volitional_torque(u, K, theta_eq, profile.theta_max)

    raw = tau_pvic + tau_vc
    tau_total = clamp_command(raw, cfg.torque_limit)
    clamped = tau_total != raw
    if clamped:
        state.clamp_events += 1
    command = TorqueCommand(
        t=frame.t, tau_total=tau_total, tau_pvic=tau_pvic, tau_vc=tau_vc, s_est=s_est,
        phi=phi, theta_eq=theta_eq, K=K, B=B, u=u, u_p=u_p, u_d=u_d, clamped=clamped,
    )
    state.last_command = command
    return command


def torque_step_bound(
    cfg: ControllerConfig,
    d_theta: float,
    d_theta_dot: float,
    d_s: float,
    theta_dot_max: float = 400.0,
    theta_margin: float = 1.0,
) -> float:
    """
    Upper bound on the commanded-torque change between two steps whose ankle angle,
    ankle velocity and gait percentage differ by the given amounts, for ankle angles
    within ``theta_max + theta_margin`` and velocities within ``theta_dot_max``.
    """
    profile = cfg.active_profile
    s_k, k = profile.curve("stiffness")
    s_b, b = profile.curve("damping")
    s_e, eq = profile.curve("theta_eq")
    k_max, b_max = float(np.max(k)), float(np.max(b))
    bound = k_max * abs(d_theta) + b_max * abs(d_theta_dot)
    if cfg.kind is ControllerKind.PASSIVE:
        return bound

    def max_slope(s, v):
        return float(np.max(np.abs(np.diff(v) / np.diff(s)))) if len(s) > 1 else 0.0

    k_slope, b_slope, eq_slope = max_slope(s_k, k), max_slope(s_b, b), max_slope(s_e, eq)
    theta_span = 2.0 * profile.theta_max + theta_margin
    l_s = k_slope * theta_span + k_max * eq_slope + b_slope * theta_dot_max
    if cfg.kind is ControllerKind.PVIHVC:
        # -K gamma u with |u| <= 1
        l_s += k_slope * profile.theta_max + k_max * eq_slope
    return bound + l_s * abs(d_s)


class ReplayClock:
    """Frame timestamps are the clock; nothing waits."""

    def __init__(self):
        self.now: Optional[float] = None

    def wait_until(self, t: float) -> None:
        self.now = t


class RealTimeClock:
    """Paces steps against the monotonic wall clock, anchored at the first timestamp."""

    def __init__(self, sleep: Callable[[float], None] = time.sleep, monotonic: Callable[[], float] = time.monotonic):
        self._sleep = sleep
        self._monotonic = monotonic
        self._origin: Optional[Tuple[float, float]] = None
        self.overruns = 0

    def wait_until(self, t: float) -> None:
        if self._origin is None:
            self._origin = (t, self._monotonic())
            return
        t0, wall0 = self._origin
        delay = (t - t0) - (self._monotonic() - wall0)
        if delay > 0:
            self._sleep(delay)
        else:
            self.overruns += 1


class ControlLoop:
    """
    Fixed-rate loop owning one controller. Replay and real-time runs share this code
    path and differ only in the clock.
    """

    def __init__(self, cfg: ControllerConfig, clock=None):
        self.cfg = cfg
        self.clock = clock or ReplayClock()
        self.state = ControllerState.from_config(cfg)

    def step(self, frame: SensorFrame) -> TorqueCommand:
        self.clock.wait_until(frame.t)
        return controller_step(self.cfg, self.state, frame)

    def run(self, frames: Iterable[SensorFrame], sink=None) -> List[TorqueCommand]:
        """
        Step every frame. With a ``sink`` (anything with ``put``), each
        ``(frame, command)`` pair is put on it and ``None`` closes the stream.
        """
        commands = []
        try:
            for frame in frames:
                command = self.step(frame)
                commands.append(command)
                if sink is not None:
                    sink.put((frame, command))
        finally:
            if sink is not None:
                sink.put(None)
        if self.state.clamp_events:
            logger.warning(f"{self.state.clamp_events} torque clamp events over {len(commands)} steps")
        return commands
