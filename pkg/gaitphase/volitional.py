import logging
import math
from dataclasses import asdict, dataclass
from typing import Dict, Sequence, Tuple

import numpy as np

from gaitphase.errors import (
    CalibrationMissingError,
    InsufficientCalibrationDataError,
    InvalidCalibrationError,
    ROMViolationError,
)

logger = logging.getLogger(__name__)

DEFAULT_NOISE_FLOOR = 0.05
# normalized activation is clamped here for logging; the magnitude term caps at 1
MAX_ACTIVATION = 1.5
# co-contraction calibration splits on this activation level
COCONTRACTION_SPLIT = 0.5


@dataclass(frozen=True)
class VolitionalCalibration:
    mva_gas: float
    mva_ta: float
    m_gas: float
    m_ta: float
    m0: float
    noise_floor: float = DEFAULT_NOISE_FLOOR

    def __post_init__(self):
        values = asdict(self)
        for name, value in values.items():
            if not math.isfinite(value):
                raise InvalidCalibrationError(f"{name} must be finite, got {value}")
        if not (self.mva_gas > 0 and self.mva_ta > 0):
            raise InvalidCalibrationError(
                f"MVA levels must be positive, got gas={self.mva_gas} ta={self.mva_ta}"
            )
        if not (self.m_gas > self.m0 > self.m_ta > 0):
            raise InvalidCalibrationError(
                f"slopes must satisfy m_gas > m0 > m_ta > 0, got {self.m_gas}, {self.m0}, {self.m_ta}"
            )
        if self.noise_floor < 0:
            raise InvalidCalibrationError(f"noise_floor must be non-negative, got {self.noise_floor}")

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> "VolitionalCalibration":
        try:
            return cls(**{k: float(v) for k, v in data.items()})
        except TypeError as e:
            raise InvalidCalibrationError(f"malformed volitional calibration: {e}") from e


@dataclass(frozen=True)
class IntentSample:
    u_p: float
    u_d: float
    u: float


def normalize_emg(emg: float, mva: float) -> float:
    if not mva > 0:
        raise CalibrationMissingError(f"MVA must be positive, got {mva}")
    return min(MAX_ACTIVATION, max(0.0, emg / mva))


def bisector(m_gas: float, m_ta: float, literal: bool = False) -> float:
    """
    Slope of the ray bisecting the plantarflexion and dorsiflexion co-contraction rays in
    (u_d, u_p) space.

    ``literal=True`` evaluates ``atan((tan(m_gas) + tan(m_ta)) / 2)`` with the slopes
    taken as radians instead, kept for comparison with that published form.
    """
    if not (m_gas >= m_ta > 0):
        raise InvalidCalibrationError(f"bisector needs m_gas >= m_ta > 0, got {m_gas}, {m_ta}")
    if literal:
        return math.atan((math.tan(m_gas) + math.tan(m_ta)) / 2.0)
    return math.tan((math.atan(m_gas) + math.atan(m_ta)) / 2.0)


def decode_intent(u_p: float, u_d: float, cal: VolitionalCalibration) -> float:
    """
    Single volitional input in [-1, 1], positive for plantarflexion intent.

    The co-contraction slope ``m = u_p / u_d`` is clamped to ``[m_ta, m_gas]`` and
    the activation magnitude to 1. Both channels below the noise floor read as rest.
    """
    if u_p < cal.noise_floor and u_d < cal.noise_floor:
        return 0.0
    if u_d == 0.0:
        m = cal.m_gas
    elif u_p == 0.0:
        m = cal.m_ta
    else:
        m = min(cal.m_gas, max(cal.m_ta, u_p / u_d))
    magnitude = min(1.0, math.hypot(u_p, u_d))
    if m >= cal.m0:
        return magnitude * (m - cal.m0) / (cal.m_gas - cal.m0)
    return -magnitude * (m - cal.m0) / (cal.m_ta - cal.m0)


class IntentDecoder:
    def __init__(self, cal: VolitionalCalibration):
        self.cal = cal

    def decode(self, emg_gas: float, emg_ta: float) -> IntentSample:
        u_p = normalize_emg(emg_gas, self.cal.mva_gas)
        u_d = normalize_emg(emg_ta, self.cal.mva_ta)
        return IntentSample(u_p=u_p, u_d=u_d, u=decode_intent(u_p, u_d, self.cal))


def calibrate_mva(trials: Sequence[float]) -> float:
    """MVA is the largest peak over the maximum-voluntary-contraction trials."""
    if len(trials) == 0:
        raise CalibrationMissingError("no MVIC trials")
    for i, peak in enumerate(trials):
        if not peak > 0:
            logger.warning(f"MVIC trial {i} peaked at {peak}")
    mva = float(np.max(trials))
    if not mva > 0:
        raise CalibrationMissingError(f"MVA must be positive, got {mva}")
    return mva


def calibrate_cocontraction(u_p, u_d, literal_bisector: bool = False) -> Tuple[float, float, float]:
    """
    Average co-contraction slopes over the walking samples dominated by one muscle:
    ``m_gas`` where ``u_p > 0.5`` and ``u_d < 0.5``, ``m_ta`` where ``u_p < 0.5`` and
    ``u_d > 0.5``. Samples whose slope is zero or unbounded are skipped.
    """
    u_p = np.asarray(u_p, dtype=float)
    u_d = np.asarray(u_d, dtype=float)
    gas = (u_p > COCONTRACTION_SPLIT) & (u_d < COCONTRACTION_SPLIT) & (u_d > 0)
    ta = (u_p < COCONTRACTION_SPLIT) & (u_d > COCONTRACTION_SPLIT) & (u_p > 0)
    if not gas.any():
        raise InsufficientCalibrationDataError("no plantarflexion-dominant samples for m_gas")
    if not ta.any():
        raise InsufficientCalibrationDataError("no dorsiflexion-dominant samples for m_ta")
    m_gas = float(np.mean(u_p[gas] / u_d[gas]))
    m_ta = float(np.mean(u_p[ta] / u_d[ta]))
    m0 = bisector(m_gas, m_ta, literal=literal_bisector)
    logger.info(
        f"co-contraction from {int(gas.sum())}/{int(ta.sum())} samples: m_gas={m_gas:.4f} m_ta={m_ta:.4f} m0={m0:.4f}"
    )
    return m_gas, m_ta, m0


def calibrate_volitional(
    gas_peaks: Sequence[float],
    ta_peaks: Sequence[float],
    emg_gas,
    emg_ta,
    noise_floor: float = DEFAULT_NOISE_FLOOR,
    literal_bisector: bool = False,
) -> VolitionalCalibration:
    """Full volitional calibration from MVIC trial peaks and a conditioned walking EMG record."""
    mva_gas = calibrate_mva(gas_peaks)
    mva_ta = calibrate_mva(ta_peaks)
    u_p = np.clip(np.asarray(emg_gas, dtype=float) / mva_gas, 0.0, MAX_ACTIVATION)
    u_d = np.clip(np.asarray(emg_ta, dtype=float) / mva_ta, 0.0, MAX_ACTIVATION)
    m_gas, m_ta, m0 = calibrate_cocontraction(u_p, u_d, literal_bisector=literal_bisector)
    return VolitionalCalibration(
        mva_gas=mva_gas, mva_ta=mva_ta, m_gas=m_gas, m_ta=m_ta, m0=m0, noise_floor=noise_floor
    )


def volitional_torque(u: float, K: float, theta_eq: float, theta_max: float) -> float:
    """Volitional torque ``-K * gamma * u`` with ``gamma = theta_max - |theta_eq|``."""
    if abs(theta_eq) > theta_max:
        raise ROMViolationError(f"|theta_eq| = {abs(theta_eq)} exceeds theta_max {theta_max}")
    if u == 0.0:
        return 0.0
    return -K * (theta_max - abs(theta_eq)) * u


def effective_equilibrium(theta_eq, u, theta_max: float):
    """Equilibrium the combined impedance and volitional torque acts about."""
    return theta_eq - (theta_max - np.abs(theta_eq)) * u
