"""Calibration profile persistence.

A profile holds everything calibration learns about one user: the CPC constants, the
phase map and, when volitional calibration ran, the EMG decoder parameters.
"""

import json
import logging
from dataclasses import dataclass
from typing import Dict, Optional, Text

import numpy as np
import smart_open

from gaitphase.errors import ConfigError, InvalidCalibrationError
from gaitphase.phase import PhaseCalibration, PhaseMap
from gaitphase.signals import DEFAULT_THRESHOLD
from gaitphase.volitional import VolitionalCalibration

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


@dataclass(frozen=True, eq=False)
class CalibrationProfile:
    phase_calibration: PhaseCalibration
    phase_map: PhaseMap
    volitional: Optional[VolitionalCalibration] = None
    threshold: float = DEFAULT_THRESHOLD

    def __eq__(self, other):
        return isinstance(other, CalibrationProfile) and self.to_dict() == other.to_dict()

    def to_dict(self) -> Dict:
        cal = self.phase_calibration
        data = {
            "schema_version": SCHEMA_VERSION,
            "sign_convention": "angles dorsiflexion-positive; negative torque plantarflexes",
            "phase_calibration": {"x0": cal.x0, "y0": cal.y0, "k": cal.k},
            "phase_map": {
                "phi": [float(v) for v in self.phase_map.phi],
                "s": [float(v) for v in self.phase_map.s],
            },
            "threshold": self.threshold,
        }
        if self.volitional is not None:
            data["volitional"] = self.volitional.to_dict()
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> "CalibrationProfile":
        version = data.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ConfigError(f"profile schema_version {version} is not {SCHEMA_VERSION}")
        try:
            cal = PhaseCalibration(**{k: float(v) for k, v in data["phase_calibration"].items()})
            phase_map = PhaseMap(
                phi=np.array(data["phase_map"]["phi"], dtype=float),
                s=np.array(data["phase_map"]["s"], dtype=float),
            )
        except (KeyError, TypeError) as e:
            raise InvalidCalibrationError(f"malformed profile: missing or bad field {e}") from e
        volitional = None
        if data.get("volitional") is not None:
            volitional = VolitionalCalibration.from_dict(data["volitional"])
        return cls(
            phase_calibration=cal,
            phase_map=phase_map,
            volitional=volitional,
            threshold=float(data.get("threshold", DEFAULT_THRESHOLD)),
        )


def dumps_profile(profile: CalibrationProfile) -> Text:
    return json.dumps(profile.to_dict(), sort_keys=True, indent=2) + "\n"


def save_profile(profile: CalibrationProfile, path: Text) -> None:
    with smart_open.open(path, "w") as f:
        f.write(dumps_profile(profile))
    logger.info(f"wrote calibration profile to {path}")


def load_profile(path: Text) -> CalibrationProfile:
    try:
        with smart_open.open(path, "r") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read profile {path}: {e}") from e
    return CalibrationProfile.from_dict(data)
