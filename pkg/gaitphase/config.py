import json
import logging
import os
from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Text, Tuple

import smart_open

from gaitphase.control import DEFAULT_BODY_MASS, DEFAULT_TORQUE_LIMIT, ControllerKind
from gaitphase.errors import ConfigError, GaitPhaseError
from gaitphase.plant import AnkleParams, GaitSynthParams
from gaitphase.report import ALL_METRICS
from gaitphase.signals import DEFAULT_RATE_HZ, DEFAULT_THRESHOLD
from gaitphase.utils import _flatten
from gaitphase.volitional import DEFAULT_NOISE_FLOOR, VolitionalCalibration

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
KNOWN_KEYS = {
    "schema_version",
    "input",
    "controller",
    "profile",
    "impedance",
    "references",
    "output_dir",
    "metrics",
    "body_mass",
    "torque_limit",
    "rate_hz",
    "threshold",
    "seed",
    "pipelined",
    "plant",
    "volitional",
}
VOLITIONAL_KEYS = {"mvic", "calibration", "literal_bisector", "noise_floor"}


@dataclass(frozen=True)
class RunConfig:
    """One command's settings. Exactly one of ``input_csv`` and ``synth`` is set."""

    input_csv: Optional[Text] = None
    synth: Optional[GaitSynthParams] = None
    controller: ControllerKind = ControllerKind.PVIC
    profile: Optional[Text] = None
    impedance: Optional[Text] = None
    references: Optional[Text] = None
    output_dir: Text = "out"
    metrics: Tuple[Text, ...] = ALL_METRICS
    body_mass: float = DEFAULT_BODY_MASS
    torque_limit: float = DEFAULT_TORQUE_LIMIT
    rate_hz: float = DEFAULT_RATE_HZ
    threshold: float = DEFAULT_THRESHOLD
    seed: int = 0
    pipelined: bool = False
    plant: AnkleParams = field(default_factory=AnkleParams)
    mvic_gas: Tuple[Text, ...] = ()
    mvic_ta: Tuple[Text, ...] = ()
    volitional_calibration: Optional[VolitionalCalibration] = None
    literal_bisector: bool = False
    noise_floor: float = DEFAULT_NOISE_FLOOR

    def __post_init__(self):
        if (self.input_csv is None) == (self.synth is None):
            raise ConfigError("exactly one input source (csv or synth) is required")
        object.__setattr__(self, "controller", ControllerKind.parse(self.controller))
        unknown = set(self.metrics) - set(ALL_METRICS)
        if unknown:
            raise ConfigError(f"unknown metrics {sorted(unknown)}, expected a subset of {list(ALL_METRICS)}")
        if not self.body_mass > 0:
            raise ConfigError(f"body_mass must be positive, got {self.body_mass}")
        if bool(self.mvic_gas) != bool(self.mvic_ta):
            raise ConfigError("MVIC trials are needed for both gas and ta")

    def with_overrides(self, seed: Optional[int] = None, output_dir: Optional[Text] = None) -> "RunConfig":
        cfg = self
        if seed is not None:
            synth = replace(cfg.synth, seed=seed) if cfg.synth is not None else None
            cfg = replace(cfg, seed=seed, synth=synth)
        if output_dir is not None:
            cfg = replace(cfg, output_dir=output_dir)
        return cfg

    def check_inputs(self):
        """Referenced local input files must exist before a command starts."""
        paths = [self.input_csv, self.profile, self.impedance, self.references, *self.mvic_gas, *self.mvic_ta]
        for path in paths:
            if path is None or "://" in path:
                continue
            if not os.path.exists(os.path.expanduser(path)):
                raise ConfigError(f"input file {path} does not exist")


def parse_config(data: Dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    if data.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"config schema_version {data.get('schema_version')} is not {SCHEMA_VERSION}")
    unknown = set(data) - KNOWN_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")

    source = data.get("input") or {}
    if not isinstance(source, dict) or len(source) != 1 or next(iter(source)) not in ("csv", "synth"):
        raise ConfigError('input must be exactly one of {"csv": path} or {"synth": {...}}')

    kwargs = {k: data[k] for k in ("controller", "profile", "impedance", "references", "output_dir") if k in data}
    try:
        for name, cast in (("body_mass", float), ("torque_limit", float), ("rate_hz", float),
                           ("threshold", float), ("seed", int), ("pipelined", bool)):
            if name in data:
                kwargs[name] = cast(data[name])
        if "metrics" in data:
            kwargs["metrics"] = tuple(data["metrics"])

        if "csv" in source:
            kwargs["input_csv"] = source["csv"]
        else:
            synth = dict(source["synth"])
            synth.setdefault("seed", int(data.get("seed", 0)))
            kwargs["synth"] = GaitSynthParams.from_dict(synth)
        if "plant" in data:
            kwargs["plant"] = AnkleParams.from_dict(data["plant"])

        volitional = data.get("volitional") or {}
        unknown = set(volitional) - VOLITIONAL_KEYS
        if unknown:
            raise ConfigError(f"unknown volitional keys {sorted(unknown)}")
        mvic = volitional.get("mvic") or {}
        kwargs["mvic_gas"] = tuple(mvic.get("gas", ()))
        kwargs["mvic_ta"] = tuple(mvic.get("ta", ()))
        kwargs["literal_bisector"] = bool(volitional.get("literal_bisector", False))
        kwargs["noise_floor"] = float(volitional.get("noise_floor", DEFAULT_NOISE_FLOOR))
        if volitional.get("calibration") is not None:
            calibration = {"noise_floor": kwargs["noise_floor"], **volitional["calibration"]}
            kwargs["volitional_calibration"] = VolitionalCalibration.from_dict(calibration)
        return RunConfig(**kwargs)
    except GaitPhaseError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(str(e)) from e
    except (TypeError, ValueError) as e:
        raise ConfigError(f"malformed config: {e}") from e


def load_config(path: Text) -> RunConfig:
    try:
        with smart_open.open(path, "r") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    cfg = parse_config(data)
    logger.debug(f"config {path}: {_flatten(data)}")
    return cfg
