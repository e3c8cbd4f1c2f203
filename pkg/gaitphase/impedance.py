import json
import logging
import math
import os
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, Optional, Text, Tuple

import numpy as np
import polars as pl
import smart_open
from scipy.interpolate import CubicSpline

from gaitphase import __root_dir__
from gaitphase.errors import ConfigError, DataError, InvalidParameterError, ROMViolationError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DEFAULT_THETA_MAX = 15.0
# spacing of derived equilibrium knots, in percent gait
EQUILIBRIUM_STEP_PCT = 0.5

# passive benchmark gains
PASSIVE_THETA_EQ = 0.0
PASSIVE_STIFFNESS = 0.09
PASSIVE_DAMPING = 0.075

DEFAULT_PROFILE_PATH = os.path.join(__root_dir__, "data", "default_profile.json")
DEFAULT_REFERENCES_PATH = os.path.join(__root_dir__, "data", "reference_trajectories.csv")

Knots = Tuple[Tuple[float, float], ...]
CURVES = ("theta_eq", "stiffness", "damping")


def _as_knots(pairs) -> Knots:
    return tuple((float(s), float(v)) for s, v in pairs)


@dataclass(frozen=True)
class ImpedanceProfile:
    """
    Knot tables for equilibrium angle (deg), stiffness (Nm/deg/kg) and damping
    (Nms/deg/kg) over gait percentage, evaluated piecewise-linearly.
    """

    knots_eq: Knots
    knots_k: Knots
    knots_b: Knots
    theta_max: float = DEFAULT_THETA_MAX
    _arrays: Dict[str, Tuple[np.ndarray, np.ndarray]] = field(
        init=False, repr=False, compare=False
    )

    def __post_init__(self):
        arrays = {}
        for name, knots in zip(CURVES, (self.knots_eq, self.knots_k, self.knots_b)):
            knots = _as_knots(knots)
            object.__setattr__(self, _KNOT_ATTRS[name], knots)
            if not knots:
                raise InvalidParameterError(f"impedance curve {name} has no knots")
            s, v = zip(*knots)
            arrays[name] = (np.array(s), np.array(v))
        object.__setattr__(self, "_arrays", arrays)

    def curve(self, name: Text) -> Tuple[np.ndarray, np.ndarray]:
        return self._arrays[name]

    def require_valid(self) -> "ImpedanceProfile":
        report = validate_profile(self)
        if report.violations:
            if any(v.kind == "rom" for v in report.violations):
                raise ROMViolationError(str(report))
            raise InvalidParameterError(str(report))
        return self

    def to_dict(self) -> Dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "units": {
                "s": "percent gait",
                "theta_eq": "deg",
                "stiffness": "Nm/deg/kg",
                "damping": "Nms/deg/kg",
                "theta_max": "deg",
            },
            "sign_convention": "angles dorsiflexion-positive; negative torque plantarflexes",
            "theta_max": self.theta_max,
            "theta_eq": [list(k) for k in self.knots_eq],
            "stiffness": [list(k) for k in self.knots_k],
            "damping": [list(k) for k in self.knots_b],
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "ImpedanceProfile":
        if data.get("schema_version") != SCHEMA_VERSION:
            raise ConfigError(
                f"impedance profile schema_version {data.get('schema_version')} is not {SCHEMA_VERSION}"
            )
        try:
            return cls(
                knots_eq=_as_knots(data["theta_eq"]),
                knots_k=_as_knots(data["stiffness"]),
                knots_b=_as_knots(data["damping"]),
                theta_max=float(data.get("theta_max", DEFAULT_THETA_MAX)),
            )
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"malformed impedance profile: {e}") from e


_KNOT_ATTRS = {"theta_eq": "knots_eq", "stiffness": "knots_k", "damping": "knots_b"}


def _wrap(s):
    s = np.asarray(s, dtype=float)
    return np.where((s < 0.0) | (s > 100.0), np.mod(s, 100.0), s)


def eval_profile(profile: ImpedanceProfile, s):
    """
    ``(theta_eq, K, B)`` at gait percentage ``s`` (scalar or array). Values outside
    [0, 100] wrap modulo 100.
    """
    s_w = _wrap(s)
    out = tuple(np.interp(s_w, *profile.curve(name)) for name in CURVES)
    if np.ndim(s) == 0:
        return tuple(float(v) for v in out)
    return out


def pvic_torque(theta_ankle, theta_dot_ankle, theta_eq, K, B):
    """Impedance torque in Nm/kg: ``-K (theta - theta_eq) - B theta_dot``."""
    return -K * (theta_ankle - theta_eq) - B * theta_dot_ankle


def passive_profile(theta_max: float = DEFAULT_THETA_MAX) -> ImpedanceProfile:
    return ImpedanceProfile(
        knots_eq=((0.0, PASSIVE_THETA_EQ), (100.0, PASSIVE_THETA_EQ)),
        knots_k=((0.0, PASSIVE_STIFFNESS), (100.0, PASSIVE_STIFFNESS)),
        knots_b=((0.0, PASSIVE_DAMPING), (100.0, PASSIVE_DAMPING)),
        theta_max=theta_max,
    )


@dataclass(frozen=True)
class Violation:
    curve: Text
    s: Optional[float]
    kind: Text
    message: Text

    def __str__(self):
        where = f" at s={self.s:g}" if self.s is not None else ""
        return f"{self.curve}{where}: {self.message}"


@dataclass
class ValidationReport:
    violations: List[Violation] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not self.violations

    def add(self, curve, s, kind, message):
        self.violations.append(Violation(curve, s, kind, message))

    def __str__(self):
        if self.valid:
            return "profile valid"
        return "; ".join(str(v) for v in self.violations)


def validate_profile(profile: ImpedanceProfile) -> ValidationReport:
    """Check knot ordering, finiteness, non-negative gains, the ROM bound and endpoint continuity."""
    report = ValidationReport()
    if not (math.isfinite(profile.theta_max) and profile.theta_max > 0):
        report.add("theta_max", None, "rom", f"theta_max must be positive, got {profile.theta_max}")

    for name in CURVES:
        s, v = profile.curve(name)
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(v))):
            report.add(name, None, "finite", "knots must be finite")
            continue
        if len(s) < 2:
            report.add(name, None, "ordering", "needs at least two knots")
            continue
        for i in np.flatnonzero(np.diff(s) <= 0):
            report.add(name, float(s[i + 1]), "ordering", "knot s values must be strictly increasing")
        if s[0] != 0.0:
            report.add(name, float(s[0]), "ordering", "first knot must be at s=0")
        if s[-1] != 100.0:
            report.add(name, float(s[-1]), "ordering", "last knot must be at s=100")
        if v[0] != v[-1]:
            report.add(name, 100.0, "continuity", f"value at s=100 ({v[-1]}) differs from s=0 ({v[0]})")
        if name in ("stiffness", "damping"):
            for i in np.flatnonzero(v < 0):
                report.add(name, float(s[i]), "negative", f"gain {v[i]} is negative")
        else:
            for i in np.flatnonzero(np.abs(v) > profile.theta_max):
                report.add(name, float(s[i]), "rom", f"|{v[i]}| exceeds theta_max {profile.theta_max}")
    return report


def load_impedance_profile(path: Optional[Text] = None) -> ImpedanceProfile:
    path = path or DEFAULT_PROFILE_PATH
    try:
        with smart_open.open(path, "r") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read impedance profile {path}: {e}") from e
    profile = ImpedanceProfile.from_dict(data).require_valid()
    logger.info(f"loaded impedance profile from {path}")
    return profile


def save_impedance_profile(profile: ImpedanceProfile, path: Text) -> None:
    with smart_open.open(path, "w") as f:
        f.write(json.dumps(profile.to_dict(), sort_keys=True, indent=2) + "\n")


def default_pvic_profile() -> ImpedanceProfile:
    return load_impedance_profile(DEFAULT_PROFILE_PATH)


@dataclass(frozen=True, eq=False)
class ReferenceTrajectories:
    """
    Able-bodied reference angle (deg), torque (Nm/kg) and power (W/kg) over gait
    percentage, for a stride of ``stride_period`` seconds.
    """

    s: np.ndarray
    theta_ref: np.ndarray
    tau_ref: np.ndarray
    power_ref: np.ndarray
    stride_period: float

    def resample(self, n: int = 101) -> "ReferenceTrajectories":
        grid = np.linspace(0.0, 100.0, n)
        return ReferenceTrajectories(
            s=grid,
            theta_ref=np.interp(grid, self.s, self.theta_ref),
            tau_ref=np.interp(grid, self.s, self.tau_ref),
            power_ref=np.interp(grid, self.s, self.power_ref),
            stride_period=self.stride_period,
        )

    def angular_velocity(self) -> np.ndarray:
        """
        Reference ankle velocity in deg/s by periodic central differences. The grid must
        be uniform with the 0 and 100 rows describing the same instant.
        """
        ds = np.diff(self.s)
        if not np.allclose(ds, ds[0]):
            raise DataError("reference table must be on a uniform gait-percentage grid")
        theta = self.theta_ref[:-1]
        d = (np.roll(theta, -1) - np.roll(theta, 1)) / (2.0 * ds[0])
        return np.append(d, d[0]) * 100.0 / self.stride_period

    def at(self, name: Text, s):
        return np.interp(_wrap(s), self.s, getattr(self, name))


def load_references(path: Optional[Text] = None, n: Optional[int] = 101) -> ReferenceTrajectories:
    """
    Read ``s,theta_ref,tau_ref,power_ref`` with a ``# stride_period=<seconds>`` header
    comment, resampled to ``n`` points (``None`` keeps the file grid).
    """
    path = path or DEFAULT_REFERENCES_PATH
    stride_period = None
    try:
        with smart_open.open(path, "r") as f:
            text = f.read()
    except OSError as e:
        raise DataError(f"cannot read reference trajectories {path}: {e}") from e
    for line in text.splitlines():
        line = line.strip()
        if line.startswith("#") and "stride_period=" in line:
            stride_period = float(line.split("stride_period=", 1)[1].split()[0])
    if stride_period is None or not stride_period > 0:
        raise DataError(f"reference trajectories {path} lack a positive stride_period header")

    df = pl.read_csv(text.encode(), comment_prefix="#")
    expected = ["s", "theta_ref", "tau_ref", "power_ref"]
    if df.columns != expected:
        raise DataError(f"reference trajectories {path} have columns {df.columns}, expected {expected}")
    df = df.cast(pl.Float64)
    refs = ReferenceTrajectories(
        s=df["s"].to_numpy(),
        theta_ref=df["theta_ref"].to_numpy(),
        tau_ref=df["tau_ref"].to_numpy(),
        power_ref=df["power_ref"].to_numpy(),
        stride_period=stride_period,
    )
    if refs.s[0] != 0.0 or refs.s[-1] != 100.0 or not np.all(np.diff(refs.s) > 0):
        raise DataError(f"reference trajectories {path} must span s=0..100 increasing")
    return refs.resample(n) if n else refs


@lru_cache(maxsize=1)
def _table_references() -> ReferenceTrajectories:
    return load_references(n=None)


def reference_ankle(refs: Optional[ReferenceTrajectories] = None) -> CubicSpline:
    """
    Periodic cubic spline of the reference ankle angle (deg) over stride fraction [0, 1],
    through the table rows as given. Defaults to the bundled table on its own grid.
    """
    refs = refs if refs is not None else _table_references()
    if refs.theta_ref[0] != refs.theta_ref[-1]:
        raise DataError("reference ankle angle must close over the stride")
    return CubicSpline(refs.s / 100.0, refs.theta_ref, bc_type="periodic")


def derive_equilibrium(
    knots_k: Knots,
    knots_b: Knots,
    refs: Optional[ReferenceTrajectories] = None,
    step: float = EQUILIBRIUM_STEP_PCT,
    theta_max: float = DEFAULT_THETA_MAX,
) -> Knots:
    """
    Equilibrium knots every ``step`` percent that reproduce the reference torque along
    the smooth reference ankle: ``theta_eq = theta + (tau_ref + B theta_dot) / K``,
    clipped to ``theta_max``.
    """
    n = 100.0 / step if step > 0 else math.nan
    if not (math.isfinite(n) and abs(n - round(n)) < 1e-9):
        raise InvalidParameterError(f"step must divide 100, got {step}")
    refs = refs if refs is not None else _table_references()
    ankle = reference_ankle(refs)
    s = np.linspace(0.0, 100.0, int(round(n)) + 1)
    u = np.mod(s / 100.0, 1.0)
    K = np.interp(s, *zip(*_as_knots(knots_k)))
    B = np.interp(s, *zip(*_as_knots(knots_b)))
    if np.any(K <= 0):
        raise InvalidParameterError("stiffness must be positive to place an equilibrium")
    theta_dot = ankle(u, 1) / refs.stride_period
    tau = np.interp(s, refs.s, refs.tau_ref)
    theta_eq = np.clip(ankle(u) + (tau + B * theta_dot) / K, -theta_max, theta_max)
    return tuple((float(a), round(float(v), 4)) for a, v in zip(s, theta_eq))


def derive_pvic_profile(
    knots_k: Knots, knots_b: Knots, refs: Optional[ReferenceTrajectories] = None, theta_max: float = DEFAULT_THETA_MAX
) -> ImpedanceProfile:
    knots_eq = derive_equilibrium(knots_k, knots_b, refs, theta_max=theta_max)
    return ImpedanceProfile(knots_eq=knots_eq, knots_k=knots_k, knots_b=knots_b, theta_max=theta_max)


def expected_torque(profile: ImpedanceProfile, refs: ReferenceTrajectories) -> Tuple[np.ndarray, np.ndarray]:
    """Impedance torque along the reference ankle trajectory."""
    theta_eq, K, B = eval_profile(profile, refs.s)
    return refs.s, pvic_torque(refs.theta_ref, refs.angular_velocity(), theta_eq, K, B)


def ankle_power(tau, theta_dot):
    """Joint power in W/kg from torque (Nm/kg) and velocity (deg/s)."""
    return tau * np.radians(theta_dot)


def expected_power(profile: ImpedanceProfile, refs: ReferenceTrajectories) -> Tuple[np.ndarray, np.ndarray]:
    s, tau = expected_torque(profile, refs)
    return s, ankle_power(tau, refs.angular_velocity())


def to_absolute(value_per_kg, body_mass: float):
    if not body_mass > 0:
        raise InvalidParameterError(f"body_mass must be positive, got {body_mass}")
    return value_per_kg * body_mass
