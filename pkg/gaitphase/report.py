"""Stride-level metrics and stride-averaged bands from telemetry."""

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Text, Tuple

import numpy as np
import polars as pl
import smart_open

from gaitphase.impedance import ReferenceTrajectories
from gaitphase.phase import estimation_errors

logger = logging.getLogger(__name__)

GRID = np.linspace(0.0, 100.0, 101)
BAND_CHANNELS = {
    "angle": "theta_ankle",
    "torque": "tau_total",
    "power": "power",
    "intent": "u",
    "estimation": "s_err",
}
METRIC_GROUPS = {
    "angle": ["peak_plantarflexion", "rmse_angle"],
    "torque": ["peak_torque", "rmse_torque"],
    "power": ["peak_power", "peak_power_ratio", "rmse_power"],
    "intent": ["mean_u", "peak_u"],
    "estimation": [
        "est_mean_err",
        "est_max_err",
        "est_max_at",
        "est_worst_err",
        "est_worst_at",
        "est_pooled_max_err",
        "est_pooled_max_at",
    ],
}
ALL_METRICS = tuple(METRIC_GROUPS)
STRIDE_METRICS = [
    "peak_plantarflexion",
    "rmse_angle",
    "peak_torque",
    "rmse_torque",
    "peak_power",
    "peak_power_ratio",
    "rmse_power",
    "mean_u",
    "peak_u",
    "est_mean_err",
    "est_max_err",
    "est_max_at",
]


def _rmse(x, ref) -> float:
    return float(np.sqrt(np.mean((np.asarray(x) - np.asarray(ref)) ** 2)))


def _argmax_at(err: np.ndarray, at: np.ndarray) -> Tuple[float, float]:
    if len(err) == 0 or not np.any(np.isfinite(err)):
        return math.nan, math.nan
    i = int(np.nanargmax(err))
    return float(err[i]), float(at[i])


def compute_bands(curves: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Mean, sample SD and mean -/+ 2 SD over strides (rows) at every grid point."""
    curves = np.atleast_2d(np.asarray(curves, dtype=float))
    mean = curves.mean(axis=0)
    sd = curves.std(axis=0, ddof=1) if len(curves) > 1 else np.zeros(curves.shape[1])
    return mean, sd, mean - 2.0 * sd, mean + 2.0 * sd


def stride_metrics(stride: pl.DataFrame, refs: ReferenceTrajectories) -> Dict[str, float]:
    s_true = stride["s_true"].to_numpy()
    theta = stride["theta_ankle"].to_numpy()
    tau = stride["tau_total"].to_numpy()
    power = stride["power"].to_numpy()
    u = stride["u"].to_numpy()
    err = estimation_errors(stride["s_est"].to_numpy(), s_true)
    est_max_err, est_max_at = _argmax_at(err, s_true)
    peak_power = float(np.max(power))
    return {
        "n_samples": float(len(stride)),
        "peak_plantarflexion": float(np.max(-theta)),
        "rmse_angle": _rmse(theta, refs.at("theta_ref", s_true)),
        "peak_torque": float(np.max(-tau)),
        "rmse_torque": _rmse(tau, refs.at("tau_ref", s_true)),
        "peak_power": peak_power,
        "peak_power_ratio": peak_power / float(np.max(refs.power_ref)),
        "rmse_power": _rmse(power, refs.at("power_ref", s_true)),
        "mean_u": float(np.mean(u)),
        "peak_u": float(np.max(u)),
        "est_mean_err": float(np.mean(err)),
        "est_max_err": est_max_err,
        "est_max_at": est_max_at,
    }


@dataclass
class StrideReport:
    """
    Per-stride metrics, their aggregates and stride-averaged bands for one run.

    Aggregates of per-stride metrics are plain means over strides. ``est_worst_*``
    is the largest single-sample estimation error over all strides and
    ``est_pooled_*`` the peak of the stride-averaged error curve.
    """

    controller: Text
    strides: pl.DataFrame
    bands: pl.DataFrame
    aggregates: Dict[str, float] = field(default_factory=dict)

    @classmethod
    def from_telemetry(cls, telemetry: pl.DataFrame, refs: ReferenceTrajectories, controller: Text = "run") -> "StrideReport":
        labelled = telemetry.filter(pl.col("stride") >= 0).sort("t")
        parts = labelled.partition_by("stride", maintain_order=True) if len(labelled) else []
        rows, curves = [], {name: [] for name in BAND_CHANNELS}
        worst = (math.nan, math.nan)
        for part in parts:
            metrics = stride_metrics(part, refs)
            rows.append({"controller": controller, "stride": int(part["stride"][0]), **metrics})
            s_true = part["s_true"].to_numpy()
            err = estimation_errors(part["s_est"].to_numpy(), s_true)
            if np.isfinite(metrics["est_max_err"]) and not (metrics["est_max_err"] <= worst[0]):
                worst = (metrics["est_max_err"], metrics["est_max_at"])
            for name, column in BAND_CHANNELS.items():
                values = err if column == "s_err" else part[column].to_numpy()
                curves[name].append(np.interp(GRID, s_true, values))

        strides = pl.DataFrame(rows) if rows else pl.DataFrame(schema={"controller": pl.Utf8, "stride": pl.Int64})
        aggregates = {"strides": float(len(rows))}
        for name in STRIDE_METRICS:
            aggregates[name] = float(np.mean([r[name] for r in rows])) if rows else math.nan
        aggregates["est_worst_err"], aggregates["est_worst_at"] = worst

        band_rows = []
        for name, stacked in curves.items():
            if not stacked:
                continue
            mean, sd, lower, upper = compute_bands(np.vstack(stacked))
            if name == "estimation":
                aggregates["est_pooled_max_err"], aggregates["est_pooled_max_at"] = _argmax_at(mean, GRID)
            band_rows.append(
                pl.DataFrame(
                    {
                        "controller": [controller] * len(GRID),
                        "channel": [name] * len(GRID),
                        "s": GRID,
                        "mean": mean,
                        "sd": sd,
                        "lower": lower,
                        "upper": upper,
                    }
                )
            )
        aggregates.setdefault("est_pooled_max_err", math.nan)
        aggregates.setdefault("est_pooled_max_at", math.nan)
        aggregates["clamp_events"] = float(telemetry["clamped"].sum()) if len(telemetry) else 0.0
        aggregates["fault_steps"] = float(telemetry["fault"].sum()) if len(telemetry) else 0.0
        bands = pl.concat(band_rows) if band_rows else pl.DataFrame(
            schema={"controller": pl.Utf8, "channel": pl.Utf8, "s": pl.Float64, "mean": pl.Float64,
                    "sd": pl.Float64, "lower": pl.Float64, "upper": pl.Float64}
        )
        logger.info(f"{controller}: {len(rows)} strides, mean gait-% error {aggregates['est_mean_err']:.3f}")
        return cls(controller=controller, strides=strides, bands=bands, aggregates=aggregates)

    def summary_frame(self, metrics: Optional[Sequence[Text]] = None) -> pl.DataFrame:
        """Long-format ``controller,metric,value`` rows for the selected metric groups."""
        names = ["strides", "clamp_events", "fault_steps"]
        for group in metrics or ALL_METRICS:
            names.extend(METRIC_GROUPS[group])
        return pl.DataFrame(
            {
                "controller": [self.controller] * len(names),
                "metric": names,
                "value": [float(self.aggregates[n]) for n in names],
            },
            schema={"controller": pl.Utf8, "metric": pl.Utf8, "value": pl.Float64},
        )

    def to_json(self) -> Dict:
        return {"controller": self.controller, "aggregates": _json_safe(self.aggregates)}


def _json_safe(data):
    if isinstance(data, dict):
        return {k: _json_safe(v) for k, v in data.items()}
    if isinstance(data, (list, tuple)):
        return [_json_safe(v) for v in data]
    if isinstance(data, float) and not math.isfinite(data):
        return None
    return data


def write_json(data: Dict, path: Text) -> None:
    with smart_open.open(path, "w") as f:
        f.write(json.dumps(_json_safe(data), sort_keys=True, indent=2) + "\n")


def combine_summaries(reports: Sequence[StrideReport], metrics: Optional[Sequence[Text]] = None) -> pl.DataFrame:
    return pl.concat([r.summary_frame(metrics) for r in reports])


def combine_bands(reports: Sequence[StrideReport]) -> pl.DataFrame:
    return pl.concat([r.bands for r in reports])
