"""Command implementations behind the CLI: calibrate, replay, simulate and report."""

import json
import logging
import os
import queue
import threading
from dataclasses import replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Text, Tuple

import numpy as np
import polars as pl

from gaitphase.config import RunConfig
from gaitphase.control import ControlLoop, ControllerConfig, ControllerKind
from gaitphase.errors import CalibrationMissingError, ConfigError, DataError
from gaitphase.impedance import load_impedance_profile, load_references
from gaitphase.phase import (
    build_phase_map,
    calibrate_cpc,
    estimation_errors,
    map_hotspots,
    replay_estimates,
    scale_shift,
    winding_number,
)
from gaitphase.plant import AnkleParams, AnkleState, plant_step, synth_gait
from gaitphase.profile import CalibrationProfile, load_profile, save_profile
from gaitphase.report import StrideReport, combine_bands, combine_summaries, write_json
from gaitphase.signals import (
    SensorFrame,
    SignalConditioner,
    condition_stream,
    frames_to_columns,
    peak_filtered_emg,
    read_frames_csv,
    read_mvic_csv,
    segment_strides,
    stride_labels,
)
from gaitphase.telemetry import TableStore, TelemetryRecorder, read_telemetry
from gaitphase.volitional import calibrate_volitional

logger = logging.getLogger(__name__)

QUEUE_SIZE = 256


def ingest(cfg: RunConfig) -> List[SensorFrame]:
    if cfg.input_csv is not None:
        return read_frames_csv(cfg.input_csv)
    return synth_gait(cfg.synth, load_references(cfg.references, n=None))


def calibrate_stream(cfg: RunConfig, frames: Sequence[SensorFrame]) -> Tuple[CalibrationProfile, Dict]:
    """Phase calibration, plus volitional calibration when configured, from one walking record."""
    conditioned = condition_stream(frames, SignalConditioner(cfg.rate_hz))
    strides = segment_strides(conditioned, cfg.threshold)
    cal = calibrate_cpc(strides, cfg.threshold)
    phase_map = build_phase_map(strides, cal)

    first = strides[0]
    winding = winding_number(*scale_shift(first.column("theta_tib"), first.column("theta_dot_tib"), cal))
    if round(winding) != -1:
        logger.warning(f"calibration portrait winds {winding:.2f} turns, expected one clockwise turn")

    volitional = cfg.volitional_calibration
    if cfg.mvic_gas:
        gas_peaks = [peak_filtered_emg(read_mvic_csv(p)[1], cfg.rate_hz) for p in cfg.mvic_gas]
        ta_peaks = [peak_filtered_emg(read_mvic_csv(p)[1], cfg.rate_hz) for p in cfg.mvic_ta]
        columns = frames_to_columns(conditioned)
        volitional = calibrate_volitional(
            gas_peaks, ta_peaks, columns["emg_gas"], columns["emg_ta"],
            noise_floor=cfg.noise_floor, literal_bisector=cfg.literal_bisector,
        )

    profile = CalibrationProfile(cal, phase_map, volitional, cfg.threshold)
    _, s_true = stride_labels(conditioned, strides)
    labelled = np.isfinite(s_true)
    err = estimation_errors(replay_estimates(conditioned, cal, phase_map)[labelled], s_true[labelled])
    summary = {
        "command": "calibrate",
        "strides": len(strides),
        "phase_calibration": {"x0": cal.x0, "y0": cal.y0, "k": cal.k},
        "phi_heel_strike": phase_map.phi_heel_strike,
        "phase_span": phase_map.span,
        "winding_number": winding,
        "map_hotspots": [{"s": s, "slope": slope} for s, slope in map_hotspots(phase_map)],
        "self_consistency": {"mean_err": float(np.mean(err)), "max_err": float(np.max(err))},
        "volitional": volitional.to_dict() if volitional is not None else None,
    }
    return profile, summary


def cmd_calibrate(cfg: RunConfig) -> CalibrationProfile:
    cfg.check_inputs()
    profile, summary = calibrate_stream(cfg, ingest(cfg))
    os.makedirs(cfg.output_dir, exist_ok=True)
    save_profile(profile, os.path.join(cfg.output_dir, "profile.json"))
    write_json(summary, os.path.join(cfg.output_dir, "summary.json"))
    cal = profile.phase_calibration
    print(
        f"calibrated on {summary['strides']} strides: x0={cal.x0:.4f} y0={cal.y0:.4f} k={cal.k:.6f} "
        f"phi_hs={summary['phi_heel_strike']:.2f} self-consistency mean={summary['self_consistency']['mean_err']:.3f}%"
    )
    return profile


def controller_config(cfg: RunConfig, profile: Optional[CalibrationProfile]) -> ControllerConfig:
    impedance = load_impedance_profile(cfg.impedance)
    volitional = cfg.volitional_calibration
    if profile is not None and profile.volitional is not None:
        volitional = profile.volitional
    return ControllerConfig(
        kind=cfg.controller,
        impedance=impedance,
        phase_calibration=profile.phase_calibration if profile else None,
        phase_map=profile.phase_map if profile else None,
        volitional=volitional if cfg.controller is ControllerKind.PVIHVC else None,
        body_mass=cfg.body_mass,
        torque_limit=cfg.torque_limit,
        rate_hz=cfg.rate_hz,
        threshold=cfg.threshold,
    )


class ClosedLoop:
    """Control loop driving the toy ankle plant; the plant replaces the measured ankle channels."""

    def __init__(self, loop: ControlLoop, params: AnkleParams, threshold: float, rate_hz: float):
        self.loop = loop
        self.threshold = threshold
        self.dt = 1.0 / rate_hz
        self.params = params
        self.state: Optional[AnkleState] = None

    def step(self, frame: SensorFrame) -> Tuple[SensorFrame, object]:
        if self.state is None:
            self.state = AnkleState(theta=frame.theta_ankle, theta_dot=0.0, params=self.params)
        measured = replace(frame, theta_ankle=self.state.theta, theta_dot_ankle=self.state.theta_dot)
        command = self.loop.step(measured)
        stance = frame.p_heel >= self.threshold or frame.p_toe >= self.threshold
        self.state = plant_step(self.state, command.tau_total, stance, self.dt, ground_angle=frame.theta_ankle)
        return measured, command

    def run(self, frames: Iterable[SensorFrame], sink=None):
        commands = []
        try:
            for frame in frames:
                measured, command = self.step(frame)
                commands.append(command)
                if sink is not None:
                    sink.put((measured, command))
        finally:
            if sink is not None:
                sink.put(None)
        return commands


def _iter_queue(source: "queue.Queue"):
    while True:
        item = source.get()
        if item is None:
            return
        yield item


def _run_stages(frames: Sequence[SensorFrame], runner, recorder: TelemetryRecorder, pipelined: bool):
    """
    Ingestion, control and telemetry writing. Pipelined runs put each stage on its own
    thread joined by bounded queues and produce the same rows as the sequential run.
    """
    if not pipelined:
        runner.run(frames, sink=recorder)
        return

    inbox: "queue.Queue" = queue.Queue(maxsize=QUEUE_SIZE)
    outbox: "queue.Queue" = queue.Queue(maxsize=QUEUE_SIZE)
    errors: List[BaseException] = []

    def ingest_stage():
        try:
            for frame in frames:
                inbox.put(frame)
        finally:
            inbox.put(None)

    def control_stage():
        try:
            runner.run(_iter_queue(inbox), sink=outbox)
        except BaseException as e:  # re-raised on the main thread
            errors.append(e)
            # unblock the ingestion stage
            while inbox.get() is not None:
                pass

    threads = [threading.Thread(target=ingest_stage, daemon=True), threading.Thread(target=control_stage, daemon=True)]
    for thread in threads:
        thread.start()
    try:
        recorder.drain(outbox)
    except BaseException:
        # keep the control stage moving until it closes the queue
        for _ in _iter_queue(outbox):
            pass
        raise
    finally:
        for thread in threads:
            thread.join()
    if errors:
        raise errors[0]


def _finish_run(cfg: RunConfig, recorder: TelemetryRecorder, store: TableStore, command: Text, extra: Dict) -> Tuple[pl.DataFrame, StrideReport]:
    telemetry = recorder.finish()
    refs = load_references(cfg.references)
    report = StrideReport.from_telemetry(telemetry, refs, controller=cfg.controller.value)
    store.save_table("telemetry")
    store.put_table("strides", report.strides)
    store.save_table("strides")
    store.put_table("summary", report.summary_frame(cfg.metrics))
    store.save_table("summary")
    store.put_table("bands", report.bands)
    store.save_table("bands")
    summary = {"command": command, **report.to_json(), **extra}
    write_json(summary, os.path.join(cfg.output_dir, "summary.json"))
    if report.aggregates["clamp_events"]:
        logger.warning(f"{int(report.aggregates['clamp_events'])} torque clamp events")
    return telemetry, report


def cmd_replay(cfg: RunConfig) -> Tuple[pl.DataFrame, StrideReport]:
    cfg.check_inputs()
    profile = load_profile(cfg.profile) if cfg.profile else None
    if profile is None and cfg.controller is not ControllerKind.PASSIVE:
        raise CalibrationMissingError(f"{cfg.controller.value} replay needs a calibration profile")
    ctrl = controller_config(cfg, profile)
    frames = ingest(cfg)
    store = TableStore(cfg.output_dir)
    recorder = TelemetryRecorder(store, body_mass=cfg.body_mass, rate_hz=cfg.rate_hz, threshold=cfg.threshold)
    _run_stages(frames, ControlLoop(ctrl), recorder, cfg.pipelined)
    return _finish_run(cfg, recorder, store, "replay", {"steps": len(frames)})


def cmd_simulate(cfg: RunConfig) -> Tuple[pl.DataFrame, StrideReport]:
    """
    Closed loop over a synthesized walk. Without a profile the phase calibration is
    taken from the generated stream itself.
    """
    if cfg.synth is None:
        raise ConfigError("simulate needs a synth input")
    cfg.check_inputs()
    frames = ingest(cfg)
    if cfg.profile:
        profile = load_profile(cfg.profile)
    else:
        profile, _ = calibrate_stream(cfg, frames)
    ctrl = controller_config(cfg, profile)
    store = TableStore(cfg.output_dir)
    recorder = TelemetryRecorder(store, body_mass=cfg.body_mass, rate_hz=cfg.rate_hz, threshold=cfg.threshold)
    _run_stages(frames, ClosedLoop(ControlLoop(ctrl), cfg.plant, cfg.threshold, cfg.rate_hz), recorder, cfg.pipelined)
    return _finish_run(cfg, recorder, store, "simulate", {"steps": len(frames), "seed": cfg.synth.seed})


def _controller_label(path: Text) -> Text:
    summary = Path(path).with_name("summary.json")
    if summary.exists():
        with open(summary) as f:
            label = json.load(f).get("controller")
        if label:
            return label
    return Path(path).stem


def cmd_report(paths: Sequence[Text], output_dir: Text, references: Optional[Text] = None, metrics=None) -> pl.DataFrame:
    if not paths:
        raise DataError("report needs at least one telemetry file")
    refs = load_references(references)
    reports = []
    for path in paths:
        if "://" not in path and not os.path.exists(path):
            raise ConfigError(f"input file {path} does not exist")
        reports.append(StrideReport.from_telemetry(read_telemetry(path), refs, controller=_controller_label(path)))
    store = TableStore(output_dir)
    summary = combine_summaries(reports, metrics)
    store.put_table("summary", summary)
    store.save_table("summary")
    store.put_table("bands", combine_bands(reports))
    store.save_table("bands")
    write_json(
        {"command": "report", "inputs": list(paths), "reports": [r.to_json() for r in reports]},
        os.path.join(output_dir, "summary.json"),
    )
    return summary
