import math
import queue
from dataclasses import replace

import numpy as np
import pytest

from gaitphase.control import (
    ControlLoop,
    ControllerConfig,
    ControllerKind,
    ControllerState,
    RealTimeClock,
    ReplayClock,
    clamp_command,
    controller_step,
    torque_step_bound,
)
from gaitphase.errors import CalibrationMissingError, InvalidParameterError
from gaitphase.impedance import default_pvic_profile, eval_profile
from gaitphase.plant import GaitSynthParams, synth_gait
from gaitphase.signals import SensorFrame, stride_labels
from gaitphase.utils import circular_pct_error


@pytest.fixture(scope="module")
def pvic_profile():
    return default_pvic_profile()


@pytest.fixture
def pvic_cfg(calibrated, pvic_profile):
    _, _, cal, phase_map = calibrated
    return ControllerConfig(kind=ControllerKind.PVIC, impedance=pvic_profile, phase_calibration=cal, phase_map=phase_map)


@pytest.fixture
def hvc_cfg(pvic_cfg, volitional_cal):
    return replace(pvic_cfg, kind=ControllerKind.PVIHVC, volitional=volitional_cal)


def _run(cfg, frames):
    return ControlLoop(cfg).run(frames)


@pytest.mark.parametrize("tau, expected", [(0.5, 0.5), (3.0, 2.0), (-3.0, -2.0)])
def test_clamp_command(tau, expected):
    assert clamp_command(tau, 2.0) == expected


def test_clamp_needs_positive_limit():
    with pytest.raises(InvalidParameterError):
        clamp_command(1.0, 0.0)


def test_controller_kind_parse():
    assert ControllerKind.parse("PVI-HVC") is ControllerKind.PVIHVC
    with pytest.raises(InvalidParameterError):
        ControllerKind.parse("fsm")


def test_config_requires_calibrations(pvic_profile, calibrated):
    _, _, cal, phase_map = calibrated
    with pytest.raises(CalibrationMissingError):
        ControllerConfig(kind="pvic", impedance=pvic_profile)
    with pytest.raises(CalibrationMissingError):
        ControllerConfig(kind="pvi-hvc", impedance=pvic_profile, phase_calibration=cal, phase_map=phase_map)
    with pytest.raises(InvalidParameterError):
        ControllerConfig(kind="passive", impedance=pvic_profile, torque_limit=0.0)


def test_passive_spot_value(pvic_profile):
    cfg = ControllerConfig(kind="passive", impedance=pvic_profile)
    state = ControllerState.from_config(cfg)
    command = controller_step(cfg, state, SensorFrame(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 10.0, 0.0))
    assert command.tau_total == pytest.approx(-0.9, rel=1e-15)
    assert command.tau_vc == 0.0
    assert math.isnan(command.s_est)


def test_passive_estimates_phase_without_using_it(calibrated, pvic_profile, walk):
    _, _, cal, phase_map = calibrated
    cfg = ControllerConfig(kind="passive", impedance=pvic_profile, phase_calibration=cal, phase_map=phase_map)
    for frame, command in zip(walk, _run(cfg, walk)):
        assert 0.0 <= command.s_est <= 100.0
        assert (command.theta_eq, command.K, command.B) == (0.0, 0.09, 0.075)
        assert command.tau_pvic == pytest.approx(-0.09 * frame.theta_ankle - 0.075 * frame.theta_dot_ankle)


def test_pvic_endpoints_share_parameters(pvic_profile):
    assert eval_profile(pvic_profile, 0.0) == eval_profile(pvic_profile, 100.0)


def test_pvic_is_deterministic(pvic_cfg, walk):
    assert _run(pvic_cfg, walk) == _run(pvic_cfg, walk)


def test_pvic_composition(pvic_cfg, walk):
    for frame, command in zip(walk, _run(pvic_cfg, walk)):
        assert command.tau_vc == 0.0
        assert command.tau_total == clamp_command(command.tau_pvic, pvic_cfg.torque_limit)
        assert (command.theta_eq, command.K, command.B) == eval_profile(pvic_cfg.impedance, command.s_est)


def test_hvc_at_rest_equals_pvic_torque(hvc_cfg, walk):
    # walking baseline EMG sits below the noise floor
    for command in _run(hvc_cfg, walk):
        assert command.u == 0.0
        assert command.tau_vc == 0.0
        assert command.tau_total == clamp_command(command.tau_pvic, hvc_cfg.torque_limit)


def test_hvc_reduces_to_pvic_on_zero_emg(pvic_cfg, hvc_cfg):
    frames = synth_gait(GaitSynthParams(strides=5, emg_baseline_gas=0.0, emg_baseline_ta=0.0))
    assert len(frames) >= 1000
    assert _run(pvic_cfg, frames) == _run(hvc_cfg, frames)


def test_hvc_adds_volitional_torque(hvc_cfg):
    frames = synth_gait(GaitSynthParams(strides=3, gas_burst=(0.8, 40.0, 75.0)))
    commands = _run(hvc_cfg, frames)
    active = [c for c in commands if c.u > 0.0]
    assert active
    for c in active:
        gamma = hvc_cfg.impedance.theta_max - abs(c.theta_eq)
        assert c.tau_vc == pytest.approx(-c.K * gamma * c.u)
        assert c.tau_vc <= 0.0
    assert all(abs(c.tau_total) <= hvc_cfg.torque_limit for c in commands)


def test_clamp_events_are_counted(calibrated, pvic_profile, walk):
    _, _, cal, phase_map = calibrated
    cfg = ControllerConfig(
        kind="pvic", impedance=pvic_profile, phase_calibration=cal, phase_map=phase_map, torque_limit=0.5
    )
    loop = ControlLoop(cfg)
    commands = loop.run(walk)
    clamped = [c for c in commands if c.clamped]
    assert clamped
    assert loop.state.clamp_events == len(clamped)
    assert all(abs(c.tau_total) <= 0.5 for c in commands)


def test_fault_holds_then_zeroes(pvic_cfg, walk):
    frames = list(walk[:700])
    for i in range(500, 520):
        frames[i] = replace(frames[i], theta_tib=math.nan)
    loop = ControlLoop(pvic_cfg)
    commands = loop.run(frames)
    held = commands[499]
    for k in range(0, 11):
        c = commands[500 + k]
        assert c.fault
        assert c.tau_total == held.tau_total
    for k in range(12, 20):
        c = commands[500 + k]
        assert c.fault
        assert c.tau_total == 0.0
    assert not commands[520].fault
    assert loop.state.fault_steps == 20


def test_fault_leaves_controller_state_untouched(pvic_cfg, walk):
    frames = list(walk[:700])
    faulty = list(frames)
    for i in range(500, 520):
        faulty[i] = replace(faulty[i], p_heel=math.inf)
    skipped = frames[:500] + frames[520:]
    with_fault = _run(pvic_cfg, faulty)[520:]
    without = _run(pvic_cfg, skipped)[500:]
    assert [c.tau_total for c in with_fault] == [c.tau_total for c in without]
    assert [c.s_est for c in with_fault] == [c.s_est for c in without]


def test_fault_before_any_command_is_zero(pvic_cfg, walk):
    frames = [replace(walk[0], emg_gas=math.nan)] + list(walk[1:5])
    commands = _run(pvic_cfg, frames)
    assert commands[0].fault
    assert commands[0].tau_total == 0.0
    assert not commands[1].fault


def test_torque_is_continuous_along_a_stride(pvic_cfg, walk, calibrated):
    conditioned, strides, _, _ = calibrated
    index, _ = stride_labels(conditioned, strides)
    tau = np.array([c.tau_total for c in _run(pvic_cfg, walk)])
    labelled = (index[1:] >= 0) & (index[:-1] >= 0)
    assert labelled.sum() > 2000
    assert np.max(np.abs(np.diff(tau))[labelled]) < 0.05


def test_torque_is_continuous_across_heel_strike(pvic_cfg, walk):
    frames = [replace(f, theta_ankle=0.0, theta_dot_ankle=0.0) for f in walk]
    commands = _run(pvic_cfg, frames)
    jumps = []
    for a, b in zip(commands[:-1], commands[1:]):
        if a.s_est >= 90.0 or a.s_est <= 10.0:
            jumps.append(abs(b.tau_total - a.tau_total))
    assert jumps
    assert max(jumps) < 0.05


def test_torque_steps_respect_lipschitz_bound(pvic_cfg, walk):
    commands = _run(pvic_cfg, walk)
    theta_dot_max = max(abs(f.theta_dot_ankle) for f in walk)
    for (fa, a), (fb, b) in zip(zip(walk[:-1], commands[:-1]), zip(walk[1:], commands[1:])):
        bound = torque_step_bound(
            pvic_cfg,
            fb.theta_ankle - fa.theta_ankle,
            fb.theta_dot_ankle - fa.theta_dot_ankle,
            float(circular_pct_error(b.s_est, a.s_est)),
            theta_dot_max=theta_dot_max,
        )
        assert abs(b.tau_total - a.tau_total) <= bound + 1e-9


def test_loop_feeds_sink(pvic_cfg, walk):
    sink = queue.Queue()
    commands = ControlLoop(pvic_cfg).run(walk[:50], sink=sink)
    items = [sink.get_nowait() for _ in range(51)]
    assert items[-1] is None
    assert [c for _, c in items[:-1]] == commands
    assert sink.empty()


def test_replay_clock_tracks_frames():
    clock = ReplayClock()
    clock.wait_until(1.25)
    assert clock.now == 1.25


def test_real_time_clock_paces_steps():
    wall = [100.0]
    sleeps = []

    def sleep(dt):
        sleeps.append(dt)
        wall[0] += dt

    clock = RealTimeClock(sleep=sleep, monotonic=lambda: wall[0])
    clock.wait_until(0.0)
    clock.wait_until(0.5)
    assert sleeps == [pytest.approx(0.5)]
    wall[0] += 1.0
    clock.wait_until(0.6)
    assert clock.overruns == 1
    assert len(sleeps) == 1
