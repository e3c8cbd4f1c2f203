import math

import numpy as np
import pytest

from gaitphase.errors import (
    CalibrationMissingError,
    InsufficientCalibrationDataError,
    InvalidCalibrationError,
    ROMViolationError,
)
from gaitphase.volitional import (
    IntentDecoder,
    VolitionalCalibration,
    bisector,
    calibrate_cocontraction,
    calibrate_mva,
    calibrate_volitional,
    decode_intent,
    effective_equilibrium,
    normalize_emg,
    volitional_torque,
)


def _reference_decode(u_p, u_d, cal):
    """Direct vectorised evaluation of the co-contraction split, used as an oracle."""
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(u_d == 0.0, np.inf, u_p / u_d)
    ratio = np.where(u_p == 0.0, 0.0, ratio)
    m = np.clip(ratio, cal.m_ta, cal.m_gas)
    mag = np.minimum(1.0, np.hypot(u_p, u_d))
    u = np.where(m >= cal.m0, mag * (m - cal.m0) / (cal.m_gas - cal.m0), -mag * (m - cal.m0) / (cal.m_ta - cal.m0))
    rest = (u_p < cal.noise_floor) & (u_d < cal.noise_floor)
    return np.where(rest, 0.0, u)


@pytest.mark.parametrize("emg, mva, expected", [(0.5, 1.0, 0.5), (0.0, 0.3, 0.0), (1.2, 1.0, 1.2), (9.0, 1.0, 1.5)])
def test_normalize_emg(emg, mva, expected):
    assert normalize_emg(emg, mva) == pytest.approx(expected)


def test_normalize_emg_needs_mva():
    with pytest.raises(CalibrationMissingError):
        normalize_emg(0.5, 0.0)


def test_decode_examples(volitional_cal):
    assert decode_intent(0.0, 0.0, volitional_cal) == 0.0
    assert decode_intent(1.0, 0.0, volitional_cal) == pytest.approx(1.0)
    assert decode_intent(0.0, 1.0, volitional_cal) == pytest.approx(-1.0)
    assert decode_intent(0.6, 0.3, volitional_cal) == pytest.approx(math.sqrt(0.45) / 3.0)


def test_decode_caps_magnitude(volitional_cal):
    assert decode_intent(1.5, 0.0, volitional_cal) == pytest.approx(1.0)
    assert decode_intent(1.2, 1.2, volitional_cal) == pytest.approx(0.0)


def test_decode_below_noise_floor_is_rest(volitional_cal):
    assert decode_intent(0.04, 0.0, volitional_cal) == 0.0
    assert decode_intent(0.049, 0.049, volitional_cal) == 0.0
    assert decode_intent(0.06, 0.0, volitional_cal) == pytest.approx(0.06)


def test_decode_matches_reference_evaluation(volitional_cal):
    rng = np.random.default_rng(11)
    u_p = rng.uniform(0.0, 1.5, 10_000)
    u_d = rng.uniform(0.0, 1.5, 10_000)
    u_p[:50] = 0.0
    u_d[50:100] = 0.0
    expected = _reference_decode(u_p, u_d, volitional_cal)
    got = np.array([decode_intent(p, d, volitional_cal) for p, d in zip(u_p, u_d)])
    np.testing.assert_allclose(got, expected, rtol=0.0, atol=1e-12)


def test_decode_is_bounded_and_sign_correct(volitional_cal):
    rng = np.random.default_rng(12)
    cal = volitional_cal
    for u_p, u_d in rng.uniform(0.0, 2.0, size=(10_000, 2)):
        u = decode_intent(u_p, u_d, cal)
        assert -1.0 <= u <= 1.0
        if u_p >= cal.noise_floor or u_d >= cal.noise_floor:
            m = min(cal.m_gas, max(cal.m_ta, u_p / u_d))
            assert (u >= 0.0) == (m >= cal.m0)


def test_decode_is_monotone_in_plantarflexor_activation(volitional_cal):
    cal = volitional_cal
    for u_d in (0.1, 0.2, 0.35, 0.5):
        lo, hi = cal.m_ta * u_d, min(cal.m_gas * u_d, math.sqrt(1.0 - u_d**2))
        u = [decode_intent(u_p, u_d, cal) for u_p in np.linspace(lo, hi, 400)]
        assert np.all(np.diff(u) >= -1e-12)


@pytest.mark.parametrize("m_gas, m_ta, expected", [(4.0, 0.25, 1.0), (2.5, 2.5, 2.5), (1.0, 1.0, 1.0)])
def test_bisector(m_gas, m_ta, expected):
    assert bisector(m_gas, m_ta) == pytest.approx(expected)


def test_bisector_literal_form():
    assert bisector(4.0, 0.25, literal=True) == pytest.approx(math.atan((math.tan(4.0) + math.tan(0.25)) / 2.0))


def test_bisector_rejects_bad_ordering():
    with pytest.raises(InvalidCalibrationError):
        bisector(0.25, 4.0)
    with pytest.raises(InvalidCalibrationError):
        bisector(1.0, 0.0)


def test_calibration_ordering_is_checked():
    with pytest.raises(InvalidCalibrationError):
        VolitionalCalibration(mva_gas=1.0, mva_ta=1.0, m_gas=4.0, m_ta=0.25, m0=5.0)
    with pytest.raises(InvalidCalibrationError):
        VolitionalCalibration(mva_gas=0.0, mva_ta=1.0, m_gas=4.0, m_ta=0.25, m0=1.0)


def test_calibration_dict_round_trip(volitional_cal):
    assert VolitionalCalibration.from_dict(volitional_cal.to_dict()) == volitional_cal
    with pytest.raises(InvalidCalibrationError):
        VolitionalCalibration.from_dict({"mva_gas": 1.0})


@pytest.mark.parametrize(
    "trials, expected", [([0.8, 1.0, 0.9, 0.95, 0.85], 1.0), ([0.7], 0.7)]
)
def test_calibrate_mva(trials, expected):
    assert calibrate_mva(trials) == expected


@pytest.mark.parametrize("trials", [[], [0.0, 0.0]])
def test_calibrate_mva_needs_activity(trials):
    with pytest.raises(CalibrationMissingError):
        calibrate_mva(trials)


def test_cocontraction_from_constant_segments():
    u_p = np.array([0.8] * 50 + [0.2] * 50)
    u_d = np.array([0.2] * 50 + [0.8] * 50)
    m_gas, m_ta, m0 = calibrate_cocontraction(u_p, u_d)
    assert m_gas == pytest.approx(4.0)
    assert m_ta == pytest.approx(0.25)
    assert m0 == pytest.approx(1.0)
    assert calibrate_cocontraction(np.tile(u_p, 2), np.tile(u_d, 2)) == pytest.approx((m_gas, m_ta, m0))


def test_cocontraction_needs_both_muscles():
    with pytest.raises(InsufficientCalibrationDataError):
        calibrate_cocontraction(np.full(20, 0.8), np.full(20, 0.2))
    with pytest.raises(InsufficientCalibrationDataError):
        calibrate_cocontraction(np.full(20, 0.2), np.full(20, 0.8))


def test_calibrate_volitional_normalizes_walking_emg():
    emg_gas = np.array([1.6] * 10 + [0.4] * 10)
    emg_ta = np.array([0.2] * 10 + [0.8] * 10)
    cal = calibrate_volitional([1.0, 2.0], [0.5, 1.0], emg_gas, emg_ta)
    assert cal.mva_gas == 2.0
    assert cal.mva_ta == 1.0
    assert cal.m_gas == pytest.approx(4.0)
    assert cal.m_ta == pytest.approx(0.25)
    assert cal.m0 == pytest.approx(1.0)


def test_intent_decoder(volitional_cal):
    sample = IntentDecoder(volitional_cal).decode(0.6, 0.3)
    assert (sample.u_p, sample.u_d) == (0.6, 0.3)
    assert sample.u == pytest.approx(math.sqrt(0.45) / 3.0)


def test_volitional_torque_examples():
    assert volitional_torque(0.0, 0.2, 14.0, 15.0) == 0.0
    assert volitional_torque(1.0, 0.09, 0.0, 15.0) == pytest.approx(-1.35)
    assert volitional_torque(0.7, 0.2, -15.0, 15.0) == 0.0
    assert volitional_torque(-0.5, 0.2, 5.0, 15.0) == pytest.approx(1.0)


def test_volitional_torque_checks_range_of_motion():
    with pytest.raises(ROMViolationError):
        volitional_torque(0.5, 0.2, 16.0, 15.0)
    with pytest.raises(ROMViolationError):
        volitional_torque(0.0, 0.2, 16.0, 15.0)


def test_effective_equilibrium_stays_in_range():
    rng = np.random.default_rng(13)
    theta_max = 15.0
    theta_eq = rng.uniform(-theta_max, theta_max, 100_000)
    u = rng.uniform(-1.0, 1.0, 100_000)
    eff = effective_equilibrium(theta_eq, u, theta_max)
    assert np.all(np.abs(eff) <= theta_max + 1e-12)
    assert np.all(np.abs(effective_equilibrium(theta_eq, np.sign(u), theta_max)) <= theta_max + 1e-12)


def test_combined_torque_acts_about_effective_equilibrium():
    K, theta_eq, theta, u, theta_max = 0.2, -3.0, 4.0, 0.6, 15.0
    combined = -K * (theta - theta_eq) + volitional_torque(u, K, theta_eq, theta_max)
    assert combined == pytest.approx(-K * (theta - effective_equilibrium(theta_eq, u, theta_max)))
