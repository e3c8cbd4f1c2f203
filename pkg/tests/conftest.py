import json
import sys

import pytest

from gaitphase.phase import build_phase_map, calibrate_cpc
from gaitphase.plant import GaitSynthParams, synth_gait
from gaitphase.signals import condition_stream, segment_strides
from gaitphase.volitional import VolitionalCalibration


# each test runs on cwd to its temp dir
@pytest.fixture(autouse=True)
def go_to_tmpdir(request):
    # Get the fixture dynamically by its name.
    tmpdir = request.getfixturevalue("tmpdir")
    # ensure local test created packages can be imported
    sys.path.insert(0, str(tmpdir))
    # Chdir only for the duration of the test.
    with tmpdir.as_cwd():
        yield


@pytest.fixture(scope="session")
def walk():
    """Noiseless 10-stride synthetic walk."""
    return synth_gait(GaitSynthParams(strides=10))


@pytest.fixture(scope="session")
def calibrated(walk):
    conditioned = condition_stream(walk)
    strides = segment_strides(conditioned)
    cal = calibrate_cpc(strides)
    return conditioned, strides, cal, build_phase_map(strides, cal)


@pytest.fixture(scope="session")
def volitional_cal():
    return VolitionalCalibration(mva_gas=1.0, mva_ta=1.0, m_gas=4.0, m_ta=0.25, m0=1.0)


@pytest.fixture
def write_config():
    """Write a run configuration JSON into the test's directory and return its path."""

    def _write(name="run.json", **entries):
        data = {"schema_version": 1, **entries}
        with open(name, "w") as f:
            json.dump(data, f)
        return name

    return _write
