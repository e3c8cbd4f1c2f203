import json

import pytest

from gaitphase.config import RunConfig, load_config, parse_config
from gaitphase.control import ControllerKind
from gaitphase.errors import ConfigError
from gaitphase.plant import GaitSynthParams


def _data(**entries):
    return {"schema_version": 1, "input": {"synth": {}}, **entries}


def test_minimal_config_defaults():
    cfg = parse_config(_data())
    assert cfg.controller is ControllerKind.PVIC
    assert cfg.synth == GaitSynthParams()
    assert cfg.output_dir == "out"
    assert cfg.torque_limit == 2.5
    assert not cfg.pipelined


def test_config_reads_every_section():
    cfg = parse_config(
        _data(
            input={"synth": {"preset": "high_intent", "strides": 4}},
            controller="pvi-hvc",
            metrics=["angle", "estimation"],
            seed=9,
            pipelined=True,
            plant={"inertia": 0.05},
            volitional={"calibration": {"mva_gas": 1, "mva_ta": 1, "m_gas": 4, "m_ta": 0.25, "m0": 1}, "noise_floor": 0.1},
        )
    )
    assert cfg.controller is ControllerKind.PVIHVC
    assert cfg.synth.gas_burst == (0.8, 40.0, 75.0)
    assert cfg.synth.strides == 4
    assert cfg.synth.seed == 9
    assert cfg.metrics == ("angle", "estimation")
    assert cfg.plant.inertia == 0.05
    assert cfg.volitional_calibration.noise_floor == 0.1


@pytest.mark.parametrize(
    "data",
    [
        {"input": {"synth": {}}},
        _data(schema_version=2),
        _data(colour="red"),
        _data(input={"synth": {}, "csv": "x.csv"}),
        _data(input={}),
        _data(controller="fsm"),
        _data(metrics=["speed"]),
        _data(input={"synth": {"strides": 0}}),
        _data(input={"synth": {"preset": "sprint"}}),
        _data(input={"synth": {"cadence": 1.0}}),
        _data(plant={"mass": 1.0}),
        _data(volitional={"mvic": {"gas": ["a.csv"]}}),
        _data(volitional={"calibration": {"mva_gas": 1, "mva_ta": 1, "m_gas": 0.5, "m_ta": 0.25, "m0": 1}}),
        _data(volitional={"extra": 1}),
        _data(body_mass="heavy"),
    ],
)
def test_invalid_configs_are_config_errors(data):
    with pytest.raises(ConfigError):
        parse_config(data)


def test_overrides_replace_seed_and_output():
    cfg = parse_config(_data(seed=1)).with_overrides(seed=5, output_dir="elsewhere")
    assert cfg.seed == 5
    assert cfg.synth.seed == 5
    assert cfg.output_dir == "elsewhere"
    assert parse_config(_data()).with_overrides() == parse_config(_data())


def test_check_inputs_reports_missing_files():
    cfg = RunConfig(input_csv="missing.csv")
    with pytest.raises(ConfigError, match="missing.csv"):
        cfg.check_inputs()


def test_load_config(write_config):
    path = write_config(input={"csv": "walk.csv"}, controller="passive")
    cfg = load_config(path)
    assert cfg.input_csv == "walk.csv"
    assert cfg.controller is ControllerKind.PASSIVE


def test_load_config_errors():
    with pytest.raises(ConfigError):
        load_config("nope.json")
    with open("broken.json", "w") as f:
        f.write("{not json")
    with pytest.raises(ConfigError):
        load_config("broken.json")
    with open("list.json", "w") as f:
        json.dump([1, 2], f)
    with pytest.raises(ConfigError):
        load_config("list.json")
