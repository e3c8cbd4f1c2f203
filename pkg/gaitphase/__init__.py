import os

__root_dir__ = os.path.dirname(os.path.abspath(__file__))

import logging

_FORMAT = "%(levelname).1s %(asctime)s %(filename)s:%(lineno)d] %(message)s"
logging.basicConfig(format=_FORMAT)
logging.root.setLevel(logging.INFO)

from gaitphase.errors import GaitPhaseError
from gaitphase.signals import SensorFrame
from gaitphase.phase import PhaseCalibration, PhaseMap
from gaitphase.impedance import ImpedanceProfile
from gaitphase.volitional import VolitionalCalibration
from gaitphase.control import ControllerConfig, ControllerKind, TorqueCommand

all = ["signals", "phase", "impedance", "volitional", "control", "plant"]
