"""Consensus on SE(3) for networks of rigid bodies.

Local coordinates of SO(3), SE(3) pose algebra, switching digraphs, first-order
and torque/force consensus laws, a deterministic simulator and analysis tools.
"""

from __future__ import annotations

from .errors import ConfigInvalid, ConsensusError, NumericalDivergence
from .se3 import FormationSpec, Pose, Twist
from .simulator import InitSpec, Trace, TrialConfig, load_config, monte_carlo, run_trial
from .so3 import PARAMETERIZATIONS, exp_so3, get_parameterization, log_so3
from .topology import Digraph, SwitchingSchedule

__version__ = "0.1.0"

__all__ = [
    "ConfigInvalid",
    "ConsensusError",
    "Digraph",
    "FormationSpec",
    "InitSpec",
    "NumericalDivergence",
    "PARAMETERIZATIONS",
    "Pose",
    "SwitchingSchedule",
    "Trace",
    "TrialConfig",
    "Twist",
    "exp_so3",
    "get_parameterization",
    "load_config",
    "log_so3",
    "monte_carlo",
    "run_trial",
]
