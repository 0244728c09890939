"""Set-theoretic model reference adaptive control for heterogeneous CACC platoons.

The actual platoon (AP) of heterogeneous vehicles tracks a homogeneous
reference platoon (RP) through barrier-weighted adaptive laws, while a
virtual platoon (VP) driven only by the leader input carries the
string-stability and positivity certificates.
"""

__version__ = "0.1.0"

from .barrier import BarrierSpec, BarrierViolation, psi, psi_prime  # noqa: E402
from .model import (  # noqa: E402
    ControllerGains,
    InputProfile,
    Scenario,
    ScenarioError,
    VehicleParams,
    default_scenario,
    load_scenario,
    validate_scenario,
)
from .engine import SimulationAbort, Trajectory, run  # noqa: E402
from .certificates import CertificateReport, audit_trajectory, certify  # noqa: E402

__all__ = [
    "__version__",
    "BarrierSpec",
    "BarrierViolation",
    "psi",
    "psi_prime",
    "ControllerGains",
    "InputProfile",
    "Scenario",
    "ScenarioError",
    "VehicleParams",
    "default_scenario",
    "load_scenario",
    "validate_scenario",
    "SimulationAbort",
    "Trajectory",
    "run",
    "CertificateReport",
    "audit_trajectory",
    "certify",
]
