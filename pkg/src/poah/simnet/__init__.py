from .events import AdversaryConfig, LatencyModel, Network, SimEvent
from .simulation import InvariantViolation, Simulation, SimulationReport, locate_tampering, run

__all__ = [
    "AdversaryConfig",
    "InvariantViolation",
    "LatencyModel",
    "Network",
    "SimEvent",
    "Simulation",
    "SimulationReport",
    "locate_tampering",
    "run",
]
