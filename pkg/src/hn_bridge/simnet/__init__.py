from hn_bridge.simnet.engine import EventLog, LogEntry, LogKind, Simulation, run_scenario
from hn_bridge.simnet.scenario import HostRole, Scenario, ScenarioError, Step, StepAction, load_scenario

__all__ = [
    "EventLog",
    "HostRole",
    "LogEntry",
    "LogKind",
    "Scenario",
    "ScenarioError",
    "Simulation",
    "Step",
    "StepAction",
    "load_scenario",
    "run_scenario",
]
