"""Deactivate goods tags at checkout; let only the buyer's card wake them up.

Entities live in :mod:`flipflag.server`, :mod:`flipflag.reader`,
:mod:`flipflag.tag_m` and :mod:`flipflag.tag_g`; the simulated air channel,
scenario runner and attack suites live under :mod:`flipflag.simnet`.
"""
from .server import Server, ServiceDecision, SimClock
from .simnet.scenario import DEFAULT_SEED, HAPPY_PATH, World, run_scenario

__all__ = ["DEFAULT_SEED", "HAPPY_PATH", "Server", "ServiceDecision", "SimClock", "World",
           "run_scenario"]
__version__ = "0.1.0"
