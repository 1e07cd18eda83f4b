"""Simulator and checkers for causally consistent transactional key-value stores."""
from .history import History, OpEvent, Transaction, ValueId, bottom, causal_precedes, project_client
from .simnet import ClientScript, Schedule, Simulator, paired_run, run
from .protocols import get_protocol, protocol_names, register_protocol

__version__ = "0.1.0"
