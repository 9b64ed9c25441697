"""vflkit: a small vertical federated learning toolkit.

Parties (a label-holding master, feature-holding members, and an optional
arbiter for the encrypted protocol) train shared models by exchanging
messages over an in-process or TCP backend, after matching their record
ids into one canonical row order.
"""

from .config import RunConfig, parse_config
from .frame import ARBITER, MASTER, Message, PartyId, member
from .protocols import HeConfig, ProtocolResult, TrainConfig, run_party
from .runner import read_weights, run_agent, run_local
from .tensor import Tensor

__version__ = "0.1.0"

__all__ = [
    "ARBITER",
    "MASTER",
    "HeConfig",
    "Message",
    "PartyId",
    "ProtocolResult",
    "RunConfig",
    "Tensor",
    "TrainConfig",
    "member",
    "parse_config",
    "read_weights",
    "run_agent",
    "run_local",
    "run_party",
    "__version__",
]
