"""Distributed task runtime: parametrized task graphs, active messages
and counting-based termination detection."""

from .codec import MessageTag, View, ViewOf, WireFrame, decode, encode, view
from .completion import CompletionCounters
from .engine import Task, Threadpool
from .errors import BenchmarkError, MalformedFrame, ProtocolError, PtgError, TransportError
from .messaging import ActiveMessage, Communicator, LargeActiveMessage
from .taskflow import Taskflow
from .transport import LoopbackFabric, TcpTransport, loopback_configure, read_rank_table

__all__ = [
    "ActiveMessage",
    "BenchmarkError",
    "Communicator",
    "CompletionCounters",
    "LargeActiveMessage",
    "LoopbackFabric",
    "MalformedFrame",
    "MessageTag",
    "ProtocolError",
    "PtgError",
    "Task",
    "Taskflow",
    "TcpTransport",
    "Threadpool",
    "TransportError",
    "View",
    "ViewOf",
    "WireFrame",
    "decode",
    "encode",
    "loopback_configure",
    "read_rank_table",
    "view",
]
