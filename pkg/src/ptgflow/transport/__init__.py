from ..codec import MessageTag
from .base import MAX_MESSAGE_BYTES, TransferHandle, Transport
from .loopback import LoopbackFabric, LoopbackTransport, loopback_configure
from .tcp import TcpTransport, read_rank_table

__all__ = [
    "MAX_MESSAGE_BYTES",
    "LoopbackFabric",
    "LoopbackTransport",
    "MessageTag",
    "TcpTransport",
    "TransferHandle",
    "Transport",
    "loopback_configure",
    "read_rank_table",
]
