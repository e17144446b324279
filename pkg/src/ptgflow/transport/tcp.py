"""TCP backend: one duplex connection per rank pair.

Every message travels as a 13-byte little-endian header followed by
the body::

    u8  tag kind   (0 regular, 1 large header, 2 large body)
    u32 source rank
    u64 body length

Connections are set up eagerly: rank ``r`` listens on its table entry,
accepts one connection from every higher rank and connects to every
lower one, announcing itself with a u32 rank id.
"""

import errno
import itertools
import logging
import socket
import struct
import time
from collections import deque

from ..errors import TransportError
from .base import TransferHandle, Transport

log = logging.getLogger(__name__)

HEADER = struct.Struct("<BIQ")
_HELLO = struct.Struct("<I")


def read_rank_table(path):
    """Parse ``rank host:port`` lines into a list indexed by rank."""
    entries = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                rank_s, addr = line.split()
                host, port_s = addr.rsplit(":", 1)
                rank, port = int(rank_s), int(port_s)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: expected 'rank host:port'") from None
            if rank in entries:
                raise ValueError(f"{path}:{lineno}: rank {rank} listed twice")
            entries[rank] = (host, port)
    n = len(entries)
    if sorted(entries) != list(range(n)):
        raise ValueError(f"{path}: ranks must be exactly 0..{n - 1}")
    return [entries[r] for r in range(n)]


def _recv_exact(sock, n):
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise TransportError("connection closed during handshake")
        buf += chunk
    return bytes(buf)


class _Peer:
    def __init__(self, sock):
        self.sock = sock
        self.out = deque()  # [memoryview, handle]
        self.inbuf = bytearray()
        self.closed = False


class TcpTransport(Transport):
    def __init__(self, rank, table, connect_timeout=30.0):
        self.rank = rank
        self.n_ranks = len(table)
        self._check_dest(rank)
        self._handles = itertools.count()
        self._inbox = {}  # (src, tag) -> deque[bytes]
        self._order = itertools.count()
        self._peers = {}
        host, port = table[rank]
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            listener.bind((host, port))
        except OSError as exc:
            listener.close()
            raise TransportError(f"rank {rank} cannot listen on {host}:{port}: {exc}") from exc
        listener.listen(self.n_ranks)
        listener.settimeout(connect_timeout)
        try:
            for peer in range(rank):
                self._peers[peer] = _Peer(self._connect(table[peer], connect_timeout))
            for _ in range(rank + 1, self.n_ranks):
                try:
                    sock, _ = listener.accept()
                except socket.timeout:
                    raise TransportError(f"rank {rank}: peers did not connect in time") from None
                sock.settimeout(connect_timeout)
                (peer,) = _HELLO.unpack(_recv_exact(sock, _HELLO.size))
                self._peers[peer] = _Peer(sock)
        finally:
            listener.close()
        for p in self._peers.values():
            p.sock.setblocking(False)
            p.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def _connect(self, addr, timeout):
        deadline = time.monotonic() + timeout
        while True:
            try:
                sock = socket.create_connection(addr, timeout=timeout)
                sock.sendall(_HELLO.pack(self.rank))
                return sock
            except OSError as exc:
                if time.monotonic() > deadline:
                    raise TransportError(f"rank {self.rank}: cannot reach {addr}: {exc}") from exc
                time.sleep(0.05)

    # nonblocking pump

    def _pump(self):
        for src, p in self._peers.items():
            if p.closed:
                continue
            self._flush(p)
            self._drain(src, p)

    def _flush(self, p):
        while p.out:
            item = p.out[0]
            try:
                n = p.sock.send(item[0])
            except BlockingIOError:
                return
            except OSError as exc:
                p.closed = True
                raise TransportError(f"send failed: {exc}") from exc
            if n < item[0].nbytes:
                item[0] = item[0][n:]
                return
            p.out.popleft()
            if item[1] is not None:
                item[1].done = True

    def _drain(self, src, p):
        while True:
            try:
                chunk = p.sock.recv(1 << 20)
            except BlockingIOError:
                break
            except OSError as exc:
                if exc.errno in (errno.ECONNRESET, errno.EPIPE):
                    p.closed = True
                    break
                raise TransportError(f"receive failed: {exc}") from exc
            if not chunk:
                p.closed = True
                break
            p.inbuf += chunk
        buf = p.inbuf
        pos = 0
        while len(buf) - pos >= HEADER.size:
            tag, source, length = HEADER.unpack_from(buf, pos)
            if len(buf) - pos - HEADER.size < length:
                break
            start = pos + HEADER.size
            self._deliver(source, tag, bytes(buf[start : start + length]))
            pos = start + length
        if pos:
            del buf[:pos]

    def _deliver(self, source, tag, body):
        q = self._inbox.get((source, tag))
        if q is None:
            q = self._inbox[(source, tag)] = deque()
        q.append((next(self._order), body))

    # Transport API

    def isend(self, dest, tag, data):
        self._check_dest(dest)
        self._check_tag(tag)
        mv = memoryview(data).cast("B")
        self._check_size(mv.nbytes)
        handle = TransferHandle(next(self._handles), "send")
        if dest == self.rank:
            self._deliver(dest, tag, bytes(mv))
            handle.done = True
            return handle
        p = self._peers[dest]
        if p.closed:
            raise TransportError(f"connection to rank {dest} is closed")
        p.out.append([memoryview(HEADER.pack(tag, self.rank, mv.nbytes)), None])
        p.out.append([mv, handle])
        self._flush(p)
        return handle

    def probe(self, source=None, tag=None):
        self._pump()
        best = None
        for (src, t), q in self._inbox.items():
            if not q or (source is not None and src != source) or (tag is not None and t != tag):
                continue
            if best is None or q[0][0] < best[0]:
                best = (q[0][0], src, t, len(q[0][1]))
        return None if best is None else best[1:]

    def irecv(self, source, tag, size, into=None):
        q = self._inbox.get((source, tag))
        if not q:
            raise ValueError(f"no message from {source} with tag {tag}")
        body = q[0][1]
        if len(body) != size:
            raise ValueError(f"size {size} does not match probed size {len(body)}")
        q.popleft()
        if into is None:
            buf = bytearray(body)
        else:
            buf = into
            target = memoryview(into).cast("B")
            if target.nbytes != size:
                raise ValueError(f"receive buffer holds {target.nbytes} bytes, message {size}")
            target[:] = body
        handle = TransferHandle(next(self._handles), "recv", buf, source, tag)
        handle.done = True
        return handle

    def test(self, handle):
        if not handle.done:
            self._pump()
        return handle.done

    def flush(self, timeout=10.0):
        deadline = time.monotonic() + timeout
        while any(p.out and not p.closed for p in self._peers.values()):
            self._pump()
            if time.monotonic() > deadline:
                raise TransportError("timed out flushing outgoing messages")
            time.sleep(0.0005)

    def close(self):
        try:
            self.flush()
        finally:
            for p in self._peers.values():
                try:
                    p.sock.close()
                except OSError:
                    pass
            self._peers.clear()
