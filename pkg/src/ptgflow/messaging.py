"""Active messages and the communicator that moves them.

An active message pairs a handler with an argument signature. Sending
serializes the arguments immediately into a fresh frame and queues it;
the frame leaves on the next :meth:`Communicator.progress` pass of the
sending rank, and the handler runs inside a progress pass of the
receiver.

Handlers run on the communication thread, one at a time. They should
only store data, insert tasks or fulfill promises: a handler that blocks
stalls every message of its rank as well as completion detection.
"""

import logging
import threading
import time
from collections import defaultdict, deque

from . import codec
from .codec import MessageTag, Signature, View
from .completion import (
    CompletionCounters,
    CompletionProtocol,
    Confirmation,
    Count,
    Request,
    Shutdown,
)
from .errors import MalformedFrame, ProtocolError, RankAborted
from .transport.base import MAX_MESSAGE_BYTES

log = logging.getLogger(__name__)

# Completion-protocol traffic uses ids no user registration can reach.
PROTOCOL_BASE = 0xFFFFFF00
_COUNT = PROTOCOL_BASE
_REQUEST = PROTOCOL_BASE + 1
_CONFIRMATION = PROTOCOL_BASE + 2
_SHUTDOWN = PROTOCOL_BASE + 3

_PROTOCOL_SIGS = {
    _COUNT: Signature(["u32", "u64", "u64"]),
    _REQUEST: Signature(["u64", "u64", "u64"]),
    _CONFIRMATION: Signature(["u32", "u64"]),
    _SHUTDOWN: Signature([]),
}
_LARGE_PREFIX = ("u64", "u64")  # sequence number, body byte length


class ActiveMessage:
    def __init__(self, comm, am_id, handler, signature):
        self.comm = comm
        self.id = am_id
        self.handler = handler
        self.signature = Signature.of(signature)

    def send(self, dest, *args):
        """Queue ``handler(*args)`` to run on rank ``dest``. Thread-safe."""
        self.comm._send_user(self, dest, args)

    def __repr__(self):
        return f"ActiveMessage(id={self.id}, handler={getattr(self.handler, '__name__', self.handler)})"


class LargeActiveMessage:
    """Active message carrying one bulk buffer outside the frame.

    * ``alloc(*args)`` runs on the receiver and returns a writable buffer
      of exactly the body size; the body is received straight into it.
    * ``process(*args)`` runs on the receiver once the body has landed.
    * ``complete(*args)`` runs on the sender once its buffer may be
      reused.
    """

    def __init__(self, comm, am_id, signature, alloc, process, complete=None):
        self.comm = comm
        self.id = am_id
        self.signature = Signature.of(signature)
        self.header_signature = Signature(_LARGE_PREFIX + tuple(self.signature.descriptors))
        self.alloc = alloc
        self.process = process
        self.complete = complete

    def send(self, dest, view, *args):
        """Send ``view`` to ``dest`` without copying it into a frame.

        The buffer behind ``view`` must stay untouched until
        ``complete`` has been called on this rank.
        """
        self.comm._send_large(self, dest, view, args)

    send_large = send


class Communicator:
    def __init__(self, transport, debug=False, trace=None, on_shutdown_sent=None):
        self.transport = transport
        self.rank = transport.rank
        self.n_ranks = transport.n_ranks
        self.debug = debug
        self.registry = []
        self.counters = CompletionCounters()
        self.completion = CompletionProtocol(
            self.rank,
            self.n_ranks,
            self.counters,
            self._send_protocol,
            trace=trace,
            on_shutdown_sent=on_shutdown_sent,
        )
        self.idle_fn = _always_idle
        # set by a launcher when a peer rank died; run() then gives up
        self.abort_event = None
        self.passes = 0
        self._lock = threading.Lock()
        self._ready = deque()  # (dest, tag, data, on_sent)
        self._sends = []  # (handle, on_sent)
        self._recvs = deque()  # handles for regular frames and large headers
        self._expected = defaultdict(deque)  # src -> (lam, args, buffer, nbytes)
        self._bodies = deque()  # (handle, lam, args)
        self._seq_out = defaultdict(int)
        self._seq_in = defaultdict(int)
        self._frozen = False
        self._closed = False

    # registration

    def _register(self, am):
        if self._frozen:
            raise ProtocolError("active messages must be registered before the first send")
        self.registry.append(am)
        return am

    def register_am(self, handler, signature=()):
        """Register ``handler`` under the next dense id (0, 1, 2, ...).

        Every rank must register the same messages in the same order.
        """
        return self._register(ActiveMessage(self, len(self.registry), handler, signature))

    def register_large_am(self, alloc, process, complete=None, signature=()):
        return self._register(
            LargeActiveMessage(self, len(self.registry), signature, alloc, process, complete)
        )

    # sending

    def _check_dest(self, dest):
        if not 0 <= dest < self.n_ranks:
            raise ValueError(f"rank {dest} outside [0, {self.n_ranks})")

    def _send_user(self, am, dest, args):
        self._check_dest(dest)
        frame = codec.encode(am.id, am.signature, args, checked=self.debug)
        if len(frame.data) > MAX_MESSAGE_BYTES:
            raise ValueError(f"frame of {len(frame.data)} bytes exceeds the 2**31 byte limit")
        with self._lock:
            if self._closed:
                raise ProtocolError("communicator has shut down")
            self._frozen = True
            self._ready.append((dest, MessageTag.REGULAR, frame.data, None))
            self.counters.on_user_queued()

    def _send_large(self, lam, dest, view, args):
        self._check_dest(dest)
        if not isinstance(view, View):
            view = View(view)
        body = view.as_bytes()
        if body.nbytes > MAX_MESSAGE_BYTES:
            raise ValueError(f"large AM body of {body.nbytes} bytes exceeds the 2**31 byte limit")
        on_sent = None
        if lam.complete is not None:
            complete = lam.complete
            on_sent = lambda: complete(*args)  # noqa: E731
        with self._lock:
            if self._closed:
                raise ProtocolError("communicator has shut down")
            self._frozen = True
            seq = self._seq_out[dest]
            self._seq_out[dest] = seq + 1
            header = codec.encode(
                lam.id, lam.header_signature, (seq, body.nbytes, *args), checked=self.debug
            )
            self._ready.append((dest, MessageTag.LARGE_HEADER, header.data, None))
            self._ready.append((dest, MessageTag.LARGE_BODY, body, on_sent))
            self.counters.on_user_queued()

    def _send_protocol(self, dest, msg):
        if isinstance(msg, Count):
            frame = codec.encode(_COUNT, _PROTOCOL_SIGS[_COUNT], msg)
        elif isinstance(msg, Request):
            frame = codec.encode(_REQUEST, _PROTOCOL_SIGS[_REQUEST], msg[1:])
        elif isinstance(msg, Confirmation):
            frame = codec.encode(_CONFIRMATION, _PROTOCOL_SIGS[_CONFIRMATION], msg)
        else:
            frame = codec.encode(_SHUTDOWN, _PROTOCOL_SIGS[_SHUTDOWN], ())
        with self._lock:
            self._frozen = True
            self._ready.append((dest, MessageTag.REGULAR, frame.data, None))

    # receiving

    def _dispatch(self, source, tag, data):
        am_id = codec.peek_id(data)
        if am_id >= PROTOCOL_BASE:
            self._dispatch_protocol(am_id, data)
            return
        if am_id >= len(self.registry):
            raise ProtocolError(f"rank {self.rank}: unknown active message id {am_id}")
        am = self.registry[am_id]
        if tag == MessageTag.REGULAR:
            if not isinstance(am, ActiveMessage):
                raise ProtocolError(f"AM {am_id} is large but arrived as a regular frame")
            _, args = self._decode(data, am.signature, am_id)
            am.handler(*args)
            self.counters.on_user_processed()
            return
        if not isinstance(am, LargeActiveMessage):
            raise ProtocolError(f"AM {am_id} is regular but arrived as a large header")
        _, fields = self._decode(data, am.header_signature, am_id)
        seq, nbytes, args = fields[0], fields[1], fields[2:]
        expected = self._seq_in[source]
        if seq != expected:
            raise ProtocolError(f"large AM from {source}: sequence {seq}, expected {expected}")
        self._seq_in[source] = expected + 1
        buf = am.alloc(*args)
        if buf is None:
            if nbytes:
                raise ProtocolError(f"alloc for AM {am_id} returned no buffer for {nbytes} bytes")
        elif memoryview(buf).nbytes != nbytes:
            raise ProtocolError(
                f"alloc for AM {am_id} returned {memoryview(buf).nbytes} bytes, body has {nbytes}"
            )
        self._expected[source].append((am, args, buf, nbytes))

    def _decode(self, data, sig, am_id):
        try:
            return codec.decode(data, sig, checked=self.debug)
        except MalformedFrame as exc:
            if self.debug:
                raise ProtocolError(
                    f"rank {self.rank}: AM {am_id} does not match the local registration "
                    f"(were active messages registered in the same order on every rank?): {exc}"
                ) from exc
            raise

    def _dispatch_protocol(self, am_id, data):
        sig = _PROTOCOL_SIGS.get(am_id)
        if sig is None:
            raise ProtocolError(f"unknown protocol message id {am_id:#x}")
        _, args = codec.decode(data, sig)
        if am_id == _COUNT:
            msg = Count(*args)
        elif am_id == _REQUEST:
            msg = Request(self.rank, *args)
        elif am_id == _CONFIRMATION:
            msg = Confirmation(*args)
        else:
            msg = Shutdown(self.rank)
        self.completion.receive(msg)
        if self.completion.done:
            with self._lock:
                self._closed = True

    # progress

    def progress(self):
        """Run one pass of the communication loop. Returns True if
        anything moved."""
        t = self.transport
        self.passes += 1
        worked = False
        # 1. hand queued frames to the transport
        if self._ready:
            with self._lock:
                ready, self._ready = self._ready, deque()
            for dest, tag, data, on_sent in ready:
                self._sends.append((t.isend(dest, tag, data), on_sent))
            worked = True
        # 2. reap finished sends
        if self._sends:
            pending = []
            for h, on_sent in self._sends:
                if t.test(h):
                    worked = True
                    if on_sent is not None:
                        on_sent()
                else:
                    pending.append((h, on_sent))
            self._sends = pending
        # 3. post receives for everything that has arrived
        for tag in (MessageTag.REGULAR, MessageTag.LARGE_HEADER):
            while True:
                m = t.probe(tag=tag)
                if m is None:
                    break
                src, mtag, size = m
                self._recvs.append(t.irecv(src, mtag, size))
                worked = True
        # 4. run handlers for completed receives, in posting order
        while self._recvs and t.test(self._recvs[0]):
            h = self._recvs.popleft()
            self._dispatch(h.source, h.tag, h.buffer)
            worked = True
        # bodies: received straight into the buffers alloc() returned
        for src, dq in self._expected.items():
            while dq:
                m = t.probe(source=src, tag=MessageTag.LARGE_BODY)
                if m is None:
                    break
                lam, args, buf, nbytes = dq.popleft()
                if m[2] != nbytes:
                    raise ProtocolError(
                        f"large AM body from {src} has {m[2]} bytes, header announced {nbytes}"
                    )
                h = t.irecv(src, MessageTag.LARGE_BODY, nbytes, into=buf if nbytes else None)
                self._bodies.append((h, lam, args))
                worked = True
        while self._bodies and t.test(self._bodies[0][0]):
            _, lam, args = self._bodies.popleft()
            lam.process(*args)
            self.counters.on_user_processed()
            worked = True
        # 5. termination detection
        if not self.completion.done:
            self.completion.step(self.idle_fn())
            worked = worked or bool(self._ready)
            if self.completion.done:
                with self._lock:
                    self._closed = True
        return worked

    @property
    def shutdown(self):
        return self.completion.done

    @property
    def finished(self):
        """Shut down and every outgoing message handed off."""
        return self.completion.done and not self._ready and not self._sends

    def run(self, idle_fn=None, max_passes=None, poll=0.0005, should_stop=None):
        """Drive :meth:`progress` until shutdown has been detected and
        flushed. Used by the pool's join on its calling thread."""
        if idle_fn is not None:
            self.idle_fn = idle_fn
        sleep = 0.0
        n = 0
        while not self.finished:
            if should_stop is not None and should_stop():
                return False
            if self.abort_event is not None and self.abort_event.is_set():
                raise RankAborted(f"rank {self.rank}: aborted because another rank failed")
            if self.progress():
                sleep = 0.0
            else:
                sleep = min(poll, sleep + poll / 16)
                time.sleep(sleep)
            n += 1
            if max_passes is not None and n >= max_passes:
                raise TimeoutError(f"rank {self.rank}: no shutdown after {n} passes")
        return True

    def close(self):
        self.transport.close()


def _always_idle():
    return True
