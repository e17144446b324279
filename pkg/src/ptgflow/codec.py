"""Serialization of active-message arguments into wire frames.

Frame layout (all little-endian)::

    u32 am_id
    [u32 signature hash]          only when encoded with ``checked=True``
    arg_0 arg_1 ...               in signature order

Scalars use their fixed width. Tuples are the concatenation of their
members. A view is a u64 byte length followed by the raw bytes, so a
receiver can skip or size it without knowing the element type.
"""

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import MalformedFrame

_ID = struct.Struct("<I")
_LEN = struct.Struct("<Q")

SCALARS = {
    "bool": "?",
    "i8": "b",
    "u8": "B",
    "i16": "h",
    "u16": "H",
    "i32": "i",
    "u32": "I",
    "i64": "q",
    "u64": "Q",
    "f32": "f",
    "f64": "d",
}


class MessageTag:
    REGULAR = 0
    LARGE_HEADER = 1
    LARGE_BODY = 2

    ALL = (REGULAR, LARGE_HEADER, LARGE_BODY)


class View:
    """A contiguous run of ``count`` elements of ``elem_width`` bytes.

    Wraps anything exposing the buffer protocol; numpy arrays are the
    usual case. No data is copied.
    """

    __slots__ = ("base", "count", "elem_width")

    def __init__(self, base, count=None):
        mv = memoryview(base)
        if not mv.c_contiguous:
            raise ValueError("view requires a contiguous buffer")
        self.base = base
        self.elem_width = mv.itemsize
        total = mv.nbytes // mv.itemsize
        if count is None:
            count = total
        if count < 0 or count > total:
            raise ValueError(f"count {count} outside buffer of {total} elements")
        self.count = count

    @property
    def nbytes(self):
        return self.count * self.elem_width

    def as_bytes(self):
        """Flat byte memoryview over the first ``count`` elements."""
        return memoryview(self.base).cast("B")[: self.nbytes]

    def __len__(self):
        return self.count

    def __repr__(self):
        return f"View(count={self.count}, elem_width={self.elem_width})"


@dataclass(frozen=True)
class ViewOf:
    """Signature descriptor for a view argument decoded as ``dtype``."""

    dtype: str = "u8"

    def __post_init__(self):
        np.dtype(self.dtype)


def view(dtype="u8"):
    return ViewOf(dtype)


@dataclass
class WireFrame:
    am_id: int
    tag: int
    data: bytes

    @property
    def payload(self):
        return memoryview(self.data)[_ID.size :]

    def __len__(self):
        return len(self.data)


def _check_descriptor(desc):
    if isinstance(desc, ViewOf):
        return
    if isinstance(desc, tuple):
        for d in desc:
            _check_descriptor(d)
        return
    if desc not in SCALARS:
        raise ValueError(f"unsupported type descriptor {desc!r}")


class Signature:
    """Compiled list of argument descriptors.

    Runs of scalars (including flattened tuples) are packed with a
    single :class:`struct.Struct`; views break the runs.
    """

    def __init__(self, descriptors):
        self.descriptors = tuple(descriptors)
        for d in self.descriptors:
            _check_descriptor(d)
        self._segments = []
        fmt = []
        for leaf in self._leaves(self.descriptors):
            if isinstance(leaf, ViewOf):
                if fmt:
                    self._segments.append(struct.Struct("<" + "".join(fmt)))
                    fmt = []
                self._segments.append(leaf)
            else:
                fmt.append(SCALARS[leaf])
        if fmt:
            self._segments.append(struct.Struct("<" + "".join(fmt)))
        self.hash = zlib.crc32(repr(self.descriptors).encode())
        self._flat = all(not isinstance(d, tuple) for d in self.descriptors)

    @classmethod
    def of(cls, sig):
        return sig if isinstance(sig, Signature) else cls(sig)

    @staticmethod
    def _leaves(descs):
        for d in descs:
            if isinstance(d, tuple):
                yield from Signature._leaves(d)
            else:
                yield d

    def _flatten(self, descs, values, out):
        if len(values) != len(descs):
            raise ValueError(f"expected {len(descs)} values, got {len(values)}")
        for d, v in zip(descs, values):
            if isinstance(d, tuple):
                if not isinstance(v, (tuple, list)):
                    raise ValueError(f"expected a tuple for {d!r}, got {v!r}")
                self._flatten(d, v, out)
            else:
                out.append(v)

    def _rebuild(self, descs, it):
        out = []
        for d in descs:
            if isinstance(d, tuple):
                out.append(tuple(self._rebuild(d, it)))
            else:
                out.append(next(it))
        return out

    def pack_into(self, parts, args):
        if self._flat:
            if len(args) != len(self.descriptors):
                raise ValueError(
                    f"expected {len(self.descriptors)} values, got {len(args)}"
                )
            flat = args
        else:
            flat = []
            self._flatten(self.descriptors, args, flat)
        i = 0
        for seg in self._segments:
            if isinstance(seg, ViewOf):
                raw = _view_bytes(flat[i])
                parts.append(_LEN.pack(len(raw)))
                parts.append(raw)
                i += 1
            else:
                n = len(seg.format) - 1
                try:
                    parts.append(seg.pack(*flat[i : i + n]))
                except struct.error as exc:
                    raise ValueError(f"cannot pack {flat[i:i + n]!r}: {exc}") from None
                i += n

    def unpack_from(self, buf, offset):
        mv = memoryview(buf)
        flat = []
        for seg in self._segments:
            if isinstance(seg, ViewOf):
                if offset + _LEN.size > len(mv):
                    raise MalformedFrame("truncated view length")
                (nbytes,) = _LEN.unpack_from(mv, offset)
                offset += _LEN.size
                if offset + nbytes > len(mv):
                    raise MalformedFrame("truncated view body")
                dt = np.dtype(seg.dtype).newbyteorder("<")
                if nbytes % dt.itemsize:
                    raise MalformedFrame(
                        f"view of {nbytes} bytes is not a multiple of {dt.itemsize}"
                    )
                flat.append(np.frombuffer(mv[offset : offset + nbytes], dtype=dt))
                offset += nbytes
            else:
                if offset + seg.size > len(mv):
                    raise MalformedFrame("truncated scalar run")
                flat.extend(seg.unpack_from(mv, offset))
                offset += seg.size
        if self._flat:
            return flat, offset
        return self._rebuild(self.descriptors, iter(flat)), offset


def _view_bytes(v):
    if isinstance(v, View):
        return bytes(v.as_bytes())
    if isinstance(v, np.ndarray):
        if v.dtype.byteorder == ">":
            v = v.astype(v.dtype.newbyteorder("<"))
        return np.ascontiguousarray(v).tobytes()
    if isinstance(v, (bytes, bytearray, memoryview)):
        return bytes(v)
    raise ValueError(f"unsupported view value {type(v).__name__}")


def encode(am_id, signature, args, tag=MessageTag.REGULAR, checked=False):
    """Serialize ``args`` into a fresh :class:`WireFrame`.

    The result owns its bytes, so the caller may modify its buffers as
    soon as this returns.
    """
    sig = Signature.of(signature)
    parts = [_ID.pack(am_id)]
    if checked:
        parts.append(_ID.pack(sig.hash))
    sig.pack_into(parts, args)
    return WireFrame(am_id, tag, b"".join(parts))


def peek_id(data):
    if len(data) < _ID.size:
        raise MalformedFrame("frame shorter than its header")
    return _ID.unpack_from(data, 0)[0]


def decode(frame, signature, checked=False):
    """Inverse of :func:`encode`. Returns ``(am_id, args)``."""
    data = frame.data if isinstance(frame, WireFrame) else frame
    sig = Signature.of(signature)
    am_id = peek_id(data)
    offset = _ID.size
    if checked:
        if len(data) < 2 * _ID.size:
            raise MalformedFrame("frame missing signature hash")
        (h,) = _ID.unpack_from(data, offset)
        offset += _ID.size
        if h != sig.hash:
            raise MalformedFrame(
                f"signature hash mismatch for AM {am_id}: "
                f"frame {h:#010x}, local {sig.hash:#010x}"
            )
    args, end = sig.unpack_from(data, offset)
    if end != len(data):
        raise MalformedFrame(f"{len(data) - end} trailing bytes")
    return am_id, args
