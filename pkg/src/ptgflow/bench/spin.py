"""CPU-bound busy wait on the monotonic clock.

The loop is compiled with numba in ``nogil`` mode and reads
``CLOCK_MONOTONIC`` through libc, so spinning threads do not hold the
interpreter lock and occupy a core each, like native spin tasks would.
Falls back to a pure Python loop (which does hold the lock) when numba
or libc's ``clock_gettime`` are unavailable.
"""

import ctypes
import ctypes.util
import logging
import sys
import threading
import time

import numpy as np

_CLOCK_MONOTONIC = 1

log = logging.getLogger(__name__)


def _python_spin(seconds):
    end = time.perf_counter() + seconds
    while time.perf_counter() < end:
        pass


def _build_native():
    if not sys.platform.startswith("linux"):
        return None
    try:
        from numba import njit
    except ImportError:
        return None
    libc = ctypes.CDLL(ctypes.util.find_library("c") or "libc.so.6")
    clock_gettime = libc.clock_gettime
    clock_gettime.argtypes = [ctypes.c_int, ctypes.c_void_p]
    clock_gettime.restype = ctypes.c_int

    @njit(nogil=True)
    def _spin(seconds, ts):
        p = ts.ctypes.data
        clock_gettime(_CLOCK_MONOTONIC, p)
        start = ts[0] + ts[1] * 1e-9
        while True:
            clock_gettime(_CLOCK_MONOTONIC, p)
            if ts[0] + ts[1] * 1e-9 - start >= seconds:
                return

    _spin(0.0, np.zeros(2, dtype=np.int64))
    return _spin


_native = None
_lock = threading.Lock()
_tls = threading.local()


def native_available():
    return _get() is not _python_spin


def _get():
    global _native
    if _native is None:
        with _lock:
            if _native is None:
                try:
                    _native = _build_native() or _python_spin
                except Exception as exc:  # numba present but unusable
                    log.warning("native spin unavailable (%s); using a Python loop", exc)
                    _native = _python_spin
    return _native


def spin(seconds):
    """Busy-wait for ``seconds`` of wall-clock time."""
    fn = _native or _get()
    if fn is _python_spin:
        _python_spin(seconds)
        return
    ts = getattr(_tls, "ts", None)
    if ts is None:
        ts = _tls.ts = np.zeros(2, dtype=np.int64)
    fn(seconds, ts)


def warm_up():
    """Compile the native loop ahead of timed regions."""
    _get()
