"""Fixed-size recurrent state for log-space attention.

A :class:`StreamState` holds two log-space accumulators over every token seen
so far:

    hS[a, b] = lse_t(K[t, a] + logV[t, b])      (d_K x d_V)
    hZ[a]    = lse_t(K[t, a])                   (d_K)

Absorbing a token and answering a query both cost O(d_K d_V) regardless of
how many tokens have been absorbed. The empty state has every accumulator at
``NEG_INF`` (an empty sum), which makes :func:`state_combine` a monoid
operation with :func:`state_init` as identity.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import reduce

import numpy as np

from .kernels import EmptyContextError, LogAttentionOutput, query_summary
from .logspace import NEG_INF, check_log_values, logadd, lse

DEFAULT_CHUNK = 64

SNAPSHOT_MAGIC = b"LSEA"
_HEADER = struct.Struct("<4sQQQ")
SNAPSHOT_HEADER_BYTES = _HEADER.size


class SnapshotError(ValueError):
    """A serialized state could not be decoded."""


@dataclass(frozen=True)
class StreamState:
    hS: np.ndarray
    hZ: np.ndarray
    t: int = 0

    @property
    def d_k(self) -> int:
        return self.hS.shape[0]

    @property
    def d_v(self) -> int:
        return self.hS.shape[1]

    @property
    def size(self) -> int:
        """Number of stored reals, d_K * (d_V + 1)."""
        return self.hS.size + self.hZ.size

    def to_bytes(self) -> bytes:
        header = _HEADER.pack(SNAPSHOT_MAGIC, self.d_k, self.d_v, self.t)
        body = np.concatenate([self.hS.ravel(), self.hZ]).astype("<f8").tobytes()
        return header + body

    @classmethod
    def from_bytes(cls, buf: bytes) -> "StreamState":
        if len(buf) < _HEADER.size:
            raise SnapshotError(f"snapshot too short for header ({len(buf)} bytes)")
        magic, d_k, d_v, t = _HEADER.unpack_from(buf)
        if magic != SNAPSHOT_MAGIC:
            raise SnapshotError(f"bad magic {magic!r}")
        if d_k < 1 or d_v < 1:
            raise SnapshotError(f"bad dimensions d_K={d_k}, d_V={d_v}")
        expected = _HEADER.size + 8 * d_k * (d_v + 1)
        if len(buf) != expected:
            raise SnapshotError(f"expected {expected} bytes for d_K={d_k}, d_V={d_v}, got {len(buf)}")
        body = np.frombuffer(buf, dtype="<f8", offset=_HEADER.size).astype(np.float64)
        try:
            check_log_values(body, "snapshot body")
        except ValueError as e:
            raise SnapshotError(str(e)) from None
        if (t == 0) != bool(np.isneginf(body).all()):
            raise SnapshotError(f"token count t={t} inconsistent with accumulators")
        hS = body[: d_k * d_v].reshape(d_k, d_v)
        return cls(hS, body[d_k * d_v :].copy(), int(t))

    def save(self, path) -> None:
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "StreamState":
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())


def snapshot_bytes(d_k: int, d_v: int) -> int:
    return SNAPSHOT_HEADER_BYTES + 8 * d_k * (d_v + 1)


def state_init(d_k: int, d_v: int) -> StreamState:
    if d_k < 1 or d_v < 1:
        raise ValueError(f"state dimensions must be positive, got d_K={d_k}, d_V={d_v}")
    return StreamState(np.full((d_k, d_v), NEG_INF), np.full(d_k, NEG_INF), 0)


def _vector(x, n: int, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.shape != (n,):
        raise ValueError(f"{name} must have length {n}, got {x.size}")
    return x


def state_update(s: StreamState, k, log_v) -> StreamState:
    """Absorb one token with key ``k`` (d_K) and log-value ``log_v`` (d_V)."""
    k = _vector(k, s.d_k, "key")
    log_v = _vector(log_v, s.d_v, "log-value")
    return StreamState(
        logadd(s.hS, k[:, None] + log_v[None, :]),
        logadd(s.hZ, k),
        s.t + 1,
    )


def state_query_autoregressive(s: StreamState, q) -> tuple[np.ndarray, float]:
    """``(logS_t, logZ_t)`` for a single query against the absorbed tokens."""
    if s.t == 0:
        raise EmptyContextError()
    q = _vector(q, s.d_k, "query")
    logS = lse(q[:, None] + s.hS, axis=0)
    logZ = float(lse(q + s.hZ, axis=0))
    return logS, logZ


def state_query_all(s: StreamState, Q) -> LogAttentionOutput:
    """Non-causal attention of every row of ``Q`` over the absorbed tokens."""
    if s.t == 0:
        raise EmptyContextError()
    Q = np.asarray(Q, dtype=np.float64)
    if Q.ndim != 2 or Q.shape[1] != s.d_k:
        raise ValueError(f"queries must be n x {s.d_k}, got shape {Q.shape}")
    return query_summary(Q, s.hS, s.hZ)


def state_combine(s1: StreamState, s2: StreamState) -> StreamState:
    """State of the concatenation of two token chunks."""
    if s1.hS.shape != s2.hS.shape:
        raise ValueError(f"cannot combine states of shapes {s1.hS.shape} and {s2.hS.shape}")
    return StreamState(logadd(s1.hS, s2.hS), logadd(s1.hZ, s2.hZ), s1.t + s2.t)


def state_from_tokens(K, logV) -> StreamState:
    """Build the state of a block of tokens in one vectorised reduction."""
    K = np.asarray(K, dtype=np.float64)
    logV = np.asarray(logV, dtype=np.float64)
    if K.ndim != 2 or logV.ndim != 2 or K.shape[0] != logV.shape[0]:
        raise ValueError(f"incompatible key/value blocks {K.shape} and {logV.shape}")
    s = state_init(K.shape[1], logV.shape[1])
    if K.shape[0] == 0:
        return s
    hS = lse(K[:, :, None] + logV[:, None, :], axis=0)
    return StreamState(hS, lse(K, axis=0), K.shape[0])


def tree_combine(states) -> StreamState:
    """Fold states pairwise, the shape a parallel reduction would take."""
    states = list(states)
    if not states:
        raise ValueError("no states to combine")
    while len(states) > 1:
        paired = [state_combine(a, b) for a, b in zip(states[::2], states[1::2])]
        if len(states) % 2:
            paired.append(states[-1])
        states = paired
    return states[0]


def chunked_state(K, logV, chunk: int = DEFAULT_CHUNK, tree: bool = True) -> StreamState:
    """State of all tokens, built per contiguous chunk and then combined."""
    if chunk < 1:
        raise ValueError(f"chunk must be positive, got {chunk}")
    K = np.asarray(K, dtype=np.float64)
    logV = np.asarray(logV, dtype=np.float64)
    parts = [state_from_tokens(K[i : i + chunk], logV[i : i + chunk]) for i in range(0, K.shape[0], chunk)]
    if not parts:
        return state_init(K.shape[1], logV.shape[1])
    return tree_combine(parts) if tree else reduce(state_combine, parts)


def stream(K, logV, Q, s: StreamState | None = None):
    """Absorb tokens one at a time, querying after each.

    Yields ``(state, logS_t, logZ_t)`` per step; starts from ``s`` if given.
    """
    K = np.asarray(K, dtype=np.float64)
    logV = np.asarray(logV, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    if s is None:
        s = state_init(K.shape[1], logV.shape[1])
    for k, v, q in zip(K, logV, Q):
        s = state_update(s, k, v)
        logS, logZ = state_query_autoregressive(s, q)
        yield s, logS, logZ


def stream_log_attention(K, logV, Q, s: StreamState | None = None) -> tuple[np.ndarray, StreamState]:
    """Run :func:`stream` to completion; returns the logA rows and final state."""
    logV = np.asarray(logV, dtype=np.float64)
    out = np.empty((len(K), logV.shape[1]))
    final = s if s is not None else state_init(np.shape(K)[1], logV.shape[1])
    for i, (final, logS, logZ) in enumerate(stream(K, logV, Q, s)):
        out[i] = logS - logZ
    return out, final
