"""Batch attention kernels over log-values.

Attention here uses the similarity ``log(exp(q) . exp(k))``, which makes it a
linear attention with an exponential feature map. Three evaluations are
provided:

* :func:`attention_quadratic_reference` builds the full query-key matrix and
  applies a softmax. It is the oracle for the others.
* :func:`attention_logspace_noncausal` factorises the computation into two
  nested log-sum-exp reductions and never forms a query-key matrix.
* :func:`attention_logspace_causal` replaces the inner reduction by a prefix
  scan so each query only sees keys up to its own position.

Values enter as ``logV`` so that ``V = exp(logV) >= 0`` is never formed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .logspace import NEG_INF, as_matrix, lcse, logadd, lse


class EmptyContextError(ValueError):
    """Raised when attention is requested over zero keys."""

    def __init__(self, msg: str = "empty context"):
        super().__init__(msg)


@dataclass(frozen=True)
class AttentionInputs:
    """Queries ``Q`` (n_Q x d_K), keys ``K`` (n_K x d_K) and ``logV`` (n_K x d_V)."""

    Q: np.ndarray
    K: np.ndarray
    logV: np.ndarray

    def __post_init__(self):
        Q = as_matrix(self.Q, "Q")
        K = as_matrix(self.K, "K")
        logV = as_matrix(self.logV, "logV")
        if not np.isfinite(Q).all() or not np.isfinite(K).all():
            raise ValueError("Q and K must be finite")
        if Q.shape[1] != K.shape[1]:
            raise ValueError(f"Q has d_K={Q.shape[1]} but K has d_K={K.shape[1]}")
        if K.shape[0] != logV.shape[0]:
            raise ValueError(f"K has {K.shape[0]} rows but logV has {logV.shape[0]}")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "logV", logV)

    @property
    def n_q(self) -> int:
        return self.Q.shape[0]

    @property
    def n_k(self) -> int:
        return self.K.shape[0]

    @property
    def d_k(self) -> int:
        return self.Q.shape[1]

    @property
    def d_v(self) -> int:
        return self.logV.shape[1]

    def prefix(self, t: int) -> "AttentionInputs":
        """The first ``t`` queries, keys and values."""
        return AttentionInputs(self.Q[:t], self.K[:t], self.logV[:t])


@dataclass(frozen=True)
class LogAttentionOutput:
    logS: np.ndarray
    logZ: np.ndarray
    logA: np.ndarray

    @classmethod
    def from_parts(cls, logS, logZ) -> "LogAttentionOutput":
        logS = np.asarray(logS, dtype=np.float64)
        logZ = np.asarray(logZ, dtype=np.float64)
        return cls(logS, logZ, logS - logZ[:, None])

    @property
    def attention(self) -> np.ndarray:
        """``exp(logA)``: the attention-weighted mixture of ``V``."""
        return np.exp(self.logA)


def _require_context(inputs: AttentionInputs) -> None:
    if inputs.n_k == 0:
        raise EmptyContextError()


def log_similarity(inputs: AttentionInputs, c: float = 0.0) -> np.ndarray:
    """``log(exp(Q) exp(K)^T) - c`` as an n_Q x n_K matrix."""
    Q, K = inputs.Q, inputs.K
    # Accumulate over d_K so only n_Q x n_K is ever held.
    sim = np.full((inputs.n_q, inputs.n_k), NEG_INF)
    for a in range(inputs.d_k):
        sim = logadd(sim, Q[:, a, None] + K[None, :, a])
    return sim - c


def reference_weights(inputs: AttentionInputs, c: float = 0.0) -> np.ndarray:
    """Row-softmax of the log-similarity matrix."""
    _require_context(inputs)
    sim = log_similarity(inputs, c)
    return np.exp(sim - lse(sim, axis=1)[:, None])


def attention_quadratic_reference(inputs: AttentionInputs, c: float = 0.0) -> LogAttentionOutput:
    """Softmax attention over the explicit n_Q x n_K similarity matrix.

    ``logZ`` is the log of each row's softmax normaliser, so it depends on
    ``c``; ``logA`` does not. The value mixing is done in log space so that
    ``NEG_INF`` entries of ``logV`` stay exact zeros.
    """
    _require_context(inputs)
    sim = log_similarity(inputs, c)
    logZ = lse(sim, axis=1)
    log_w = sim - logZ[:, None]
    # logA[i, j] = lse_t(log_w[i, t] + logV[t, j]), one value column at a time.
    logA = np.stack(
        [lse(log_w + inputs.logV[None, :, j], axis=1) for j in range(inputs.d_v)],
        axis=1,
    )
    return LogAttentionOutput(logA + logZ[:, None], logZ, logA)


def key_value_summary(K: np.ndarray, logV: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reduce all keys and values into ``(hS, hZ)`` of shapes d_K x d_V and d_K.

    Tokens are folded one at a time with log-add, so peak extra memory is one
    d_K x d_V block.
    """
    n_k, d_k = K.shape
    hS = np.full((d_k, logV.shape[1]), NEG_INF)
    hZ = np.full(d_k, NEG_INF)
    for t in range(n_k):
        hS = logadd(hS, K[t, :, None] + logV[t, None, :])
        hZ = logadd(hZ, K[t])
    return hS, hZ


def query_summary(Q: np.ndarray, hS: np.ndarray, hZ: np.ndarray) -> LogAttentionOutput:
    """Combine queries with a key/value summary: outer lse over d_K."""
    logS = lse(Q[:, :, None] + hS[None, :, :], axis=1)
    logZ = lse(Q + hZ[None, :], axis=1)
    return LogAttentionOutput.from_parts(logS, logZ)


def attention_logspace_noncausal(inputs: AttentionInputs) -> LogAttentionOutput:
    """Every query attends to every key, in Θ((n_Q + n_K) d_K d_V)."""
    _require_context(inputs)
    hS, hZ = key_value_summary(inputs.K, inputs.logV)
    return query_summary(inputs.Q, hS, hZ)


def attention_logspace_causal(inputs: AttentionInputs) -> LogAttentionOutput:
    """Query ``t`` attends to keys ``0..t``.

    All n prefix summaries are materialised (n x d_K x d_V) by a
    log-cumulative-sum-exp over the sequence axis.
    """
    if inputs.n_q != inputs.n_k:
        raise ValueError("causal requires square context")
    _require_context(inputs)
    K, logV, Q = inputs.K, inputs.logV, inputs.Q
    hS = lcse(K[:, :, None] + logV[:, None, :], axis=0)
    hZ = lcse(K, axis=0)
    logS = lse(Q[:, :, None] + hS, axis=1)
    logZ = lse(Q + hZ, axis=1)
    return LogAttentionOutput.from_parts(logS, logZ)
