"""Backward pass of the non-causal log-space kernel and a finite-difference check.

The differentiated output is ``logA = logS - logZ``. Given a cotangent
``C = dL/dlogA`` the gradients flow back through two nested lse reductions;
the Jacobian of each lse is the softmax of its arguments.

The finite-difference oracle can evaluate the forward pass in float64 (through
:func:`attention_logspace_noncausal`) or at high precision with mpmath. At
step 1e-5 the float64 route carries ~1e-11 absolute cancellation noise, which
swamps gradients that are zero or tiny; the mpmath route removes it and leaves
only the O(step**2) truncation error of the central difference.
"""

from __future__ import annotations

from dataclasses import dataclass

import mpmath
import numpy as np

from .kernels import AttentionInputs, attention_logspace_noncausal, key_value_summary, _require_context
from .logspace import lse


@dataclass(frozen=True)
class AttentionGradients:
    dQ: np.ndarray
    dK: np.ndarray
    dLogV: np.ndarray

    def as_tuple(self):
        return self.dQ, self.dK, self.dLogV


def _softmax_weights(x: np.ndarray, total: np.ndarray) -> np.ndarray:
    # exp(x - lse); a reduction that is -inf contributes no gradient.
    finite = np.isfinite(total)
    with np.errstate(invalid="ignore"):
        w = np.exp(x - np.where(finite, total, 0.0))
    return np.where(finite, w, 0.0)


def _check_cotangent(inputs: AttentionInputs, cotangent) -> np.ndarray:
    C = np.asarray(cotangent, dtype=np.float64)
    if C.shape != (inputs.n_q, inputs.d_v):
        raise ValueError(f"cotangent must have shape {(inputs.n_q, inputs.d_v)}, got {C.shape}")
    return C


def backward_logspace_noncausal(inputs: AttentionInputs, cotangent) -> AttentionGradients:
    """Gradients of ``sum(cotangent * logA)`` with respect to Q, K and logV."""
    _require_context(inputs)
    C = _check_cotangent(inputs, cotangent)
    Q, K, logV = inputs.Q, inputs.K, inputs.logV

    hS, hZ = key_value_summary(K, logV)
    qs = Q[:, :, None] + hS[None]  # n_Q x d_K x d_V
    qz = Q + hZ[None]  # n_Q x d_K
    logS = lse(qs, axis=1)
    logZ = lse(qz, axis=1)

    # logA = logS - logZ, so dlogS = C and dlogZ = -sum_b C[:, b].
    g_z = -C.sum(axis=1)
    p_s = _softmax_weights(qs, logS[:, None, :])
    p_z = _softmax_weights(qz, logZ[:, None])

    dQ = np.einsum("ib,iab->ia", C, p_s) + g_z[:, None] * p_z
    d_hS = np.einsum("ib,iab->ab", C, p_s)
    d_hZ = p_z.T @ g_z

    kv = K[:, :, None] + logV[:, None, :]  # n_K x d_K x d_V
    w_s = _softmax_weights(kv, hS[None])
    w_z = _softmax_weights(K, hZ[None])
    contrib = w_s * d_hS[None]
    dK = contrib.sum(axis=2) + w_z * d_hZ[None]
    dLogV = contrib.sum(axis=1)
    return AttentionGradients(dQ, dK, dLogV)


def _loss(inputs: AttentionInputs, C: np.ndarray) -> float:
    logA = attention_logspace_noncausal(inputs).logA
    # Columns with zero cotangent may be -inf (an all-zero value column).
    return float(np.sum(C[C != 0] * logA[C != 0]))


def _mp_lse(xs):
    m = max(xs)
    if m == mpmath.ninf:
        return m
    return m + mpmath.log(mpmath.fsum(mpmath.exp(x - m) for x in xs))


def _mp_summary(K, logV, a_range, b_range):
    n_k = len(K)
    hS = {(a, b): _mp_lse([K[t][a] + logV[t][b] for t in range(n_k)]) for a in a_range for b in b_range}
    hZ = {a: _mp_lse([K[t][a] for t in range(n_k)]) for a in a_range}
    return hS, hZ


def _mp_loss(Q, hS, hZ, C, rows, cols, with_z=True):
    """Part of sum(C * logA) over ``rows`` x ``cols``; other terms are unchanged by the perturbation."""
    d_k = len(Q[0])
    total = mpmath.mpf(0)
    for i in rows:
        log_z = _mp_lse([Q[i][a] + hZ[a] for a in range(d_k)]) if with_z else 0
        for b in cols:
            if C[i][b]:
                log_s = _mp_lse([Q[i][a] + hS[a, b] for a in range(d_k)])
                total += C[i][b] * (log_s - log_z)
    return total


def _mp_perturbed_loss(name, i, j, arrays, C, base):
    Q, K, logV = arrays["Q"], arrays["K"], arrays["logV"]
    hS, hZ = base
    n_q, d_k, d_v = len(Q), len(Q[0]), len(logV[0])
    if name == "Q":
        return _mp_loss(Q, hS, hZ, C, [i], range(d_v))
    if name == "K":
        # Key feature j feeds hS[j, :] and hZ[j] only.
        dS, dZ = _mp_summary(K, logV, [j], range(d_v))
        return _mp_loss(Q, {**hS, **dS}, {**hZ, **dZ}, C, range(n_q), range(d_v))
    # logV[:, j] feeds hS[:, j] only, and never logZ.
    dS, _ = _mp_summary(K, logV, range(d_k), [j])
    return _mp_loss(Q, {**hS, **dS}, hZ, C, range(n_q), [j], with_z=False)


def _to_mp(x: np.ndarray):
    return [[mpmath.mpf(float(v)) for v in row] for row in x]


def finite_difference_oracle(
    inputs: AttentionInputs, cotangent, step: float = 1e-5, precision: str = "mp", dps: int = 40
) -> AttentionGradients:
    """Central differences of ``sum(cotangent * logA)``, one input entry at a time.

    ``precision="double"`` differentiates :func:`attention_logspace_noncausal`
    directly; ``precision="mp"`` evaluates the same composition with ``dps``
    significant digits.
    """
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    if precision not in ("mp", "double"):
        raise ValueError(f"precision must be 'mp' or 'double', got {precision!r}")
    _require_context(inputs)
    C = _check_cotangent(inputs, cotangent)
    names = ("Q", "K", "logV")
    arrays = {"Q": inputs.Q, "K": inputs.K, "logV": inputs.logV}
    grads = {}
    with mpmath.workdps(dps):
        h = mpmath.mpf(step)
        mp_arrays = {k: _to_mp(v) for k, v in arrays.items()}
        mp_c = _to_mp(C)
        mp_base = _mp_summary(mp_arrays["K"], mp_arrays["logV"], range(inputs.d_k), range(inputs.d_v))
        for name in names:
            base = arrays[name]
            g = np.zeros_like(base)
            for i, j in np.ndindex(base.shape):
                if precision == "double":
                    vals = []
                    for sign in (1.0, -1.0):
                        x = base.copy()
                        x[i, j] += sign * step
                        vals.append(_loss(AttentionInputs(**{**arrays, name: x}), C))
                    g[i, j] = (vals[0] - vals[1]) / (2 * step)
                    continue
                target = mp_arrays[name]
                orig = target[i][j]
                vals = []
                for sign in (1, -1):
                    target[i][j] = orig + sign * h
                    vals.append(_mp_perturbed_loss(name, i, j, mp_arrays, mp_c, mp_base))
                target[i][j] = orig
                g[i, j] = float((vals[0] - vals[1]) / (2 * h))
            grads[name] = g
    return AttentionGradients(grads["Q"], grads["K"], grads["logV"])


def relative_error(analytic, numeric, floor: float = 1e-8) -> np.ndarray:
    """``|a - n| / max(|a|, |n|, floor)``, elementwise."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def max_relative_error(analytic: AttentionGradients, numeric: AttentionGradients, floor: float = 1e-8) -> float:
    return max(
        float(relative_error(a, n, floor).max(initial=0.0))
        for a, n in zip(analytic.as_tuple(), numeric.as_tuple())
    )
