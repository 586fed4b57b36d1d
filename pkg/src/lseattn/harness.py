"""Seeded inputs, the property-check suite, scaling benchmarks and the stream demo.

Inputs come from ``numpy.random.default_rng(seed)``, drawing Q, K and logV in
that order, each uniform on ``[-value_range, value_range]``.
"""

from __future__ import annotations

import csv
import io
import logging
import statistics
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import gradcheck, kernels, logspace, streaming
from .kernels import AttentionInputs
from .streaming import StreamState

log = logging.getLogger(__name__)

FORMS = ("quadratic", "logspace", "streaming")
BENCH_NS = tuple(2**p for p in range(7, 15))
QUADRATIC_MAX_N = 2**10
CHUNK_SWEEP = (1, 2, 7, 64)


@dataclass
class RunConfig:
    seed: int = 0
    n: int = 32
    d_k: int = 8
    d_v: int = 8
    value_range: float = 5.0
    tol: float = 1e-9
    identity_tol: float = 1e-12
    chunk: int = streaming.DEFAULT_CHUNK
    form: str | None = None
    out: str | None = None

    def validate(self) -> None:
        if self.n < 1:
            raise ValueError("empty context: --n must be at least 1")
        if self.d_k < 1 or self.d_v < 1:
            raise ValueError("--dk and --dv must be at least 1")
        if not self.value_range > 0:
            raise ValueError("--range must be positive")
        if self.chunk < 1:
            raise ValueError("--chunk must be at least 1")
        if self.form is not None and self.form not in FORMS:
            raise ValueError(f"--form must be one of {FORMS}")


def make_inputs(seed: int, n_q: int, n_k: int, d_k: int, d_v: int, value_range: float = 5.0) -> AttentionInputs:
    rng = np.random.default_rng(seed)
    Q = rng.uniform(-value_range, value_range, (n_q, d_k))
    K = rng.uniform(-value_range, value_range, (n_k, d_k))
    logV = rng.uniform(-value_range, value_range, (n_k, d_v))
    return AttentionInputs(Q, K, logV)


# ---------------------------------------------------------------------------
# property checks


@dataclass
class CheckResult:
    name: str
    max_error: float
    tol: float
    passed: bool = field(init=False)

    def __post_init__(self):
        self.max_error = float(self.max_error)
        self.passed = bool(self.max_error <= self.tol)


def _maxdiff(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    both_neg_inf = np.isneginf(a) & np.isneginf(b)
    if (np.isneginf(a) != np.isneginf(b)).any():
        return float("inf")
    with np.errstate(invalid="ignore"):
        d = np.where(both_neg_inf, 0.0, a - b)
    return float(np.max(np.abs(d), initial=0.0))


def _bad_count(*arrays) -> int:
    """Number of NaN or +inf entries."""
    return int(sum(np.isnan(x).sum() + np.isposinf(x).sum() for x in arrays))


def _state_diff(s1: StreamState, s2: StreamState) -> float:
    if s1.t != s2.t:
        return float("inf")
    return max(_maxdiff(s1.hS, s2.hS), _maxdiff(s1.hZ, s2.hZ))


def _logspace_checks(cfg: RunConfig, rng: np.random.Generator):
    a, b, c = rng.uniform(-50, 50, (3, 64))
    yield "logadd_commutative", _maxdiff(logspace.logadd(a, b), logspace.logadd(b, a)), cfg.identity_tol
    yield "logadd_associative", _maxdiff(
        logspace.logadd(logspace.logadd(a, b), c), logspace.logadd(a, logspace.logadd(b, c))
    ), cfg.identity_tol
    ident = max(_maxdiff(logspace.logadd(logspace.NEG_INF, a), a), _maxdiff(logspace.logadd(a, logspace.NEG_INF), a))
    yield "logadd_identity_exact", ident, 0.0

    m = rng.uniform(-cfg.value_range, cfg.value_range, (cfg.n, max(cfg.d_k, 2)))
    folded = m[:, 0]
    for j in range(1, m.shape[1]):
        folded = logspace.logadd(folded, m[:, j])
    yield "lse_equals_logadd_fold", _maxdiff(logspace.lse_over_axis(m, "cols"), folded), cfg.identity_tol
    alpha = 3.7
    yield "lse_shift_covariance", _maxdiff(
        logspace.lse_over_axis(m + alpha, "cols"), logspace.lse_over_axis(m, "cols") + alpha
    ), cfg.identity_tol
    yield "lcse_last_equals_lse", _maxdiff(
        logspace.lcse_over_axis(m, "cols")[:, -1], logspace.lse_over_axis(m, "cols")
    ), cfg.identity_tol


def _kernel_checks(cfg: RunConfig, inputs: AttentionInputs):
    ref = kernels.attention_quadratic_reference(inputs, 0.0)
    fast = kernels.attention_logspace_noncausal(inputs)
    yield "form_equivalence", _maxdiff(ref.attention, fast.attention), cfg.tol

    causal = kernels.attention_logspace_causal(inputs)
    prefix_err = max(
        _maxdiff(causal.logA[t - 1], kernels.attention_logspace_noncausal(inputs.prefix(t)).logA[t - 1])
        for t in range(1, inputs.n_k + 1)
    )
    yield "causal_prefix_consistency", prefix_err, cfg.tol

    cancel = 0.0
    w0 = kernels.reference_weights(inputs, 0.0)
    for c in (-3.0, 7.3):
        cancel = max(
            cancel,
            _maxdiff(kernels.attention_quadratic_reference(inputs, c).logA, ref.logA),
            _maxdiff(kernels.reference_weights(inputs, c), w0),
        )
    yield "scaling_constant_cancellation", cancel, cfg.identity_tol

    row_shift = np.linspace(-2.0, 2.0, inputs.n_q)[:, None]
    shifted_q = kernels.attention_logspace_noncausal(AttentionInputs(inputs.Q + row_shift, inputs.K, inputs.logV))
    yield "query_shift_invariance", _maxdiff(shifted_q.logA, fast.logA), cfg.identity_tol
    shifted_k = kernels.attention_logspace_noncausal(AttentionInputs(inputs.Q, inputs.K - 1.9, inputs.logV))
    yield "key_shift_invariance", _maxdiff(shifted_k.logA, fast.logA), cfg.identity_tol

    perm = np.random.default_rng(cfg.seed + 1).permutation(inputs.n_k)
    permuted = kernels.attention_logspace_noncausal(AttentionInputs(inputs.Q, inputs.K[perm], inputs.logV[perm]))
    yield "permutation_equivariance", _maxdiff(permuted.logA, fast.logA), cfg.identity_tol

    V = np.exp(inputs.logV)
    A = fast.attention
    lo, hi = V.min(axis=0), V.max(axis=0)
    # Violation of [column min, column max], relative to the column max.
    excess = np.maximum(np.maximum(lo - A, A - hi), 0.0) / hi
    yield "convexity_bound", float(excess.max()), cfg.identity_tol

    bad = _bad_count(fast.logS, fast.logZ, fast.logA) + int((~np.isfinite(fast.logZ)).sum()) + int((A <= 0).sum())
    yield "positive_finite_output", bad, 0


def _streaming_checks(cfg: RunConfig, inputs: AttentionInputs):
    K, logV, Q = inputs.K, inputs.logV, inputs.Q
    causal = kernels.attention_logspace_causal(inputs)
    rows, final = streaming.stream_log_attention(K, logV, Q)
    yield "streaming_matches_causal", _maxdiff(rows, causal.logA), cfg.tol
    query_all = streaming.state_query_all(final, Q)
    yield "query_all_matches_noncausal", _maxdiff(
        query_all.logA, kernels.attention_logspace_noncausal(inputs).logA
    ), cfg.tol

    expected_size = cfg.d_k * (cfg.d_v + 1)
    s = streaming.state_init(cfg.d_k, cfg.d_v)
    size_err = 0
    for t, (k, v) in enumerate(zip(K, logV), start=1):
        s = streaming.state_update(s, k, v)
        if t in (1, inputs.n_k):
            size_err = max(size_err, abs(s.size - expected_size), abs(len(s.to_bytes()) - streaming.snapshot_bytes(cfg.d_k, cfg.d_v)))
    yield "constant_state_size", size_err, 0

    empty = streaming.state_init(cfg.d_k, cfg.d_v)
    ident = max(_state_diff(streaming.state_combine(empty, final), final), _state_diff(streaming.state_combine(final, empty), final))
    yield "combine_identity_exact", ident, 0.0

    thirds = np.array_split(np.arange(inputs.n_k), 3)
    parts = [streaming.state_from_tokens(K[idx], logV[idx]) for idx in thirds]
    lhs = streaming.state_combine(streaming.state_combine(parts[0], parts[1]), parts[2])
    rhs = streaming.state_combine(parts[0], streaming.state_combine(parts[1], parts[2]))
    yield "combine_associative", _state_diff(lhs, rhs), 1e-11

    chunk_err = max(_state_diff(streaming.chunked_state(K, logV, chunk), final) for chunk in {cfg.chunk, *CHUNK_SWEEP})
    yield "chunked_scan_equivalence", chunk_err, 1e-11

    perm = np.random.default_rng(cfg.seed + 2).permutation(inputs.n_k)
    _, permuted = streaming.stream_log_attention(K[perm], logV[perm], Q[perm])
    yield "state_order_insensitive", _state_diff(permuted, final), cfg.identity_tol

    blob = final.to_bytes()
    yield "snapshot_roundtrip_exact", 0.0 if StreamState.from_bytes(blob).to_bytes() == blob else 1.0, 0.0


def _gradient_checks(cfg: RunConfig, rng: np.random.Generator):
    n = min(cfg.n, 8)
    d_k, d_v = min(cfg.d_k, 8), min(cfg.d_v, 8)
    inputs = make_inputs(int(rng.integers(2**31)), n, n, d_k, d_v, 2.0)
    C = rng.uniform(-1, 1, (n, d_v))
    analytic = gradcheck.backward_logspace_noncausal(inputs, C)
    numeric = gradcheck.finite_difference_oracle(inputs, C, 1e-5)
    yield "gradient_vs_finite_difference", gradcheck.max_relative_error(analytic, numeric), 1e-6
    yield "dQ_row_sums_zero", float(np.abs(analytic.dQ.sum(axis=1)).max()), 1e-10
    big = make_inputs(int(rng.integers(2**31)), n, n, d_k, d_v, 30.0)
    g = gradcheck.backward_logspace_noncausal(big, rng.uniform(-30, 30, (n, d_v)))
    yield "gradients_finite", int(sum((~np.isfinite(x)).sum() for x in g.as_tuple())), 0


def _robustness_checks(cfg: RunConfig, rng: np.random.Generator):
    inputs = make_inputs(int(rng.integers(2**31)), cfg.n, cfg.n, cfg.d_k, cfg.d_v, 30.0)
    logV = inputs.logV.copy()
    logV[rng.random(logV.shape) < 0.3] = logspace.NEG_INF
    if cfg.d_v > 1:
        logV[:, 0] = logspace.NEG_INF
    inputs = AttentionInputs(inputs.Q, inputs.K, logV)
    outs = [
        kernels.attention_quadratic_reference(inputs),
        kernels.attention_logspace_noncausal(inputs),
        kernels.attention_logspace_causal(inputs),
    ]
    rows, final = streaming.stream_log_attention(inputs.K, logV, inputs.Q)
    bad = sum(_bad_count(o.logS, o.logZ, o.logA, o.attention) for o in outs)
    bad += _bad_count(rows, final.hS, final.hZ)
    C = rng.uniform(-30, 30, (cfg.n, cfg.d_v))
    bad += _bad_count(*gradcheck.backward_logspace_noncausal(inputs, C).as_tuple())
    yield "no_nan_or_posinf_at_magnitude_30", bad, 0
    # Outputs reach e^30 here, so compare in log space.
    yield "neg_inf_logv_form_equivalence", _maxdiff(outs[0].logA, outs[1].logA), cfg.tol


def run_checks(cfg: RunConfig) -> list[CheckResult]:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    inputs = make_inputs(cfg.seed, cfg.n, cfg.n, cfg.d_k, cfg.d_v, cfg.value_range)
    groups = [
        _logspace_checks(cfg, rng),
        _kernel_checks(cfg, inputs),
        _streaming_checks(cfg, inputs),
        _gradient_checks(cfg, rng),
        _robustness_checks(cfg, rng),
    ]
    results = []
    for group in groups:
        for name, err, tol in group:
            results.append(CheckResult(name, err, tol))
            log.debug("%s: max error %.3g (tol %.3g)", name, err, tol)
    return results


def check_report(cfg: RunConfig, results: list[CheckResult]) -> dict:
    return {
        "command": "check",
        "config": {k: v for k, v in asdict(cfg).items() if k != "out"},
        "passed": all(r.passed for r in results),
        "properties": [asdict(r) for r in results],
    }


# ---------------------------------------------------------------------------
# benchmarks


@dataclass
class BenchRecord:
    n: int
    form: str
    per_token_ns: float
    state_bytes: int


def median_time(fn: Callable[[], object], reps: int = 9, warmup: int = 2) -> float:
    """Median wall-clock seconds of ``fn`` over ``reps`` runs after ``warmup`` runs."""
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def _run_stream(inputs: AttentionInputs) -> None:
    s = streaming.state_init(inputs.d_k, inputs.d_v)
    update, query = streaming.state_update, streaming.state_query_autoregressive
    for k, v, q in zip(inputs.K, inputs.logV, inputs.Q):
        s = update(s, k, v)
        query(s, q)


def bench_form(form: str, inputs: AttentionInputs, reps: int = 9, warmup: int = 2) -> BenchRecord:
    n, d_k, d_v = inputs.n_k, inputs.d_k, inputs.d_v
    if form == "streaming":
        seconds = median_time(lambda: _run_stream(inputs), reps, warmup)
        state_bytes = streaming.snapshot_bytes(d_k, d_v)
    elif form == "logspace":
        seconds = median_time(lambda: kernels.attention_logspace_causal(inputs), reps, warmup)
        # All n prefix summaries are held at once.
        state_bytes = 8 * n * d_k * (d_v + 1)
    elif form == "quadratic":
        seconds = median_time(lambda: kernels.attention_quadratic_reference(inputs), reps, warmup)
        # Every key and value must be retained to answer the next query.
        state_bytes = 8 * n * (d_k + d_v)
    else:
        raise ValueError(f"unknown form {form!r}")
    return BenchRecord(n, form, seconds / n * 1e9, state_bytes)


def run_bench(
    cfg: RunConfig, ns=BENCH_NS, reps: int = 9, warmup: int = 2, quadratic_max_n: int = QUADRATIC_MAX_N
) -> list[BenchRecord]:
    cfg.validate()
    forms = (cfg.form,) if cfg.form else FORMS
    records = []
    for n in ns:
        inputs = make_inputs(cfg.seed, n, n, cfg.d_k, cfg.d_v, cfg.value_range)
        for form in forms:
            if form == "quadratic" and n > quadratic_max_n:
                continue
            rec = bench_form(form, inputs, reps, warmup)
            log.info("n=%d form=%s per_token_ns=%.0f", n, form, rec.per_token_ns)
            records.append(rec)
    return records


def bench_csv(records: list[BenchRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["n", "form", "per_token_ns", "state_bytes"])
    for r in records:
        writer.writerow([r.n, r.form, f"{r.per_token_ns:.1f}", r.state_bytes])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# save / resume demo


def stream_demo(cfg: RunConfig, snapshot_path, resume: bool = False) -> dict:
    """Stream n tokens, snapshot, reload, stream n more; compare with one 2n run.

    With ``resume=True`` the first half is not run: the snapshot at
    ``snapshot_path`` is loaded instead. Raises :class:`streaming.SnapshotError`
    or ``OSError`` if it cannot be read.
    """
    cfg.validate()
    n = cfg.n
    inputs = make_inputs(cfg.seed, 2 * n, 2 * n, cfg.d_k, cfg.d_v, cfg.value_range)
    K, logV, Q = inputs.K, inputs.logV, inputs.Q
    reference, reference_state = streaming.stream_log_attention(K, logV, Q)

    if resume:
        first = None
    else:
        first, state = streaming.stream_log_attention(K[:n], logV[:n], Q[:n])
        state.save(snapshot_path)
    loaded = StreamState.load(snapshot_path)
    if (loaded.d_k, loaded.d_v) != (cfg.d_k, cfg.d_v):
        raise streaming.SnapshotError(
            f"snapshot has d_K={loaded.d_k}, d_V={loaded.d_v}; config has d_K={cfg.d_k}, d_V={cfg.d_v}"
        )
    if loaded.t != n:
        raise streaming.SnapshotError(f"snapshot holds t={loaded.t} tokens, expected {n}")
    roundtrip = resume or loaded.to_bytes() == state.to_bytes()
    second, final = streaming.stream_log_attention(K[n:], logV[n:], Q[n:], loaded)

    resumed = second if first is None else np.vstack([first, second])
    err = _maxdiff(resumed, reference[-len(resumed):])
    state_err = _state_diff(final, reference_state)
    passed = bool(roundtrip and err <= 1e-11 and state_err <= 1e-11)
    return {
        "command": "stream-demo",
        "config": {k: v for k, v in asdict(cfg).items() if k != "out"},
        "snapshot_bytes": len(loaded.to_bytes()),
        "resumed": resume,
        "snapshot_roundtrip_exact": bool(roundtrip),
        "max_output_error": err,
        "max_state_error": state_err,
        "tol": 1e-11,
        "passed": passed,
    }
