"""Log-sum-exp attention: quadratic reference, parallel log-space and streaming forms."""

from .gradcheck import AttentionGradients, backward_logspace_noncausal, finite_difference_oracle
from .kernels import (
    AttentionInputs,
    EmptyContextError,
    LogAttentionOutput,
    attention_logspace_causal,
    attention_logspace_noncausal,
    attention_quadratic_reference,
)
from .logspace import NEG_INF, EmptyReductionError, lcse_over_axis, logadd, lse_over_axis
from .streaming import (
    SnapshotError,
    StreamState,
    chunked_state,
    state_combine,
    state_init,
    state_query_all,
    state_query_autoregressive,
    state_update,
)

__version__ = "0.1.0"
