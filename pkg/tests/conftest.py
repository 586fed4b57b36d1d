import numpy as np
import pytest

from lseattn.kernels import AttentionInputs


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_inputs(rng, n_q, n_k, d_k, d_v, scale=2.0):
    return AttentionInputs(
        rng.uniform(-scale, scale, (n_q, d_k)),
        rng.uniform(-scale, scale, (n_k, d_k)),
        rng.uniform(-scale, scale, (n_k, d_v)),
    )


def textbook_attention(Q, K, V, c=0.0):
    """Modified attention evaluated literally: explicit exponentials, plain softmax."""
    sim = np.log(np.exp(Q) @ np.exp(K).T / np.exp(c))
    w = np.exp(sim)
    w /= w.sum(axis=1, keepdims=True)
    return w @ V, w


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
