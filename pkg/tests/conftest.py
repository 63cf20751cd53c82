from pathlib import Path

import numpy as np
import pytest

from vacewpe import _accel

FIXTURES = Path(__file__).parent / "fixtures"

BACKENDS = ["numpy"] + (["numba"] if _accel.HAVE_NUMBA else [])

# filled by test_acceptance.py, echoed at the end of the run
CRITERIA_LINES = {}


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(CRITERIA_LINES):
        terminalreporter.write_line(CRITERIA_LINES[key])


def constructed_problem(rng, T=60, F=2, D=1, K=2, delay=3, lam=None):
    """``X = E + G0^H X~`` whose weighted LP solution is exactly ``G0``.

    ``X`` is drawn first, so the delayed stack is fixed. ``E`` in the last
    ``D*K`` frames (which never enter the stack when ``delay >= D*K``) is then
    chosen so that ``sum_t x~ E^H / lam = 0``. With ``lam=None`` the oracle
    weight ``|E|^2`` is used (``D`` must be 1).
    """
    from vacewpe.wpe import build_delayed_stack

    n = D * K
    assert n <= delay and (lam is not None or D == 1)
    X = crandn(rng, T, F, D)
    G0 = 0.3 * crandn(rng, F, n, D) / n
    stack = build_delayed_stack(X, delay, K)
    E = X - np.einsum("fid,tfi->tfd", np.conj(G0), stack)
    tail = np.arange(T - n, T)
    head = np.arange(T - n)
    for f in range(F):
        A = stack[tail, f, :].T
        if lam is None:
            # sum_t x~ / E = 0 with u = 1/E unknown on the tail
            b = -np.sum(stack[head, f, :] / E[head, f, :1], axis=0)
            E[tail, f, 0] = 1.0 / np.linalg.solve(A, b)
        else:
            for d in range(D):
                b = -np.sum(stack[head, f, :] * np.conj(E[head, f, d:d + 1]) / lam[head, f, None], axis=0)
                E[tail, f, d] = np.conj(np.linalg.solve(A, b) * lam[tail, f])
    X[tail] = E[tail] + np.einsum("fid,tfi->tfd", np.conj(G0), stack[tail])
    if lam is None:
        lam = np.abs(E[:, :, 0]) ** 2
    return X, E, G0, lam
