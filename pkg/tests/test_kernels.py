import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rattlab import kernels
from rattlab.kernels import _reference

try:
    from rattlab.kernels import _lstm_ext
except ImportError:  # extension not built
    _lstm_ext = None

needs_ext = pytest.mark.skipif(_lstm_ext is None, reason="compiled kernels not built")


@needs_ext
@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6), st.integers(1, 7), st.booleans())
def test_gate_kernels_agree(seed, B, H, standard):
    r = np.random.default_rng(seed)
    z = r.normal(scale=4.0, size=(B, 4 * H))
    cp = r.normal(size=(B, H))
    a = _reference.gates_forward(z, cp, standard)
    b = _lstm_ext.gates_forward(z, cp, standard)
    for x, y in zip(a, b):
        assert np.allclose(x, y, rtol=1e-14, atol=1e-15)
    dh, dc = r.normal(size=(B, H)), r.normal(size=(B, H))
    for x, y in zip(_reference.gates_backward(a[0], cp, a[1], dh, dc, standard),
                    _lstm_ext.gates_backward(a[0], cp, a[1], dh, dc, standard)):
        assert np.allclose(x, y, rtol=1e-13, atol=1e-15)


@needs_ext
@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 9), st.integers(2, 12), st.booleans())
def test_masked_xent_agrees(seed, N, V, per_row):
    r = np.random.default_rng(seed)
    logits = r.normal(scale=5.0, size=(N, V))
    support = r.random((N, V) if per_row else V) < 0.6
    targets = r.integers(0, V, size=N)
    if per_row:
        support[np.arange(N), targets] = True
    else:
        support[targets] = True
    w = r.random(N)
    a = _reference.masked_xent(logits, support, targets, w)
    b = _lstm_ext.masked_xent(logits, support, targets, w)
    assert np.allclose(a[0], b[0], rtol=1e-13, atol=1e-14)
    assert np.allclose(a[1], b[1], rtol=1e-13, atol=1e-15)
    inactive = ~np.broadcast_to(support, (N, V))
    assert not b[1][inactive].any()


def test_masked_xent_reference_values():
    logits = np.array([[0.0, 0.0, 0.0, 5.0]])
    support = np.array([True, True, True, False])
    loss, d = _reference.masked_xent(logits, support, np.array([1]), np.array([2.0]))
    assert loss[0] == pytest.approx(np.log(3.0), abs=1e-15)
    assert d[0].tolist() == pytest.approx([2 / 3, 2 / 3 - 2.0, 2 / 3, 0.0], abs=1e-15)


def test_backend_selection_env_override():
    code = "import rattlab.kernels as k; print(k.BACKEND)"
    env = dict(os.environ, RATTLAB_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
    assert kernels.BACKEND in ("python", "cython")
    if _lstm_ext is not None and not os.environ.get("RATTLAB_PURE_PYTHON"):
        assert kernels.BACKEND == "cython"
