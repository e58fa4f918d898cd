import numpy as np
import pytest

from fskgc.numkit import Tensor, Tape, backward, grad


def finite_diff(f, tensors, h=1e-5):
    """Central finite differences of scalar f() w.r.t. each tensor in place."""
    grads = []
    for t in tensors:
        g = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = f()
            flat[i] = orig - h
            down = f()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def max_rel_err(analytic, numeric):
    denom = np.maximum(np.abs(analytic), np.maximum(np.abs(numeric), 1e-8))
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_gradients(build_loss, tensors, h=1e-5, tol=1e-4):
    """Assert analytic gradients of build_loss() match central differences.

    ``build_loss`` must construct the loss from the live ``tensors`` (their
    .data buffers are perturbed in place by the finite-difference oracle).
    """
    with Tape():
        loss = build_loss()
        analytic = grad(loss, tensors)

    def value():
        with Tape():
            return float(build_loss().data)

    numeric = finite_diff(value, tensors, h=h)
    worst = max(max_rel_err(a, n) for a, n in zip(analytic, numeric))
    assert worst < tol, f"gradient mismatch: max relative error {worst:.3e}"
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
