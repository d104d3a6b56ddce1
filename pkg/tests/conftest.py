"""Shared oracles for the test suite.

central_diff perturbs raw parameter arrays and re-runs a loss closure, so
any randomness inside the closure must be replayed identically on every
call (rebuild the generator from a fixed seed inside the closure).
"""

import numpy as np


def central_diff(loss_fn, tensors, h=1e-5):
    """Finite-difference gradients of loss_fn() w.r.t. each tensor's values."""
    grads = []
    for t in tensors:
        g = np.zeros_like(t.values)
        flat = t.values.reshape(-1)
        gflat = g.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            up = loss_fn()
            flat[k] = orig - h
            down = loss_fn()
            flat[k] = orig
            gflat[k] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


def analytic_grads(build_loss, tensors):
    """Run one fresh graph build + backward, return copies of leaf grads."""
    from dimgrow import diffcore as dc

    for t in tensors:
        t.zero_grad()
    loss = build_loss()
    dc.backward(loss)
    return [t.grad.copy() for t in tensors]


def check_grads(build_loss, tensors, rtol=1e-6, atol=1e-9, h=1e-5):
    """Compare analytic gradients against central finite differences."""
    analytic = analytic_grads(build_loss, tensors)
    numeric = central_diff(lambda: build_loss().item(), tensors, h=h)
    for a, n in zip(analytic, numeric):
        np.testing.assert_allclose(a, n, rtol=rtol, atol=atol)
