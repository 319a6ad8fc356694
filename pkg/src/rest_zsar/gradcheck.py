"""Central finite-difference gradient checking."""

import numpy as np

# relative error uses max(|analytic|, |numeric|, REL_FLOOR) as denominator so
# gradients that are zero up to roundoff don't blow the ratio up
REL_FLOOR = 1e-6


def numeric_grad(loss_fn, tensors, h=1e-5):
    """d loss_fn() / d t.data for each tensor by central differences."""
    grads = []
    for t in tensors:
        g = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn()
            flat[i] = orig - h
            down = loss_fn()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def max_rel_error(analytic, numeric):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), REL_FLOOR)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def check(loss_graph_fn, tensors, h=1e-5):
    """Compare backward gradients to finite differences.

    ``loss_graph_fn`` builds and returns a scalar Tensor from ``tensors``.
    Returns the worst elementwise relative error.
    """
    for t in tensors:
        t.zero_grad()
    loss_graph_fn().backward()
    analytic = [t.grad.copy() for t in tensors]
    numeric = numeric_grad(lambda: float(loss_graph_fn().data), tensors, h)
    return max_rel_error(analytic, numeric)
