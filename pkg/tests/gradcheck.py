"""Central finite-difference gradient checking shared by the test modules."""

import numpy as np

from kga2c import numerics as nm


def finite_difference_check(fn, tensors, eps=1e-5, rtol=1e-4):
    """Compare autodiff gradients of scalar fn() against central differences
    for every element of every tensor; returns the worst relative error."""
    loss = fn()
    for t in tensors:
        t.zero_grad()
    nm.backward(loss)
    worst = 0.0
    for t in tensors:
        grad = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        flat_grad = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = fn().item()
            flat[i] = orig - eps
            lo = fn().item()
            flat[i] = orig
            numeric = (hi - lo) / (2 * eps)
            analytic = flat_grad[i]
            denom = max(abs(numeric), abs(analytic), 1.0)
            worst = max(worst, abs(numeric - analytic) / denom)
    assert worst < rtol, f"gradient mismatch: worst relative error {worst:.3e}"
    return worst
