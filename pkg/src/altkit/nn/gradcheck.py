"""Central finite-difference gradient checking in 64-bit precision."""

import numpy as np


def relative_error(analytic, numeric, floor=1e-6):
    """max |a - n| / max(|a|, |n|, floor) elementwise."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def numeric_gradient(f, x, eps=1e-5, indices=None):
    """Central differences of scalar ``f`` at ``x`` (modified in place, restored)."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    for i in idx:
        orig = flat[i]
        flat[i] = orig + eps
        fp = f()
        flat[i] = orig - eps
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
    return grad


def gradient_check(op, x, eps=1e-5):
    """Compare ``op``'s analytic gradient against central differences.

    ``op(x)`` returns ``(value, grad)`` with ``value`` a scalar and ``grad``
    shaped like ``x``. Returns the max relative error.
    """
    x = np.array(x, dtype=np.float64)
    _, analytic = op(x)
    numeric = numeric_gradient(lambda: op(x)[0], x, eps)
    return relative_error(analytic, numeric)


def check_layer(layer, x, rng, train=True, eps=1e-5, max_entries=None):
    """Check input and parameter gradients of ``layer`` on the loss sum(y * R).

    The layer must already be in float64. Returns {name: max relative error}.
    ``max_entries`` limits how many entries per tensor are perturbed.
    """
    x = np.array(x, dtype=np.float64)
    y = layer.forward(x, train=train)
    proj = rng.standard_normal(y.shape)

    def loss():
        return float((layer.forward(x, train=train) * proj).sum())

    for p in layer.params():
        p.zero_grad()
    layer.forward(x, train=train)
    dx = layer.backward(proj)
    analytic = {"input": dx.copy()}
    for p in layer.params():
        analytic[p.name] = p.grad.copy()

    def pick(arr):
        if max_entries is None or arr.size <= max_entries:
            return None
        return rng.choice(arr.size, size=max_entries, replace=False)

    errors = {}
    sel = pick(x)
    num = numeric_gradient(loss, x, eps, sel)
    errors["input"] = _masked_error(analytic["input"], num, sel)
    for p in layer.params():
        sel = pick(p.value)
        num = numeric_gradient(loss, p.value, eps, sel)
        errors[p.name] = _masked_error(analytic[p.name], num, sel)
    return errors


def _masked_error(analytic, numeric, sel):
    if sel is None:
        return relative_error(analytic, numeric)
    return relative_error(analytic.reshape(-1)[sel], numeric.reshape(-1)[sel])
