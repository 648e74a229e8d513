"""Shared test utilities: central finite-difference gradient oracle.

The oracle perturbs raw numpy buffers and re-runs the forward function, so it
is fully independent of the reverse-mode path it checks.
"""
import numpy as np


def numeric_grad(f, arr, entries=None, eps=1e-5):
    """Central finite differences of the scalar-valued callable ``f`` with
    respect to selected flat entries of ``arr`` (all entries by default).

    ``arr`` is perturbed in place and restored; ``f`` must re-read it on every
    call. Returns a dict {flat_index: derivative}.
    """
    if entries is None:
        entries = range(arr.size)
    out = {}
    flat = arr.reshape(-1)
    for k in entries:
        old = flat[k]
        flat[k] = old + eps
        fp = f()
        flat[k] = old - eps
        fm = f()
        flat[k] = old
        out[k] = (fp - fm) / (2.0 * eps)
    return out


def rel_err(analytic, numeric, floor=1e-6):
    """Relative error with a floor so near-zero gradient pairs compare as equal."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def max_grad_rel_err(loss_fn, tensors, rng, n_entries=None, eps=1e-5):
    """Run autodiff once, then compare each tensor's gradient against the
    finite-difference oracle on a subsample of entries.

    ``loss_fn`` builds the graph from scratch and returns the loss Tensor.
    ``tensors`` are the leaf Tensors to check (requires_grad must be set).
    """
    for t in tensors:
        t.zero_grad()
    loss = loss_fn()
    loss.backward()
    grads = [np.array(t.grad, dtype=np.float64) for t in tensors]

    worst = 0.0
    for t, g in zip(tensors, grads):
        if n_entries is None or t.data.size <= n_entries:
            entries = range(t.data.size)
        else:
            entries = rng.choice(t.data.size, size=n_entries, replace=False)
        num = numeric_grad(lambda: float(loss_fn().data), t.data, entries=entries, eps=eps)
        for k, nv in num.items():
            worst = max(worst, rel_err(g.reshape(-1)[k], nv))
    return worst
