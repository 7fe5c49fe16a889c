"""Central finite-difference gradient checking."""

import numpy as np


def numerical_grad(f, arr, index, h=1e-3):
    """d f / d arr[index] by central differences; ``arr`` is perturbed in place."""
    orig = arr[index]
    arr[index] = orig + h
    up = float(f())
    arr[index] = orig - h
    down = float(f())
    arr[index] = orig
    return (up - down) / (2 * h)


def relative_error(analytic, numeric, floor=1e-8):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


STEP_LADDER = (1e-3, 1e-4, 1e-5, 1e-6, 1e-7)


def ladder_error(f, arr, index, analytic, steps=STEP_LADDER):
    """Smallest relative error over a ladder of step sizes.

    Large steps suffer truncation error where the loss curves sharply (a
    normalisation over a near-constant vector, say), small steps suffer
    round-off; the best rung isolates a wrong gradient from both.
    """
    return min(relative_error(analytic, numerical_grad(f, arr, index, h)) for h in steps)


def check_gradients(f, tensors, h=1e-3, samples=None, rng=None):
    """Compare analytic gradients against finite differences.

    ``f`` builds a fresh scalar loss Tensor from ``tensors`` on each call.
    Returns a list of ``(tensor_index, element_index, analytic, numeric, rel_err)``.
    When ``samples`` is given only that many random elements per tensor are checked.
    """
    for t in tensors:
        t.grad = None
    loss = f()
    loss.backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in tensors]
    rng = rng or np.random.default_rng(0)
    results = []
    for ti, t in enumerate(tensors):
        flat = list(np.ndindex(t.shape))
        if samples is not None and len(flat) > samples:
            flat = [flat[i] for i in rng.choice(len(flat), samples, replace=False)]
        for idx in flat:
            num = numerical_grad(lambda: f().data.reshape(-1)[0], t.data, idx, h)
            a = float(analytic[ti][idx])
            results.append((ti, idx, a, num, relative_error(a, num)))
    return results
