"""Central finite-difference validation of analytic gradients."""
from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Tensor, backward


def fd_gradcheck(
    func: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    h: float = 1e-6,
    samples_per_input: int = 10,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Compare analytic gradients of a scalar-valued closure against central
    differences at randomly sampled coordinates of each input.

    ``func`` must rebuild its graph from the current ``inputs`` data on every
    call. Returns the worst relative error, where the denominator is floored
    at 1e-3 so a near-zero gradient is judged on the absolute scale of the
    finite-difference noise rather than blowing up the ratio.
    """
    if rng is None:
        rng = np.random.default_rng(0)

    for t in inputs:
        t.zero_grad()
    out = func()
    if out.shape != ():
        raise ValueError(f"fd_gradcheck needs a scalar output, got shape {out.shape}")
    backward(out)
    analytic = []
    for t in inputs:
        if t.grad is None:
            raise ValueError("input did not receive a gradient; set requires_grad=True")
        analytic.append(t.grad.copy())

    worst = 0.0
    for t, a in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        n = flat.size
        k = min(samples_per_input, n)
        idx = rng.choice(n, size=k, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            f_plus = func().item()
            flat[i] = orig - h
            f_minus = func().item()
            flat[i] = orig
            fd = (f_plus - f_minus) / (2.0 * h)
            ai = a.reshape(-1)[i]
            err = abs(ai - fd) / max(abs(ai), abs(fd), 1e-3)
            worst = max(worst, err)
    return worst
