"""Central finite-difference gradient checking."""

from __future__ import annotations

import numpy as np


def _rel_err(a: float, n: float, floor: float = 1e-5) -> float:
    # the floor keeps exactly-zero gradients from turning ~1e-10 roundoff into a large ratio
    return abs(a - n) / max(abs(a), abs(n), floor)


def grad_check(module, x, probes: int = 20, h: float = 1e-6, seed: int = 0,
               skip=None) -> float:
    """Compare analytic and numeric gradients of ``module`` at input ``x``.

    ``module`` is anything with ``forward``/``backward``/``parameters`` (a
    layer or a :class:`~binloc.nn.layers.Sequential`). The scalar objective
    is ``sum(forward(x) * R)`` for a fixed random ``R``. ``probes`` random
    coordinates of the input and of every parameter are perturbed by
    ``+-h``. ``skip(flat_index)`` may veto input coordinates (e.g. pooling
    ties). Returns the maximum of ``|a - n| / max(|a|, |n|, 1e-5)``.
    """
    rng = np.random.default_rng(seed)
    x = np.array(x, dtype=np.float64)
    for p in module.parameters():
        p.value = p.value.astype(np.float64)
        p.grad = np.zeros_like(p.value)

    y = module.forward(x)
    proj = rng.standard_normal(y.shape)
    dx = module.backward(proj.copy())

    def objective():
        return float(np.sum(module.forward(x) * proj))

    worst = 0.0
    targets = [(x, dx)] + [(p.value, p.grad) for p in module.parameters()]
    for arr, grad in targets:
        if grad is None:
            continue
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        candidates = rng.permutation(flat.size)
        if arr is x and skip is not None:
            candidates = [i for i in candidates if not skip(i)]
        for i in candidates[:probes]:
            old = flat[i]
            flat[i] = old + h
            up = objective()
            flat[i] = old - h
            down = objective()
            flat[i] = old
            worst = max(worst, _rel_err(gflat[i], (up - down) / (2 * h)))
    return worst


def grad_check_fn(fn, x, probes: int = 20, h: float = 1e-6, seed: int = 0) -> float:
    """Finite-difference check of ``fn(x) -> (value, grad)`` for a scalar value."""
    rng = np.random.default_rng(seed)
    x = np.array(x, dtype=np.float64)
    _, grad = fn(x)
    flat = x.reshape(-1)
    worst = 0.0
    for i in rng.permutation(flat.size)[:probes]:
        old = flat[i]
        flat[i] = old + h
        up = fn(x)[0]
        flat[i] = old - h
        down = fn(x)[0]
        flat[i] = old
        worst = max(worst, _rel_err(grad.reshape(-1)[i], (up - down) / (2 * h)))
    return worst
