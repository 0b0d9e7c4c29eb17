"""Finite-difference verification of analytic gradients.

The checker is deliberately independent of the tape: it re-evaluates the
function under coordinate perturbations and compares central differences
against whatever the backward pass produced.
"""

from __future__ import annotations

import math

import numpy as np

from .tensor import Tape, Tensor

__all__ = ["grad_check", "grad_check_many"]


def _scalar(value) -> float:
    if not isinstance(value, Tensor) or value.data.shape != ():
        raise ValueError("grad_check requires a scalar-valued function")
    out = float(value.data)
    if not math.isfinite(out):
        raise FloatingPointError("function returned a non-finite value")
    return out


def grad_check(f, x: Tensor, eps: float = 1e-5, coords=None) -> float:
    """Max relative error between analytic and central-difference gradients.

    Error per coordinate is |analytic - numeric| / max(1, |analytic|).
    `coords` optionally restricts the sweep to a subset of flat indices;
    by default every coordinate of `x` is perturbed.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-7, 1e-3]")

    x.requires_grad = True
    x.zero_grad()
    with Tape() as tape:
        out = f(x)
        _scalar(out)
        tape.backward(out)
    if x.grad is None:
        analytic = np.zeros_like(x.data)
    else:
        analytic = np.array(x.grad, dtype=np.float64)

    flat = x.data.reshape(-1)
    if coords is None:
        coords = range(flat.size)

    worst = 0.0
    for i in coords:
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = _scalar(f(x))
        flat[i] = orig - eps
        f_minus = _scalar(f(x))
        flat[i] = orig
        numeric = (f_plus - f_minus) / (2.0 * eps)
        a = analytic.reshape(-1)[i]
        err = abs(a - numeric) / max(1.0, abs(a))
        if err > worst:
            worst = err
    return worst


def grad_check_many(f, params: dict, eps: float = 1e-5, max_coords_per_param=None, rng=None) -> float:
    """Check f's gradient w.r.t. every tensor in `params`, return the worst error.

    `f` is called with no arguments and must read the parameter tensors by
    reference. With `max_coords_per_param`, each tensor is probed at a
    deterministic random subset of coordinates, keeping the sweep affordable
    on full models.
    """
    for t in params.values():
        t.requires_grad = True
        t.zero_grad()
    with Tape() as tape:
        out = f()
        _scalar(out)
        tape.backward(out)
    analytic = {
        name: (np.zeros_like(t.data) if t.grad is None else np.array(t.grad))
        for name, t in params.items()
    }

    worst = 0.0
    for name, t in params.items():
        flat = t.data.reshape(-1)
        coords = range(flat.size)
        if max_coords_per_param is not None and flat.size > max_coords_per_param:
            if rng is None:
                rng = np.random.default_rng(0)
            coords = rng.choice(flat.size, size=max_coords_per_param, replace=False)
        a_flat = analytic[name].reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = _scalar(f())
            flat[i] = orig - eps
            f_minus = _scalar(f())
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            err = abs(a_flat[i] - numeric) / max(1.0, abs(a_flat[i]))
            if err > worst:
                worst = err
    return worst
