"""Batched time stepping for dX = [AX + extra]dt + sum_k G_k X dW^k.

State arrays have shape (R, N, d): R replicas (initial states, inputs)
share the noise of each of the N paths. ``dW`` has shape (N, steps, m).
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import PositivityError

EPS_NEG = 1e-12
MAX_HALVING = 8


def _step(x, A, diag_rate, offdiag, S_k, dt, extra, scheme):
    if scheme == "split":
        out = x * np.exp(diag_rate * dt + S_k) + dt * (x @ offdiag.T)
        if extra is not None:
            out += dt * extra
        return out
    drift = x @ A.T
    if extra is not None:
        drift += extra
    return x + dt * drift + x * S_k


def run(
    x0: np.ndarray,
    A: np.ndarray,
    G: np.ndarray,
    dW: np.ndarray,
    dt: float,
    *,
    feedback: Callable | None = None,
    inputs: Callable | None = None,
    scheme: str = "em",
    on_step: Callable | None = None,
    fine: Callable | None = None,
) -> np.ndarray:
    """Advance ``x0`` through all steps of ``dW`` and return the final state.

    ``feedback(x)`` adds state-dependent drift, ``inputs(k)`` adds drift that
    is constant over step k. ``on_step(k, x)`` sees the state at node k
    (k = 0 is the initial state). ``fine(n, k, levels)`` returns
    ``2**levels`` sub-increments of step k on path n; without it a positivity
    violation is an immediate error.
    """
    if scheme not in ("em", "split"):
        raise ValueError(f"unknown scheme {scheme!r}")
    x = np.array(x0, dtype=float)
    n_steps = dW.shape[1]
    S = dW @ G  # (N, steps, d)
    C = np.sum(G * G, axis=0)
    diag_rate = np.diag(A) - 0.5 * C
    offdiag = A - np.diag(np.diag(A))
    if on_step is not None:
        on_step(0, x)
    for k in range(n_steps):
        extra = None
        if feedback is not None:
            extra = feedback(x)
        if inputs is not None:
            u = inputs(k)
            extra = u if extra is None else extra + u
        x_new = _step(x, A, diag_rate, offdiag, S[:, k, :], dt, extra, scheme)
        if x_new.min() < 0.0:
            x_new = _fix_negative(x, x_new, k, A, G, diag_rate, offdiag, dt, feedback, inputs, scheme, fine)
        x = x_new
        if on_step is not None:
            on_step(k + 1, x)
    return x


def _fix_negative(x, x_new, k, A, G, diag_rate, offdiag, dt, feedback, inputs, scheme, fine):
    scale = 1.0 + np.abs(x_new).max(axis=-1, keepdims=True)
    bad = x_new < -EPS_NEG * scale
    if bad.any():
        rows = np.argwhere(bad.any(axis=-1))
        u_k = np.broadcast_to(inputs(k), x.shape) if inputs is not None else None
        for r, n in rows:
            u_row = None if u_k is None else u_k[r, n]
            x_new[r, n] = _halve(x[r, n], n, k, A, G, diag_rate, offdiag, dt, feedback, u_row, scheme, fine)
    np.maximum(x_new, 0.0, out=x_new)
    return x_new


def _halve(x_row, n, k, A, G, diag_rate, offdiag, dt, feedback, u_row, scheme, fine):
    if fine is None:
        raise PositivityError(f"negative state at step {k} on path {n}; no refinement available")
    for levels in range(1, MAX_HALVING + 1):
        sub = fine(n, k, levels)
        h = dt / 2 ** levels
        y = x_row.copy()
        ok = True
        for dw in sub:
            extra = None
            if feedback is not None:
                extra = feedback(y)
            if u_row is not None:
                extra = u_row if extra is None else extra + u_row
            y = _step(y, A, diag_rate, offdiag, dw @ G, h, extra, scheme)
            if y.min() < -EPS_NEG * (1.0 + np.abs(y).max()):
                ok = False
                break
            np.maximum(y, 0.0, out=y)
        if ok:
            return y
    raise PositivityError(
        f"state left the orthant at step {k} on path {n} after {MAX_HALVING} halvings; dt too coarse"
    )
