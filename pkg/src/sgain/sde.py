"""Forward and pull-back integration of dX = [AX + h(X)]dt + sum_k G_k X dW^k."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _stepper
from .errors import GridError, ModelError
from .models import ModelSpec
from .wiener import WienerGrid, node_index, with_window


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (n, d)


@dataclass(frozen=True)
class PullbackTable:
    """Pairwise max-norm distances of pull-back states, one row per T."""

    T_list: tuple
    pairs: tuple
    distances: np.ndarray  # (len(T_list), len(pairs))
    states: np.ndarray  # (len(T_list), len(x_list), d)
    decreasing_fraction: float = 0.0
    decay_rate: float | None = None
    notes: list = field(default_factory=list)


def _as_x0(model: ModelSpec, x0) -> np.ndarray:
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim == 0:
        x0 = np.full(model.dim, float(x0))
    if x0.shape[-1] != model.dim:
        raise ModelError(f"initial state must have {model.dim} components")
    if np.any(x0 < 0):
        raise ModelError("initial state has a negative entry")
    if not np.all(np.isfinite(x0)):
        raise ModelError("initial state must be finite")
    return x0


def _check_noise(model: ModelSpec, grids) -> None:
    for g in grids:
        if g.dims != model.linear.n_noise:
            raise ModelError(f"grid has {g.dims} components but the model has {model.linear.n_noise} noises")
    if len({g.dt for g in grids}) > 1:
        raise GridError("all grids in an ensemble must share dt")


def _ensure_window(grid: WienerGrid, t0: float, t1: float) -> WienerGrid:
    if t0 < grid.t_min - 1e-12 or t1 > grid.t_max + 1e-12:
        return with_window(grid, min(t0, grid.t_min, 0.0), max(t1, grid.t_max, 0.0))
    return grid


def _fine(grids, t0: float, dt: float):
    return lambda n, k, levels: grids[n].fine_increments(t0 + k * dt, levels)


def integrate_ensemble(model: ModelSpec, grids: list, x0, t0: float, t1: float, *,
                       scheme: str = "em", record: bool = True):
    """Integrate every initial state in ``x0`` (shape (R, d) or (d,)) on every path.

    Returns (times, states) with states of shape (R, N, n, d) when recording,
    else the final states (R, N, d).
    """
    if not t0 < t1:
        raise ModelError("need t0 < t1")
    grids = [_ensure_window(g, t0, t1) for g in grids]
    _check_noise(model, grids)
    dt = grids[0].dt
    k0, k1 = node_index(t0, dt), node_index(t1, dt)
    x0 = _as_x0(model, x0)
    x0 = np.atleast_2d(x0)
    R, N = x0.shape[0], len(grids)
    dW = np.stack([g.increments(t0, t1) for g in grids])
    start = np.broadcast_to(x0[:, None, :], (R, N, model.dim))
    times = np.arange(k0, k1 + 1) * dt
    rec = None
    if record:
        rec = np.empty((R, N, k1 - k0 + 1, model.dim))

        def on_step(k, x):
            rec[:, :, k, :] = x
    else:
        on_step = None
    final = _stepper.run(start, model.linear.A_array, model.linear.G_array, dW, dt,
                         feedback=model.h, scheme=scheme, on_step=on_step, fine=_fine(grids, t0, dt))
    return (times, rec) if record else (times, final)


def integrate_forward(model: ModelSpec, grid: WienerGrid, x0, t0: float, t1: float, scheme: str = "em") -> Trajectory:
    """Euler-Maruyama path from x0 at t0 to t1 on the grid's noise."""
    times, states = integrate_ensemble(model, [grid], _as_x0(model, x0), t0, t1, scheme=scheme)
    return Trajectory(times=times, states=states[0, 0])


def pullback_ensemble(model: ModelSpec, grids: list, x0, T: float, scheme: str = "em") -> np.ndarray:
    """phi(T, theta_{-T} omega) x0 for each x0 row and each path, shape (R, N, d)."""
    x0 = np.atleast_2d(_as_x0(model, x0))
    if T < 0:
        raise ModelError("T must be nonnegative")
    if T == 0:
        return np.broadcast_to(x0[:, None, :], (x0.shape[0], len(grids), model.dim)).copy()
    _, final = integrate_ensemble(model, grids, x0, -T, 0.0, scheme=scheme, record=False)
    return final


def pullback(model: ModelSpec, grid: WienerGrid, x0, T: float, scheme: str = "em") -> np.ndarray:
    """State at time 0 of the solution started from x0 at time -T."""
    return pullback_ensemble(model, [grid], x0, T, scheme=scheme)[0, 0]


def pullback_family(model: ModelSpec, grid: WienerGrid, x0, T_list, scheme: str = "em") -> np.ndarray:
    """Pull-back states for several horizons in one sweep, shape (len(T_list), R, d).

    Replicas for shorter horizons are reset to x0 when the sweep reaches
    their start time, so every horizon sees exactly the same increments.
    """
    x0 = np.atleast_2d(_as_x0(model, x0))
    T_list = [float(T) for T in T_list]
    if not T_list:
        return np.empty((0, x0.shape[0], model.dim))
    if min(T_list) < 0:
        raise ModelError("horizons must be nonnegative")
    dt = grid.dt
    T_max = max(T_list)
    R = x0.shape[0]
    out = np.empty((len(T_list), R, model.dim))
    if T_max == 0:
        out[:] = x0[None]
        return out
    grid = _ensure_window(grid, -T_max, 0.0)
    k_max = node_index(T_max, dt)
    starts = [k_max - node_index(T, dt) for T in T_list]
    x_start = np.repeat(x0[None], len(T_list), axis=0).reshape(-1, 1, model.dim)
    resets = {}
    for i, s in enumerate(starts):
        resets.setdefault(s, []).append(i)

    def on_step(k, x):
        for i in resets.get(k, ()):
            x[i * R : (i + 1) * R, 0, :] = x0

    dW = grid.increments(-T_max, 0.0)[None]
    final = _stepper.run(x_start, model.linear.A_array, model.linear.G_array, dW, dt,
                         feedback=model.h, scheme=scheme, on_step=on_step, fine=_fine([grid], -T_max, dt))
    return final[:, 0, :].reshape(len(T_list), R, model.dim)


def pullback_convergence(model: ModelSpec, grid: WienerGrid, x_list, T_list, scheme: str = "em") -> PullbackTable:
    """Pairwise distances max|phi(T, theta_{-T} w)x_i - phi(T, theta_{-T} w)x_j| for each T."""
    x = np.atleast_2d(_as_x0(model, np.asarray(x_list, dtype=float)))
    if x.shape[0] == 0 or len(T_list) == 0:
        raise ModelError("need at least one initial state and one horizon")
    T_list = tuple(float(T) for T in T_list)
    if any(b <= a for a, b in zip(T_list, T_list[1:])):
        raise ModelError("T_list must be strictly ascending")
    states = pullback_family(model, grid, x, T_list, scheme=scheme)
    n = x.shape[0]
    pairs = tuple((i, j) for i in range(n) for j in range(i + 1, n))
    dist = np.zeros((len(T_list), len(pairs)))
    for p, (i, j) in enumerate(pairs):
        dist[:, p] = np.abs(states[:, i] - states[:, j]).max(axis=-1)
    worst = dist.max(axis=1) if pairs else np.zeros(len(T_list))
    steps = np.diff(worst)
    decreasing = float(np.mean(steps <= 0)) if steps.size else 1.0
    rate = None
    positive = worst > 0
    if positive.sum() >= 2:
        Ts = np.array(T_list)[positive]
        slope = np.polyfit(Ts, np.log(worst[positive]), 1)[0]
        rate = float(-slope)
    return PullbackTable(T_list, pairs, dist, states, decreasing, rate)
