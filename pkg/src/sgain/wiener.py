"""Discretized two-sided Wiener paths with exact shifts and bridge refinement.

Every increment is drawn from a counter-based generator (Philox) keyed on
``(seed, component, refinement level)`` and addressed by the absolute slot
index, so any window of a path, any shift of it and any refinement of it are
all views of one fixed underlying path.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np
from scipy.special import ndtri

from .errors import GridError

_SLOT_BIAS = 1 << 63
_MASK64 = (1 << 64) - 1
# slack, in units of dt, when mapping a float time to a grid index
_GRID_RTOL = 1e-6


def _keyed_normals(seed: int, comp: int, level: int, start: int, count: int) -> np.ndarray:
    """Standard normals for slots ``start .. start+count-1`` (slots may be negative)."""
    if count <= 0:
        return np.empty(0)
    key = np.array([seed & _MASK64, ((comp & 0xFFFF) << 48) | (level & 0xFFFFFFFF)], dtype=np.uint64)
    pos = start + _SLOT_BIAS
    block, skip = divmod(pos, 4)
    counter = np.array([block & _MASK64, block >> 64, 0, 0], dtype=np.uint64)
    bitgen = np.random.Philox(key=key, counter=counter)
    raw = bitgen.random_raw(count + skip)[skip:]
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * (2.0 ** -53)
    return ndtri(u)


def _factorize(n: int) -> list[int]:
    out = []
    p = 2
    while p * p <= n:
        while n % p == 0:
            out.append(p)
            n //= p
        p += 1
    if n > 1:
        out.append(n)
    return out


def _level0(seed: int, dims: int, base_dt: float, j0: int, j1: int) -> np.ndarray:
    """Absolute path values at base nodes j0..j1 (W at node 0 is 0).

    Positive and negative sides are cumulative sums starting from the origin,
    so a value never depends on how wide a window was requested.
    """
    scale = math.sqrt(base_dt)
    idx = np.arange(j0, j1 + 1)
    out = np.zeros((idx.size, dims))
    for c in range(dims):
        pos = np.zeros(max(j1, 0) + 1)
        if j1 > 0:
            pos[1:] = np.cumsum(_keyed_normals(seed, c, 0, 0, j1) * scale)
        neg = np.zeros(max(-j0, 0) + 1)
        if j0 < 0:
            # slot s covers [s, s+1], so W(-k) = -(Z(-1) + ... + Z(-k))
            z = _keyed_normals(seed, c, 0, j0, -j0)[::-1] * scale
            neg[1:] = -np.cumsum(z)
        out[:, c] = np.where(idx >= 0, pos[np.clip(idx, 0, None)], neg[np.clip(-idx, 0, None)])
    return out


def _absolute_values(seed: int, dims: int, base_dt: float, factors: tuple, j0: int, j1: int) -> np.ndarray:
    """Absolute path values at finest-level nodes j0..j1."""
    if not factors:
        return _level0(seed, dims, base_dt, j0, j1)
    p = factors[-1]
    level = len(factors)
    c0 = j0 // p
    c1 = -((-j1) // p)
    coarse = _absolute_values(seed, dims, base_dt, factors[:-1], c0, c1)
    fine_dt = base_dt / math.prod(factors)
    n_int = c1 - c0
    fine = np.empty((n_int * p + 1, dims))
    fine[::p] = coarse
    if p > 1 and n_int > 0:
        for c in range(dims):
            # slots of inserted nodes: absolute fine index c*p + k, k = 1..p-1
            z = _keyed_normals(seed, c, level, c0 * p, n_int * p).reshape(n_int, p)
            a = coarse[:-1, c]
            b = coarse[1:, c]
            v = a.copy()
            for k in range(1, p):
                rem = p - k + 1
                mean = v + (b - v) / rem
                var = fine_dt * (p - k) / rem
                v = mean + math.sqrt(var) * z[:, k]
                fine[k::p, c][:n_int] = v
    start = j0 - c0 * p
    return fine[start : start + (j1 - j0 + 1)]


@dataclass(frozen=True, eq=False)
class WienerGrid:
    """Values of one d-dimensional two-sided Wiener path on a uniform grid.

    ``values[k]`` is the path at time ``t_min + k*dt``. The path is re-based so
    that the value at ``t = 0`` is exactly zero. ``origin_offset`` records the
    accumulated shift, in time units, relative to the originally sampled path.
    """

    dims: int
    t_min: float
    t_max: float
    dt: float
    values: np.ndarray
    seed: int
    origin_offset: float = 0.0
    base_dt: float = field(default=0.0, repr=False)
    factors: tuple = field(default=(), repr=False)
    offset_slots: int = field(default=0, repr=False)
    k_min: int = field(default=0, repr=False)

    @property
    def n_nodes(self) -> int:
        return self.values.shape[0]

    @property
    def k_max(self) -> int:
        return self.k_min + self.n_nodes - 1

    @property
    def times(self) -> np.ndarray:
        return (np.arange(self.n_nodes) + self.k_min) * self.dt

    def index_of(self, t: float) -> int:
        """Row index of grid time ``t``; raises GridError if off-grid or outside."""
        k = node_index(t, self.dt)
        if not self.k_min <= k <= self.k_max:
            raise GridError(f"time {t} outside grid window [{self.t_min}, {self.t_max}]")
        return k - self.k_min

    def increments(self, t0: float | None = None, t1: float | None = None) -> np.ndarray:
        """Consecutive differences on [t0, t1], shape (n_steps, dims)."""
        i0 = 0 if t0 is None else self.index_of(t0)
        i1 = self.n_nodes - 1 if t1 is None else self.index_of(t1)
        return np.diff(self.values[i0 : i1 + 1], axis=0)

    def fine_increments(self, t: float, levels: int) -> np.ndarray:
        """Increments of the dyadic bridge refinement inside one step [t, t+dt].

        Produces ``2**levels`` sub-increments consistent with
        ``refine(grid, 2**levels)``; they sum to the coarse increment.
        """
        k = node_index(t, self.dt)
        return _sub_increments(self, k, levels)


def node_index(t: float, dt: float) -> int:
    """Integer k with t == k*dt up to rounding; GridError otherwise."""
    q = t / dt
    k = int(round(q))
    if abs(q - k) > _GRID_RTOL:
        raise GridError(f"time {t} is not a multiple of dt={dt}")
    return k


def _window_values(dims, seed, base_dt, factors, offset_slots, k0, k1) -> np.ndarray:
    absolute = _absolute_values(seed, dims, base_dt, factors, k0 + offset_slots, k1 + offset_slots)
    if offset_slots == 0:
        return absolute
    anchor = _absolute_values(seed, dims, base_dt, factors, offset_slots, offset_slots)[0]
    return absolute - anchor


def _build(dims, seed, base_dt, factors, offset_slots, k0, k1) -> WienerGrid:
    dt = base_dt / math.prod(factors) if factors else base_dt
    values = _window_values(dims, seed, base_dt, factors, offset_slots, k0, k1)
    values.setflags(write=False)
    return WienerGrid(
        dims=dims,
        t_min=k0 * dt,
        t_max=k1 * dt,
        dt=dt,
        values=values,
        seed=seed,
        origin_offset=offset_slots * dt,
        base_dt=base_dt,
        factors=tuple(factors),
        offset_slots=offset_slots,
        k_min=k0,
    )


def sample_grid(d: int, t_min: float, t_max: float, dt: float, seed: int) -> WienerGrid:
    """Sample a path on [t_min, t_max] with step dt, pinned at W(0) = 0."""
    if int(d) != d or d < 1:
        raise GridError("dimension must be a positive integer")
    if not dt > 0:
        raise GridError("dt must be positive")
    if t_min > 0 or t_max < 0:
        raise GridError("window must contain 0 (t_min <= 0 <= t_max)")
    k0 = node_index(t_min, dt)
    k1 = node_index(t_max, dt)
    return _build(int(d), int(seed) & _MASK64, float(dt), (), 0, k0, k1)


def sample_ensemble(d: int, t_min: float, t_max: float, dt: float, seed: int, n: int) -> list[WienerGrid]:
    """``n`` independent paths with per-path seeds derived from ``seed``."""
    return [sample_grid(d, t_min, t_max, dt, path_seed(seed, p)) for p in range(n)]


def path_seed(seed: int, index: int) -> int:
    ss = np.random.SeedSequence([int(seed) & _MASK64, int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def value_at(grid: WienerGrid, t: float) -> np.ndarray:
    """W_t on the grid; no interpolation."""
    return grid.values[grid.index_of(t)].copy()


def shift(grid: WienerGrid, s: float) -> WienerGrid:
    """Path of theta_s omega on the window [t_min - s, t_max - s].

    The window is widened to keep t = 0 inside, where the new path is pinned.
    """
    ks = node_index(s, grid.dt)
    if ks == 0:
        return grid
    return _build(
        grid.dims, grid.seed, grid.base_dt, grid.factors, grid.offset_slots + ks,
        min(grid.k_min - ks, 0), max(grid.k_max - ks, 0),
    )


def with_window(grid: WienerGrid, t_min: float, t_max: float) -> WienerGrid:
    """Same path viewed on a different window (extends by keyed sampling)."""
    if t_min > 0 or t_max < 0:
        raise GridError("window must contain 0 (t_min <= 0 <= t_max)")
    k0 = node_index(t_min, grid.dt)
    k1 = node_index(t_max, grid.dt)
    if k0 == grid.k_min and k1 == grid.k_max:
        return grid
    return _build(grid.dims, grid.seed, grid.base_dt, grid.factors, grid.offset_slots, k0, k1)


def refine(grid: WienerGrid, factor: int) -> WienerGrid:
    """Insert Brownian-bridge points so the step becomes dt/factor."""
    if int(factor) != factor or factor < 2:
        raise GridError("refinement factor must be an integer >= 2")
    factors = grid.factors + tuple(_factorize(int(factor)))
    f = int(factor)
    return _build(
        grid.dims, grid.seed, grid.base_dt, factors, grid.offset_slots * f,
        grid.k_min * f, grid.k_max * f,
    )


def _sub_increments(grid: WienerGrid, k: int, levels: int) -> np.ndarray:
    factors = grid.factors + (2,) * levels
    f = 2 ** levels
    j0 = (k + grid.offset_slots) * f
    vals = _absolute_values(grid.seed, grid.dims, grid.base_dt, factors, j0, j0 + f)
    return np.diff(vals, axis=0)
