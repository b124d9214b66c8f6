"""Fundamental matrices of linear SDEs with diagonal noise, Lyapunov bounds
and geometric Brownian motion supremum identities."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
import math

import numpy as np

from . import _stepper
from .errors import CooperativityError, ModelError, StructureError
from .exact import rational_power, to_fraction, to_interval
from .wiener import WienerGrid, node_index

STRUCTURES = ("diagonal", "single_loop", "general")


def entry_name(i: int, j: int, dim: int) -> str:
    """1-based matrix entry label such as ``a_12``."""
    if dim < 10:
        return f"a_{i + 1}{j + 1}"
    return f"a_{i + 1},{j + 1}"


@dataclass(frozen=True)
class LinearSystem:
    """dX = AX dt + sum_k diag(g_k) X dW^k with a cooperative drift matrix A.

    ``A`` is a tuple of rows and ``noise`` a tuple of vectors g_k, all stored
    as exact fractions. Float arrays are derived on demand.
    """

    dim: int
    A: tuple
    noise: tuple
    structure: str = "general"

    def __post_init__(self):
        d = self.dim
        if int(d) != d or d < 1:
            raise ModelError("dim must be a positive integer")
        A = tuple(tuple(to_fraction(a) for a in row) for row in self.A)
        if len(A) != d or any(len(row) != d for row in A):
            raise ModelError(f"A must be {d}x{d}")
        noise = tuple(tuple(to_fraction(g) for g in vec) for vec in self.noise)
        if not noise:
            raise ModelError("at least one noise vector is required")
        for k, vec in enumerate(noise):
            if len(vec) != d:
                raise ModelError(f"noise vector {k + 1} has length {len(vec)}, expected {d}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "noise", noise)
        for i in range(d):
            for j in range(d):
                if i != j and A[i][j] < 0:
                    raise CooperativityError(
                        f"{entry_name(i, j, d)} = {A[i][j]} is negative; A must be cooperative"
                    )
        if self.structure not in STRUCTURES:
            raise ModelError(f"unknown structure tag {self.structure!r}")
        if self.structure == "diagonal":
            for i in range(d):
                for j in range(d):
                    if i != j and A[i][j] != 0:
                        raise ModelError(f"structure 'diagonal' but {entry_name(i, j, d)} = {A[i][j]}")
        elif self.structure == "single_loop":
            for i in range(d):
                for j in range(d):
                    if i == j:
                        if A[i][i] >= 0:
                            raise ModelError(
                                f"structure 'single_loop' needs {entry_name(i, i, d)} = -alpha < 0"
                            )
                    elif j == i - 1:
                        if A[i][j] != 1:
                            raise ModelError(f"structure 'single_loop' needs {entry_name(i, j, d)} = 1")
                    elif A[i][j] != 0:
                        raise ModelError(f"structure 'single_loop' but {entry_name(i, j, d)} = {A[i][j]}")

    @property
    def n_noise(self) -> int:
        return len(self.noise)

    @cached_property
    def A_array(self) -> np.ndarray:
        return np.array([[float(a) for a in row] for row in self.A])

    @cached_property
    def G_array(self) -> np.ndarray:
        """Noise vectors stacked as an (m, d) array."""
        return np.array([[float(g) for g in vec] for vec in self.noise])

    @cached_property
    def C_exact(self) -> tuple:
        return tuple(sum((vec[i] ** 2 for vec in self.noise), Fraction(0)) for i in range(self.dim))

    @property
    def alpha(self) -> tuple:
        """Decay rates -a_ii."""
        return tuple(-self.A[i][i] for i in range(self.dim))

    def row_sigma(self) -> tuple:
        """Per-row noise amplitude when each noise drives one distinct row.

        Returns sigma_i with sigma_i**2 = C_ii; raises StructureError if a
        noise vector touches several rows or two vectors touch one row,
        since the product formulas need independent row noises.
        """
        seen = {}
        for k, vec in enumerate(self.noise):
            rows = [i for i, g in enumerate(vec) if g != 0]
            if len(rows) > 1:
                raise StructureError(f"noise vector {k + 1} drives several rows; rows must have independent noise")
            for i in rows:
                if i in seen:
                    raise StructureError(f"row {i + 1} is driven by more than one noise")
                seen[i] = vec[i]
        return tuple(seen.get(i, Fraction(0)) for i in range(self.dim))


@dataclass(frozen=True)
class FundamentalMatrix:
    t: float
    entries: np.ndarray


@dataclass(frozen=True)
class LyapunovReport:
    """Mao-type bound on the top Lyapunov exponent.

    ``mao_bound`` uses K1 rounded up the way hand calculations do;
    ``mao_bound_sharp`` uses the exact Frobenius norm.
    """

    K1: Fraction
    K1_exact: object
    K2: Fraction
    K3: Fraction
    mao_bound: Fraction
    mao_bound_sharp: object
    empirical_exponent: float | None = None

    @property
    def certifies(self) -> bool:
        return self.mao_bound < 0


def ito_correction(system: LinearSystem) -> np.ndarray:
    """C_ii = sum_k (g_k^i)^2."""
    return np.array([float(c) for c in system.C_exact])


def _check_time(grid: WienerGrid, t: float) -> int:
    if t < 0:
        raise ModelError("t must be nonnegative")
    grid.index_of(t)
    return node_index(t, grid.dt)


def _log_diag(system: LinearSystem, grid: WienerGrid, t: float) -> np.ndarray:
    """log Phi_ii(s) for every grid node s in [0, t], shape (n, d)."""
    k1 = _check_time(grid, t)
    i0 = grid.index_of(0.0)
    W = grid.values[i0 : i0 + k1 + 1]  # (n, m)
    s = np.arange(k1 + 1) * grid.dt
    rate = np.diag(system.A_array) - 0.5 * ito_correction(system)
    return s[:, None] * rate[None, :] + W @ system.G_array


def phi_exact_diagonal(system: LinearSystem, grid: WienerGrid, t: float) -> FundamentalMatrix:
    """Closed form exp(a_ii t - C_ii t/2 + sum_k g_k^i W_t^k) on the diagonal."""
    if system.structure != "diagonal":
        raise StructureError("phi_exact_diagonal needs structure 'diagonal'")
    logd = _log_diag(system, grid, t)[-1]
    return FundamentalMatrix(t=t, entries=np.diag(np.exp(logd)))


def phi_single_loop_path(system: LinearSystem, grid: WienerGrid, t: float) -> np.ndarray:
    """Phi(s) for all nodes s in [0, t], shape (n, d, d).

    Sub-diagonal entries follow Phi_ij(t) = Phi_ii(t) int_0^t Phi_ii(s)^-1 Phi_{i-1,j}(s) ds,
    integrated by the trapezoid rule in log space.
    """
    if system.structure != "single_loop":
        raise StructureError("phi_single_loop needs structure 'single_loop'")
    L = _log_diag(system, grid, t)
    n, d = L.shape
    logphi = np.full((n, d, d), -np.inf)
    for i in range(d):
        logphi[:, i, i] = L[:, i]
    log_half_dt = math.log(grid.dt / 2.0)
    for i in range(1, d):
        for j in range(i):
            lf = logphi[:, i - 1, j] - L[:, i]
            if n > 1:
                pair = np.logaddexp(lf[:-1], lf[1:]) + log_half_dt
                cum = np.concatenate(([-np.inf], np.logaddexp.accumulate(pair)))
            else:
                cum = np.array([-np.inf])
            logphi[:, i, j] = L[:, i] + cum
    return np.exp(logphi)


def phi_single_loop(system: LinearSystem, grid: WienerGrid, t: float) -> FundamentalMatrix:
    """Lower-triangular fundamental matrix of a single-loop cascade."""
    return FundamentalMatrix(t=t, entries=phi_single_loop_path(system, grid, t)[-1])


def phi_numeric(system: LinearSystem, grid: WienerGrid, t: float, scheme: str = "em") -> FundamentalMatrix:
    """Euler-Maruyama solution from each basis vector, assembled column-wise."""
    k1 = _check_time(grid, t)
    d = system.dim
    if k1 == 0:
        return FundamentalMatrix(t=t, entries=np.eye(d))
    dW = grid.increments(0.0, t)[None]
    x0 = np.eye(d)[:, None, :]  # replica b starts at e_b
    x = _stepper.run(x0, system.A_array, system.G_array, dW, grid.dt, scheme=scheme,
                     fine=lambda n, k, lv: grid.fine_increments(k * grid.dt, lv))
    return FundamentalMatrix(t=t, entries=x[:, 0, :].T.copy())


def _frobenius(system: LinearSystem):
    sq = sum((a * a for row in system.A for a in row), Fraction(0))
    exact = rational_power(sq, Fraction(1, 2))
    if isinstance(exact, Fraction):
        return exact, exact
    return exact, Fraction(math.isqrt(sq.numerator // sq.denominator) + 1)


def mao_bound(system: LinearSystem) -> LyapunovReport:
    """-(K3 - K1 - K2/2) with K1 = |A|_F, K2 = max_j sum_k (g_k^j)^2 and
    K3 = sum over sign-uniform noise vectors of (min_j |g_k^j|)^2.

    An irrational K1 is rounded up to the next integer for ``mao_bound``.
    """
    K1_exact, K1 = _frobenius(system)
    K2 = max(system.C_exact)
    K3 = Fraction(0)
    for vec in system.noise:
        if all(g > 0 for g in vec) or all(g < 0 for g in vec):
            K3 += min(abs(g) for g in vec) ** 2
    bound = -(K3 - K1 - K2 / 2)
    if isinstance(K1_exact, Fraction):
        sharp = bound
    else:
        sharp = -(to_interval(K3) - K1_exact - to_interval(K2) / 2)
    return LyapunovReport(K1=K1, K1_exact=K1_exact, K2=K2, K3=K3, mao_bound=bound, mao_bound_sharp=sharp)


def lyapunov_ensemble(system: LinearSystem, grids: list, x0, t_max: float, scheme: str = "split") -> np.ndarray:
    """(1/t_max) log |Phi(t_max) x0| on each path, renormalizing every unit time."""
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape != (system.dim,):
        raise ModelError(f"x0 must have length {system.dim}")
    if np.any(x0 < 0) or not np.any(x0 > 0):
        raise ModelError("x0 must be nonnegative and nonzero")
    if t_max <= 0:
        raise ModelError("t_max must be positive")
    dt = grids[0].dt
    dW = np.stack([g.increments(0.0, t_max) for g in grids])
    n_steps = dW.shape[1]
    A = system.A_array
    if not np.any(A - np.diag(np.diag(A))):
        # diagonal A: log x_i(t) is known in closed form
        G = system.G_array.reshape(-1, system.dim)
        W = dW.sum(axis=1)  # (R, m)
        drift = np.diag(A) - 0.5 * ito_correction(system)
        with np.errstate(divide="ignore"):
            logs = np.log(x0) + drift * t_max + W @ G
        top = logs.max(axis=1, keepdims=True)
        log_norm = top[:, 0] + 0.5 * np.log(np.exp(2 * (logs - top)).sum(axis=1))
        return (log_norm - np.log(np.linalg.norm(x0))) / t_max
    period = max(1, int(round(1.0 / dt)))
    x = np.broadcast_to(x0, (1, len(grids), system.dim)).copy()
    log_scale = np.zeros(len(grids))
    for start in range(0, n_steps, period):
        chunk = dW[:, start : start + period]
        fine = lambda n, k, lv, s=start: grids[n].fine_increments((s + k) * dt, lv)  # noqa: E731
        x = _stepper.run(x, system.A_array, system.G_array, chunk, dt, scheme=scheme, fine=fine)
        norm = np.linalg.norm(x[0], axis=-1)
        log_scale += np.log(norm)
        x = x / norm[None, :, None]
    return log_scale / (n_steps * dt)


def lyapunov_empirical(system: LinearSystem, grid: WienerGrid, x0, t_max: float, scheme: str = "split") -> float:
    """(1/t_max) log |Phi(t_max, omega) x0| on one path."""
    return float(lyapunov_ensemble(system, [grid], x0, t_max, scheme=scheme)[0])


def gbm_sup_expectation(mu, sigma) -> Fraction:
    """E sup_{t>=0} exp(-(mu + sigma^2/2) t + sigma W_t) = 1 + sigma^2/(2 mu)."""
    mu = to_fraction(mu)
    sigma = to_fraction(sigma)
    if mu <= 0:
        raise ValueError("mu must be positive")
    return 1 + sigma * sigma / (2 * mu)


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    stderr: float
    n_paths: int


# a path is dropped once the chance of a new running maximum is below e^-40
_RETIRE_EXPONENT = 40.0


def gbm_sup_mc(mu: float, sigma: float, n_paths: int, dt: float, horizon: float, seed: int,
               bridge: bool = True, chunk: int = 20000) -> MCEstimate:
    """Monte Carlo estimate of E sup_t exp(-(mu + sigma^2/2) t + sigma W_t).

    With ``bridge=True`` the maximum inside each step is drawn exactly from
    the Brownian-bridge law given the endpoints, so the estimate targets the
    continuous-time supremum. With ``bridge=False`` only grid nodes count,
    which is biased low by O(sqrt(dt)).
    """
    mu = float(mu)
    sigma = abs(float(sigma))
    if mu <= 0:
        raise ValueError("mu must be positive")
    if n_paths < 2 or dt <= 0:
        raise ValueError("need n_paths >= 2 and dt > 0")
    if math.exp(-mu * horizon) >= 1e-6:
        raise ValueError("horizon too short: need exp(-mu*horizon) < 1e-6")
    if sigma == 0:
        return MCEstimate(1.0, 0.0, n_paths)
    rng = np.random.default_rng(seed)
    nu = mu + 0.5 * sigma * sigma
    drift = -nu * dt
    sd = sigma * math.sqrt(dt)
    var2 = 2.0 * sigma * sigma * dt
    retire_gap = _RETIRE_EXPONENT * sigma * sigma / (2.0 * nu)
    n_steps = int(math.ceil(horizon / dt))
    sups = np.empty(n_paths)
    for c0 in range(0, n_paths, chunk):
        m = min(chunk, n_paths - c0)
        level = np.zeros(m)
        best = np.zeros(m)
        idx = np.arange(m)
        for _ in range(n_steps):
            nxt = level + drift + sd * rng.standard_normal(idx.size)
            if bridge:
                u = rng.random(idx.size)
                top = 0.5 * (level + nxt + np.sqrt((nxt - level) ** 2 - var2 * np.log1p(-u)))
            else:
                top = nxt
            np.maximum(best, top, out=best)
            level = nxt
            alive = best - level < retire_gap
            if not alive.all():
                sups[c0 + idx[~alive]] = best[~alive]
                idx, level, best = idx[alive], level[alive], best[alive]
                if idx.size == 0:
                    break
        sups[c0 + idx] = best
    vals = np.exp(sups)
    return MCEstimate(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_paths)), n_paths)
