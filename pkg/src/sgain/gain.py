"""Input-to-state map K, gain operator K^h = h o K, Picard fixed points,
pull-back envelopes and part-metric diagnostics.

K(u) at node s is computed by sweeping the linear input system
dY = (AY + u)dt + sum_k G_k Y dW^k from Y(-T) = 0, which equals the
variation-of-constants integral truncated to [-T, s]. Inputs are held
constant over each step, so the sweep is causal in the noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

from . import _stepper
from .errors import ConvergenceError, GridError, ModelError
from .exact import lower, upper
from .models import FeedbackSpec, ModelSpec
from .sde import _ensure_window, _fine
from .wiener import WienerGrid, node_index


@dataclass(frozen=True)
class InputFunction:
    """u(theta_s omega) at every node s of [-T, 0]; ``values`` has shape (n, d)."""

    window: float
    dt: float
    values: np.ndarray

    def __post_init__(self):
        n = node_index(self.window, self.dt) + 1
        if self.values.ndim != 2 or self.values.shape[0] != n:
            raise ModelError(f"input needs {n} node values on [-{self.window}, 0]")
        if np.any(self.values < 0):
            raise ModelError("input values must be nonnegative")

    @property
    def times(self) -> np.ndarray:
        n = self.values.shape[0]
        return (np.arange(n) - (n - 1)) * self.dt

    @classmethod
    def constant(cls, value, window: float, dt: float) -> "InputFunction":
        value = np.atleast_1d(np.asarray(value, dtype=float))
        n = node_index(window, dt) + 1
        return cls(window, dt, np.broadcast_to(value, (n, value.size)).copy())


@dataclass
class EquilibriumEstimate:
    """Result of Picard iteration on one path, or an ensemble summary.

    For an ensemble, ``value_at_zero`` is the path mean, ``iterations`` the
    maximum, ``residual_history`` the per-iteration maximum over paths and
    ``per_path`` holds the individual estimates.
    """

    value_at_zero: np.ndarray
    iterations: int
    residual_history: list
    window: float
    converged: bool = True
    input: InputFunction | None = None
    per_path: list = field(default_factory=list)


@dataclass(frozen=True)
class EnvelopePair:
    xi: np.ndarray
    eta: np.ndarray
    tau: float


@dataclass(frozen=True)
class SublinearityReport:
    passed: bool
    worst_violation: float
    worst_x: np.ndarray | None
    worst_lambda: float | None
    n_checked: int
    shift_kind: str


@dataclass(frozen=True)
class ContractionReport:
    """Empirical part-metric ratio p(K^h u, K^h v) / p(u, v); advisory only."""

    max_ratio: float
    ratios: np.ndarray
    skipped: int
    n_paths: int
    note: str = "finite-ensemble maximum stands in for the essential supremum"


# sweeps

def _window_setup(model: ModelSpec, grids, T: float):
    if not T > 0:
        raise ModelError("window T must be positive")
    grids = [_ensure_window(g, -T, 0.0) for g in grids]
    for g in grids:
        if g.dims != model.linear.n_noise:
            raise ModelError(f"grid has {g.dims} components but the model has {model.linear.n_noise} noises")
    dt = grids[0].dt
    if any(g.dt != dt for g in grids):
        raise GridError("all grids in an ensemble must share dt")
    dW = np.stack([g.increments(-T, 0.0) for g in grids])
    return grids, dt, dW


def _k_sweep(model: ModelSpec, grids, dt, dW, u: np.ndarray) -> np.ndarray:
    """Y = K(u) at every node for inputs u of shape (R, N, n, d)."""
    R, N, n, d = u.shape
    Y = np.empty_like(u)

    def on_step(k, x):
        Y[:, :, k, :] = x

    _stepper.run(np.zeros((R, N, d)), model.linear.A_array, model.linear.G_array, dW, dt,
                 inputs=lambda k: u[:, :, k, :], on_step=on_step, fine=_fine(grids, -(n - 1) * dt, dt))
    return Y


def _input_values(u, n: int, d: int) -> np.ndarray:
    vals = u.values if isinstance(u, InputFunction) else np.asarray(u, dtype=float)
    if vals.shape != (n, d):
        raise ModelError(f"input must have shape ({n}, {d}), got {vals.shape}")
    return vals


def k_operator(model: ModelSpec, grid: WienerGrid, u: InputFunction, s_eval: float = 0.0) -> np.ndarray:
    """K(u)(theta_{s_eval} omega), truncated to [-T, s_eval]."""
    T = u.window
    if s_eval > 1e-12 or s_eval < -T - 1e-12:
        raise ModelError(f"s_eval = {s_eval} outside the window [-{T}, 0]")
    grids, dt, dW = _window_setup(model, [grid], T)
    if abs(dt - u.dt) > 1e-15 * dt:
        raise GridError("input and grid must share dt")
    n = dW.shape[1] + 1
    vals = _input_values(u, n, model.dim)
    Y = _k_sweep(model, grids, dt, dW, vals[None, None])
    return Y[0, 0, node_index(s_eval + T, dt)].copy()


def gain_apply(model: ModelSpec, grid: WienerGrid, u: InputFunction) -> InputFunction:
    """(K^h u)(s) = h(K(u)(theta_s omega)) at every node, in one sweep."""
    grids, dt, dW = _window_setup(model, [grid], u.window)
    n = dW.shape[1] + 1
    vals = _input_values(u, n, model.dim)
    Y = _k_sweep(model, grids, dt, dW, vals[None, None])
    return InputFunction(u.window, dt, model.h(Y[0, 0]))


def default_window(lam: float, scale: float, tol: float) -> float:
    """Smallest T with exp(-lam T) * scale < tol / 10."""
    if lam <= 0 or tol <= 0:
        raise ModelError("need positive decay rate and tolerance")
    return max(math.log(10.0 * max(scale, 1e-300) / tol) / lam, 0.0)


def _picard(model: ModelSpec, grids, T: float, tol: float, max_iter: int, u0=None):
    grids, dt, dW = _window_setup(model, grids, T)
    N = len(grids)
    n = dW.shape[1] + 1
    d = model.dim
    if u0 is None:
        gamma = np.array([upper(g) for g in model.feedback.gamma])
        u = np.broadcast_to(gamma / 2.0, (N, n, d)).copy()
    else:
        u = np.broadcast_to(np.asarray(u0, dtype=float), (N, n, d)).copy()
    active = np.arange(N)
    results = [None] * N
    history = [[] for _ in range(N)]
    for sweep in range(1, max_iter + 2):
        Y = _k_sweep(model, [grids[i] for i in active], dt, dW[active], u[None, active])[0]
        v = model.h(Y)
        res = np.abs(v - u[active]).max(axis=(1, 2))
        done = []
        for a, p in enumerate(active):
            history[p].append(float(res[a]))
            if res[a] < tol:
                results[p] = (Y[a, -1].copy(), sweep - 1, True, u[p].copy())
                done.append(a)
        keep = np.ones(active.size, dtype=bool)
        keep[done] = False
        if sweep == max_iter + 1:
            for a in np.flatnonzero(keep):
                p = active[a]
                results[p] = (Y[a, -1].copy(), sweep - 1, False, u[p].copy())
            break
        u[active] = v
        active = active[keep]
        if active.size == 0:
            break
    estimates = []
    for p in range(N):
        value, iters, conv, u_final = results[p]
        estimates.append(EquilibriumEstimate(
            value_at_zero=value, iterations=iters, residual_history=history[p], window=T,
            converged=conv, input=InputFunction(T, dt, u_final),
        ))
    return estimates


def gain_fixed_point(model: ModelSpec, grid: WienerGrid, T: float, tol: float = 1e-6,
                     max_iter: int = 100, raise_on_failure: bool = True) -> EquilibriumEstimate:
    """Picard iteration u_{k+1} = K^h(u_k) from u_0 = Gamma/2 on one path.

    ``value_at_zero`` is K(u_final)(omega) at s = 0 where u_final is the
    last input whose image moved by less than ``tol``.
    """
    if tol <= 0:
        raise ModelError("tolerance must be positive")
    est = _picard(model, [grid], T, tol, max_iter)[0]
    if not est.converged and raise_on_failure:
        raise ConvergenceError(
            f"no convergence in {max_iter} iterations (last residual {est.residual_history[-1]:.3e})", est
        )
    return est


def gain_fixed_point_ensemble(model: ModelSpec, grids: list, T: float, tol: float = 1e-6,
                              max_iter: int = 100, raise_on_failure: bool = True) -> EquilibriumEstimate:
    """Per-path Picard iteration over an ensemble, batched."""
    if tol <= 0:
        raise ModelError("tolerance must be positive")
    per = _picard(model, grids, T, tol, max_iter)
    width = max(len(e.residual_history) for e in per)
    hist = [max(e.residual_history[i] for e in per if i < len(e.residual_history)) for i in range(width)]
    est = EquilibriumEstimate(
        value_at_zero=np.mean([e.value_at_zero for e in per], axis=0),
        iterations=max(e.iterations for e in per),
        residual_history=hist,
        window=T,
        converged=all(e.converged for e in per),
        per_path=per,
    )
    if not est.converged and raise_on_failure:
        bad = sum(not e.converged for e in per)
        raise ConvergenceError(f"{bad} of {len(per)} paths did not converge in {max_iter} iterations", est)
    return est


# envelopes

def _stride_nodes(tau: float, T: float, dt: float, max_starts: int) -> list:
    k_tau, k_T = node_index(tau, dt), node_index(T, dt)
    span = k_T - k_tau
    stride = max(1, -(-span // max(max_starts - 1, 1)))
    ks = list(range(k_tau, k_T + 1, stride))
    if ks[-1] != k_T:
        ks.append(k_T)
    return ks


def envelope(model: ModelSpec, grid: WienerGrid, x0, tau: float, T: float, max_starts: int = 401) -> EnvelopePair:
    """Entrywise min and max of h over the pull-back family
    {phi(t, theta_{-t} omega) x0 : t in [tau, T]} sampled on the grid.

    ``x0`` may hold several initial states (rows); the family is their union.
    """
    if not 0 <= tau < T:
        raise ModelError("need 0 <= tau < T")
    from .sde import pullback_family

    ks = _stride_nodes(tau, T, grid.dt, max_starts)
    states = pullback_family(model, grid, x0, [k * grid.dt for k in ks]).reshape(-1, model.dim)
    hv = model.h(states)
    return EnvelopePair(xi=hv.min(axis=0), eta=hv.max(axis=0), tau=tau)


def envelope_inputs(model: ModelSpec, grid: WienerGrid, x0, tau: float, T: float, window: float,
                    stride: int | None = None):
    """Input functions xi(theta_s omega), eta(theta_s omega) for every node s in [-window, 0].

    Trajectories start from each row of ``x0`` at every ``stride``-th node of
    [-window - T, -tau]; node s collects h of those whose age lies in [tau, T].
    """
    if not 0 <= tau < T:
        raise ModelError("need 0 <= tau < T")
    dt = grid.dt
    k_tau, k_T, k_w = node_index(tau, dt), node_index(T, dt), node_index(window, dt)
    if stride is None:
        stride = max(1, (k_T - k_tau) // 200)
    total = k_w + k_T
    grid = _ensure_window(grid, -total * dt, 0.0)
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    n_x = x0.shape[0]
    d = model.dim
    starts = np.repeat(np.arange(0, total - k_tau + 1, stride), n_x)  # node offsets from -total*dt
    which = np.tile(np.arange(n_x), starts.size // n_x)
    n = k_w + 1
    xi = np.full((n, d), np.inf)
    eta = np.full((n, d), -np.inf)
    x_init = x0[which][:, None, :].copy()
    resets = {}
    for r, s in enumerate(starts):
        resets.setdefault(int(s), []).append(r)

    def on_step(k, x):
        rows = resets.get(k)
        if rows:
            x[rows, 0, :] = x0[which[rows]]
        node = k - k_T  # position inside the output window
        if node < 0:
            return
        age = k - starts
        ok = (age >= k_tau) & (age <= k_T)
        if ok.any():
            hv = model.h(x[ok, 0, :])
            np.minimum(xi[node], hv.min(axis=0), out=xi[node])
            np.maximum(eta[node], hv.max(axis=0), out=eta[node])

    dW = grid.increments(-total * dt, 0.0)[None]
    _stepper.run(x_init, model.linear.A_array, model.linear.G_array, dW, dt,
                 feedback=model.h, on_step=on_step, fine=_fine([grid], -total * dt, dt))
    return InputFunction(window, dt, xi), InputFunction(window, dt, eta)


# part metric

def part_metric(x, y) -> float:
    """max_i |log(x_i / y_i)| for strictly positive vectors."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ModelError("vectors must have equal shape")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ModelError("part metric needs strictly positive entries")
    if x.size == 0:
        return 0.0
    return float(np.max(np.abs(np.log(x) - np.log(y))))


def part_metric_ensemble(u_samples, v_samples) -> float:
    """Max of the part metric over paired samples."""
    u = [np.asarray(a, dtype=float) for a in u_samples]
    v = [np.asarray(b, dtype=float) for b in v_samples]
    if len(u) != len(v):
        raise ModelError("ensembles must have equal length")
    if not u:
        return 0.0
    return max(part_metric(a, b) for a, b in zip(u, v))


def _shifted(spec: FeedbackSpec, x: np.ndarray, kind: str, value: float | None):
    h = spec.evaluate(x)
    if kind == "none":
        return h
    if kind == "subtract_delta_over_T":
        delta = np.array([float(v) for v in spec.delta])
        return h - delta / value
    gamma = np.array([upper(g) for g in spec.gamma])
    return 1.0 / h - (1.0 / gamma) / value


def sublinearity_check(h_spec: FeedbackSpec, shift_kind: str | None = None, grid_points: dict | None = None,
                       shift_value=None, rtol: float = 1e-12) -> SublinearityReport:
    """Check lam * h_s(x) <= h_s(lam x) on a lattice of x and lam values.

    ``shift_kind`` is ``subtract_delta_over_T`` (h_s = h - delta/T),
    ``reciprocal_shift_S`` (h_s = 1/h - (1/S)/Gamma) or ``none``. It and the
    shift value default to the declared shift of h. ``grid_points`` may
    set ``per_axis``, ``lo``, ``hi`` and ``lambdas``.
    """
    plan = {"per_axis": None, "lo": 1e-3, "hi": 1e3, "lambdas": np.round(np.arange(1, 100) / 100, 2)}
    plan.update(grid_points or {})
    declared = h_spec.sublinearity_shift
    if shift_kind is None:
        shift_kind = declared.kind if declared is not None else "none"
    if shift_value is None and shift_kind != "none":
        if declared is None or declared.kind != shift_kind:
            raise ModelError(f"no value given for shift {shift_kind}")
        shift_value = declared.value
    value = None if shift_value is None else float(shift_value)
    if shift_kind == "subtract_delta_over_T" and min(lower(v) for v in h_spec.delta) <= 0:
        raise ModelError("subtract_delta_over_T needs delta > 0")
    d = h_spec.dim
    per_axis = plan["per_axis"] or (41 if d == 1 else 21 if d == 2 else 13 if d == 3 else 5)
    if per_axis % 2 == 0:
        per_axis += 1  # keep x = 1 on the lattice
    axis = np.geomspace(plan["lo"], plan["hi"], per_axis)
    mesh = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
    lams = np.asarray(plan["lambdas"], dtype=float)
    base = _shifted(h_spec, mesh, shift_kind, value)  # (P, d)
    worst = 0.0
    worst_x = None
    worst_lam = None
    for lam in lams:
        lhs = lam * base
        rhs = _shifted(h_spec, lam * mesh, shift_kind, value)
        gap = (lhs - rhs) / np.maximum(1.0, np.abs(rhs))
        i = np.unravel_index(np.argmax(gap), gap.shape)
        if gap[i] > worst:
            worst = float(gap[i])
            worst_x = mesh[i[0]].copy()
            worst_lam = float(lam)
    return SublinearityReport(
        passed=worst <= rtol, worst_violation=worst, worst_x=worst_x, worst_lambda=worst_lam,
        n_checked=mesh.shape[0] * lams.size, shift_kind=shift_kind,
    )


# empirical contraction

def contraction_estimate(model: ModelSpec, grids: list, pairs=50, T: float = 10.0, seed: int = 0,
                         block: float = 1.0, burn: float | None = None) -> ContractionReport:
    """max over pairs of p_ens(K^h u, K^h v) / p_ens(u, v).

    ``pairs`` is either a count of random piecewise-constant input pairs
    with values in [delta, Gamma] (held fixed over blocks of length
    ``block``), or a list of (u, v) arrays of shape (n, d) or (N, n, d).
    The numerator is taken over nodes after ``burn`` (default T/2) so the
    truncation at -T does not dominate. Identical pairs are skipped.
    """
    grids, dt, dW = _window_setup(model, grids, T)
    N = len(grids)
    n = dW.shape[1] + 1
    d = model.dim
    burn = T / 2 if burn is None else burn
    k_burn = node_index(burn, dt)
    if isinstance(pairs, int):
        rng = np.random.default_rng(seed)
        lo = np.array([lower(v) for v in model.feedback.delta])
        hi = np.array([upper(v) for v in model.feedback.gamma])
        if np.any(lo <= 0):
            raise ModelError("random input pairs need delta > 0")
        k_block = max(1, node_index(block, dt))
        n_blocks = -(-n // k_block)
        blocks = lo + (hi - lo) * rng.random((2 * pairs, N, n_blocks, d))
        block_of = np.minimum(np.arange(n) // k_block, n_blocks - 1)

        def u_at(k):
            return blocks[:, :, block_of[k], :]

        def denom(j):
            a, b = blocks[2 * j], blocks[2 * j + 1]
            return float(np.max(np.abs(np.log(a) - np.log(b))))

        n_pairs = pairs
    else:
        arrs = []
        for u, v in pairs:
            arrs.append(np.broadcast_to(np.asarray(u, dtype=float), (N, n, d)))
            arrs.append(np.broadcast_to(np.asarray(v, dtype=float), (N, n, d)))
        stack = np.stack(arrs) if arrs else np.zeros((0, N, n, d))

        def u_at(k):
            return stack[:, :, k, :]

        def denom(j):
            return part_metric_ensemble(stack[2 * j].reshape(-1, d), stack[2 * j + 1].reshape(-1, d))

        n_pairs = len(pairs)
    denoms = np.array([denom(j) for j in range(n_pairs)])
    live = np.flatnonzero(denoms > 0)
    skipped = n_pairs - live.size
    if live.size == 0:
        return ContractionReport(0.0, np.zeros(0), skipped, N)
    rows = np.concatenate([[2 * j, 2 * j + 1] for j in live])

    num = np.zeros(live.size)

    def on_step(k, x):
        if k < k_burn:
            return
        hv = model.h(x)  # (2L, N, d)
        diff = np.abs(np.log(hv[0::2]) - np.log(hv[1::2]))
        np.maximum(num, diff.max(axis=(1, 2)), out=num)

    _stepper.run(np.zeros((rows.size, N, d)), model.linear.A_array, model.linear.G_array, dW, dt,
                 inputs=lambda k: u_at(k)[rows], on_step=on_step, fine=_fine(grids, -T, dt))
    ratios = num / denoms[live]
    return ContractionReport(float(ratios.max()), ratios, skipped, N)
