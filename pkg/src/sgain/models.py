"""Feedback function library, built-in example systems and model specs."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property

import numpy as np

from .errors import ModelError
from .exact import mul, rational_power, to_fraction
from .expression import ExpressionError, parse_expression
from .linearflow import LinearSystem

FAMILIES = (
    "goodwin",
    "othmer_tyson",
    "griffith",
    "competitive_hill",
    "shifted_saturating",
    "reciprocal_saturating",
    "constant",
    "custom_expression",
)
SHIFT_KINDS = ("subtract_delta_over_T", "reciprocal_shift_S")
SOURCES = ("self", "prev", "next", "sum")
MONOTONICITY = ("monotone", "anti_monotone")

# numeric fallback for custom expressions
LATTICE_RANGE = (1e-4, 1e4)
LATTICE_POINTS = 100_000
LATTICE_INFLATION = 1.05


@dataclass(frozen=True)
class SublinearityShift:
    """Declared shift under which h becomes sublinear.

    ``subtract_delta_over_T`` tests h(x) - delta/T; ``reciprocal_shift_S``
    tests 1/h(x) - (1/S)(1/Gamma).
    """

    kind: str
    value: Fraction

    def __post_init__(self):
        if self.kind not in SHIFT_KINDS:
            raise ModelError(f"unknown sublinearity shift kind {self.kind!r}")
        object.__setattr__(self, "value", to_fraction(self.value))
        if self.value < 1:
            raise ModelError("sublinearity shift parameter must be >= 1")


def _positive(params, name):
    v = params[name]
    if v <= 0:
        raise ModelError(f"feedback parameter {name} = {v} must be positive")
    return v


_REQUIRED = {
    "goodwin": ("V", "K", "m"),
    "othmer_tyson": ("k0", "K", "m"),
    "griffith": ("K", "m"),
    "competitive_hill": ("K", "m"),
    "shifted_saturating": ("c", "a", "b"),
    "reciprocal_saturating": ("c", "a", "b"),
    "constant": ("value",),
    "custom_expression": ("expressions", "monotonicity"),
}
_OPTIONAL = {
    "shifted_saturating": ("source",),
    "reciprocal_saturating": ("source",),
}


def _normalize_params(family: str, dim: int, params: dict) -> dict:
    required = _REQUIRED[family]
    allowed = set(required) | set(_OPTIONAL.get(family, ()))
    unknown = set(params) - allowed
    if unknown:
        raise ModelError(f"unknown parameter(s) for {family}: {', '.join(sorted(unknown))}")
    missing = [k for k in required if k not in params]
    if missing:
        raise ModelError(f"missing parameter(s) for {family}: {', '.join(missing)}")
    out = {}
    for key, val in params.items():
        if key in ("expressions",):
            exprs = tuple(str(e) for e in val)
            if len(exprs) != dim:
                raise ModelError(f"custom_expression needs {dim} expressions, got {len(exprs)}")
            out[key] = exprs
        elif key in ("monotonicity",):
            if val not in MONOTONICITY:
                raise ModelError(f"monotonicity must be one of {MONOTONICITY}")
            out[key] = val
        elif key == "source":
            if val not in SOURCES:
                raise ModelError(f"source must be one of {SOURCES}")
            out[key] = val
        elif key in ("value",) or (key == "K" and family == "competitive_hill"):
            vec = val if isinstance(val, (list, tuple)) else [val] * dim
            vec = tuple(to_fraction(v) for v in vec)
            if len(vec) != dim:
                raise ModelError(f"parameter {key} needs {dim} entries")
            out[key] = vec
        else:
            out[key] = to_fraction(val)
    if family in ("shifted_saturating", "reciprocal_saturating"):
        out.setdefault("source", "self")
    return out


@dataclass(frozen=True)
class FeedbackSpec:
    """Output function h together with its range and derivative bounds."""

    family: str
    dim: int
    params: dict
    sublinearity_shift: SublinearityShift | None = None
    gamma_override: tuple | None = None
    delta_override: tuple | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ModelError(f"unknown feedback family {self.family!r}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise ModelError("feedback dimension must be a positive integer")
        p = _normalize_params(self.family, self.dim, dict(self.params))
        object.__setattr__(self, "params", p)
        fam = self.family
        if fam in ("goodwin", "othmer_tyson", "griffith", "competitive_hill"):
            if p["m"] < 1:
                raise ModelError(f"Hill exponent m = {p['m']} must be >= 1")
        if fam == "goodwin":
            _positive(p, "V")
            _positive(p, "K")
        elif fam == "othmer_tyson":
            _positive(p, "k0")
            if p["K"] <= 1:
                raise ModelError(f"othmer_tyson needs K > 1, got K = {p['K']}")
        elif fam == "griffith":
            _positive(p, "K")
        elif fam == "competitive_hill":
            if min(p["K"]) <= 0:
                raise ModelError("competitive_hill needs every K_i > 0")
        elif fam in ("shifted_saturating", "reciprocal_saturating"):
            if p["b"] <= 0 or p["a"] < 0:
                raise ModelError("saturating families need b > 0 and a >= 0")
            if p["c"] < 0:
                raise ModelError("saturating families need c >= 0")
            if fam == "reciprocal_saturating" and p["c"] + min(p["a"] / p["b"], 1) <= 0:
                raise ModelError("reciprocal_saturating would divide by zero")
        elif fam == "constant":
            if min(p["value"]) < 0:
                raise ModelError("constant feedback must be nonnegative")
        elif fam == "custom_expression":
            try:
                exprs = [parse_expression(e) for e in p["expressions"]]
            except ExpressionError as exc:
                raise ModelError(f"custom_expression: {exc}") from None
            for e in exprs:
                if any(v > self.dim for v in e.variables()):
                    raise ModelError(f"expression {e.source!r} uses a variable beyond x{self.dim}")
        for name in ("gamma_override", "delta_override"):
            val = getattr(self, name)
            if val is not None:
                val = tuple(to_fraction(v) for v in val)
                if len(val) != self.dim:
                    raise ModelError(f"{name} needs {self.dim} entries")
                object.__setattr__(self, name, val)
        if self.sublinearity_shift is not None and not isinstance(self.sublinearity_shift, SublinearityShift):
            kind, value = self.sublinearity_shift
            object.__setattr__(self, "sublinearity_shift", SublinearityShift(kind, value))

    # evaluation

    @cached_property
    def _fp(self) -> dict:
        out = {}
        for k, v in self.params.items():
            if isinstance(v, Fraction):
                out[k] = float(v)
            elif isinstance(v, tuple) and v and isinstance(v[0], Fraction):
                out[k] = np.array([float(x) for x in v])
            else:
                out[k] = v
        if self.family == "custom_expression":
            out["compiled"] = [parse_expression(e) for e in self.params["expressions"]]
        return out

    def _source(self, x: np.ndarray) -> np.ndarray:
        src = self.params["source"]
        if src == "self":
            return x
        if src == "prev":
            return np.roll(x, 1, axis=-1)
        if src == "next":
            return np.roll(x, -1, axis=-1)
        return np.broadcast_to(x.sum(axis=-1, keepdims=True), x.shape)

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """h(x) for an array whose last axis has length dim (no input checks)."""
        x = np.asarray(x, dtype=float)
        p = self._fp
        fam = self.family
        if fam in ("goodwin", "othmer_tyson", "griffith"):
            xm = np.power(x[..., -1], p["m"])
            if fam == "goodwin":
                f = p["V"] / (p["K"] + xm)
            elif fam == "othmer_tyson":
                f = p["k0"] * (1.0 + xm) / (p["K"] + xm)
            else:
                f = p["K"] * xm / (1.0 + p["K"] * xm)
            out = np.zeros_like(x)
            out[..., 0] = f
            return out
        if fam == "competitive_hill":
            s = np.power(x, p["m"]).sum(axis=-1, keepdims=True)
            return 1.0 / (p["K"] + s)
        if fam in ("shifted_saturating", "reciprocal_saturating"):
            y = self._source(x)
            g = (p["a"] + y) / (p["b"] + y)
            if fam == "shifted_saturating":
                return p["c"] + g
            return 1.0 / (p["c"] + g)
        if fam == "constant":
            return np.broadcast_to(p["value"], x.shape).copy()
        return np.stack([e(x) for e in p["compiled"]], axis=-1)

    # derived constants

    @cached_property
    def _closed(self) -> dict:
        return _closed_form_constants(self)

    @property
    def non_rigorous(self) -> bool:
        return self._closed["non_rigorous"]

    @property
    def gamma(self) -> tuple:
        """Sup of h per component (declared override wins)."""
        return self.gamma_override if self.gamma_override is not None else self._closed["gamma"]

    @property
    def delta(self) -> tuple:
        return self.delta_override if self.delta_override is not None else self._closed["delta"]

    @property
    def M(self):
        """sup |dh_i/dx_j|, exact where a closed form exists."""
        return self._closed["M"]

    @property
    def M_bound(self):
        """The simpler hand bound (mV/K, mk0(K-1)/K, m/K); equals M otherwise."""
        return self._closed["M_bound"]

    @property
    def monotonicity(self) -> str:
        return self._closed["monotonicity"]

    @property
    def single_loop_form(self) -> bool:
        """True when h = (f(x_d), 0, ..., 0)."""
        fam = self.family
        if fam in ("goodwin", "othmer_tyson", "griffith"):
            return True
        if fam == "constant":
            return all(v == 0 for v in self.params["value"][1:])
        if fam == "custom_expression":
            exprs = self._fp["compiled"]
            rest_zero = all(not e.variables() and float(e(np.zeros(self.dim))) == 0.0 for e in exprs[1:])
            return rest_zero and exprs[0].variables() <= {self.dim}
        return self.dim == 1 and fam in ("shifted_saturating", "reciprocal_saturating")


def _hill_peak(m: Fraction, K: Fraction):
    """sup over x >= 0 of m x^(m-1) / (K + x^m)^2, attained at x^m = (m-1)K/(m+1)."""
    return mul(
        (m + 1) ** 2 / (4 * m * K * K),
        rational_power((m - 1) * K / (m + 1), (m - 1) / m),
    ) if m > 1 else 1 / (K * K)


def _closed_form_constants(spec: FeedbackSpec) -> dict:
    p = spec.params
    d = spec.dim
    zeros = (Fraction(0),) * d
    fam = spec.family
    out = {"non_rigorous": False}
    if fam == "goodwin":
        m, K, V = p["m"], p["K"], p["V"]
        out["gamma"] = (V / K,) + zeros[1:]
        out["delta"] = zeros
        out["M"] = mul(V, _hill_peak(m, K))
        out["M_bound"] = m * V / K
        out["monotonicity"] = "anti_monotone"
    elif fam == "othmer_tyson":
        m, K, k0 = p["m"], p["K"], p["k0"]
        out["gamma"] = (k0,) + zeros[1:]
        out["delta"] = (k0 / K,) + zeros[1:]
        out["M"] = mul(k0 * (K - 1), _hill_peak(m, K))
        out["M_bound"] = m * k0 * (K - 1) / K
        out["monotonicity"] = "monotone"
    elif fam == "griffith":
        m, K = p["m"], p["K"]
        out["gamma"] = (Fraction(1),) + zeros[1:]
        out["delta"] = zeros
        if m > 1:
            out["M"] = mul(
                rational_power(K, 1 / m), (m + 1) ** 2 / (4 * m), rational_power((m - 1) / (m + 1), (m - 1) / m)
            )
        else:
            out["M"] = K
        out["M_bound"] = out["M"]
        out["monotonicity"] = "monotone"
    elif fam == "competitive_hill":
        m, Ks = p["m"], p["K"]
        Kmin = min(Ks)
        out["gamma"] = tuple(1 / k for k in Ks)
        out["delta"] = zeros
        out["M"] = _hill_peak(m, Kmin)
        out["M_bound"] = m / Kmin
        out["monotonicity"] = "anti_monotone"
    elif fam in ("shifted_saturating", "reciprocal_saturating"):
        a, b, c = p["a"], p["b"], p["c"]
        g0 = a / b
        g_lo, g_hi = min(g0, Fraction(1)), max(g0, Fraction(1))
        slope = abs(b - a) / (b * b)
        increasing = b >= a
        if fam == "shifted_saturating":
            out["gamma"] = (c + g_hi,) * d
            out["delta"] = (c + g_lo,) * d
            out["M"] = slope
            out["monotonicity"] = "monotone" if increasing else "anti_monotone"
        else:
            out["gamma"] = (1 / (c + g_lo),) * d
            out["delta"] = (1 / (c + g_hi),) * d
            # both factors of |g'|/(c+g)^2 peak at y = 0 when g increases;
            # otherwise bound (c+g)^2 below by (c+1)^2
            out["M"] = slope / (c + g0) ** 2 if increasing else slope / (c + 1) ** 2
            out["monotonicity"] = "anti_monotone" if increasing else "monotone"
        out["M_bound"] = out["M"]
    elif fam == "constant":
        v = p["value"]
        out["gamma"] = v
        out["delta"] = v
        out["M"] = Fraction(0)
        out["M_bound"] = Fraction(0)
        out["monotonicity"] = "monotone"
    else:
        gamma, delta, M = lattice_constants(spec)
        out["gamma"] = gamma
        out["delta"] = delta
        out["M"] = M
        out["M_bound"] = M
        out["monotonicity"] = p["monotonicity"]
        out["non_rigorous"] = True
    return out


def lattice_constants(spec: FeedbackSpec, n_points: int = LATTICE_POINTS, inflate: float = LATTICE_INFLATION):
    """Numeric (Gamma, delta, M) over a log lattice; not rigorous.

    Gamma is inflated and delta deflated by the factor; M is inflated.
    """
    d = spec.dim
    per_axis = max(3, int(round(n_points ** (1.0 / d))))
    axis = np.concatenate(([0.0], np.geomspace(*LATTICE_RANGE, per_axis - 1)))
    mesh = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
    h = spec.evaluate(mesh)
    if not np.all(np.isfinite(h)):
        raise ModelError("feedback is not finite on the sampling lattice")
    gamma = tuple(Fraction(float(v) * inflate) for v in h.max(axis=0))
    delta = tuple(Fraction(float(v) / inflate) for v in h.min(axis=0))
    M = 0.0
    for j in range(d):
        step = 1e-6 * np.maximum(mesh[:, j], 1e-6)
        up = mesh.copy()
        up[:, j] += step
        lo = mesh.copy()
        lo[:, j] = np.maximum(lo[:, j] - step, 0.0)
        grad = (spec.evaluate(up) - spec.evaluate(lo)) / (up[:, j] - lo[:, j])[:, None]
        M = max(M, float(np.nanmax(np.abs(grad))))
    return gamma, delta, Fraction(M * inflate)


def lattice_derivative_sup(spec: FeedbackSpec, n_points: int = 20001) -> float:
    """Independent check of M: max |dh_i/dx_j| along each axis with the
    other coordinates at 0, on a log lattice over [1e-4, 1e4]."""
    d = spec.dim
    axis = np.geomspace(*LATTICE_RANGE, n_points)
    best = 0.0
    for j in range(d):
        x = np.zeros((n_points, d))
        x[:, j] = axis
        step = 1e-7 * axis
        up = x.copy()
        up[:, j] += step
        lo = x.copy()
        lo[:, j] -= step
        grad = (spec.evaluate(up) - spec.evaluate(lo)) / (2 * step)[:, None]
        best = max(best, float(np.abs(grad).max()))
    return best


def eval_feedback(spec: FeedbackSpec, x) -> np.ndarray:
    """h(x) for x in the nonnegative orthant."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != spec.dim:
        raise ModelError(f"x must have {spec.dim} components")
    if np.any(x < 0):
        raise ModelError("feedback input must be nonnegative")
    return spec.evaluate(x)


def derived_constants(spec: FeedbackSpec):
    """(Gamma, delta, M) for the feedback."""
    return spec.gamma, spec.delta, spec.M


@dataclass(frozen=True)
class ModelSpec:
    linear: LinearSystem
    feedback: FeedbackSpec
    name: str = "model"
    allows_zero: bool = False

    def __post_init__(self):
        if self.linear.dim != self.feedback.dim:
            raise ModelError(
                f"dimension mismatch: linear part has {self.linear.dim}, feedback has {self.feedback.dim}"
            )

    @property
    def dim(self) -> int:
        return self.linear.dim

    def h(self, x: np.ndarray) -> np.ndarray:
        return self.feedback.evaluate(x)


# built-in systems

def _vec(value, n, name):
    if isinstance(value, (list, tuple)):
        if len(value) != n:
            raise ModelError(f"override {name} needs {n} entries, got {len(value)}")
        return tuple(to_fraction(v) for v in value)
    return (to_fraction(value),) * n


def _single_loop_linear(alpha, sigma):
    n = len(alpha)
    if any(a <= 0 for a in alpha):
        raise ModelError("every alpha_i must be positive")
    A = [[Fraction(0)] * n for _ in range(n)]
    for i in range(n):
        A[i][i] = -alpha[i]
        if i > 0:
            A[i][i - 1] = Fraction(1)
    noise = [[sigma[k] if i == k else Fraction(0) for i in range(n)] for k in range(n)]
    return LinearSystem(n, A, noise, "single_loop")


def _diagonal_linear(alpha, sigma):
    n = len(alpha)
    if any(a <= 0 for a in alpha):
        raise ModelError("every alpha_i must be positive")
    A = [[-alpha[i] if i == j else Fraction(0) for j in range(n)] for i in range(n)]
    noise = [[sigma[k] if i == k else Fraction(0) for i in range(n)] for k in range(n)]
    return LinearSystem(n, A, noise, "diagonal")


def _take(overrides, defaults):
    unknown = set(overrides) - set(defaults)
    if unknown:
        raise ModelError(f"unknown override(s): {', '.join(sorted(unknown))}")
    merged = dict(defaults)
    merged.update(overrides)
    return merged


def _hill_loop(name, family, defaults, overrides, extra_checks=None):
    p = _take(overrides, defaults)
    n = int(p["n"])
    if n < 1:
        raise ModelError("n must be >= 1")
    alpha = _vec(p["alpha"], n, "alpha")
    sigma = _vec(p["sigma"], n, "sigma")
    m = to_fraction(p["m"])
    K = to_fraction(p["K"])
    if m <= 1:
        raise ModelError(f"{name} needs m > 1, got m = {m}")
    if extra_checks:
        extra_checks(p, K)
    params = {k: p[k] for k in _REQUIRED[family]}
    fb = FeedbackSpec(family, n, params)
    return ModelSpec(_single_loop_linear(alpha, sigma), fb, name, allows_zero=(family == "griffith"))


def _goodwin(overrides):
    def check(p, K):
        if K <= 1:
            raise ModelError(f"goodwin needs K > 1, got K = {K}")
    defaults = dict(n=3, m=2, K=2, V=Fraction(1, 1000), alpha=1, sigma=Fraction(1, 10))
    return _hill_loop("goodwin", "goodwin", defaults, overrides, check)


def _othmer_tyson(overrides):
    defaults = dict(n=3, m=2, K=2, k0=Fraction(1, 1000), alpha=1, sigma=Fraction(1, 10))
    return _hill_loop("othmer_tyson", "othmer_tyson", defaults, overrides)


def _griffith(overrides):
    def check(p, K):
        if K <= 0:
            raise ModelError("griffith needs K > 0")
    defaults = dict(n=3, m=2, K=Fraction(1, 10**6), alpha=1, sigma=Fraction(1, 10))
    return _hill_loop("griffith", "griffith", defaults, overrides, check)


def _remark4(overrides):
    defaults = dict(
        n=3, m=3, K=Fraction(4, 3), k0=Fraction(1, 6), alpha=(8, 9, 10),
        sigma=(Fraction(1, 2), Fraction(1, 4), Fraction(1, 3)),
    )
    model = _hill_loop("remark4", "othmer_tyson", defaults, overrides)
    return model


def _competitive(overrides):
    p = _take(overrides, dict(n=3, m=2, K=20, alpha=1, sigma=Fraction(1, 10)))
    n = int(p["n"])
    K = _vec(p["K"], n, "K")
    if min(K) <= 1:
        raise ModelError("competitive needs every K_i > 1")
    m = to_fraction(p["m"])
    if m <= 1:
        raise ModelError("competitive needs m > 1")
    fb = FeedbackSpec("competitive_hill", n, {"K": K, "m": m})
    return ModelSpec(_diagonal_linear(_vec(p["alpha"], n, "alpha"), _vec(p["sigma"], n, "sigma")), fb, "competitive")


F = Fraction


def _example45(overrides):
    _take(overrides, {})
    A = [[-1, 1, 0], [F(1, 3), F(1, 2), 0], [0, 1, F(-1, 3)]]
    noise = [[F(3, 2), 2, 2], [-3, -2, -2], [2, 2, 2]]
    fb = FeedbackSpec(
        "shifted_saturating", 3, {"c": 2, "a": 0, "b": 1, "source": "self"},
        sublinearity_shift=SublinearityShift("subtract_delta_over_T", F(2)),
    )
    return ModelSpec(LinearSystem(3, A, noise, "general"), fb, "example45")


def _example46(overrides):
    _take(overrides, {})
    A = [[-1, 0, 0], [0, F(1, 2), 0], [0, 0, 1]]
    noise = [[1, F(3, 2), 1], [-2, -2, -2], [F(-1, 2), F(1, 4), F(1, 3)]]
    fb = FeedbackSpec(
        "reciprocal_saturating", 3, {"c": 1, "a": 0, "b": 1, "source": "prev"},
        sublinearity_shift=SublinearityShift("reciprocal_shift_S", F(2)),
    )
    return ModelSpec(LinearSystem(3, A, noise, "diagonal"), fb, "example46")


def _example47(overrides):
    _take(overrides, {})
    A = [[F(1, 2), 0, 1], [1, F(-1, 3), 0], [0, 1, F(1, 4)]]
    noise = [[3, 3, 3], [F(3, 2), F(5, 4), 1], [F(-5, 2), -3, -2]]
    # declared range [1/4, 1/3]; the attained sup is 2/7
    fb = FeedbackSpec(
        "reciprocal_saturating", 3, {"c": 3, "a": 1, "b": 2, "source": "next"},
        sublinearity_shift=SublinearityShift("reciprocal_shift_S", F(2)),
        gamma_override=(F(1, 3),) * 3, delta_override=(F(1, 4),) * 3,
    )
    return ModelSpec(LinearSystem(3, A, noise, "general"), fb, "example47")


def _scalar(overrides):
    p = _take(overrides, dict(alpha=1, sigma=0, c=1))
    alpha = to_fraction(p["alpha"])
    if alpha <= 0:
        raise ModelError("alpha must be positive")
    linear = LinearSystem(1, [[-alpha]], [[to_fraction(p["sigma"])]], "diagonal")
    fb = FeedbackSpec("constant", 1, {"value": (to_fraction(p["c"]),)})
    return ModelSpec(linear, fb, "scalar")


_BUILTINS = {
    "goodwin": _goodwin,
    "othmer_tyson": _othmer_tyson,
    "griffith": _griffith,
    "competitive": _competitive,
    "example45": _example45,
    "example46": _example46,
    "example47": _example47,
    "remark4": _remark4,
    "scalar": _scalar,
}

BUILTIN_NAMES = tuple(_BUILTINS)


def builtin(name: str, overrides: dict | None = None, **kwargs) -> ModelSpec:
    """A named example system; keyword overrides replace default parameters."""
    if name not in _BUILTINS:
        raise ModelError(f"unknown builtin {name!r}; choose from {', '.join(BUILTIN_NAMES)}")
    merged = dict(overrides or {})
    merged.update(kwargs)
    return _BUILTINS[name](merged)
