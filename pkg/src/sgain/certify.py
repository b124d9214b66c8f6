"""Small-gain certificates for the random feedback system.

Type I certificates bound M d^2 E[R]/lambda with exact rationals (or
rigorous intervals when M is irrational) and certify when the bound is
below 1. Type II certificates run the structural checks that make the gain
operator a part-metric contraction; they carry no numeric gain constant.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
import math

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import expit

from .errors import ModelError, StructureError
from .exact import is_interval, less_than, lower, mul, serialize, to_fraction, upper
from .linearflow import mao_bound
from .models import ModelSpec

KINDS = ("type_I_single_loop", "type_I_diagonal", "type_I_chain", "type_II")

# sampling plan for the Type II range and monotonicity checks
_CHECK_LATTICE = (1e-3, 1e3)
_CHECK_SAMPLES = 4000
_CHECK_SEED = 20240607


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class GainCertificate:
    kind: str
    lam: object
    er_bound: object
    M: object
    gain_constant: object
    structural_checks: list
    verdict: str
    trace: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    @property
    def certified(self) -> bool:
        return self.verdict == "certified"

    def to_dict(self) -> dict:
        def num(x):
            return None if x is None else serialize(x)

        extras = {}
        for key, val in self.extras.items():
            if isinstance(val, (Fraction, int)) and not isinstance(val, bool) or is_interval(val):
                extras[key] = serialize(val)
            else:
                extras[key] = val
        return {
            "kind": self.kind,
            "lambda": num(self.lam),
            "er_bound": num(self.er_bound),
            "M": num(self.M),
            "gain_constant": num(self.gain_constant),
            "structural_checks": [{"name": c.name, "passed": c.passed, "detail": c.detail} for c in self.structural_checks],
            "verdict": self.verdict,
            "trace": [{"term": t, "value": serialize(v), "formula": f} for t, v, f in self.trace],
            "extras": extras,
        }


def _verdict(checks, gain=None) -> str:
    ok = all(c.passed for c in checks)
    if gain is not None:
        ok = ok and less_than(gain, 1)
    return "certified" if ok else "not_certified"


def _decay_rates(model: ModelSpec):
    alpha = model.linear.alpha
    if any(a <= 0 for a in alpha):
        bad = next(i for i, a in enumerate(alpha) if a <= 0)
        raise ModelError(f"alpha_{bad + 1} = {alpha[bad]} must be positive")
    return alpha


def _type1_checks(model: ModelSpec, structure: str) -> list:
    fb = model.feedback
    checks = [
        Check("cooperativity", True, "off-diagonal entries of A are nonnegative"),
        Check("structure", model.linear.structure == structure, f"structure is {model.linear.structure}"),
    ]
    if structure == "single_loop":
        checks.append(Check("feedback_form", fb.single_loop_form, "h = (f(x_n), 0, ..., 0)"))
    checks.append(Check("H2_range", all(math.isfinite(upper(g)) for g in fb.gamma), "Gamma finite"))
    return checks


def _require_structure(model: ModelSpec, structure: str):
    if model.linear.structure != structure:
        raise StructureError(f"model structure is {model.linear.structure!r}, this certificate needs {structure!r}")


def _sigma_sq(model: ModelSpec) -> tuple:
    return tuple(s * s for s in model.linear.row_sigma())


def _finish(kind, model, lam, er, checks, trace, extras=None) -> GainCertificate:
    M = model.feedback.M
    d = model.dim
    gain = mul(M, d * d, er, 1 / to_fraction(lam))
    trace = list(trace) + [
        ("M", M, "sup |dh_i/dx_j|"),
        ("gain_constant", gain, "M d^2 er_bound / lambda"),
    ]
    extras = dict(extras or {})
    extras["M_bound"] = model.feedback.M_bound
    if model.feedback.non_rigorous:
        extras["note"] = "M from a numeric lattice; not rigorous"
    return GainCertificate(kind, lam, er, M, gain, checks, _verdict(checks, gain), trace, extras)


def corollary_er_bound(alpha, sigma_sq, lam: Fraction) -> Fraction:
    """max{1, lam^(n-1)} sum_i lam^-(n-i) prod_{j>=i} (1 + sigma_j^2/(2 j lam))."""
    n = len(alpha)
    total = Fraction(0)
    for i in range(1, n + 1):
        prod = Fraction(1)
        for j in range(i, n + 1):
            prod *= 1 + sigma_sq[j - 1] / (2 * j * lam)
        total += prod / lam ** (n - i)
    return max(Fraction(1), lam ** (n - 1)) * total


def chain_er_bound(sigma_sq, mu, lam: Fraction, with_max: bool = True) -> Fraction:
    """[max{1, lam^(n-1)}] sum_j lam^-(n-j) prod_{i>=j} (1 + sigma_i^2/(2 mu_i))."""
    n = len(mu)
    total = Fraction(0)
    for j in range(1, n + 1):
        prod = Fraction(1)
        for i in range(j, n + 1):
            prod *= 1 + sigma_sq[i - 1] / (2 * mu[i - 1])
        total += prod / lam ** (n - j)
    return max(Fraction(1), lam ** (n - 1)) * total if with_max else total


def certify_single_loop(model: ModelSpec) -> GainCertificate:
    """Corollary bound for the cyclic chain with lambda = min(alpha)/(n+1)."""
    _require_structure(model, "single_loop")
    alpha = _decay_rates(model)
    s2 = _sigma_sq(model)
    n = model.dim
    lam = min(alpha) / (n + 1)
    er = corollary_er_bound(alpha, s2, lam)
    trace = [
        ("lambda", lam, "min(alpha)/(n+1)"),
        ("er_bound", er, "max{1,lam^(n-1)} sum_i lam^-(n-i) prod_{j>=i} (1+sigma_j^2/(2 j lam))"),
    ]
    return _finish("type_I_single_loop", model, lam, er, _type1_checks(model, "single_loop"), trace)


def certify_chain(model: ModelSpec, lam=None, rho1=None) -> GainCertificate:
    """Chain bound with decay reserves rho_i = rho1 - (i-1) lam and margins
    mu_i = alpha_i - rho_i. Defaults reproduce the corollary allocation.

    ``extras`` also carries the bound without the max{1, lam^(n-1)} factor.
    """
    _require_structure(model, "single_loop")
    alpha = _decay_rates(model)
    s2 = _sigma_sq(model)
    n = model.dim
    lam = min(alpha) / (n + 1) if lam is None else to_fraction(lam)
    if lam <= 0:
        raise ModelError("lambda must be positive")
    rho1 = n * lam if rho1 is None else to_fraction(rho1)
    rho = [rho1 - i * lam for i in range(n)]
    if rho[-1] < lam:
        raise ModelError(f"reserve rho_{n} = {rho[-1]} is below lambda = {lam}")
    mu = [a - r for a, r in zip(alpha, rho)]
    for i, m in enumerate(mu):
        if m <= 0:
            raise ModelError(f"margin mu_{i + 1} = alpha_{i + 1} - rho_{i + 1} = {m} must be positive")
    er = chain_er_bound(s2, mu, lam)
    er_plain = chain_er_bound(s2, mu, lam, with_max=False)
    trace = [
        ("lambda", lam, "chosen"),
        ("rho1", rho1, "chosen"),
    ]
    trace += [(f"mu_{i + 1}", m, f"alpha_{i + 1} - rho_{i + 1}") for i, m in enumerate(mu)]
    trace += [(f"factor_{i + 1}", 1 + s2[i] / (2 * mu[i]), f"1 + sigma_{i + 1}^2/(2 mu_{i + 1})") for i in range(n)]
    trace.append(("er_bound", er, "max{1,lam^(n-1)} sum_j lam^-(n-j) prod_{i>=j} factor_i"))
    cert = _finish("type_I_chain", model, lam, er, _type1_checks(model, "single_loop"), trace,
                   {"rho1": rho1, "er_bound_without_max": er_plain})
    cert.extras["gain_constant_without_max"] = mul(cert.M, n * n, er_plain, 1 / lam)
    return cert


def search_chain_rho1(model: ModelSpec, lam, n_grid: int = 64) -> GainCertificate:
    """Experimental: best chain certificate over a uniform grid of feasible rho1."""
    _require_structure(model, "single_loop")
    alpha = _decay_rates(model)
    n = model.dim
    lam = to_fraction(lam)
    lo = n * lam
    hi = min(a + i * lam for i, a in enumerate(alpha))
    if hi <= lo:
        raise ModelError(f"no feasible rho1 for lambda = {lam}")
    best = None
    for k in range(n_grid):
        rho1 = lo + (hi - lo) * Fraction(k, n_grid)
        cert = certify_chain(model, lam, rho1)
        if best is None or upper(cert.gain_constant) < upper(best.gain_constant):
            best = cert
    best.extras["experimental"] = "rho1 picked by grid search"
    return best


def certify_diagonal(model: ModelSpec) -> GainCertificate:
    """Decoupled rows: lambda = min(alpha)/2, er = sum_i (1 + C_ii/(2 lambda))."""
    _require_structure(model, "diagonal")
    alpha = _decay_rates(model)
    C = model.linear.C_exact
    lam = min(alpha) / 2
    er = sum((1 + c / (2 * lam) for c in C), Fraction(0))
    trace = [
        ("lambda", lam, "min(alpha)/2"),
        ("er_bound", er, "sum_i (1 + sigma_i^2/(2 lam))"),
    ]
    return _finish("type_I_diagonal", model, lam, er, _type1_checks(model, "diagonal"), trace)


def certify_type1(model: ModelSpec) -> GainCertificate:
    """Pick the Type I certificate matching the model's structure."""
    if model.linear.structure == "diagonal":
        return certify_diagonal(model)
    if model.linear.structure == "single_loop":
        return certify_single_loop(model)
    raise StructureError("Type I certificates need a diagonal or single_loop structure")


# scalar case

def scalar_ratio(lam: float, alpha: float, sigma: float) -> float:
    """f(lam) = 1/lam + sigma^2/(2 lam (alpha - lam))."""
    return 1.0 / lam + sigma * sigma / (2.0 * lam * (alpha - lam))


def golden_section_minimizer(alpha: float, sigma: float, tol: float = 1e-12) -> float:
    """Numeric minimizer of scalar_ratio over (0, alpha).

    The search runs on t = logit(lam/alpha) so minimizers close to either
    end of the interval can still be bracketed.
    """
    def f(t):
        lam = alpha * expit(t)
        return scalar_ratio(lam, alpha, sigma)

    ts = np.linspace(-40.0, 40.0, 4001)
    with np.errstate(divide="ignore", over="ignore"):
        vals = f(ts)
    i = int(np.clip(np.nanargmin(vals), 1, ts.size - 2))
    res = minimize_scalar(f, bracket=(ts[i - 1], ts[i], ts[i + 1]), method="golden", tol=tol)
    return float(alpha * expit(res.x))


def certify_scalar_optimal(alpha: float, sigma: float, check: bool = True):
    """Closed-form minimizer lambda0 of ||R||/lambda for the scalar system and the minimum.

    With ``check`` the result is compared to a golden-section search.
    """
    alpha = float(alpha)
    sigma = float(sigma)
    if not alpha > 0:
        raise ModelError("alpha must be positive")
    s = 2 * alpha + sigma * sigma
    lam0 = (s - abs(sigma) * math.sqrt(s)) / 2
    if sigma == 0:
        return alpha, 1.0 / alpha
    ratio = scalar_ratio(lam0, alpha, sigma)
    if check:
        lam_num = golden_section_minimizer(alpha, sigma)
        if abs(lam_num - lam0) > 1e-6 * max(1.0, alpha):
            raise ArithmeticError(f"closed form {lam0} disagrees with numeric minimizer {lam_num}")
    return lam0, ratio


# Type II

def _check_points(model: ModelSpec, rng) -> np.ndarray:
    d = model.dim
    lo, hi = np.log(_CHECK_LATTICE)
    pts = np.exp(rng.uniform(lo, hi, (_CHECK_SAMPLES, d)))
    pts[rng.random((_CHECK_SAMPLES, d)) < 0.1] = 0.0
    return pts


def range_check(model: ModelSpec, rtol: float = 1e-12) -> Check:
    fb = model.feedback
    rng = np.random.default_rng(_CHECK_SEED)
    x = _check_points(model, rng)
    h = model.h(x)
    gamma = np.array([upper(g) for g in fb.gamma])
    delta = np.array([lower(v) for v in fb.delta])
    if np.any(delta <= 0):
        return Check("H3_range", False, f"delta = {[float(v) for v in fb.delta]} is not bounded away from zero")
    over = np.max(h - gamma * (1 + rtol))
    under = np.max(delta * (1 - rtol) - h)
    ok = over <= 0 and under <= 0
    return Check("H3_range", bool(ok), f"sampled h in [{h.min():.6g}, {h.max():.6g}] vs declared [delta, Gamma]")


def monotonicity_check(model: ModelSpec, rtol: float = 1e-12) -> Check:
    fb = model.feedback
    rng = np.random.default_rng(_CHECK_SEED + 1)
    x = _check_points(model, rng)
    y = x + np.exp(rng.uniform(-5, 5, x.shape)) * (rng.random(x.shape) < 0.7)
    hx, hy = model.h(x), model.h(y)
    scale = np.maximum(1.0, np.maximum(np.abs(hx), np.abs(hy))) * rtol
    if fb.monotonicity == "monotone":
        bad = hx - hy > scale
    else:
        bad = hy - hx > scale
    n_bad = int(bad.any(axis=1).sum())
    return Check("monotonicity", n_bad == 0, f"{fb.monotonicity}: {n_bad} violating pairs of {x.shape[0]}")


def certify_type2(model: ModelSpec, contraction=None) -> GainCertificate:
    """Structural certificate: cooperativity, monotonicity, range in
    [delta, Gamma], sublinearity under the declared shift, and a negative
    Mao bound. ``contraction`` may be a ContractionReport attached as
    advisory information only.
    """
    from .gain import sublinearity_check

    fb = model.feedback
    checks = [Check("cooperativity", True, "off-diagonal entries of A are nonnegative")]
    checks.append(monotonicity_check(model))
    checks.append(range_check(model))
    shift = fb.sublinearity_shift
    if shift is None:
        checks.append(Check("sublinearity", False, "no sublinearity shift declared"))
    elif min(lower(v) for v in fb.delta) <= 0:
        checks.append(Check("sublinearity", False, "shift needs delta > 0"))
    else:
        rep = sublinearity_check(fb, shift.kind, shift_value=shift.value)
        checks.append(Check("sublinearity", rep.passed,
                            f"{shift.kind} with value {shift.value}: worst violation {rep.worst_violation:.3e}"))
    lyap = mao_bound(model.linear)
    checks.append(Check("mao_bound", lyap.mao_bound < 0, f"Mao bound {lyap.mao_bound}"))
    trace = [
        ("K1", lyap.K1, "||A||_F rounded up when irrational"),
        ("K2", lyap.K2, "max_j sum_k (g_k^j)^2"),
        ("K3", lyap.K3, "sum over sign-uniform noises of (min_j |g_k^j|)^2"),
        ("mao_bound", lyap.mao_bound, "-(K3 - K1 - K2/2)"),
        ("mao_bound_sharp", lyap.mao_bound_sharp, "-(K3 - ||A||_F - K2/2)"),
    ]
    extras = {
        "mao_bound": lyap.mao_bound,
        "mao_bound_sharp": lyap.mao_bound_sharp,
        "note": "no numeric gain constant; ensemble statistics stand in for essential suprema",
    }
    if fb.non_rigorous:
        extras["non_rigorous"] = True
    if contraction is not None:
        extras["advisory_contraction"] = {
            "max_ratio": contraction.max_ratio,
            "n_pairs": int(contraction.ratios.size),
            "skipped": contraction.skipped,
            "n_paths": contraction.n_paths,
            "label": "advisory, not part of verdict",
        }
    return GainCertificate("type_II", None, None, None, None, checks, _verdict(checks), trace, extras)
