"""TOML model configuration files.

Layout (all keys fixed; unknown keys are errors)::

    [meta]
    name = "remark4"
    allows_zero = false              # optional

    [linear]
    dim = 3
    structure = "single_loop"        # diagonal | single_loop | general
    A = [-8, 0, 0, 1, -9, 0, 0, 1, -10]   # row-major, or a list of rows

    [[noise]]                        # one table per noise matrix
    diag = ["1/2", 0, 0]             # or: matrix = [[...], ...] (must be diagonal)

    [feedback]
    family = "othmer_tyson"
    gamma = [...]                    # optional declared sup of h
    delta = [...]                    # optional declared inf of h
    [feedback.params]
    k0 = "1/6"
    K = "4/3"
    m = 3
    [feedback.sublinearity]          # optional
    kind = "reciprocal_shift_S"
    value = 2

Numbers may be integers, floats or exact strings "p/q".
"""

from __future__ import annotations

from fractions import Fraction
from pathlib import Path

import tomli
import tomli_w

from .errors import ConfigError, ModelError, UnsupportedNoiseError
from .exact import to_fraction
from .linearflow import LinearSystem
from .models import FeedbackSpec, ModelSpec, SublinearityShift

_TOP = {"meta", "linear", "noise", "feedback"}
_META = {"name", "allows_zero"}
_LINEAR = {"dim", "structure", "A"}
_NOISE = {"diag", "matrix"}
_FEEDBACK = {"family", "params", "gamma", "delta", "sublinearity"}
_SUBLIN = {"kind", "value"}


def _unknown(table: dict, allowed: set, where: str):
    extra = set(table) - allowed
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(sorted(extra))}")


def _num(value, where: str) -> Fraction:
    try:
        return to_fraction(value)
    except (TypeError, ValueError, ZeroDivisionError):
        raise ConfigError(f"{where}: expected a number or 'p/q' string, got {value!r}") from None


def _require(table: dict, key: str, where: str):
    if key not in table:
        raise ConfigError(f"{where}: missing key '{key}'")
    return table[key]


def _parse_A(raw, d: int):
    if not isinstance(raw, list):
        raise ConfigError("[linear].A: expected an array")
    if raw and all(isinstance(r, list) for r in raw):
        if len(raw) != d or any(len(r) != d for r in raw):
            raise ConfigError(f"[linear].A: expected {d} rows of {d} entries")
        flat = [v for r in raw for v in r]
    else:
        flat = raw
        if len(flat) != d * d:
            raise ConfigError(f"[linear].A: expected {d * d} entries (row-major), got {len(flat)}")
    vals = [_num(v, f"[linear].A[{i}]") for i, v in enumerate(flat)]
    return [vals[i * d : (i + 1) * d] for i in range(d)]


def _parse_noise(entries, d: int):
    if not isinstance(entries, list) or not entries:
        raise ConfigError("[[noise]]: at least one noise table is required")
    out = []
    for k, entry in enumerate(entries):
        where = f"[[noise]] #{k + 1}"
        if not isinstance(entry, dict):
            raise ConfigError(f"{where}: expected a table")
        _unknown(entry, _NOISE, where)
        if ("diag" in entry) == ("matrix" in entry):
            raise ConfigError(f"{where}: give exactly one of 'diag' or 'matrix'")
        if "diag" in entry:
            vec = entry["diag"]
            if not isinstance(vec, list) or len(vec) != d:
                raise ConfigError(f"{where}.diag: expected {d} entries")
            out.append([_num(v, f"{where}.diag[{i}]") for i, v in enumerate(vec)])
        else:
            mat = entry["matrix"]
            if not isinstance(mat, list) or len(mat) != d or any(not isinstance(r, list) or len(r) != d for r in mat):
                raise ConfigError(f"{where}.matrix: expected a {d}x{d} array")
            vals = [[_num(v, f"{where}.matrix[{i}][{j}]") for j, v in enumerate(r)] for i, r in enumerate(mat)]
            for i in range(d):
                for j in range(d):
                    if i != j and vals[i][j] != 0:
                        raise UnsupportedNoiseError(
                            f"{where}.matrix: entry ({i + 1},{j + 1}) = {vals[i][j]} is off-diagonal; "
                            "only diagonal noise matrices are supported"
                        )
            out.append([vals[i][i] for i in range(d)])
    return out


def model_from_dict(doc: dict, source: str = "<config>") -> ModelSpec:
    """Build and validate a ModelSpec from a parsed TOML document."""
    try:
        _unknown(doc, _TOP, source)
        meta = doc.get("meta", {})
        _unknown(meta, _META, "[meta]")
        name = str(meta.get("name", Path(source).stem if source else "model"))
        allows_zero = meta.get("allows_zero", False)
        if not isinstance(allows_zero, bool):
            raise ConfigError("[meta].allows_zero: expected true or false")

        linear = _require(doc, "linear", source)
        _unknown(linear, _LINEAR, "[linear]")
        d = _require(linear, "dim", "[linear]")
        if not isinstance(d, int) or isinstance(d, bool) or d < 1:
            raise ConfigError("[linear].dim: expected a positive integer")
        structure = linear.get("structure", "general")
        A = _parse_A(_require(linear, "A", "[linear]"), d)
        noise = _parse_noise(_require(doc, "noise", source), d)
        system = LinearSystem(d, A, noise, structure)

        fb = _require(doc, "feedback", source)
        _unknown(fb, _FEEDBACK, "[feedback]")
        family = _require(fb, "family", "[feedback]")
        params = dict(fb.get("params", {}))
        for key, val in list(params.items()):
            if key == "expressions":
                continue
            if isinstance(val, list):
                params[key] = [_num(v, f"[feedback.params].{key}") for v in val]
            elif isinstance(val, str) and _looks_numeric(val):
                params[key] = _num(val, f"[feedback.params].{key}")
        shift = None
        if "sublinearity" in fb:
            sub = fb["sublinearity"]
            _unknown(sub, _SUBLIN, "[feedback.sublinearity]")
            shift = SublinearityShift(
                _require(sub, "kind", "[feedback.sublinearity]"),
                _num(_require(sub, "value", "[feedback.sublinearity]"), "[feedback.sublinearity].value"),
            )
        gamma = fb.get("gamma")
        delta = fb.get("delta")
        feedback = FeedbackSpec(
            family, d, params, sublinearity_shift=shift,
            gamma_override=None if gamma is None else [_num(v, "[feedback].gamma") for v in gamma],
            delta_override=None if delta is None else [_num(v, "[feedback].delta") for v in delta],
        )
        return ModelSpec(system, feedback, name, allows_zero)
    except ConfigError:
        raise
    except ModelError as exc:
        raise type(exc)(f"{source}: {exc}") from None


def _looks_numeric(s: str) -> bool:
    try:
        Fraction(s.strip())
        return True
    except ValueError:
        return False


def loads_model(text: str, source: str = "<string>") -> ModelSpec:
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: TOML syntax error: {exc}") from None
    return model_from_dict(doc, source)


def parse_model(path) -> ModelSpec:
    """Read a model configuration file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read: {exc}") from None
    return loads_model(text, str(path))


def _out(x: Fraction):
    x = to_fraction(x)
    if x.denominator == 1:
        return int(x)
    return f"{x.numerator}/{x.denominator}"


def model_to_dict(model: ModelSpec) -> dict:
    lin = model.linear
    fb = model.feedback
    params = {}
    for key, val in fb.params.items():
        if isinstance(val, tuple):
            params[key] = [v if isinstance(v, str) else _out(v) for v in val]
        elif isinstance(val, Fraction):
            params[key] = _out(val)
        else:
            params[key] = val
    feedback = {"family": fb.family, "params": params}
    if fb.gamma_override is not None:
        feedback["gamma"] = [_out(v) for v in fb.gamma_override]
    if fb.delta_override is not None:
        feedback["delta"] = [_out(v) for v in fb.delta_override]
    if fb.sublinearity_shift is not None:
        feedback["sublinearity"] = {"kind": fb.sublinearity_shift.kind, "value": _out(fb.sublinearity_shift.value)}
    return {
        "meta": {"name": model.name, "allows_zero": model.allows_zero},
        "linear": {
            "dim": lin.dim,
            "structure": lin.structure,
            "A": [_out(a) for row in lin.A for a in row],
        },
        "noise": [{"diag": [_out(g) for g in vec]} for vec in lin.noise],
        "feedback": feedback,
    }


def dumps_model(model: ModelSpec) -> str:
    """Serialize a model to TOML text that parse_model reads back unchanged."""
    return tomli_w.dumps(model_to_dict(model))


def save_model(model: ModelSpec, path) -> None:
    Path(path).write_text(dumps_model(model))
