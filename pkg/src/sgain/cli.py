"""sgain command-line interface.

Exit codes: 0 success or certified, 1 usage/parse error, 2 not certified,
3 Picard non-convergence, 4 refusal (uncertified model without --force).
"""

from __future__ import annotations

import argparse
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
import csv
import io
import json
import os
from pathlib import Path
import sys

import numpy as np

from . import certify as cert_mod
from .config import parse_model
from .errors import ConvergenceError, SgainError
from .exact import serialize, upper
from .gain import default_window, gain_fixed_point_ensemble
from .linearflow import lyapunov_ensemble, mao_bound
from .models import BUILTIN_NAMES, builtin
from .sde import integrate_ensemble, pullback_convergence, pullback_ensemble
from .wiener import sample_ensemble

EXIT_OK, EXIT_ERROR, EXIT_NOT_CERTIFIED, EXIT_NO_CONVERGENCE, EXIT_REFUSED = 0, 1, 2, 3, 4

COMMANDS = ("check", "simulate", "equilibrium", "lyapunov")
METHODS = ("auto", "corollary", "chain", "diagonal", "type2")

# paths per work unit; fixed so results do not depend on the pool size
CHUNK = 16


@dataclass(frozen=True)
class RunConfig:
    command: str
    model: str | None
    builtin: str | None
    seed: int = 42
    dt: float = 1e-3
    window: float = 30.0
    ensemble: int = 64
    tol: float = 1e-6
    out: str | None = None
    format: str = "json"
    method: str = "auto"
    lam: float | None = None
    rho1: float | None = None
    force: bool = False
    x0: tuple | None = None
    threads: int | None = None
    max_iter: int = 100

    def __post_init__(self):
        if not self.dt > 0:
            raise SgainError("dt must be positive")
        if not self.window > 0:
            raise SgainError("window must be positive")
        if self.ensemble < 1:
            raise SgainError("ensemble size must be positive")
        if not self.tol > 0:
            raise SgainError("tolerance must be positive")
        if self.seed < 0 or self.seed >= 2**64:
            raise SgainError("seed must be an unsigned 64-bit integer")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_mutually_exclusive_group(required=True)
    src.add_argument("--builtin", choices=BUILTIN_NAMES, help="built-in example system")
    src.add_argument("--model", metavar="PATH", help="TOML model file")
    common.add_argument("--seed", type=int, default=42)
    common.add_argument("--dt", type=float, default=1e-3)
    common.add_argument("--window", type=float, default=30.0, help="window length T")
    common.add_argument("--ensemble", type=int, default=None, help="number of paths N")
    common.add_argument("--tol", type=float, default=1e-6)
    common.add_argument("--out", metavar="DIR", help="output directory (default: stdout)")
    common.add_argument("--format", choices=("json", "csv"), default=None)
    common.add_argument("--method", choices=METHODS, default="auto")
    common.add_argument("--lambda", dest="lam", type=float, default=None)
    common.add_argument("--rho1", type=float, default=None)
    common.add_argument("--force", action="store_true")
    common.add_argument("--x0", default=None, help="initial state, comma separated or a scalar")
    common.add_argument("--threads", type=int, default=None)
    common.add_argument("--max-iter", type=int, default=100)

    parser = _Parser(prog="sgain", description="Small-gain certificates and random equilibria.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("check", parents=[common], help="evaluate small-gain certificates")
    sub.add_parser("simulate", parents=[common], help="write forward trajectories")
    sub.add_parser("equilibrium", parents=[common], help="estimate the random equilibrium")
    sub.add_parser("lyapunov", parents=[common], help="Mao bound and empirical exponents")
    return parser


def _config(args) -> RunConfig:
    default_n = 4 if args.command == "simulate" else 64
    default_fmt = "csv" if args.command == "simulate" else "json"
    x0 = None
    if args.x0 is not None:
        try:
            x0 = tuple(float(v) for v in args.x0.split(","))
        except ValueError:
            raise SgainError(f"cannot parse --x0 {args.x0!r}") from None
    return RunConfig(
        command=args.command, model=args.model, builtin=args.builtin, seed=args.seed, dt=args.dt,
        window=args.window, ensemble=args.ensemble or default_n, tol=args.tol, out=args.out,
        format=args.format or default_fmt, method=args.method, lam=args.lam, rho1=args.rho1,
        force=args.force, x0=x0, threads=args.threads, max_iter=args.max_iter,
    )


def load(cfg: RunConfig):
    return builtin(cfg.builtin) if cfg.builtin else parse_model(cfg.model)


def pool_size(cfg: RunConfig) -> int:
    n = cfg.threads or os.cpu_count() or 1
    cap = os.environ.get("SGAIN_THREADS")
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, n)


def map_chunks(fn, grids: list, threads: int) -> list:
    """fn over fixed-size chunks of paths; results in path order."""
    chunks = [grids[i : i + CHUNK] for i in range(0, len(grids), CHUNK)]
    if threads == 1 or len(chunks) == 1:
        return [fn(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, chunks))


def _x0(cfg: RunConfig, model, default: float = 1.0) -> np.ndarray:
    if cfg.x0 is None:
        return np.full(model.dim, default)
    if len(cfg.x0) == 1:
        return np.full(model.dim, cfg.x0[0])
    if len(cfg.x0) != model.dim:
        raise SgainError(f"--x0 needs 1 or {model.dim} values")
    return np.array(cfg.x0)


def _emit(cfg: RunConfig, name: str, text: str, stdout) -> None:
    if cfg.out is None:
        stdout.write(text)
        if not text.endswith("\n"):
            stdout.write("\n")
        return
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)


def _json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=False) + "\n"


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# check

def run_certificate(model, cfg: RunConfig):
    method = cfg.method
    structure = model.linear.structure
    if method == "auto":
        if model.feedback.delta and min(float(v) for v in model.feedback.delta) > 0 and (
            model.feedback.sublinearity_shift is not None or structure == "general"
        ):
            method = "type2"
        elif structure == "diagonal":
            method = "diagonal"
        elif cfg.lam is not None or cfg.rho1 is not None:
            method = "chain"
        else:
            method = "corollary"
    if method == "corollary":
        return cert_mod.certify_single_loop(model)
    if method == "chain":
        return cert_mod.certify_chain(model, cfg.lam, cfg.rho1)
    if method == "diagonal":
        return cert_mod.certify_diagonal(model)
    return cert_mod.certify_type2(model)


def cmd_check(cfg: RunConfig, stdout=sys.stdout) -> int:
    model = load(cfg)
    cert = run_certificate(model, cfg)
    doc = {"model": model.name, **cert.to_dict()}
    if cfg.format == "csv":
        rows = [(t, serialize(v)["decimal"], serialize(v)["rational"] or "", f) for t, v, f in cert.trace]
        rows.append(("verdict", cert.verdict, "", ""))
        _emit(cfg, "certificate.csv", _csv(["term", "decimal", "rational", "formula"], rows), stdout)
    else:
        _emit(cfg, "certificate.json", _json(doc), stdout)
    return EXIT_OK if cert.certified else EXIT_NOT_CERTIFIED


# simulate

def cmd_simulate(cfg: RunConfig, stdout=sys.stdout) -> int:
    model = load(cfg)
    x0 = _x0(cfg, model)
    grids = sample_ensemble(model.linear.n_noise, 0.0, cfg.window, cfg.dt, cfg.seed, cfg.ensemble)

    def work(chunk):
        return integrate_ensemble(model, chunk, x0, 0.0, cfg.window)

    parts = map_chunks(work, grids, pool_size(cfg))
    times = parts[0][0]
    states = np.concatenate([p[1][0] for p in parts])  # (N, n, d)
    header = ["t"] + [f"x_{i + 1}" for i in range(model.dim)]
    if cfg.out is None and cfg.ensemble > 1:
        raise SgainError("simulate with several paths needs --out")
    for i in range(cfg.ensemble):
        if cfg.format == "csv":
            rows = ([repr(float(t))] + [repr(float(v)) for v in s] for t, s in zip(times, states[i]))
            _emit(cfg, f"path_{i:04d}.csv", _csv(header, rows), stdout)
        else:
            doc = {"model": model.name, "path": i, "seed": cfg.seed, "times": times.tolist(),
                   "states": states[i].tolist()}
            _emit(cfg, f"path_{i:04d}.json", _json(doc), stdout)
    return EXIT_OK


# equilibrium

def _plot(path: Path, history, table) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "sgain"
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    hist = [h for h in history if h > 0]
    ax1.semilogy(range(1, len(hist) + 1), hist, "o-")
    ax1.set_xlabel("iteration")
    ax1.set_ylabel("sup residual")
    ax1.set_title("Picard residuals")
    worst = table.distances.max(axis=1)
    pos = worst > 0
    ax2.semilogy(np.array(table.T_list)[pos], worst[pos], "s-")
    ax2.set_xlabel("T")
    ax2.set_ylabel("max pairwise distance")
    ax2.set_title("pull-back convergence (path 0)")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def cmd_equilibrium(cfg: RunConfig, stdout=sys.stdout) -> int:
    model = load(cfg)
    cert = run_certificate(model, cfg)
    if not cert.certified and not cfg.force:
        sys.stderr.write(f"sgain: model {model.name} is not certified ({cert.kind}); use --force to run anyway\n")
        return EXIT_REFUSED
    T = cfg.window
    grids = sample_ensemble(model.linear.n_noise, -T, 0.0, cfg.dt, cfg.seed, cfg.ensemble)
    x_list = np.stack([np.zeros(model.dim), np.full(model.dim, 10.0), _x0(cfg, model)])

    def work(chunk):
        est = gain_fixed_point_ensemble(model, chunk, T, cfg.tol, cfg.max_iter, raise_on_failure=False)
        pb = pullback_ensemble(model, chunk, x_list, T)
        return est, pb

    parts = map_chunks(work, grids, pool_size(cfg))
    per = [e for est, _ in parts for e in est.per_path]
    pbs = np.concatenate([pb for _, pb in parts], axis=1)  # (3, N, d)
    horizons = sorted({max(1, round(T * f / cfg.dt)) * cfg.dt for f in (1 / 6, 1 / 3, 2 / 3)} | {T})
    table = pullback_convergence(model, grids[0], x_list, horizons)
    paths = []
    for i, e in enumerate(per):
        diff = float(np.abs(pbs[:, i] - e.value_at_zero).max())
        paths.append({
            "path": i,
            "value_at_zero": e.value_at_zero.tolist(),
            "iterations": e.iterations,
            "converged": e.converged,
            "residual_history": e.residual_history,
            "pullback_difference": diff,
        })
    width = max(len(e.residual_history) for e in per)
    history = [max(e.residual_history[k] for e in per if k < len(e.residual_history)) for k in range(width)]
    converged = all(e.converged for e in per)
    doc = {
        "model": model.name,
        "certificate": {"kind": cert.kind, "verdict": cert.verdict},
        "forced": bool(cfg.force and not cert.certified),
        "window": T,
        "dt": cfg.dt,
        "seed": cfg.seed,
        "tol": cfg.tol,
        "converged": converged,
        "value_at_zero": np.mean([e.value_at_zero for e in per], axis=0).tolist(),
        "iterations": max(e.iterations for e in per),
        "residual_history": history,
        "max_pullback_difference": max(p["pullback_difference"] for p in paths),
        "pullback_table": {
            "T": list(table.T_list),
            "max_distance": table.distances.max(axis=1).tolist(),
            "decay_rate": table.decay_rate,
        },
        "per_path": paths,
    }
    if cert.lam is not None:
        scale = max(upper(g) for g in model.feedback.gamma) / upper(cert.lam)
        doc["suggested_window"] = default_window(upper(cert.lam), scale, cfg.tol)
    if cfg.format == "csv":
        header = ["path", "iterations", "converged", "pullback_difference"] + [f"x_{i + 1}" for i in range(model.dim)]
        rows = [[p["path"], p["iterations"], int(p["converged"]), repr(p["pullback_difference"])]
                + [repr(v) for v in p["value_at_zero"]] for p in paths]
        _emit(cfg, "equilibrium.csv", _csv(header, rows), stdout)
    else:
        _emit(cfg, "equilibrium.json", _json(doc), stdout)
    if cfg.out is not None:
        _plot(Path(cfg.out) / "equilibrium.svg", history, table)
    return EXIT_OK if converged else EXIT_NO_CONVERGENCE


# lyapunov

def cmd_lyapunov(cfg: RunConfig, stdout=sys.stdout) -> int:
    model = load(cfg)
    rep = mao_bound(model.linear)
    x0 = _x0(cfg, model)
    grids = sample_ensemble(model.linear.n_noise, 0.0, cfg.window, cfg.dt, cfg.seed, cfg.ensemble)
    parts = map_chunks(lambda c: lyapunov_ensemble(model.linear, c, x0, cfg.window), grids, pool_size(cfg))
    emp = np.concatenate(parts)
    bound = float(rep.mao_bound)
    doc = {
        "model": model.name,
        "K1": serialize(rep.K1),
        "K1_exact": serialize(rep.K1_exact),
        "K2": serialize(rep.K2),
        "K3": serialize(rep.K3),
        "mao_bound": serialize(rep.mao_bound),
        "mao_bound_sharp": serialize(rep.mao_bound_sharp),
        "certifies": rep.certifies,
        "horizon": cfg.window,
        "dt": cfg.dt,
        "seed": cfg.seed,
        "per_path": [{"path": i, "empirical_exponent": float(v)} for i, v in enumerate(emp)],
        "summary": {
            "mean": float(emp.mean()),
            "min": float(emp.min()),
            "max": float(emp.max()),
            "mean_minus_bound": float(emp.mean()) - bound,
        },
    }
    if cfg.format == "csv":
        _emit(cfg, "lyapunov.csv", _csv(["path", "empirical_exponent"], [[i, repr(float(v))] for i, v in enumerate(emp)]),
              stdout)
    else:
        _emit(cfg, "lyapunov.json", _json(doc), stdout)
    return EXIT_OK


_COMMANDS = {"check": cmd_check, "simulate": cmd_simulate, "equilibrium": cmd_equilibrium, "lyapunov": cmd_lyapunov}


def main(argv=None, stdout=None) -> int:
    stdout = stdout or sys.stdout
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
        return _COMMANDS[cfg.command](cfg, stdout)
    except ConvergenceError as exc:
        sys.stderr.write(f"sgain: {exc}\n")
        return EXIT_NO_CONVERGENCE
    except (SgainError, ValueError, OSError) as exc:
        sys.stderr.write(f"sgain: error: {exc}\n")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
