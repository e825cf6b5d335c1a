"""Command line interface: synth, denoise, inpaint, check.

Exit codes: 0 success, 1 input/output or shape error, 2 residual above
tolerance (solver stall or a failed check).
"""

from __future__ import annotations

import argparse
import math
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import io
from .calculus import MatTuple
from .errors import ConvergenceFailure, InvalidRank, NonFinite, ShapeMismatch, StallWarning
from .optimality import (
    LinearOperator,
    ScidProblem,
    beta_stationarity_residual,
    kkt_residual,
    prototype_as_constrained,
    prototype_stationarity,
    scid_objective,
    scid_stationarity,
)
from .qmatrix import QMatrix, rank, support
from .solvers import SolverConfig, estimate_operator_norm, lrqd_solve, scid_solve
from .synth import observed_mask

EXIT_OK, EXIT_IO, EXIT_RESIDUAL = 0, 1, 2

DEFAULTS = {
    "synth": {"m": 32, "n": 32, "rank": 3, "sparsity": 0.05, "noise_mag": 0.6, "seed": 0,
              "observed": 1.0},
    "denoise": {"mask": None, "ref": None, "beta": None, "seed": 0, "max_iters": 3000,
                "tol": 1e-9},
    "inpaint": {"ref": None, "seed": 0, "max_iters": 2000, "tol": 1e-10, "scheme": "joint"},
    "check": {"beta": None, "tol": 1e-7, "out": None},
}
# keys never echoed into reports, so reruns into another directory stay byte-identical
_NO_ECHO = {"out", "config", "command", "timings", "func"}


class UsageError(Exception):
    pass


# helpers ----------------------------------------------------------------------


def psnr(Y: QMatrix, ref: QMatrix) -> float:
    """PSNR in dB over the three color planes, peak value 1."""
    if Y.shape != ref.shape:
        raise ShapeMismatch(f"reference shape {ref.shape} != {Y.shape}")
    mse = float(np.mean((Y.data[1:] - ref.data[1:]) ** 2))
    return 10.0 * math.log10(1.0 / max(mse, 1e-300))


def _read_config(path) -> dict:
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = val
    return out


def _resolve_settings(args, parser_actions) -> dict:
    """Merge flags > config file > defaults for the chosen command."""
    cmd = args.command
    cfg = _read_config(args.config) if getattr(args, "config", None) else {}
    types = {a.dest: a.type for a in parser_actions if a.dest}
    settings = dict(DEFAULTS.get(cmd, {}))
    for key, val in cfg.items():
        if key not in types:
            raise UsageError(f"unknown config key {key!r} for {cmd}")
        conv = types[key] or str
        settings[key] = None if val.lower() in ("", "none") else conv(val)
    for key, val in vars(args).items():
        if val is not None:
            settings[key] = val
    missing = [a.dest for a in parser_actions if getattr(a, "_needed", False) and settings.get(a.dest) is None]
    if missing:
        raise UsageError("missing required settings: " + ", ".join("--" + k.replace("_", "-") for k in missing))
    return settings


def _echo(settings) -> dict:
    return {k: v for k, v in sorted(settings.items()) if k not in _NO_ECHO}


def _outdir(settings) -> Path:
    out = Path(settings["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _operator(mask, shape):
    if mask is None:
        return LinearOperator.identity(*shape)
    return LinearOperator.mask(mask)


# commands ---------------------------------------------------------------------


def cmd_synth(s) -> int:
    """Planted rank-r color image plus sparse impulse corruption."""
    m, n, r = s["m"], s["n"], s["rank"]
    if not 1 <= r <= min(m, n):
        raise InvalidRank(f"rank {r} outside [1, {min(m, n)}]")
    if not 0.0 <= s["sparsity"] <= 1.0:
        raise UsageError("--sparsity must lie in [0, 1]")
    if not 0.0 < s["observed"] <= 1.0:
        raise UsageError("--observed must lie in (0, 1]")
    rng = np.random.default_rng(s["seed"])
    u = rng.random((m, r))
    v = rng.random((n, r))
    colors = rng.random((r, 3))
    data = np.zeros((4, m, n))
    for ch in range(3):
        data[ch + 1] = (u * colors[:, ch]) @ v.T
    data *= 0.9 / data.max()
    Y = QMatrix(data)
    k = int(round(s["sparsity"] * m * n))
    sup = np.zeros(m * n, dtype=bool)
    sup[rng.choice(m * n, k, replace=False)] = True
    ph = rng.standard_normal((4, m, n))
    ph[0] = 0.0
    ph /= np.linalg.norm(ph, axis=0)
    Z = QMatrix(ph * s["noise_mag"] * sup.reshape(m, n))
    D = Y + Z
    out = _outdir(s)
    io.write_qmat(out / "Y_true.qmat", Y)
    io.write_qmat(out / "Z_true.qmat", Z)
    io.write_qmat(out / "D.qmat", D)
    io.write_ppm(out / "Y_true.ppm", Y)
    io.write_ppm(out / "D.ppm", D)
    meta = {"command": "synth", "config": _echo(s), "rank_y": rank(Y), "l0_z": int(sup.sum())}
    if s["observed"] < 1.0:
        mask = observed_mask(m, n, s["observed"], rng, min_per_line=r)
        io.write_mask(out / "mask.txt", mask)
        meta["observed"] = int(mask.sum())
    io.write_json(out / "synth.json", meta)
    return EXIT_OK


def _lambda_list(text) -> list:
    """One l0 weight, or a comma-separated list of them for a sweep."""
    vals = [float(t) for t in str(text).split(",") if t.strip()]
    if not vals:
        raise ValueError("expected at least one value")
    return vals


def cmd_denoise(s) -> int:
    D = io.read_matrix(s["input"])
    m, n = D.shape
    mask = io.read_mask(s["mask"], (m, n)) if s["mask"] else None
    if s["rank"] < 1:
        raise InvalidRank("--rank must be at least 1")
    lams = s["lambda"] if isinstance(s["lambda"], list) else _lambda_list(s["lambda"])
    ref = io.read_matrix(s["ref"]) if s["ref"] else None
    if len(lams) > 1 and ref is None:
        raise UsageError("a --lambda sweep needs --ref to pick a value")
    op = _operator(mask, (m, n))
    cfg = SolverConfig(max_iters=s["max_iters"], tol=s["tol"], beta=s["beta"], seed=s["seed"],
                       record_time=bool(s.get("timings")))
    t0 = time.perf_counter()
    best, sweep = None, []
    for lam in lams:
        P_l = ScidProblem(D, op, lam, s["rank"])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", StallWarning)
            res_l = scid_solve(P_l, cfg)
        score = psnr(res_l.Y, ref) if ref is not None else None
        sweep.append({"lambda": lam, "psnr": score, "converged": res_l.converged,
                      "rank_y": rank(res_l.Y), "l0_z": int(np.count_nonzero(support(res_l.Z)))})
        if best is None or (score is not None and score > best[0]):
            best = (score, P_l, res_l)
    _, P, res = best
    secs = time.perf_counter() - t0
    stat = scid_stationarity(P, res.Y, res.Z)
    out = _outdir(s)
    io.write_qmat(out / "D.qmat", D)
    io.write_qmat(out / "Y.qmat", res.Y)
    io.write_qmat(out / "Z.qmat", res.Z)
    io.write_ppm(out / "Y.ppm", res.Y)
    io.write_pgm(out / "Z_support.pgm", support(res.Z).astype(float))
    (out / "trace.jsonl").write_text(res.trace.to_jsonl())
    problem = {"kind": "scid", "data": "D.qmat", "lambda": P.lam, "rank": s["rank"],
               "operator": {"kind": "identity"}, "beta": res.beta}
    if mask is not None:
        io.write_mask(out / "mask.txt", mask)
        problem["operator"] = {"kind": "mask", "mask": "mask.txt"}
    io.write_json(out / "problem.json", problem)
    io.write_json(out / "point.json", {"Y": "Y.qmat", "Z": "Z.qmat"})
    report = {
        "command": "denoise",
        "config": _echo(s),
        "lambda": P.lam,
        "sweep": sweep if len(sweep) > 1 else None,
        "converged": res.converged,
        "iterations": res.iterations,
        "objective": scid_objective(P, res.Y, res.Z),
        "beta": res.beta,
        "lipschitz_estimate": res.lipschitz,
        "residuals": {"beta_y": res.res_y, "beta_z": res.res_z},
        "stationarity": stat.to_dict(),
        "rank_y": rank(res.Y),
        "l0_z": int(np.count_nonzero(support(res.Z))),
        "psnr": psnr(res.Y, ref) if ref is not None else None,
        "timings": {"solve_secs": secs} if s.get("timings") else None,
    }
    io.write_json(out / "report.json", report)
    if not res.converged:
        print(f"denoise: residual {max(res.res_y, res.res_z):.3e} above tol after "
              f"{res.iterations} iterations", file=sys.stderr)
        return EXIT_RESIDUAL
    return EXIT_OK


def cmd_inpaint(s) -> int:
    D = io.read_matrix(s["input"])
    m, n = D.shape
    mask = io.read_mask(s["mask"], (m, n))
    cfg = SolverConfig(max_iters=s["max_iters"], tol=s["tol"], seed=s["seed"],
                       record_time=bool(s.get("timings")))
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", StallWarning)
        res = lrqd_solve(D, mask, s["rank"], cfg, scheme=s["scheme"])
    secs = time.perf_counter() - t0
    out = _outdir(s)
    io.write_qmat(out / "D.qmat", D)
    io.write_mask(out / "mask.txt", mask)
    for name, A in (("W", res.W), ("Y", res.Y), ("Z", res.Z)):
        io.write_qmat(out / f"{name}.qmat", A)
    io.write_ppm(out / "W.ppm", res.W)
    (out / "trace.jsonl").write_text(res.trace.to_jsonl())
    io.write_json(out / "problem.json", {"kind": "lrqd", "data": "D.qmat", "mask": "mask.txt",
                                         "rank": s["rank"]})
    io.write_json(out / "point.json", {"W": "W.qmat", "Y": "Y.qmat", "Z": "Z.qmat"})
    report = {
        "command": "inpaint",
        "config": _echo(s),
        "converged": res.converged,
        "iterations": res.iterations,
        "objective": res.trace.records[-1]["obj"] if len(res.trace) else None,
        "stationarity": res.residuals,
        "rank_y": rank(res.Y),
        "psnr": psnr(res.W, io.read_matrix(s["ref"])) if s["ref"] else None,
        "timings": {"solve_secs": secs} if s.get("timings") else None,
    }
    io.write_json(out / "report.json", report)
    if not res.converged:
        print(f"inpaint: stationarity residual above tol after {res.iterations} iterations",
              file=sys.stderr)
        return EXIT_RESIDUAL
    return EXIT_OK


def check_point(problem_path, point_path, beta=None, tol=1e-7) -> dict:
    """Evaluate the optimality certificate of a stored point; returns the report."""
    prob = io.read_json(problem_path)
    pt = io.read_json(point_path)
    D = io.read_qmat(io.resolve(problem_path, prob["data"]))
    m, n = D.shape
    load = lambda key: io.read_qmat(io.resolve(point_path, pt[key]))
    kind = prob.get("kind")
    if kind == "scid":
        opdesc = prob.get("operator", {"kind": "identity"})
        if opdesc["kind"] == "identity":
            op = LinearOperator.identity(m, n)
        elif opdesc["kind"] == "mask":
            op = LinearOperator.mask(io.read_mask(io.resolve(problem_path, opdesc["mask"]), (m, n)))
        else:
            raise UsageError(f"unknown operator kind {opdesc['kind']!r}")
        P = ScidProblem(D, op, float(prob["lambda"]), int(prob["rank"]))
        Y, Z = load("Y"), load("Z")
        if beta is None:
            beta = prob.get("beta") or 0.4 / (2.0 * estimate_operator_norm(op))
        if rank(Y) > P.r:
            return {"kind": kind, "ok": False, "reason": "rank(Y) exceeds the bound", "tol": tol}
        ry, rz = beta_stationarity_residual(P, Y, Z, beta)
        stat = scid_stationarity(P, Y, Z, tol)
        ok = ry <= tol and rz <= tol and stat.ok
        return {"kind": kind, "ok": bool(ok), "tol": tol, "beta": beta,
                "beta_residuals": {"y": ry, "z": rz}, "stationarity": stat.to_dict(),
                "objective": scid_objective(P, Y, Z)}
    if kind == "lrqd":
        mask = io.read_mask(io.resolve(problem_path, prob["mask"]), (m, n))
        W, Y, Z = load("W"), load("Y"), load("Z")
        r = int(prob["rank"])
        res = prototype_stationarity(W, Y, Z, D, mask)
        scale = max(1.0, float(np.linalg.norm(D.data * mask)))
        kkt = kkt_residual(prototype_as_constrained(D, mask, r), MatTuple(W, Y, Z))
        ok = max(res.values()) <= tol * scale and kkt.stationarity_rel <= tol and \
            kkt.eq_feasibility <= tol * scale
        rep = kkt.to_dict()
        rep.pop("lambda")  # one multiplier per observed coordinate; not useful in a report
        return {"kind": kind, "ok": bool(ok), "tol": tol, "stationarity": res, "kkt": rep}
    raise UsageError(f"unknown problem kind {kind!r}")


def cmd_check(s) -> int:
    report = check_point(s["problem"], s["point"], s["beta"], s["tol"])
    text = io.dumps(report)
    if s["out"]:
        Path(s["out"]).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK if report["ok"] else EXIT_RESIDUAL


# parser -----------------------------------------------------------------------


def _add(p, *flags, needed=False, **kw):
    a = p.add_argument(*flags, default=None, **kw)
    a._needed = needed
    return a


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qmopt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a planted low-rank + sparse color image bundle")
    _add(p, "--m", type=int, help="rows (default 32)")
    _add(p, "--n", type=int, help="columns (default 32)")
    _add(p, "--rank", type=int, help="rank of the clean image (default 3)")
    _add(p, "--sparsity", type=float, help="fraction of corrupted pixels (default 0.05)")
    _add(p, "--noise-mag", type=float, help="modulus of each corruption (default 0.6)")
    _add(p, "--observed", type=float, help="if < 1, also write mask.txt with this observed fraction")
    _add(p, "--seed", type=int, help="random seed (default 0)")
    _add(p, "--out", needed=True, help="output directory")

    p = sub.add_parser("denoise", help="sparse + low-rank denoising")
    _add(p, "--input", needed=True, help=".ppm or .qmat data")
    _add(p, "--rank", type=int, needed=True, help="rank bound r")
    _add(p, "--lambda", dest="lambda", type=_lambda_list, needed=True,
         help="l0 weight, or a comma-separated list to sweep (picks the best PSNR vs --ref)")
    _add(p, "--mask", help="observed entries; default observes everything")
    _add(p, "--ref", help="reference image for PSNR")
    _add(p, "--beta", type=float, help="fixed step (default 0.4 / (2 ||L*L||))")
    _add(p, "--max-iters", type=int, help="iteration cap (default 3000)")
    _add(p, "--tol", type=float, help="beta-residual tolerance (default 1e-9)")
    _add(p, "--seed", type=int, help="recorded for reproducibility; the iteration is deterministic")
    _add(p, "--out", needed=True, help="output directory")

    p = sub.add_parser("inpaint", help="low-rank decomposition with observed entries")
    _add(p, "--input", needed=True, help=".ppm or .qmat data")
    _add(p, "--mask", needed=True, help="observed entries, one 'row col' per line")
    _add(p, "--rank", type=int, needed=True, help="factor rank r")
    _add(p, "--ref", help="reference image for PSNR")
    _add(p, "--scheme", choices=["joint", "alternating"], help="block scheme (default joint)")
    _add(p, "--max-iters", type=int, help="sweep cap (default 2000)")
    _add(p, "--tol", type=float, help="relative stationarity tolerance (default 1e-10)")
    _add(p, "--seed", type=int, help="recorded for reproducibility")
    _add(p, "--out", needed=True, help="output directory")

    p = sub.add_parser("check", help="certify a stored point against its problem")
    _add(p, "--problem", needed=True, help="problem.json")
    _add(p, "--point", needed=True, help="point.json")
    _add(p, "--beta", type=float, help="step for the beta-stationarity test")
    _add(p, "--tol", type=float, help="tolerance (default 1e-7)")
    _add(p, "--out", help="write the report here instead of stdout")

    for name, sp in sub.choices.items():
        sp.add_argument("--config", help="key=value settings file (flags take precedence)")
        if name != "check":
            sp.add_argument("--timings", action="store_true", default=None,
                            help="record wall-clock times (artifacts then differ between runs)")
    return parser


COMMANDS = {"synth": cmd_synth, "denoise": cmd_denoise, "inpaint": cmd_inpaint, "check": cmd_check}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    actions = parser._subparsers._group_actions[0].choices[args.command]._actions
    try:
        settings = _resolve_settings(args, actions)
        return COMMANDS[args.command](settings)
    except (OSError, ValueError, KeyError, UsageError) as exc:
        print(f"qmopt {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConvergenceFailure, NonFinite) as exc:
        print(f"qmopt {args.command}: {exc}", file=sys.stderr)
        return EXIT_RESIDUAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
