"""Iterative solvers: low-rank quaternion decomposition and sparse plus low-rank denoising."""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidRank, NonFinite, ShapeMismatch, StallWarning
from .optimality import (
    LinearOperator,
    ScidProblem,
    as_mask,
    prototype_stationarity,
    prox_l0,
    prox_l0_distance,
    scid_grad_h,
    scid_objective,
)
from .qmatrix import RANK_TOL, QMatrix, _qH, _qmatmul, qsvd, support, truncate_rank


@dataclass
class SolverConfig:
    """Shared solver settings.

    ``beta`` is the fixed step of the denoising solver; ``None`` selects
    0.4 / L_hat with L_hat = 2 ||L*L||. ``record_time`` puts wall-clock
    seconds in the trace (off by default so traces are reproducible).
    """

    max_iters: int = 2000
    tol: float = 1e-9
    beta: Optional[float] = None
    seed: int = 0
    trace_every: int = 1
    record_time: bool = False

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.beta is not None and not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.trace_every < 1:
            raise ValueError("trace_every must be at least 1")


@dataclass
class Trace:
    records: list = field(default_factory=list)

    def append(self, **rec) -> None:
        self.records.append(rec)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, key: str) -> np.ndarray:
        return np.array([r[key] for r in self.records], dtype=float)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r) + "\n" for r in self.records)


def _record(trace, it, obj, res_y, res_z, rank_y, l0_z, t0, cfg):
    trace.append(
        iter=int(it),
        obj=float(obj),
        res_y=float(res_y),
        res_z=float(res_z),
        rank_y=int(rank_y),
        l0_z=int(l0_z),
        secs=(time.perf_counter() - t0) if cfg.record_time else None,
    )


def estimate_operator_norm(op: LinearOperator, iters: int = 50, tol: float = 1e-10) -> float:
    """Power iteration for ||L*L|| from a fixed pseudo-random start."""
    rng = np.random.default_rng(0)
    v = QMatrix.random(*op.shape, rng)
    v = v / float(np.linalg.norm(v.data))
    est = 0.0
    for _ in range(iters):
        w = op.adjoint(op(v))
        nw = float(np.linalg.norm(w.data))
        if nw == 0.0:
            return 0.0
        prev, est = est, nw
        v = w / nw
        if abs(est - prev) <= tol * est:
            break
    return est


# sparse plus low-rank denoising -------------------------------------------------


@dataclass
class ScidResult:
    Y: QMatrix
    Z: QMatrix
    trace: Trace
    converged: bool
    beta: float
    lipschitz: float
    res_y: float
    res_z: float
    iterations: int


def scid_solve(P: ScidProblem, cfg: Optional[SolverConfig] = None, init="data") -> ScidResult:
    """Proximal gradient iteration for the denoising model.

    Each sweep applies ``Y <- Pi_S(Y - beta G)`` and
    ``Z <- Prox_{beta lam ||.||_0}(Z - beta G)`` with the same gradient
    ``G = L*(L(Y + Z) - D)``, i.e. the beta-stationarity map itself, so the
    residuals of the current point are read off the next iterate. Stops
    when both residuals are at most ``cfg.tol`` and returns that point.

    ``init="data"`` starts from ``(Pi_S(L* D), O)``, ``init="zero"`` from
    ``(O, O)``; a pair ``(Y0, Z0)`` is used as given (Y0 is projected onto
    the rank set).

    Warns
    -----
    StallWarning
        When ``max_iters`` is reached first; the iterate with the smallest
        residual is returned.
    """
    cfg = cfg or SolverConfig()
    m, n = P.shape
    lhat = 2.0 * estimate_operator_norm(P.op)
    beta = cfg.beta if cfg.beta is not None else (0.4 / lhat if lhat > 0 else 1.0)
    if lhat > 0 and beta >= 1.0 / lhat:
        raise ValueError(f"beta = {beta} must be below 1/L_hat = {1.0 / lhat}")
    tau = beta * P.lam
    t0 = time.perf_counter()
    trace = Trace()
    if isinstance(init, str):
        if init == "data":
            Y = truncate_rank(P.op.adjoint(P.D), P.r)
        elif init == "zero":
            Y = QMatrix.zeros(m, n)
        else:
            raise ValueError(f"unknown init {init!r}")
        Z = QMatrix.zeros(m, n)
    else:
        Y, Z = init
        if Y.shape != (m, n) or Z.shape != (m, n):
            raise ShapeMismatch("initial point does not match the data shape")
        Y = truncate_rank(Y, P.r)
    rank_y = _rank(Y)
    best = None
    for it in range(cfg.max_iters):
        G, _ = scid_grad_h(P, Y, Z)
        obj = scid_objective(P, Y, Z)
        if not np.isfinite(obj):
            raise NonFinite(f"objective became {obj} at iteration {it}")
        Yarg = Y - G * beta
        f = qsvd(Yarg)
        Yn = truncate_rank(Yarg, P.r, factors=f)
        Zarg = Z - G * beta
        Zn = prox_l0(Zarg, tau)
        res_y = float(np.linalg.norm((Y - Yn).data))
        res_z = prox_l0_distance(Z, Zarg, tau)
        done = res_y <= cfg.tol and res_z <= cfg.tol
        if it % cfg.trace_every == 0 or done:
            _record(trace, it, obj, res_y, res_z, rank_y, np.count_nonzero(support(Z)), t0, cfg)
        if best is None or max(res_y, res_z) < best[0]:
            best = (max(res_y, res_z), Y, Z, res_y, res_z, it)
        if done:
            return ScidResult(Y, Z, trace, True, beta, lhat, res_y, res_z, it)
        s = f.sigma
        rank_y = 0 if s[0] == 0.0 else min(P.r, int(np.count_nonzero(s > RANK_TOL * s[0])))
        Y, Z = Yn, Zn
    _, Y, Z, res_y, res_z, it = best
    warnings.warn(f"scid_solve stopped at max_iters={cfg.max_iters} with residual "
                  f"{max(res_y, res_z):.3e} > tol={cfg.tol:.1e}", StallWarning, stacklevel=2)
    return ScidResult(Y, Z, trace, False, beta, lhat, res_y, res_z, it)


def _rank(Y: QMatrix) -> int:
    s = qsvd(Y).sigma
    return 0 if s[0] == 0.0 else int(np.count_nonzero(s > RANK_TOL * s[0]))


# low-rank quaternion decomposition ----------------------------------------------


@dataclass
class LrqdResult:
    W: QMatrix
    Y: QMatrix
    Z: QMatrix
    trace: Trace
    converged: bool
    residuals: dict
    iterations: int


def pinv(A: QMatrix, tol: float = RANK_TOL) -> QMatrix:
    """Moore-Penrose pseudoinverse from the QSVD, dropping sigma <= tol * sigma_1."""
    f = qsvd(A)
    s = f.sigma
    if s.size == 0 or s[0] == 0.0:
        return QMatrix.zeros(A.shape[1], A.shape[0])
    k = int(np.count_nonzero(s > tol * s[0]))
    U = f.U.data[:, :, :k]
    V = f.V.data[:, :, :k]
    return QMatrix._wrap(_qmatmul(V / s[:k], _qH(U)))


def _lrqd_value(W, Y, Z) -> float:
    R = _qmatmul(Y.data, Z.data) - W.data
    return 0.5 * float(np.sum(R * R))


def _rows_fit(D: np.ndarray, mask: np.ndarray, Z: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Row-wise least squares Y[i] = D[i, S_i] Z[:, S_i]^+ with S_i the observed columns of row i."""
    Y = Y.copy()
    for i in range(mask.shape[0]):
        cols = np.nonzero(mask[i])[0]
        if cols.size == 0:
            continue  # any row is optimal; keep the current one
        Zs = QMatrix._wrap(Z[:, :, cols])
        Y[:, i:i + 1, :] = _qmatmul(D[:, i:i + 1, cols], pinv(Zs).data)
    return Y


def lrqd_solve(D: QMatrix, omega, r: int, cfg: Optional[SolverConfig] = None,
               scheme: str = "joint") -> LrqdResult:
    """Block minimization of (1/2)||YZ - W||_F^2 subject to W = D on the observed set.

    ``scheme="alternating"`` cycles the three exact block minimizers: W
    (YZ off the observed set, D on it), ``Y = W Z^+`` and ``Z = Y^+ W``.
    ``scheme="joint"`` minimizes exactly over the pairs (W, Y) and (W, Z)
    instead: each row of Y is fitted to its observed entries through the
    pseudoinverse of the matching columns of Z (and symmetrically for Z),
    after which W = YZ off the observed set. Both never increase the
    objective and share the same fixed points; the joint blocks need far
    fewer sweeps when few entries are observed.

    Starts from the rank-r QSVD split of the zero-filled data and stops when
    every stationarity residual is at most ``cfg.tol * max(1, ||D_obs||_F)``.

    Raises
    ------
    InvalidRank
        If r is not in [1, min(m, n)].
    NonFinite
        If the objective stops being finite.
    """
    if scheme not in ("joint", "alternating"):
        raise ValueError(f"unknown scheme {scheme!r}")
    cfg = cfg or SolverConfig(max_iters=2000, tol=1e-10)
    m, n = D.shape
    if not 1 <= r <= min(m, n):
        raise InvalidRank(f"r = {r} outside [1, {min(m, n)}]")
    mask = as_mask(omega, (m, n))
    Dobs = D.data * mask
    scale = max(1.0, float(np.linalg.norm(Dobs)))
    t0 = time.perf_counter()
    trace = Trace()

    f = qsvd(QMatrix._wrap(Dobs))
    root = np.sqrt(f.sigma[:r])
    Y = f.U.data[:, :, :r] * root
    Z = _qH(f.V.data[:, :, :r] * root)
    W = Dobs
    res = {}
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        if scheme == "alternating":
            W = np.where(mask, D.data, _qmatmul(Y, Z))
            Y = _qmatmul(W, pinv(QMatrix._wrap(Z)).data)
            Z = _qmatmul(pinv(QMatrix._wrap(Y)).data, W)
        else:
            Y = _rows_fit(D.data, mask, Z, Y)
            Zt = _rows_fit(_qH(D.data), mask.T, _qH(Y), _qH(Z))
            Z = _qH(Zt)
            W = np.where(mask, D.data, _qmatmul(Y, Z))
        Wq, Yq, Zq = QMatrix._wrap(W), QMatrix._wrap(Y), QMatrix._wrap(Z)
        obj = _lrqd_value(Wq, Yq, Zq)
        if not np.isfinite(obj):
            raise NonFinite(f"objective became {obj} at iteration {it}")
        res = prototype_stationarity(Wq, Yq, Zq, D, mask)
        if it % cfg.trace_every == 0:
            _record(trace, it, obj, res["grad_y"], res["grad_z"], _rank(Yq), 0, t0, cfg)
        if max(res.values()) <= cfg.tol * scale:
            converged = True
            break
    if not converged:
        warnings.warn(f"lrqd_solve stopped at max_iters={cfg.max_iters} with residual "
                      f"{max(res.values()):.3e}", StallWarning, stacklevel=2)
    return LrqdResult(QMatrix._wrap(W), QMatrix._wrap(Y), QMatrix._wrap(Z), trace, converged, res, it)
