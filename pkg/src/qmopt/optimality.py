"""Optimality conditions and the operators that define them.

Covers first- and second-order conditions for smooth equality/inequality
constrained problems over MatTuples, stationarity of the low-rank
decomposition prototype, and the nonsmooth machinery of the sparse plus
low-rank denoising model: hard-threshold prox, rank projection, normal cone
of the rank set, and beta-stationarity.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import lsq_linear

from .calculus import (
    MatTuple,
    RealFn,
    as_tuple,
    gradient,
    hessian_quadratic_form,
    prototype_objective,
    r_linearly_independent,
    r_product,
)
from .errors import InvalidRank, ShapeMismatch
from .qmatrix import RANK_TOL, QMatrix, _qH, _qmatmul, qsvd, support, truncate_rank

# smooth constrained problems --------------------------------------------------


@dataclass
class ConstrainedProblem:
    """min f(X) subject to h_j(X) = 0 and g_k(X) <= 0."""

    f: RealFn
    eqs: Sequence[RealFn] = ()
    ineqs: Sequence[RealFn] = ()
    signature: Optional[tuple] = None

    def __post_init__(self):
        self.eqs = list(self.eqs)
        self.ineqs = list(self.ineqs)
        sig = self.signature or self.f.signature
        for fn in [self.f, *self.eqs, *self.ineqs]:
            if sig is None:
                sig = fn.signature
            elif fn.signature is not None and tuple(fn.signature) != tuple(sig):
                raise ShapeMismatch("all functions of a problem must share the signature")
        self.signature = sig


@dataclass
class KktReport:
    stationarity: float
    stationarity_rel: float
    eq_feasibility: float
    ineq_feasibility: float
    lam: np.ndarray
    mu: np.ndarray
    complementarity: float
    licq_ok: bool
    active: list = field(default_factory=list)

    def ok(self, tol: float = 1e-8) -> bool:
        return max(self.stationarity_rel, self.eq_feasibility, self.ineq_feasibility,
                   self.complementarity) <= tol

    def to_dict(self) -> dict:
        return {
            "stationarity": float(self.stationarity),
            "stationarity_rel": float(self.stationarity_rel),
            "eq_feasibility": float(self.eq_feasibility),
            "ineq_feasibility": float(self.ineq_feasibility),
            "lambda": [float(v) for v in self.lam],
            "mu": [float(v) for v in self.mu],
            "complementarity": float(self.complementarity),
            "licq_ok": bool(self.licq_ok),
            "active": [int(k) for k in self.active],
        }


def kkt_residual(P: ConstrainedProblem, X: MatTuple, active_tol: float = 1e-8) -> KktReport:
    """Fit KKT multipliers at X and report the first-order residuals.

    Multipliers solve a bounded least-squares problem over the real
    representations of the gradients: equality multipliers are free,
    inequality multipliers of active constraints are nonnegative and the
    rest are zero. An inequality is active when g_k(X) >= -active_tol.
    """
    X = as_tuple(X)
    gf = gradient(P.f, X).to_real()
    hv = np.array([fn(X) for fn in P.eqs])
    gv = np.array([fn(X) for fn in P.ineqs])
    active = [k for k, v in enumerate(gv) if v >= -active_tol]
    eq_grads = [gradient(fn, X) for fn in P.eqs]
    act_grads = [gradient(P.ineqs[k], X) for k in active]
    cols = [g.to_real() for g in eq_grads + act_grads]
    p = len(P.eqs)
    lam = np.zeros(p)
    mu = np.zeros(len(P.ineqs))
    if cols:
        A = np.stack(cols, axis=1)
        if act_grads:
            lb = np.r_[np.full(p, -np.inf), np.zeros(len(active))]
            sol = lsq_linear(A, -gf, bounds=(lb, np.full(A.shape[1], np.inf)), method="bvls",
                             tol=1e-14)
            coef = sol.x
        else:
            coef = np.linalg.lstsq(A, -gf, rcond=None)[0]
        lam = coef[:p]
        mu[active] = coef[p:]
        resid = gf + A @ coef
    else:
        resid = gf
    stat = float(np.linalg.norm(resid))
    return KktReport(
        stationarity=stat,
        stationarity_rel=stat / max(1.0, float(np.linalg.norm(gf))),
        eq_feasibility=float(np.linalg.norm(hv)) if p else 0.0,
        ineq_feasibility=float(np.linalg.norm(np.maximum(gv, 0.0))) if len(gv) else 0.0,
        lam=lam,
        mu=mu,
        complementarity=float(np.max(np.abs(mu * gv))) if len(gv) else 0.0,
        licq_ok=r_linearly_independent(eq_grads + act_grads) if cols else True,
        active=active,
    )


@dataclass
class SecondOrderReport:
    min_curvature: float
    min_curvature_critical: float
    samples: int

    def necessary_ok(self, tol: float = 1e-9) -> bool:
        return self.min_curvature >= -tol

    def to_dict(self) -> dict:
        return {
            "min_curvature": float(self.min_curvature),
            "min_curvature_critical": float(self.min_curvature_critical),
            "samples": int(self.samples),
        }


def second_order_check(P: ConstrainedProblem, X: MatTuple, report: Optional[KktReport] = None,
                       samples: int = 200, seed=0) -> SecondOrderReport:
    """Sampled minimum of the normalized quadratic form at X.

    ``min_curvature`` is min (1/2) Hess f D.D / ||D||^2 over unrestricted
    unit-scale random D. ``min_curvature_critical`` is an extension: the
    same quantity for the Lagrangian, with D restricted to the orthogonal
    complement of the active constraint gradients.
    """
    X = as_tuple(X)
    if report is None:
        report = kkt_residual(P, X)
    rng = np.random.default_rng(seed)
    sig = X.signature
    fns = list(P.eqs) + [P.ineqs[k] for k in report.active]
    mult = list(report.lam) + [report.mu[k] for k in report.active]
    grads = [gradient(fn, X).to_real() for fn in fns]
    Q = np.linalg.qr(np.stack(grads, axis=1))[0] if grads else None
    lo, lo_c = np.inf, np.inf
    for _ in range(samples):
        D = MatTuple.random(sig, rng)
        lo = min(lo, hessian_quadratic_form(P.f, X, D) / D.fro_norm() ** 2)
        d = D.to_real()
        if Q is not None:
            d = d - Q @ (Q.T @ d)
        nd = np.linalg.norm(d)
        if nd <= 1e-12:
            continue
        Dc = MatTuple.from_real(d / nd, sig)
        q = hessian_quadratic_form(P.f, X, Dc)
        q += sum(c * hessian_quadratic_form(fn, X, Dc) for c, fn in zip(mult, fns) if c != 0.0)
        lo_c = min(lo_c, q)
    return SecondOrderReport(float(lo), float(lo_c), samples)


# low-rank decomposition prototype ----------------------------------------------


def as_mask(omega, shape) -> np.ndarray:
    """Boolean observed-entry mask from a mask array or an iterable of (row, col)."""
    if isinstance(omega, np.ndarray) and omega.dtype == bool:
        if omega.shape != tuple(shape):
            raise ShapeMismatch(f"mask shape {omega.shape} != {tuple(shape)}")
        return omega
    mask = np.zeros(shape, dtype=bool)
    for i, j in omega:
        mask[int(i), int(j)] = True
    return mask


def prototype_stationarity(W: QMatrix, Y: QMatrix, Z: QMatrix, D: QMatrix, omega) -> dict:
    """Residuals of the four stationarity conditions of the decomposition prototype.

    Returns Frobenius norms of ``(W - YZ)`` off the observed set, of
    ``(YZ - W) Z*``, of ``Y* (YZ - W)`` and of ``(W - D)`` on the observed set.
    """
    m, n = W.shape
    if D.shape != (m, n) or Y.shape[0] != m or Z.shape[1] != n or Y.shape[1] != Z.shape[0]:
        raise ShapeMismatch("prototype shapes must be W, D: m x n, Y: m x r, Z: r x n")
    mask = as_mask(omega, (m, n))
    R = _qmatmul(Y.data, Z.data) - W.data
    return {
        "free_fit": float(np.linalg.norm(R[:, ~mask])),
        "grad_y": float(np.linalg.norm(_qmatmul(R, _qH(Z.data)))),
        "grad_z": float(np.linalg.norm(_qmatmul(_qH(Y.data), R))),
        "data_fit": float(np.linalg.norm((W.data - D.data)[:, mask])),
    }


def prototype_as_constrained(D: QMatrix, omega, r: int) -> ConstrainedProblem:
    """The prototype as a smooth problem with one equality per observed real coordinate."""
    m, n = D.shape
    mask = as_mask(omega, (m, n))
    f = prototype_objective(m, n, r)
    sig = f.signature
    eqs = []
    for i, j in zip(*np.nonzero(mask)):
        for c in range(4):
            eqs.append(_coordinate_constraint(sig, c, int(i), int(j), float(D.data[c, i, j])))
    return ConstrainedProblem(f, eqs, (), sig)


def _coordinate_constraint(sig, c, i, j, target) -> RealFn:
    def grad(X):
        g = np.zeros((4,) + sig[0])
        g[c, i, j] = 1.0
        return MatTuple(QMatrix(g), *(QMatrix.zeros(*s) for s in sig[1:]))

    return RealFn(
        evaluate=lambda X: float(X[0].data[c, i, j] - target),
        grad=grad,
        hess_apply=lambda X, D: D * 0.0,
        signature=sig,
        name=f"W{c}[{i},{j}]",
    )


# hard-threshold prox and l0 subdifferential -------------------------------------


def _half_sq_modulus(Z: QMatrix) -> np.ndarray:
    return 0.5 * np.sum(Z.data * Z.data, axis=0)


def prox_l0(Z: QMatrix, tau: float) -> QMatrix:
    """Entrywise prox of tau ||.||_0: keep z iff (1/2)|z|^2 > tau; ties go to 0."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    keep = _half_sq_modulus(Z) > tau
    return QMatrix._wrap(Z.data * keep)


def prox_l0_distance(Zsel: QMatrix, X: QMatrix, tau: float) -> float:
    """Frobenius distance from Zsel to the set Prox_{tau ||.||_0}(X).

    Entrywise, the admissible values are x when (1/2)|x|^2 >= tau and 0 when
    (1/2)|x|^2 <= tau, so both are admissible at a tie.
    """
    if Zsel.shape != X.shape:
        raise ShapeMismatch("prox selection and argument shapes differ")
    h = _half_sq_modulus(X)
    dx = np.sum((Zsel.data - X.data) ** 2, axis=0)
    d0 = np.sum(Zsel.data ** 2, axis=0)
    dx = np.where(h >= tau, dx, np.inf)
    d0 = np.where(h <= tau, d0, np.inf)
    return float(np.sqrt(np.sum(np.minimum(dx, d0))))


def l0_subdiff_member(G: QMatrix, A: QMatrix, tol: float = 1e-10) -> bool:
    """True iff G vanishes (entry modulus <= tol) on the support of A."""
    return l0_subdiff_residual(G, A) <= tol


def l0_subdiff_residual(G: QMatrix, A: QMatrix) -> float:
    """Largest entry modulus of G on the support of A."""
    if G.shape != A.shape:
        raise ShapeMismatch(f"{G.shape} vs {A.shape}")
    on = support(A)
    if not on.any():
        return 0.0
    return float(G.modulus()[on].max())


# normal cone of the rank set ---------------------------------------------------


def normal_cone_rank_residual(G: QMatrix, Y: QMatrix, r: int, tol: float = 1e-7,
                              rank_tol: float = RANK_TOL) -> dict:
    """Residuals for G in the normal cone of {rank <= r} at Y.

    With U1, V1 the leading rank(Y) singular vectors of Y, reports
    ``||U1* G||_F``, ``||G V1||_F`` and, when rank(Y) < r, the numerical
    rank of G (singular values above ``tol * max(1, ||G||_F)``) against the
    bound ``min(m, n) - r``.
    """
    if G.shape != Y.shape:
        raise ShapeMismatch(f"{G.shape} vs {Y.shape}")
    m, n = Y.shape
    fy = qsvd(Y)
    s = fy.sigma
    k = 0 if s.size == 0 or s[0] == 0.0 else int(np.count_nonzero(s > rank_tol * s[0]))
    if k > r:
        raise InvalidRank(f"rank(Y) = {k} exceeds r = {r}")
    thr = tol * max(1.0, float(np.linalg.norm(G.data)))
    U1 = fy.U.data[:, :, :k]
    V1 = fy.V.data[:, :, :k]
    left = float(np.linalg.norm(_qmatmul(_qH(U1), G.data))) if k else 0.0
    right = float(np.linalg.norm(_qmatmul(G.data, V1))) if k else 0.0
    out = {"rank_y": k, "left": left, "right": right, "threshold": thr,
           "rank_g": None, "rank_g_max": None}
    ok = left <= thr and right <= thr
    if k < r:
        sg = qsvd(G).sigma
        rg = int(np.count_nonzero(sg > thr))
        out["rank_g"], out["rank_g_max"] = rg, min(m, n) - r
        ok = ok and rg <= min(m, n) - r
    out["ok"] = bool(ok)
    return out


def normal_cone_rank_member(G: QMatrix, Y: QMatrix, r: int, tol: float = 1e-7) -> bool:
    return normal_cone_rank_residual(G, Y, r, tol)["ok"]


# sparse plus low-rank denoising model -------------------------------------------


class LinearOperator:
    """A real-linear map on m x n quaternion matrices with its adjoint.

    The adjoint pairing is checked at construction on random inputs.
    """

    def __init__(self, apply: Callable[[QMatrix], QMatrix], adjoint: Callable[[QMatrix], QMatrix],
                 shape, kind: str = "custom", params: Optional[dict] = None, check: bool = True,
                 seed: int = 12345):
        self.apply = apply
        self.adjoint = adjoint
        self.shape = tuple(shape)
        self.kind = kind
        self.params = params or {}
        if check:
            self.adjoint_error(seed=seed, raise_on_fail=True)

    def __call__(self, X: QMatrix) -> QMatrix:
        return self.apply(X)

    def adjoint_error(self, trials: int = 3, seed: int = 0, raise_on_fail: bool = False) -> float:
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(trials):
            Y = QMatrix.random(*self.shape, rng)
            W = QMatrix.random(*self.shape, rng)
            LY, LW = self.apply(Y), self.adjoint(W)
            a = float(np.vdot(LY.data, W.data))
            b = float(np.vdot(Y.data, LW.data))
            scale = 1.0 + np.linalg.norm(LY.data) * np.linalg.norm(W.data) \
                + np.linalg.norm(Y.data) * np.linalg.norm(LW.data)
            worst = max(worst, abs(a - b) / scale)
        if raise_on_fail and worst > 1e-10:
            raise ValueError(f"adjoint test failed: relative error {worst:.3e}")
        return worst

    @classmethod
    def identity(cls, m: int, n: int) -> "LinearOperator":
        return cls(lambda X: X, lambda X: X, (m, n), kind="identity")

    @classmethod
    def mask(cls, mask: np.ndarray) -> "LinearOperator":
        """Entry projection keeping the True entries of ``mask``."""
        mask = np.asarray(mask, dtype=bool)
        keep = mask.astype(float)

        def proj(X):
            return QMatrix._wrap(X.data * keep)

        return cls(proj, proj, mask.shape, kind="mask", params={"mask": mask})

    @classmethod
    def scaled(cls, c: float, m: int, n: int) -> "LinearOperator":
        c = float(c)
        return cls(lambda X: X * c, lambda X: X * c, (m, n), kind="scaled", params={"c": c})


@dataclass
class ScidProblem:
    """min (1/2)||L(Y + Z) - D||_F^2 + lam ||Z||_0 subject to rank(Y) <= r."""

    D: QMatrix
    op: LinearOperator
    lam: float
    r: int

    def __post_init__(self):
        m, n = self.D.shape
        if self.op.shape != (m, n):
            raise ShapeMismatch(f"operator shape {self.op.shape} != data shape {(m, n)}")
        if not 1 <= self.r <= min(m, n):
            raise InvalidRank(f"r = {self.r} outside [1, {min(m, n)}]")
        if not self.lam > 0:
            raise ValueError("lam must be positive")

    @property
    def shape(self) -> tuple:
        return self.D.shape


def scid_smooth_value(P: ScidProblem, Y: QMatrix, Z: QMatrix) -> float:
    R = P.op(Y + Z) - P.D
    return 0.5 * float(np.sum(R.data * R.data))


def scid_objective(P: ScidProblem, Y: QMatrix, Z: QMatrix) -> float:
    """h(Y, Z) + lam ||Z||_0 (the rank constraint is not checked here)."""
    return scid_smooth_value(P, Y, Z) + P.lam * int(np.count_nonzero(support(Z)))


def scid_grad_h(P: ScidProblem, Y: QMatrix, Z: QMatrix) -> tuple[QMatrix, QMatrix]:
    """Both partial gradients of the smooth part, each L*(L(Y + Z) - D)."""
    if Y.shape != P.shape or Z.shape != P.shape:
        raise ShapeMismatch("Y and Z must match the data shape")
    G = P.op.adjoint(P.op(Y + Z) - P.D)
    return G, G


def beta_map(P: ScidProblem, Y: QMatrix, Z: QMatrix, beta: float) -> tuple[QMatrix, QMatrix]:
    """Canonical selection of (Pi_S(Y - beta G_Y), Prox_{beta lam ||.||_0}(Z - beta G_Z))."""
    GY, GZ = scid_grad_h(P, Y, Z)
    return truncate_rank(Y - GY * beta, P.r), prox_l0(Z - GZ * beta, beta * P.lam)


def beta_stationarity_residual(P: ScidProblem, Y: QMatrix, Z: QMatrix, beta: float) -> tuple[float, float]:
    """(||Y - Pi_S(Y - beta G_Y)||_F, distance from Z to Prox(Z - beta G_Z))."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    GY, GZ = scid_grad_h(P, Y, Z)
    Yn = truncate_rank(Y - GY * beta, P.r)
    res_y = float(np.linalg.norm((Y - Yn).data))
    res_z = prox_l0_distance(Z, Z - GZ * beta, beta * P.lam)
    return res_y, res_z


def beta_map_is_singleton(P: ScidProblem, Y: QMatrix, Z: QMatrix, beta: float,
                          gap_tol: float = 1e-9) -> bool:
    """True iff both the rank projection and the prox are single-valued at this point.

    The projection is unique when the argument has rank <= r or a strict
    singular value gap sigma_r > sigma_{r+1}; the prox is unique when no
    entry sits at the threshold (1/2)|x|^2 = beta lam.
    """
    GY, GZ = scid_grad_h(P, Y, Z)
    s = qsvd(Y - GY * beta).sigma
    r = P.r
    proj_unique = r >= s.size or s[r] <= RANK_TOL * max(s[0], 1e-300) or \
        s[r - 1] - s[r] > gap_tol * max(s[0], 1.0)
    h = _half_sq_modulus(Z - GZ * beta)
    tau = beta * P.lam
    prox_unique = not np.any(np.abs(h - tau) <= gap_tol * max(tau, 1.0))
    return bool(proj_unique and prox_unique)


@dataclass
class StationarityReport:
    ok: bool
    normal_cone: dict
    l0_residual: float
    tol: float

    def to_dict(self) -> dict:
        return {
            "ok": bool(self.ok),
            "normal_cone": {k: (float(v) if isinstance(v, float) else v) for k, v in self.normal_cone.items()},
            "l0_residual": float(self.l0_residual),
            "tol": float(self.tol),
        }


def scid_stationarity(P: ScidProblem, Y: QMatrix, Z: QMatrix, tol: float = 1e-7) -> StationarityReport:
    """Check G_Y in the rank-set normal cone at Y and G_Z = 0 on the support of Z.

    Tolerances are scaled by max(1, ||D||_F) for the support condition and by
    max(1, ||G||_F) inside the normal cone test.

    Raises
    ------
    InvalidRank
        If rank(Y) > r.
    """
    GY, GZ = scid_grad_h(P, Y, Z)
    nc = normal_cone_rank_residual(GY, Y, P.r, tol)
    l0 = l0_subdiff_residual(GZ, Z)
    l0_ok = l0 <= tol * max(1.0, float(np.linalg.norm(P.D.data)))
    return StationarityReport(bool(nc["ok"] and l0_ok), nc, l0, tol)


def lipschitz_ratios(op: LinearOperator, samples: int = 1000, seed=0) -> np.ndarray:
    """Sampled ||grad h(X) - grad h(X')||_F / ||X - X'||_F over pairs of (Y, Z).

    Half of the pairs use aligned differences dY = dZ, which is where the
    gradient map is most expansive.
    """
    rng = np.random.default_rng(seed)
    m, n = op.shape
    zero = QMatrix.zeros(m, n)
    P = ScidProblem(zero, op, 1.0, 1)
    out = np.empty(samples)
    for k in range(samples):
        Y1, Z1 = QMatrix.random(m, n, rng), QMatrix.random(m, n, rng)
        dY = QMatrix.random(m, n, rng) * 10.0 ** rng.uniform(-3, 1)
        dZ = dY if k % 2 == 0 else QMatrix.random(m, n, rng) * 10.0 ** rng.uniform(-3, 1)
        g1 = scid_grad_h(P, Y1, Z1)
        g2 = scid_grad_h(P, Y1 + dY, Z1 + dZ)
        num = np.sqrt(sum(np.sum((a - b).data ** 2) for a, b in zip(g1, g2)))
        den = np.sqrt(np.sum(dY.data ** 2) + np.sum(dZ.data ** 2))
        out[k] = num / den
    return out
