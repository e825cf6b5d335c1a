"""Derivatives of real functions of quaternion matrix variables.

A point of the domain is a :class:`MatTuple` ``X = (W, Y, Z)`` of quaternion
matrices. Gradients live in the same space as ``X``: the gradient with
respect to ``W`` is ``df/dW0 + df/dW1 i + df/dW2 j + df/dW3 k``, and the
pairing between gradients and directions is the R-product, the sum of the
entrywise real dot products of all component planes.

Finite-difference oracles work on the real representation ``R(X)``, the
concatenation of the flattened planes ``(W0, W1, W2, W3, Y0, ..., Z3)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import NotDifferentiable, ShapeMismatch
from .qmatrix import QMatrix, _qH, _qmatmul, inner

SMOOTHNESS = ("normal", "middle", "strong")


class MatTuple:
    """An ordered tuple of quaternion matrices with a fixed shape signature."""

    __slots__ = ("_parts",)

    def __init__(self, *parts: QMatrix):
        if len(parts) == 1 and isinstance(parts[0], (list, tuple)):
            parts = tuple(parts[0])
        if not parts:
            raise ValueError("a MatTuple needs at least one component")
        for p in parts:
            if not isinstance(p, QMatrix):
                raise TypeError(f"MatTuple components must be QMatrix, got {type(p).__name__}")
        self._parts = tuple(parts)

    @classmethod
    def zeros(cls, signature) -> "MatTuple":
        return cls(*(QMatrix.zeros(m, n) for m, n in signature))

    @classmethod
    def random(cls, signature, rng=None) -> "MatTuple":
        rng = np.random.default_rng(rng)
        return cls(*(QMatrix.random(m, n, rng) for m, n in signature))

    @classmethod
    def from_real(cls, vec, signature) -> "MatTuple":
        """Inverse of :meth:`to_real`."""
        vec = np.asarray(vec, dtype=float)
        parts = []
        pos = 0
        for m, n in signature:
            size = 4 * m * n
            parts.append(QMatrix._wrap(vec[pos:pos + size].reshape(4, m, n)))
            pos += size
        if pos != vec.size:
            raise ShapeMismatch(f"vector of length {vec.size} does not fit signature {signature}")
        return cls(*parts)

    @property
    def signature(self) -> tuple:
        return tuple(p.shape for p in self._parts)

    @property
    def size(self) -> int:
        return sum(4 * m * n for m, n in self.signature)

    def to_real(self) -> np.ndarray:
        return np.concatenate([p.data.ravel() for p in self._parts])

    def __len__(self) -> int:
        return len(self._parts)

    def __iter__(self):
        return iter(self._parts)

    def __getitem__(self, i) -> QMatrix:
        return self._parts[i]

    def _check(self, other: "MatTuple") -> None:
        if not isinstance(other, MatTuple):
            raise TypeError(f"expected MatTuple, got {type(other).__name__}")
        if self.signature != other.signature:
            raise ShapeMismatch(f"signature mismatch: {self.signature} vs {other.signature}")

    def __add__(self, other):
        self._check(other)
        return MatTuple(*(a + b for a, b in zip(self, other)))

    def __sub__(self, other):
        self._check(other)
        return MatTuple(*(a - b for a, b in zip(self, other)))

    def __neg__(self):
        return MatTuple(*(-a for a in self))

    def __mul__(self, c):
        if not np.isscalar(c):
            return NotImplemented
        return MatTuple(*(a * float(c) for a in self))

    __rmul__ = __mul__

    def __truediv__(self, c):
        return self * (1.0 / float(c))

    def dot(self, other: "MatTuple") -> float:
        return r_product(self, other)

    def fro_norm(self) -> float:
        return float(np.linalg.norm(self.to_real()))

    def allclose(self, other: "MatTuple", atol: float = 1e-12) -> bool:
        self._check(other)
        return bool(np.allclose(self.to_real(), other.to_real(), rtol=0.0, atol=atol))

    def __repr__(self) -> str:
        return f"MatTuple(signature={self.signature})"


def as_tuple(x) -> MatTuple:
    return x if isinstance(x, MatTuple) else MatTuple(x)


@dataclass
class RealFn:
    """A real-valued function on a MatTuple space.

    ``grad`` maps X to a MatTuple; ``hess_apply`` maps (X, D) to the
    Hessian applied to D, also a MatTuple. ``smoothness`` is one of
    ``"normal"`` (locally Lipschitz), ``"middle"`` (C1) or ``"strong"`` (C2).
    """

    evaluate: Callable[[MatTuple], float]
    grad: Optional[Callable[[MatTuple], MatTuple]] = None
    hess_apply: Optional[Callable[[MatTuple, MatTuple], MatTuple]] = None
    smoothness: str = "strong"
    signature: Optional[tuple] = None
    name: str = ""

    def __post_init__(self):
        if self.smoothness not in SMOOTHNESS:
            raise ValueError(f"smoothness must be one of {SMOOTHNESS}")

    def __call__(self, X: MatTuple) -> float:
        return float(self.evaluate(X))


# R-product ------------------------------------------------------------------


def r_product(A: MatTuple, H: MatTuple) -> float:
    """Sum over components and planes of the entrywise real dot products."""
    A, H = as_tuple(A), as_tuple(H)
    A._check(H)
    return float(sum(np.vdot(a.data, h.data) for a, h in zip(A, H)))


def inner_real_part(A: MatTuple, H: MatTuple) -> float:
    """Re(sum_i <A_i, H_i>) computed through the quaternion trace inner product."""
    A, H = as_tuple(A), as_tuple(H)
    A._check(H)
    return float(sum(inner(a, h).q0 for a, h in zip(A, H)))


def r_linearly_independent(vs: Sequence[MatTuple], tol: float = 1e-10) -> bool:
    """True iff no nontrivial real combination of ``vs`` vanishes.

    Decided on the Gram matrix of the real representations: independent
    when its smallest singular value exceeds ``tol`` times its largest.
    """
    vs = [as_tuple(v) for v in vs]
    if not vs:
        return True
    for v in vs[1:]:
        vs[0]._check(v)
    M = np.stack([v.to_real() for v in vs])
    if M.shape[0] > M.shape[1]:
        return False
    s = np.linalg.svd(M @ M.T, compute_uv=False)
    if s[0] == 0.0:
        return False
    return bool(s[-1] > tol * s[0])


# first order ----------------------------------------------------------------


def default_step(X: MatTuple) -> float:
    x = X.to_real()
    return 1e-5 * (1.0 + (np.abs(x).max() if x.size else 0.0))


def _central(f: Callable, x: np.ndarray, sig, h: float, with_gap: bool = False):
    g = np.empty_like(x)
    gap = np.empty_like(x) if with_gap else None
    f0 = float(f(MatTuple.from_real(x, sig))) if with_gap else 0.0
    xp = x.copy()
    for i in range(x.size):
        xi = x[i]
        xp[i] = xi + h
        fp = float(f(MatTuple.from_real(xp, sig)))
        xp[i] = xi - h
        fm = float(f(MatTuple.from_real(xp, sig)))
        xp[i] = xi
        g[i] = (fp - fm) / (2.0 * h)
        if with_gap:
            gap[i] = ((fp - f0) - (f0 - fm)) / h
    return g, gap


def fd_gradient(f, X: MatTuple, h: Optional[float] = None) -> MatTuple:
    """Central-difference gradient over every real coordinate of R(X)."""
    X = as_tuple(X)
    if h is None:
        h = default_step(X)
    if h <= 0:
        raise ValueError("step h must be positive")
    g, _ = _central(f, X.to_real(), X.signature, h)
    return MatTuple.from_real(g, X.signature)


def _richardson_gradient(f: RealFn, X: MatTuple) -> MatTuple:
    x = X.to_real()
    sig = X.signature
    h = default_step(X)
    check_kinks = f.smoothness == "normal"
    c1, gap1 = _central(f, x, sig, h, with_gap=check_kinks)
    c2, _ = _central(f, x, sig, h / 2)
    c3, gap3 = _central(f, x, sig, h / 4, with_gap=check_kinks)
    r1 = (4.0 * c2 - c1) / 3.0
    r2 = (4.0 * c3 - c2) / 3.0
    scale = 1.0 + np.linalg.norm(r2)
    if f.smoothness == "normal":
        if np.linalg.norm(r1 - r2) > 1e-3 * scale:
            raise NotDifferentiable("finite-difference gradients disagree across step sizes")
        # one-sided slopes of a smooth f agree to O(h); a kink keeps them apart
        g1, g3 = np.linalg.norm(gap1), np.linalg.norm(gap3)
        if g3 > 1e-3 * scale and g3 > 0.5 * g1:
            raise NotDifferentiable("one-sided difference quotients do not converge")
    return MatTuple.from_real(r2, sig)


def gradient(f: RealFn, X: MatTuple) -> MatTuple:
    """Gradient of f at X, in the same tuple space as X.

    Uses ``f.grad`` when present, otherwise Richardson-extrapolated central
    differences at steps h, h/2, h/4.

    Raises
    ------
    NotDifferentiable
        For a ``"normal"`` f without analytic gradient whose difference
        quotients disagree across step sizes.
    """
    X = as_tuple(X)
    if f.grad is not None:
        G = as_tuple(f.grad(X))
        X._check(G)
        return G
    return _richardson_gradient(f, X)


def directional_derivative(f: RealFn, X: MatTuple, D: MatTuple) -> float:
    return r_product(gradient(f, X), as_tuple(D))


def fd_directional_derivative(f, X: MatTuple, D: MatTuple, t: float = 1e-4) -> float:
    """Richardson-extrapolated symmetric difference quotient along D."""
    X, D = as_tuple(X), as_tuple(D)

    def q(s):
        return (float(f(X + D * s)) - float(f(X - D * s))) / (2.0 * s)

    return (4.0 * q(t / 2) - q(t)) / 3.0


# second order ---------------------------------------------------------------


def fd_quadratic_form(f, X: MatTuple, D: MatTuple, t: Optional[float] = None) -> float:
    """Half the second directional derivative of f along D, by differences.

    Uses ``(f(X+sD) - 2 f(X) + f(X-sD)) / (2 s^2)`` at s = t and t/2 with
    one Richardson step.
    """
    X, D = as_tuple(X), as_tuple(D)
    if t is None:
        dn = np.abs(D.to_real()).max()
        if dn == 0.0:
            return 0.0
        t = 1e-3 * (1.0 + np.abs(X.to_real()).max()) / dn
    f0 = float(f(X))

    def q(s):
        return (float(f(X + D * s)) - 2.0 * f0 + float(f(X - D * s))) / (2.0 * s * s)

    return (4.0 * q(t / 2) - q(t)) / 3.0


def hessian_quadratic_form(f: RealFn, X: MatTuple, D: MatTuple) -> float:
    """Value of (1/2) Hess f(X)[D] . D.

    Uses ``f.hess_apply`` when present, else second-order differences.
    """
    X, D = as_tuple(X), as_tuple(D)
    if f.hess_apply is not None:
        return 0.5 * r_product(as_tuple(f.hess_apply(X, D)), D)
    return fd_quadratic_form(f, X, D)


def quadratic_form_from_partials(partials: dict, D: MatTuple, swap_cross: bool = False) -> float:
    """Assemble (1/2) Hess f D . D from second partial operators.

    ``partials[(a, b)]`` maps a direction in component ``a`` to the
    derivative of the component-``b`` gradient along it. Cross terms use the
    pair ``(a, b)`` with a > b by default (e.g. Y-then-W), or the mirrored
    ``(b, a)`` when ``swap_cross`` is set; diagonal terms carry a factor 1/2.
    """
    D = as_tuple(D)
    n = len(D)
    total = 0.0
    for a in range(n):
        da = MatTuple(D[a])
        total += 0.5 * r_product(MatTuple(partials[(a, a)](D[a])), da)
        for b in range(a):
            if swap_cross:
                total += r_product(MatTuple(partials[(b, a)](D[b])), da)
            else:
                total += r_product(MatTuple(partials[(a, b)](D[a])), MatTuple(D[b]))
    return total


# prototype objective ----------------------------------------------------------


def _mm(a: QMatrix, b: QMatrix) -> QMatrix:
    return QMatrix._wrap(_qmatmul(a.data, b.data))


def _h(a: QMatrix) -> QMatrix:
    return QMatrix._wrap(_qH(a.data))


def prototype_value(X: MatTuple) -> float:
    W, Y, Z = X
    R = _mm(Y, Z) - W
    return 0.5 * float(np.sum(R.data * R.data))


def prototype_gradient(X: MatTuple) -> MatTuple:
    """(W - YZ, (YZ - W) Z*, Y* (YZ - W)) for f = 1/2 ||YZ - W||_F^2."""
    W, Y, Z = X
    R = _mm(Y, Z) - W
    return MatTuple(-R, _mm(R, _h(Z)), _mm(_h(Y), R))


def prototype_second_partials(X: MatTuple) -> dict:
    """The nine second partial operators of 1/2 ||YZ - W||_F^2.

    Keys are ``(from, to)`` component indices with 0 = W, 1 = Y, 2 = Z; the
    value maps a direction in ``from`` to the change of the ``to`` gradient.
    """
    W, Y, Z = X
    R = _mm(Y, Z) - W
    Zh, Yh = _h(Z), _h(Y)
    ZZh = _mm(Z, Zh)
    YhY = _mm(Yh, Y)
    return {
        (0, 0): lambda dW: dW,
        (1, 0): lambda dY: -_mm(dY, Z),
        (2, 0): lambda dZ: -_mm(Y, dZ),
        (0, 1): lambda dW: -_mm(dW, Zh),
        (1, 1): lambda dY: _mm(dY, ZZh),
        (2, 1): lambda dZ: _mm(R, _h(dZ)) + _mm(_mm(Y, dZ), Zh),
        (0, 2): lambda dW: -_mm(Yh, dW),
        (1, 2): lambda dY: _mm(_h(dY), R) + _mm(_mm(Yh, dY), Z),
        (2, 2): lambda dZ: _mm(YhY, dZ),
    }


def prototype_hessian_apply(X: MatTuple, D: MatTuple) -> MatTuple:
    """Hessian of 1/2 ||YZ - W||_F^2 at X applied to D = (dW, dY, dZ)."""
    X, D = as_tuple(X), as_tuple(D)
    if len(X) != 3:
        raise ShapeMismatch("prototype points have three components (W, Y, Z)")
    X._check(D)
    p = prototype_second_partials(X)
    dW, dY, dZ = D
    return MatTuple(
        p[(0, 0)](dW) + p[(1, 0)](dY) + p[(2, 0)](dZ),
        p[(0, 1)](dW) + p[(1, 1)](dY) + p[(2, 1)](dZ),
        p[(0, 2)](dW) + p[(1, 2)](dY) + p[(2, 2)](dZ),
    )


def prototype_signature(m: int, n: int, r: int) -> tuple:
    return ((m, n), (m, r), (r, n))


def prototype_objective(m: int, n: int, r: int) -> RealFn:
    """RealFn for 1/2 ||YZ - W||_F^2 with W m x n, Y m x r, Z r x n."""
    return RealFn(
        evaluate=prototype_value,
        grad=prototype_gradient,
        hess_apply=prototype_hessian_apply,
        smoothness="strong",
        signature=prototype_signature(m, n, r),
        name="prototype",
    )


def fro_squared(signature=None) -> RealFn:
    """||X||_F^2 summed over components."""
    return RealFn(
        evaluate=lambda X: float(np.sum(X.to_real() ** 2)),
        grad=lambda X: X * 2.0,
        hess_apply=lambda X, D: D * 2.0,
        smoothness="strong",
        signature=signature,
        name="fro_squared",
    )


def fro_norm_fn(signature=None) -> RealFn:
    """||X||_F, convex and locally Lipschitz, not differentiable at O."""
    return RealFn(
        evaluate=lambda X: float(np.linalg.norm(X.to_real())),
        smoothness="normal",
        signature=signature,
        name="fro_norm",
    )


# calculus rules ---------------------------------------------------------------


def check_product_rule(f: RealFn, g: RealFn, X: MatTuple) -> float:
    """||grad(fg) - (f grad g + g grad f)||_F with grad(fg) by differences."""
    X = as_tuple(X)
    fg = RealFn(evaluate=lambda Y: f(Y) * g(Y), smoothness="middle", signature=X.signature)
    lhs = gradient(fg, X)
    rhs = gradient(g, X) * f(X) + gradient(f, X) * g(X)
    return (lhs - rhs).fro_norm()


def check_chain_rule(f: RealFn, phi: Callable[[float], float], dphi: Callable[[float], float],
                     X: MatTuple) -> float:
    """||grad(phi o f) - phi'(f) grad f||_F with the left side by differences."""
    X = as_tuple(X)
    comp = RealFn(evaluate=lambda Y: phi(f(Y)), smoothness="middle", signature=X.signature)
    lhs = gradient(comp, X)
    rhs = gradient(f, X) * dphi(f(X))
    return (lhs - rhs).fro_norm()


# Taylor remainders ------------------------------------------------------------


def taylor_orders(f: RealFn, X: MatTuple, D: MatTuple, steps=None) -> tuple[float, float]:
    """Fitted log-log slopes of the first- and second-order Taylor remainders.

    Returns ``(p1, p2)`` where ``|f(X+tD) - f(X) - t grad.D| ~ t^p1`` and
    ``|... - t^2 (1/2) Hess D.D| ~ t^p2`` over the geometric ``steps``.
    """
    X, D = as_tuple(X), as_tuple(D)
    if steps is None:
        steps = np.geomspace(1e-1, 2e-3, 8) / max(D.fro_norm(), 1e-300)
    steps = np.asarray(steps, dtype=float)
    f0 = f(X)
    g = directional_derivative(f, X, D)
    q = hessian_quadratic_form(f, X, D)
    r1, r2 = [], []
    for t in steps:
        ft = f(X + D * t)
        r1.append(abs(ft - f0 - t * g))
        r2.append(abs(ft - f0 - t * g - t * t * q))
    lt = np.log(steps)
    p1 = np.polyfit(lt, np.log(np.maximum(r1, 1e-300)), 1)[0]
    p2 = np.polyfit(lt, np.log(np.maximum(r2, 1e-300)), 1)[0]
    return float(p1), float(p2)


# convexity certificates -------------------------------------------------------


@dataclass
class Certificate:
    """Outcome of a sampling test: ``ok=False`` is a proof, ``ok=True`` is "not falsified"."""

    ok: bool
    witness: Optional[MatTuple] = None
    violation: float = 0.0
    checked: int = 0
    details: dict = field(default_factory=dict)

    def __bool__(self) -> bool:
        return self.ok


def check_subgradient(f: RealFn, Xbar: MatTuple, G: MatTuple, samples: int = 200, seed=0,
                      tol: float = 1e-12) -> Certificate:
    """Test f(X) >= f(Xbar) + G.(X - Xbar) at sampled X.

    Probes are Xbar +/- s G, Xbar +/- s e_i along coordinate directions
    (capped at 64 coordinates) and Gaussian points at several scales.
    """
    Xbar, G = as_tuple(Xbar), as_tuple(G)
    Xbar._check(G)
    rng = np.random.default_rng(seed)
    fbar = f(Xbar)
    sig = Xbar.signature
    xbar = Xbar.to_real()
    scale = 1.0 + np.abs(xbar).max()

    def probes():
        gn = G.fro_norm()
        if gn > 0:
            for s in (1.0, 0.5, 2.0, 1e-3):
                yield Xbar + G * s
                yield Xbar - G * (s / gn)
        n = xbar.size
        idx = np.arange(n) if n <= 64 else rng.choice(n, 64, replace=False)
        for i in idx:
            e = np.zeros(n)
            e[i] = scale * 1e-2
            yield MatTuple.from_real(xbar + e, sig)
            yield MatTuple.from_real(xbar - e, sig)
        for k in range(samples):
            s = scale * 10.0 ** rng.uniform(-3, 1)
            yield MatTuple.from_real(xbar + s * rng.standard_normal(n), sig)

    checked = 0
    for X in probes():
        checked += 1
        lhs = f(X)
        rhs = fbar + r_product(G, X - Xbar)
        if lhs < rhs - tol * (1.0 + abs(rhs)):
            return Certificate(False, witness=X, violation=rhs - lhs, checked=checked)
    return Certificate(True, checked=checked)


def check_convexity_psd(f: RealFn, trials: int = 100, seed=0, tol: float = 1e-9,
                        signature=None, scale: float = 1.0, subspace: int = 12) -> Certificate:
    """Sample points X and look for a direction with (1/2) Hess f(X) D.D < -tol ||D||^2.

    At each X the quadratic form is restricted to a random subspace (by
    polarization) and its lowest Ritz vector is tried as D. Each component of
    X and of the spanning directions gets its own random scale. The witness
    is the point X; ``details["direction"]`` holds D.
    """
    sig = signature or f.signature
    if sig is None:
        raise ValueError("a signature is needed to sample the domain")
    rng = np.random.default_rng(seed)

    def sample():
        return MatTuple(*(QMatrix.random(m, n, rng) * 10.0 ** rng.uniform(-2, 1) for m, n in sig))

    for t in range(trials):
        X = sample() * scale
        k = min(subspace, MatTuple.zeros(sig).size)
        basis = [sample() for _ in range(k)]
        B = np.stack([b.to_real() for b in basis])
        B /= np.linalg.norm(B, axis=1, keepdims=True)
        basis = [MatTuple.from_real(b, sig) for b in B]
        M = np.empty((k, k))
        for a in range(k):
            M[a, a] = 2.0 * hessian_quadratic_form(f, X, basis[a])
            for b in range(a):
                M[a, b] = M[b, a] = (hessian_quadratic_form(f, X, basis[a] + basis[b])
                                     - hessian_quadratic_form(f, X, basis[a] - basis[b])) / 2.0
        w, v = np.linalg.eigh(M)
        D = MatTuple.from_real(v[:, 0] @ B, sig)
        q = hessian_quadratic_form(f, X, D)
        if q < -tol * (1.0 + D.fro_norm() ** 2):
            return Certificate(False, witness=X, violation=-q, checked=t + 1, details={"direction": D})
    return Certificate(True, checked=trials)
