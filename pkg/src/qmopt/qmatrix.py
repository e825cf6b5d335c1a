"""Quaternion matrices stored as four real component planes.

A quaternion matrix ``A = A0 + A1 i + A2 j + A3 k`` is held as one float64
array of shape ``(4, m, n)``. All products are computed on the planes
directly; nothing here builds arrays of quaternion objects.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConvergenceFailure, InvalidRank, ShapeMismatch
from .quaternion import Quaternion, hamilton

RANK_TOL = 1e-10
L0_TOL = 1e-12

# _HAMILTON[c, s, t] is the sign with which a_s * b_t lands in component c.
_HAMILTON = np.zeros((4, 4, 4))
for _s in range(4):
    for _t in range(4):
        _ea = [0.0] * 4
        _eb = [0.0] * 4
        _ea[_s] = 1.0
        _eb[_t] = 1.0
        for _c, _v in enumerate(hamilton(*_ea, *_eb)):
            _HAMILTON[_c, _s, _t] = _v
del _s, _t, _ea, _eb, _c, _v

_HAMILTON16 = _HAMILTON.reshape(4, 16)
# contractions over the left (a) or right (b) factor index, rows ordered (c, other)
_H_LEFT = np.ascontiguousarray(_HAMILTON.transpose(0, 2, 1).reshape(16, 4))
_H_RIGHT = np.ascontiguousarray(_HAMILTON.reshape(16, 4))
_CONJ = np.array([1.0, -1.0, -1.0, -1.0])


def _qmatmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product of planar arrays (4, m, p) and (4, p, n)."""
    prods = np.matmul(a[:, None], b[None, :])
    return (_HAMILTON16 @ prods.reshape(16, -1)).reshape(4, a.shape[1], b.shape[2])


def _qhadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Entrywise quaternion product with numpy broadcasting on trailing axes."""
    return np.stack(hamilton(a[0], a[1], a[2], a[3], b[0], b[1], b[2], b[3]))


def _qconj(a: np.ndarray) -> np.ndarray:
    return a * _CONJ.reshape((4,) + (1,) * (a.ndim - 1))


def _qH(a: np.ndarray) -> np.ndarray:
    return _qconj(a).swapaxes(-1, -2)


def _eye(n: int) -> np.ndarray:
    out = np.zeros((4, n, n))
    out[0] = np.eye(n)
    return out


class QMatrix:
    """An m x n quaternion matrix, immutable from the caller's side.

    Parameters
    ----------
    data : array_like, shape (4, m, n)
        Component planes ``(A0, A1, A2, A3)``. The array is copied.
    """

    __slots__ = ("_data",)
    __array_priority__ = 100

    def __init__(self, data):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[0] != 4:
            raise ShapeMismatch(f"expected component array of shape (4, m, n), got {arr.shape}")
        arr.setflags(write=False)
        self._data = arr

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "QMatrix":
        out = cls.__new__(cls)
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        if arr.flags.writeable:
            arr.setflags(write=False)
        out._data = arr
        return out

    # constructors ---------------------------------------------------------

    @classmethod
    def from_components(cls, a0, a1=None, a2=None, a3=None) -> "QMatrix":
        a0 = np.atleast_2d(np.asarray(a0, dtype=float))
        planes = [a0]
        for a in (a1, a2, a3):
            if a is None:
                planes.append(np.zeros_like(a0))
            else:
                a = np.atleast_2d(np.asarray(a, dtype=float))
                if a.shape != a0.shape:
                    raise ShapeMismatch(f"component shapes differ: {a0.shape} vs {a.shape}")
                planes.append(a)
        return cls._wrap(np.stack(planes))

    @classmethod
    def pure(cls, a1, a2, a3) -> "QMatrix":
        a1 = np.atleast_2d(np.asarray(a1, dtype=float))
        return cls.from_components(np.zeros_like(a1), a1, a2, a3)

    @classmethod
    def from_quaternions(cls, rows) -> "QMatrix":
        rows = [list(r) for r in rows]
        arr = np.array([[Quaternion(*q).to_array() if not isinstance(q, Quaternion) else q.to_array()
                         for q in r] for r in rows])
        return cls._wrap(np.moveaxis(arr, -1, 0))

    @classmethod
    def zeros(cls, m: int, n: int) -> "QMatrix":
        return cls._wrap(np.zeros((4, m, n)))

    @classmethod
    def eye(cls, n: int) -> "QMatrix":
        return cls._wrap(_eye(n))

    @classmethod
    def random(cls, m: int, n: int, rng=None) -> "QMatrix":
        """Entries with N(0, 1) components."""
        rng = np.random.default_rng(rng)
        return cls._wrap(rng.standard_normal((4, m, n)))

    @classmethod
    def diag(cls, entries) -> "QMatrix":
        qs = [q if isinstance(q, Quaternion) else Quaternion(float(q)) for q in entries]
        n = len(qs)
        out = np.zeros((4, n, n))
        for i, q in enumerate(qs):
            out[:, i, i] = q.to_array()
        return cls._wrap(out)

    # accessors ------------------------------------------------------------

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> tuple[int, int]:
        return self._data.shape[1], self._data.shape[2]

    @property
    def A0(self) -> np.ndarray:
        return self._data[0]

    @property
    def A1(self) -> np.ndarray:
        return self._data[1]

    @property
    def A2(self) -> np.ndarray:
        return self._data[2]

    @property
    def A3(self) -> np.ndarray:
        return self._data[3]

    def entry(self, i: int, j: int) -> Quaternion:
        return Quaternion(*self._data[:, i, j])

    def modulus(self) -> np.ndarray:
        """Real m x n array of entry moduli."""
        # scale by the largest component so tiny entries do not underflow
        big = np.abs(self._data).max(axis=0)
        safe = np.where(big > 0.0, big, 1.0)
        return big * np.sqrt(np.sum((self._data / safe) ** 2, axis=0))

    @property
    def H(self) -> "QMatrix":
        return conj_transpose(self)

    def conj(self) -> "QMatrix":
        return QMatrix._wrap(_qconj(self._data))

    def is_finite(self) -> bool:
        return bool(np.isfinite(self._data).all())

    # arithmetic -----------------------------------------------------------

    def __add__(self, other):
        if not isinstance(other, QMatrix):
            return NotImplemented
        _check_same(self, other)
        return QMatrix._wrap(self._data + other._data)

    def __sub__(self, other):
        if not isinstance(other, QMatrix):
            return NotImplemented
        _check_same(self, other)
        return QMatrix._wrap(self._data - other._data)

    def __neg__(self):
        return QMatrix._wrap(-self._data)

    def __mul__(self, other):
        # A * c: real scaling, or right multiplication by a quaternion scalar
        if isinstance(other, Quaternion):
            return QMatrix._wrap(_qhadamard(self._data, other.to_array()[:, None, None]))
        if np.isscalar(other):
            return QMatrix._wrap(self._data * float(other))
        return NotImplemented

    def __rmul__(self, other):
        if isinstance(other, Quaternion):
            return QMatrix._wrap(_qhadamard(other.to_array()[:, None, None], self._data))
        if np.isscalar(other):
            return QMatrix._wrap(self._data * float(other))
        return NotImplemented

    def __truediv__(self, other):
        if np.isscalar(other):
            return QMatrix._wrap(self._data / float(other))
        return NotImplemented

    def __matmul__(self, other):
        if not isinstance(other, QMatrix):
            return NotImplemented
        return matmul(self, other)

    def __eq__(self, other):
        if not isinstance(other, QMatrix):
            return NotImplemented
        return self._data.shape == other._data.shape and bool(np.array_equal(self._data, other._data))

    __hash__ = None

    def allclose(self, other: "QMatrix", atol: float = 1e-12, rtol: float = 0.0) -> bool:
        return self.shape == other.shape and bool(np.allclose(self._data, other._data, atol=atol, rtol=rtol))

    def __repr__(self) -> str:
        m, n = self.shape
        if m * n <= 16:
            rows = ["[" + ", ".join(str(self.entry(i, j)) for j in range(n)) + "]" for i in range(m)]
            return "QMatrix([" + ", ".join(rows) + "])"
        return f"QMatrix(shape={self.shape})"


def _check_same(a: QMatrix, b: QMatrix) -> None:
    if a.shape != b.shape:
        raise ShapeMismatch(f"shape mismatch: {a.shape} vs {b.shape}")


# products and norms ---------------------------------------------------------


def matmul(a: QMatrix, b: QMatrix) -> QMatrix:
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"cannot multiply {a.shape} by {b.shape}")
    return QMatrix._wrap(_qmatmul(a.data, b.data))


def hadamard(a: QMatrix, b: QMatrix) -> QMatrix:
    _check_same(a, b)
    return QMatrix._wrap(_qhadamard(a.data, b.data))


def scale_real(a: QMatrix, left=None, right=None) -> QMatrix:
    """Multiply by real matrices: ``left @ A @ right`` on every plane."""
    d = a.data
    if left is not None:
        d = np.matmul(np.asarray(left, dtype=float), d)
    if right is not None:
        d = np.matmul(d, np.asarray(right, dtype=float))
    return QMatrix._wrap(d)


def conj_transpose(a: QMatrix) -> QMatrix:
    return QMatrix._wrap(_qH(a.data))


def inner(a: QMatrix, b: QMatrix) -> Quaternion:
    """<A, B> = Tr(A* B)."""
    _check_same(a, b)
    # Tr(A*B) = sum_ij conj(a_ij) b_ij
    prods = _qhadamard(_qconj(a.data), b.data)
    return Quaternion(*prods.sum(axis=(1, 2)))


def fro_norm(a: QMatrix) -> float:
    return float(np.sqrt(np.sum(a.data * a.data)))


def norm_l1(a: QMatrix) -> float:
    return float(a.modulus().sum())


def norm_linf(a: QMatrix) -> float:
    mod = a.modulus()
    return float(mod.max()) if mod.size else 0.0


def support(a: QMatrix, tol: float = L0_TOL) -> np.ndarray:
    """Boolean mask of entries counted as nonzero.

    An entry is zero when its modulus is at most ``tol * ||A||_inf``; an
    all-zero matrix uses the exact-zero rule.
    """
    mod = a.modulus()
    scale = mod.max() if mod.size else 0.0
    if scale == 0.0:
        return mod != 0.0
    return mod > tol * scale


def norm_l0(a: QMatrix, tol: float = L0_TOL) -> int:
    return int(support(a, tol).sum())


def norm_spectral(a: QMatrix) -> float:
    s = singular_values(a)
    return float(s[0]) if s.size else 0.0


def norm_nuclear(a: QMatrix) -> float:
    return float(singular_values(a).sum())


def real_representation(a: QMatrix) -> np.ndarray:
    """The 4m x 4n real block matrix

        [[A0, -A1, -A2, -A3],
         [A1,  A0, -A3,  A2],
         [A2,  A3,  A0, -A1],
         [A3, -A2,  A1,  A0]]
    """
    a0, a1, a2, a3 = a.data
    return np.block(
        [
            [a0, -a1, -a2, -a3],
            [a1, a0, -a3, a2],
            [a2, a3, a0, -a1],
            [a3, -a2, a1, a0],
        ]
    )


def from_real_representation(r: np.ndarray) -> QMatrix:
    """Read the components back from the first block column."""
    r = np.asarray(r, dtype=float)
    m4, n4 = r.shape
    if m4 % 4 or n4 % 4:
        raise ShapeMismatch(f"real representation must be 4m x 4n, got {r.shape}")
    m, n = m4 // 4, n4 // 4
    return QMatrix._wrap(r[:, :n].reshape(4, m, n).copy())


# QSVD ------------------------------------------------------------------------


@dataclass(frozen=True)
class QsvdFactors:
    """A = U diag(sigma) V*, with U m x m, V n x n unitary and sigma of length min(m, n)."""

    U: QMatrix
    sigma: np.ndarray
    V: QMatrix

    def reconstruct(self, r: Optional[int] = None) -> QMatrix:
        k = self.sigma.size if r is None else r
        u = self.U.data[:, :, :k] * self.sigma[:k]
        v = self.V.data[:, :, :k]
        return QMatrix._wrap(_qmatmul(u, _qH(v)))


def _householder(x: np.ndarray):
    """Quaternion Householder vector for a planar column ``x`` of shape (4, L).

    Returns ``(v, tau, alpha, u)`` such that ``(I - tau v v*) x = -u alpha e1``
    with ``alpha = ||x||`` and ``u`` the unit quaternion phase of ``x[0]``;
    ``v`` is None when ``x`` is zero.
    """
    alpha = float(np.sqrt(np.sum(x * x)))
    if alpha == 0.0:
        return None, 0.0, 0.0, np.array([1.0, 0.0, 0.0, 0.0])
    x1 = x[:, 0]
    m1 = float(np.sqrt(x1 @ x1))
    u = x1 / m1 if m1 > 0.0 else np.array([1.0, 0.0, 0.0, 0.0])
    v = x.copy()
    v[:, 0] += alpha * u
    # v*x = alpha^2 + alpha |x1| is real, and v*v = 2 (alpha^2 + alpha |x1|)
    tau = 1.0 / (alpha * alpha + alpha * m1)
    return v, tau, alpha, u


def _lmat(q: np.ndarray) -> np.ndarray:
    """4x4 real matrix of x -> q x."""
    return (_H_LEFT @ q).reshape(4, 4)


def _rmat(q: np.ndarray) -> np.ndarray:
    """4x4 real matrix of x -> x q."""
    return (_H_RIGHT @ q).reshape(4, 4)


def _reflect_left(S: np.ndarray, v: np.ndarray, tau: float) -> None:
    """In place S <- (I - tau v v*) S for S of shape (4, L, N)."""
    _, L, N = S.shape
    # w = v* S as one real product: row block b of S meets lmat(conj v_i)[:, b]
    Lv = _H_LEFT @ _qconj(v)  # (c, b) x i
    w = Lv.reshape(4, 4 * L) @ S.reshape(4 * L, N)
    Mv = (_H_LEFT @ v).reshape(4, 4, L).transpose(0, 2, 1)  # (c, i, b)
    S -= tau * (Mv.reshape(4 * L, 4) @ w).reshape(4, L, N)


def _reflect_right(S: np.ndarray, v: np.ndarray, tau: float) -> None:
    """In place S <- S (I - tau v v*) for S of shape (4, M, L)."""
    _, M, L = S.shape
    Rv = (_H_RIGHT @ v).reshape(4, 4, L).transpose(1, 2, 0)  # (a, l, c)
    w = S.transpose(1, 0, 2).reshape(M, 4 * L) @ Rv.reshape(4 * L, 4)  # (i, a)
    Nv = (_H_RIGHT @ _qconj(v)).reshape(4, 4, L)  # (c, a, l)
    S -= tau * np.matmul(w, Nv)


def _bidiagonalize(a: np.ndarray):
    """Reduce planar (4, m, n), m >= n, to real upper bidiagonal form.

    Returns ``U, d, e, V`` with ``A = U B V*`` where B has diagonal d and
    superdiagonal e.
    """
    B = np.array(a, dtype=float)
    _, m, n = B.shape
    U = _eye(m)
    V = _eye(n)
    d = np.zeros(n)
    e = np.zeros(max(n - 1, 0))
    for k in range(n):
        v, tau, alpha, u = _householder(B[:, k:, k])
        d[k] = alpha
        if v is not None:
            c = -_CONJ * u  # left phase: c * (-u alpha) = alpha
            if k + 1 < n:
                _reflect_left(B[:, k:, k + 1:], v, tau)
                B[:, k, k + 1:] = _lmat(c) @ B[:, k, k + 1:]
            _reflect_right(U[:, :, k:], v, tau)
            U[:, :, k] = _rmat(_qconj(c)) @ U[:, :, k]
        if k + 1 >= n:
            continue
        v, tau, alpha, u = _householder(_qconj(B[:, k, k + 1:]))
        e[k] = alpha
        if v is None:
            continue
        c2 = -u  # right phase: (-conj(u) alpha) * (-u) = alpha
        if k + 1 < m:
            _reflect_right(B[:, k + 1:, k + 1:], v, tau)
            B[:, k + 1:, k + 1] = _rmat(c2) @ B[:, k + 1:, k + 1]
        _reflect_right(V[:, :, k + 1:], v, tau)
        V[:, :, k + 1] = _rmat(c2) @ V[:, :, k + 1]
    return U, d, e, V


def _rot(f: float, g: float):
    r = float(np.hypot(f, g))
    if r == 0.0:
        return 1.0, 0.0, 0.0
    return f / r, g / r, r


def golub_kahan_svd(d, e, max_iter: Optional[int] = None):
    """SVD of a real upper bidiagonal matrix by implicit-shift QR sweeps.

    Parameters
    ----------
    d, e : array_like
        Diagonal (length n) and superdiagonal (length n - 1).
    max_iter : int, optional
        Cap on the number of shifted sweeps; defaults to ``30 * n + 30``.

    Returns
    -------
    P, s, Q
        ``B = P @ diag(s) @ Q.T`` with s sorted nonincreasing.

    Raises
    ------
    ConvergenceFailure
        When the sweep cap is hit before every superdiagonal entry deflates.
    """
    d = np.array(d, dtype=float)
    e = np.array(e, dtype=float)
    n = d.size
    P = np.eye(n)
    Q = np.eye(n)
    if n == 0:
        return P, d, Q
    cap = 30 * n + 30 if max_iter is None else int(max_iter)
    eps = np.finfo(float).eps
    anorm = max(np.abs(d).max(), np.abs(e).max() if e.size else 0.0)
    sweeps = 0
    while True:
        for i in range(n - 1):
            if abs(e[i]) <= eps * (abs(d[i]) + abs(d[i + 1])) or abs(e[i]) <= eps * eps * anorm:
                e[i] = 0.0
        hi = n - 1
        while hi > 0 and e[hi - 1] == 0.0:
            hi -= 1
        if hi == 0:
            break
        lo = hi - 1
        while lo > 0 and e[lo - 1] != 0.0:
            lo -= 1

        zero = -1
        for k in range(lo, hi + 1):
            if abs(d[k]) <= eps * anorm:
                zero = k
                break
        if zero >= 0:
            k = zero
            d[k] = 0.0
            if k < hi:
                # chase e[k] along row k with left rotations
                f = e[k]
                e[k] = 0.0
                for j in range(k + 1, hi + 1):
                    c, s, r = _rot(d[j], f)
                    d[j] = r
                    if j < hi:
                        f = -s * e[j]
                        e[j] = c * e[j]
                    pj, pk = P[:, j].copy(), P[:, k].copy()
                    P[:, j] = c * pj + s * pk
                    P[:, k] = -s * pj + c * pk
            else:
                # chase e[hi-1] up column hi with right rotations
                f = e[hi - 1]
                e[hi - 1] = 0.0
                for j in range(hi - 1, lo - 1, -1):
                    c, s, r = _rot(d[j], f)
                    d[j] = r
                    if j > lo:
                        f = -s * e[j - 1]
                        e[j - 1] = c * e[j - 1]
                    qj, qh = Q[:, j].copy(), Q[:, hi].copy()
                    Q[:, j] = c * qj + s * qh
                    Q[:, hi] = -s * qj + c * qh
            continue

        sweeps += 1
        if sweeps > cap:
            raise ConvergenceFailure(f"bidiagonal SVD did not converge in {cap} sweeps")

        # Wilkinson shift from the trailing 2x2 of B^T B
        m = hi - 1
        t11 = d[m] ** 2 + (e[m - 1] ** 2 if m > lo else 0.0)
        t12 = d[m] * e[m]
        t22 = d[hi] ** 2 + e[m] ** 2
        half = 0.5 * (t11 - t22)
        root = float(np.hypot(half, t12))
        mu = t22 - t12 * t12 / (half + (root if half >= 0 else -root)) if root > 0 else t22
        y = d[lo] ** 2 - mu
        z = d[lo] * e[lo]
        for k in range(lo, hi):
            c, s, r = _rot(y, z)
            if k > lo:
                e[k - 1] = r
            dk, ek = d[k], e[k]
            d[k] = c * dk + s * ek
            e[k] = -s * dk + c * ek
            bulge = s * d[k + 1]
            d[k + 1] = c * d[k + 1]
            qa, qb = Q[:, k].copy(), Q[:, k + 1].copy()
            Q[:, k] = c * qa + s * qb
            Q[:, k + 1] = -s * qa + c * qb

            c, s, r = _rot(d[k], bulge)
            d[k] = r
            ek, dk1 = e[k], d[k + 1]
            e[k] = c * ek + s * dk1
            d[k + 1] = -s * ek + c * dk1
            pa, pb = P[:, k].copy(), P[:, k + 1].copy()
            P[:, k] = c * pa + s * pb
            P[:, k + 1] = -s * pa + c * pb
            if k + 1 < hi:
                y = e[k]
                z = s * e[k + 1]
                e[k + 1] = c * e[k + 1]

    neg = d < 0
    d[neg] = -d[neg]
    Q[:, neg] = -Q[:, neg]
    order = np.argsort(-d, kind="stable")
    return P[:, order], d[order], Q[:, order]


def _lapack_bidiag_svd(d, e):
    n = d.size
    B = np.diag(d)
    if n > 1:
        B += np.diag(e, 1)
    try:
        P, s, Qt = np.linalg.svd(B)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise ConvergenceFailure(str(exc)) from exc
    return P, s, Qt.T


def qsvd(a: QMatrix, method: str = "lapack", max_iter: Optional[int] = None) -> QsvdFactors:
    """Quaternion SVD ``A = U diag(sigma) V*``.

    A is reduced to a real bidiagonal matrix with quaternion Householder
    reflections plus unit-quaternion phase scalings; the real bidiagonal
    core is then diagonalized.

    Parameters
    ----------
    method : {"lapack", "golub-kahan"}
        Solver for the real bidiagonal core. ``"golub-kahan"`` runs the
        in-package implicit-shift QR and honours ``max_iter``.
    max_iter : int, optional
        Sweep cap for ``"golub-kahan"``.
    """
    m, n = a.shape
    if m < n:
        f = qsvd(conj_transpose(a), method=method, max_iter=max_iter)
        return QsvdFactors(U=f.V, sigma=f.sigma, V=f.U)
    U, d, e, V = _bidiagonalize(a.data)
    if method == "lapack":
        P, s, Q = _lapack_bidiag_svd(d, e)
    elif method == "golub-kahan":
        P, s, Q = golub_kahan_svd(d, e, max_iter=max_iter)
    else:
        raise ValueError(f"unknown bidiagonal SVD method {method!r}")
    U[:, :, :n] = np.matmul(U[:, :, :n], P)
    V = np.matmul(V, Q)
    return QsvdFactors(U=QMatrix._wrap(U), sigma=s, V=QMatrix._wrap(V))


def singular_values(a: QMatrix) -> np.ndarray:
    return qsvd(a).sigma


def rank(a: QMatrix, tol: float = RANK_TOL) -> int:
    """Number of singular values above ``tol * sigma_1``."""
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    s = singular_values(a)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s > tol * s[0]))


def truncate_rank(a: QMatrix, r: int, tol: float = RANK_TOL, factors: Optional[QsvdFactors] = None) -> QMatrix:
    """Best rank-r approximation (one element of the projection onto rank <= r).

    Keeps the leading r singular triplets in computed order; returns ``a``
    itself when its numerical rank is already at most r.
    """
    m, n = a.shape
    if not 0 <= r <= min(m, n):
        raise InvalidRank(f"rank bound {r} outside [0, {min(m, n)}]")
    f = qsvd(a) if factors is None else factors
    s = f.sigma
    if r == s.size or s[0] == 0.0 or s[r] <= tol * s[0]:
        return a
    return f.reconstruct(r)
