"""Quaternion scalars over 64-bit floats.

The unit rules are i^2 = j^2 = k^2 = ijk = -1, which give
ij = -ji = k, jk = -kj = i and ki = -ik = j.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import QuaternionDivisionError

ZERO_TOL = 1e-14


def hamilton(a0, a1, a2, a3, b0, b1, b2, b3):
    """Componentwise Hamilton product; works on floats and broadcasting arrays."""
    return (
        a0 * b0 - a1 * b1 - a2 * b2 - a3 * b3,
        a0 * b1 + a1 * b0 + a2 * b3 - a3 * b2,
        a0 * b2 - a1 * b3 + a2 * b0 + a3 * b1,
        a0 * b3 + a1 * b2 - a2 * b1 + a3 * b0,
    )


def left_matrix(q0: float, q1: float, q2: float, q3: float) -> np.ndarray:
    """4x4 real matrix of x -> q x acting on (x0, x1, x2, x3)."""
    return np.array(
        [
            [q0, -q1, -q2, -q3],
            [q1, q0, -q3, q2],
            [q2, q3, q0, -q1],
            [q3, -q2, q1, q0],
        ],
        dtype=float,
    )


@dataclass(frozen=True)
class Quaternion:
    q0: float = 0.0
    q1: float = 0.0
    q2: float = 0.0
    q3: float = 0.0

    def __post_init__(self):
        for name in ("q0", "q1", "q2", "q3"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ValueError(f"non-finite quaternion component {name}={v}")
            object.__setattr__(self, name, v)

    @classmethod
    def from_array(cls, a) -> "Quaternion":
        a0, a1, a2, a3 = (float(x) for x in a)
        return cls(a0, a1, a2, a3)

    def to_array(self) -> np.ndarray:
        return np.array([self.q0, self.q1, self.q2, self.q3])

    @property
    def real(self) -> float:
        return self.q0

    def __iter__(self):
        return iter((self.q0, self.q1, self.q2, self.q3))

    def __add__(self, other):
        other = _coerce(other)
        if other is NotImplemented:
            return other
        return Quaternion(*(a + b for a, b in zip(self, other)))

    __radd__ = __add__

    def __sub__(self, other):
        other = _coerce(other)
        if other is NotImplemented:
            return other
        return Quaternion(*(a - b for a, b in zip(self, other)))

    def __rsub__(self, other):
        other = _coerce(other)
        if other is NotImplemented:
            return other
        return other - self

    def __neg__(self):
        return Quaternion(-self.q0, -self.q1, -self.q2, -self.q3)

    def __mul__(self, other):
        other = _coerce(other)
        if other is NotImplemented:
            return other
        return mul(self, other)

    def __rmul__(self, other):
        other = _coerce(other)
        if other is NotImplemented:
            return other
        return mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return Quaternion(*(a / other for a in self))
        return NotImplemented

    def conj(self) -> "Quaternion":
        return conj(self)

    def __abs__(self) -> float:
        return modulus(self)

    def isclose(self, other, tol: float = 1e-12) -> bool:
        other = _coerce(other)
        return max(abs(a - b) for a, b in zip(self, other)) <= tol

    def __str__(self) -> str:
        return f"{self.q0:g}{self.q1:+g}i{self.q2:+g}j{self.q3:+g}k"


def _coerce(x):
    if isinstance(x, Quaternion):
        return x
    if isinstance(x, (int, float, np.floating, np.integer)):
        return Quaternion(float(x))
    return NotImplemented


ONE = Quaternion(1.0)
I = Quaternion(0.0, 1.0)
J = Quaternion(0.0, 0.0, 1.0)
K = Quaternion(0.0, 0.0, 0.0, 1.0)


def mul(a: Quaternion, b: Quaternion) -> Quaternion:
    return Quaternion(*hamilton(*a, *b))


def conj(q: Quaternion) -> Quaternion:
    return Quaternion(q.q0, -q.q1, -q.q2, -q.q3)


def modulus(q: Quaternion) -> float:
    return math.hypot(q.q0, q.q1, q.q2, q.q3)


def inverse(q: Quaternion, scale: float = 1.0) -> Quaternion:
    """Return q^{-1} = q* / |q|^2.

    Raises
    ------
    QuaternionDivisionError
        If ``|q| <= 1e-14 * scale``.
    """
    n = modulus(q)
    if n <= ZERO_TOL * scale:
        raise QuaternionDivisionError(f"cannot invert quaternion {q}")
    n2 = n * n
    return Quaternion(q.q0 / n2, -q.q1 / n2, -q.q2 / n2, -q.q3 / n2)
