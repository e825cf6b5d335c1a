import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qmopt.errors import QuaternionDivisionError
from qmopt.quaternion import I, J, K, ONE, Quaternion, conj, inverse, modulus, mul

# unit product table written out by hand: TABLE[a][b] = (sign, index) of e_a e_b
TABLE = [
    [(1, 0), (1, 1), (1, 2), (1, 3)],
    [(1, 1), (-1, 0), (1, 3), (-1, 2)],
    [(1, 2), (-1, 3), (-1, 0), (1, 1)],
    [(1, 3), (1, 2), (-1, 1), (-1, 0)],
]


def table_mul(a, b):
    out = [0.0] * 4
    for s in range(4):
        for t in range(4):
            sign, idx = TABLE[s][t]
            out[idx] += sign * a[s] * b[t]
    return out


finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
quats = st.builds(Quaternion, finite, finite, finite, finite)


def test_unit_products():
    assert mul(I, J) == K
    assert mul(J, I) == -K
    assert mul(J, K) == I
    assert mul(K, I) == J
    for u in (I, J, K):
        assert mul(u, u) == -ONE
    assert mul(mul(I, J), K) == -ONE


def test_identity_and_expanded_product():
    q = Quaternion(0.3, -1.2, 2.5, 4.0)
    assert ONE * q == q and q * ONE == q
    # (1 + i)(1 + j) expanded with the unit table
    assert table_mul([1, 1, 0, 0], [1, 0, 1, 0]) == [1, 1, 1, 1]
    assert (ONE + I) * (ONE + J) == Quaternion(1, 1, 1, 1)


def test_conj_modulus_inverse_examples():
    assert modulus(Quaternion(1, -2, 2, 0)) == 3.0
    assert conj(I) == -I
    inv = inverse(Quaternion(0, 0, 0, 2))
    assert inv == Quaternion(0, 0, 0, -0.5)
    assert mul(Quaternion(0, 0, 0, 2), inv).isclose(ONE, 1e-15)


def test_inverse_of_zero_raises():
    with pytest.raises(QuaternionDivisionError):
        inverse(Quaternion())
    with pytest.raises(ZeroDivisionError):
        inverse(Quaternion(1e-15, 0, 0, 0))
    # the zero test is relative to the caller's scale
    inverse(Quaternion(1e-15), scale=1e-3)


def test_non_finite_rejected():
    with pytest.raises(ValueError):
        Quaternion(float("nan"))
    with pytest.raises(ValueError):
        Quaternion(0, float("inf"))


def test_text_rendering():
    assert str(Quaternion(1, -2, 0.5, 3)) == "1-2i+0.5j+3k"


@given(quats, quats)
def test_modulus_multiplicative(a, b):
    assert abs(modulus(a * b) - modulus(a) * modulus(b)) <= 1e-12 * (1 + modulus(a) * modulus(b))


@given(quats, quats)
def test_conj_reverses_products(a, b):
    lhs, rhs = conj(a * b), conj(b) * conj(a)
    assert lhs.isclose(rhs, 1e-12 * (1 + modulus(a) * modulus(b)))


@given(quats)
def test_conj_involution_and_modulus(q):
    assert conj(conj(q)) == q
    assert modulus(q) == modulus(conj(q))
    assert math.isclose(modulus(q) ** 2, q.q0**2 + q.q1**2 + q.q2**2 + q.q3**2, rel_tol=1e-14, abs_tol=1e-300)


@given(quats)
def test_inverse_roundtrip(q):
    if modulus(q) <= 1e-6:
        return
    assert mul(q, inverse(q)).isclose(ONE, 1e-12)
    assert mul(inverse(q), q).isclose(ONE, 1e-12)


@given(quats, quats, quats)
@settings(max_examples=50)
def test_distributive(a, b, c):
    scale = 1 + modulus(a) * (modulus(b) + modulus(c))
    assert (a * (b + c)).isclose(a * b + a * c, 1e-12 * scale)


def test_left_multiplication_matrix_agrees_on_random_pairs():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((10_000, 4))
    B = rng.standard_normal((10_000, 4))
    for a, b in zip(A[:200], B[:200]):
        assert np.allclose(mul(Quaternion(*a), Quaternion(*b)).to_array(), table_mul(a, b), atol=1e-12)
    # vectorized over all pairs: left multiplication as a 4x4 real matrix
    L = np.empty((A.shape[0], 4, 4))
    for t in range(4):
        e = np.zeros(4)
        e[t] = 1.0
        L[:, :, t] = np.array([table_mul(a, e) for a in A])
    direct = np.array([mul(Quaternion(*a), Quaternion(*b)).to_array() for a, b in zip(A, B)])
    assert np.abs(np.einsum("kij,kj->ki", L, B) - direct).max() <= 1e-12
