import numpy as np
import pytest

from kahlerlab.errors import InvalidInputError, ShapeMismatchError
from kahlerlab.models import standard_J
from kahlerlab.tensors import TensorValue, hermitize, is_hermitian, jtensor_contract


def _hermitize_oracle(T, J):
    """Direct four-term loop evaluation of the projection formula."""
    d = T.shape[0]
    out = np.zeros((d, d))
    delta = np.eye(d)
    for i in range(d):
        for j in range(d):
            acc = 0.0
            for a in range(d):
                for b in range(d):
                    acc += T[a, b] * (delta[a, i] * delta[b, j]
                                      + delta[a, j] * delta[b, i]
                                      + J[a, i] * J[b, j] + J[a, j] * J[b, i])
            out[i, j] = acc / 4.0
    return out


def _random_spd(rng, d):
    m = rng.normal(size=(d, d))
    return m @ m.T + d * np.eye(d)


def test_tensor_value_validation(rng):
    with pytest.raises(ShapeMismatchError):
        TensorValue(("l",), np.zeros((4, 4)))
    with pytest.raises(InvalidInputError):
        TensorValue(("x", "l"), np.zeros((4, 4)))
    with pytest.raises(ShapeMismatchError):
        TensorValue(("l", "l"), np.zeros((4, 3)))
    t = TensorValue(("l", "l"), rng.normal(size=(4, 4)))
    assert t.rank == 2 and t.dim == 4
    assert t.components.size == 4 ** t.rank


def test_raise_lower_round_trip(rng):
    g = _random_spd(rng, 4)
    g_inv = np.linalg.inv(g)
    for _ in range(5):
        t = TensorValue(("l", "l", "l"), rng.normal(size=(4, 4, 4)))
        up = t.raise_index(1, g_inv)
        back = up.lower_index(1, g)
        assert np.max(np.abs(back.components - t.components)) < 1e-12
        assert up.variance == ("l", "u", "l")
    with pytest.raises(InvalidInputError):
        t.raise_index(0, g_inv).raise_index(0, g_inv)


def test_hermitize_fixed_point_and_kernel(rng):
    J = standard_J(2)
    sym_herm = hermitize(rng.normal(size=(4, 4)), J)
    assert np.allclose(hermitize(sym_herm, J), sym_herm, atol=1e-14)
    skew = rng.normal(size=(4, 4))
    skew = skew - skew.T
    assert np.max(np.abs(hermitize(skew, J))) < 1e-14


def test_hermitize_against_loop_oracle(rng):
    J = standard_J(2)
    for _ in range(5):
        T = rng.normal(size=(4, 4))
        got = hermitize(T, J)
        assert np.allclose(got, _hermitize_oracle(T, J), atol=1e-13)
        # output is symmetric and anticommutes with J
        assert np.allclose(got, got.T)
        assert is_hermitian(got, J, tol=1e-12)


def test_hermitize_idempotent_property(rng):
    J = standard_J(3)
    for _ in range(10):
        T = rng.normal(size=(6, 6))
        once = hermitize(T, J)
        assert np.max(np.abs(hermitize(once, J) - once)) < 1e-12


def test_hermitize_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        hermitize(np.zeros((4, 4)), standard_J(3))


def test_jtensor_contract(rng):
    J = standard_J(2)
    g = np.eye(4)
    assert np.allclose(jtensor_contract(g, J), 2 * g)
    omega = g @ J  # fundamental two-form, J-invariant
    # oracle: direct loop evaluation
    d = 4
    oracle = np.array([[omega[i, j] + sum(J[a, i] * J[b, j] * omega[a, b]
                                          for a in range(d) for b in range(d))
                        for j in range(d)] for i in range(d)])
    assert np.allclose(jtensor_contract(omega, J), oracle)
    assert np.allclose(jtensor_contract(omega, J), 2 * omega, atol=1e-13)
    # anti-invariant part is annihilated
    T = rng.normal(size=(4, 4))
    anti = 0.5 * (T - np.einsum("ai,bj,ab->ij", J, J, T))
    assert np.max(np.abs(jtensor_contract(anti, J))) < 1e-13
    with pytest.raises(ShapeMismatchError):
        jtensor_contract(np.zeros((4, 4)), standard_J(3))
