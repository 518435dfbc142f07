import numpy as np
import pytest

from inchworm_lab import algebra as alg


def random_mat2(rng, scale=1.0):
    return scale * (rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2)))


def test_identity_norm_is_sqrt2():
    assert alg.frobenius_norm(alg.IDENTITY) == pytest.approx(np.sqrt(2.0), abs=1e-15)


def test_frobenius_examples():
    assert alg.frobenius_norm(alg.ZERO) == 0.0
    assert alg.frobenius_norm(np.diag([3.0, 4.0]).astype(complex)) == pytest.approx(5.0)


def test_pauli_products():
    assert np.array_equal(alg.mat_mul(alg.IDENTITY, alg.SIGMA_X), alg.SIGMA_X)
    assert np.array_equal(alg.mat_mul(alg.SIGMA_Z, alg.SIGMA_Z), alg.IDENTITY)
    # hand 2x2 multiply: sigma_z sigma_x = [[0, 1], [-1, 0]]
    assert np.array_equal(
        alg.mat_mul(alg.SIGMA_Z, alg.SIGMA_X),
        np.array([[0.0, 1.0], [-1.0, 0.0]], dtype=complex),
    )


def test_elementwise_ops():
    rng = np.random.default_rng(1)
    a, b = random_mat2(rng), random_mat2(rng)
    assert np.array_equal(alg.mat_add(a, b), a + b)
    assert np.array_equal(alg.mat_sub(a, b), a - b)
    assert np.array_equal(alg.scalar_mul(2.0 + 1j, a), (2.0 + 1j) * a)


def test_mat_exp_zero_and_pi_rotation():
    assert np.allclose(alg.mat_exp(alg.ZERO), alg.IDENTITY, atol=1e-15)
    # exp(i pi sigma_z) = diag(e^{i pi}, e^{-i pi}) = -I
    assert np.allclose(alg.mat_exp(1j * np.pi * alg.SIGMA_Z), -alg.IDENTITY, atol=1e-12)


def test_mat_exp_against_series_oracle():
    h_s = alg.SIGMA_Z + alg.SIGMA_X
    a = -1j * 0.1 * h_s
    oracle = alg.mat_exp_taylor(a, terms=50)
    assert np.max(np.abs(alg.mat_exp(a) - oracle)) < 1e-14


def test_mat_exp_relative_error_vs_series():
    rng = np.random.default_rng(2)
    for _ in range(100):
        a = random_mat2(rng, scale=2.0)
        nrm = alg.frobenius_norm(a)
        if nrm > 10.0:
            a = a * (10.0 / nrm)
        e1, e2 = alg.mat_exp(a), alg.mat_exp_taylor(a, terms=60)
        assert np.max(np.abs(e1 - e2)) <= 1e-12 * max(1.0, np.max(np.abs(e2)))


def test_mat_exp_degenerate_eigenvalues():
    # nilpotent upper-triangular block: exp = I + A exactly
    a = np.array([[0.0, 3.0], [0.0, 0.0]], dtype=complex)
    assert np.allclose(alg.mat_exp(a), alg.IDENTITY + a, atol=1e-14)
    # nearly degenerate pair stays close to the limit formula
    eps = 1e-10
    a = np.array([[1.0, 1.0], [eps, 1.0]], dtype=complex)
    assert np.allclose(alg.mat_exp(a), alg.mat_exp_taylor(a), atol=1e-12)


def test_mat_exp_rejects_nonfinite():
    bad = np.array([[np.nan, 0.0], [0.0, 0.0]], dtype=complex)
    with pytest.raises(ValueError):
        alg.mat_exp(bad)


def test_submultiplicativity_property():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        a, b = random_mat2(rng), random_mat2(rng)
        assert alg.frobenius_norm(a @ b) <= alg.frobenius_norm(a) * alg.frobenius_norm(b) * (1 + 1e-12)


def test_exp_inverse_property():
    rng = np.random.default_rng(4)
    for _ in range(50):
        a = random_mat2(rng)
        nrm = alg.frobenius_norm(a)
        if nrm > 5.0:
            a = a * (5.0 / nrm)
        prod = alg.mat_exp(a) @ alg.mat_exp(-a)
        assert alg.frobenius_norm(prod - alg.IDENTITY) <= 1e-10


def test_exp_of_antihermitian_is_unitary():
    rng = np.random.default_rng(5)
    for _ in range(50):
        b = random_mat2(rng)
        a = 0.5 * (b - alg.dagger(b))  # anti-Hermitian part
        u = alg.mat_exp(a)
        assert alg.frobenius_norm(u @ alg.dagger(u) - alg.IDENTITY) <= 1e-10


def test_batched_shapes():
    rng = np.random.default_rng(6)
    batch = rng.standard_normal((7, 3, 2, 2)) + 0j
    assert alg.mat_exp(batch).shape == (7, 3, 2, 2)
    assert alg.frobenius_norm(batch).shape == (7, 3)
