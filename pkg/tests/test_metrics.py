import math

import numpy as np
import pytest

from fddcov.metrics import grassmann_se, normalized_frobenius_se


def random_hermitian_psd(rng, n):
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return a @ a.conj().T


def random_unitary(rng, n):
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    q, r = np.linalg.qr(a)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def test_frobenius_identical_is_zero():
    r = random_hermitian_psd(np.random.default_rng(0), 5)
    assert normalized_frobenius_se(r, r) == 0.0


def test_frobenius_zero_estimate_is_one():
    r = random_hermitian_psd(np.random.default_rng(1), 5)
    assert normalized_frobenius_se(r, np.zeros_like(r)) == pytest.approx(1.0)


def test_frobenius_hand_computed_example():
    r_true = np.diag([3.0, 4.0]).astype(complex)
    r_est = np.diag([3.0, 0.0]).astype(complex)
    assert normalized_frobenius_se(r_true, r_est) == pytest.approx(16.0 / 25.0)


def test_frobenius_rejects_zero_truth():
    with pytest.raises(ValueError):
        normalized_frobenius_se(np.zeros((3, 3)), np.eye(3))


def test_grassmann_identical_is_zero():
    r = random_hermitian_psd(np.random.default_rng(2), 6)
    assert grassmann_se(r, r) <= 1e-12


def test_grassmann_orthogonal_rank_one():
    u = np.array([1.0, 0.0, 0.0], dtype=complex)
    v = np.array([0.0, 1.0, 0.0], dtype=complex)
    assert grassmann_se(np.outer(u, u.conj()), np.outer(v, v.conj())) == pytest.approx(1.0)


def test_grassmann_principal_angle():
    # oracle: projector difference of explicit 2-vectors at angle phi
    for phi in [math.pi / 4, 0.3, 1.2]:
        u = np.array([1.0, 0.0], dtype=complex)
        v = np.array([math.cos(phi), math.sin(phi)], dtype=complex)
        se = grassmann_se(np.outer(u, u.conj()), np.outer(v, v.conj()))
        assert se == pytest.approx(math.sin(phi) ** 2, abs=1e-10)


def test_grassmann_scaling_invariance():
    rng = np.random.default_rng(3)
    r_true = random_hermitian_psd(rng, 6)
    r_est = random_hermitian_psd(rng, 6)
    base = grassmann_se(r_true, r_est)
    assert grassmann_se(r_true, 7.3 * r_est) == pytest.approx(base, abs=1e-12)
    assert grassmann_se(2.0 * r_true, r_est) == pytest.approx(base, abs=1e-12)


def test_both_metrics_unitary_invariant():
    rng = np.random.default_rng(4)
    r_true = random_hermitian_psd(rng, 6)
    r_est = random_hermitian_psd(rng, 6)
    q = random_unitary(rng, 6)
    rt = q @ r_true @ q.conj().T
    re = q @ r_est @ q.conj().T
    assert normalized_frobenius_se(rt, re) == pytest.approx(
        normalized_frobenius_se(r_true, r_est), abs=1e-10)
    assert grassmann_se(rt, re) == pytest.approx(grassmann_se(r_true, r_est), abs=1e-10)


def test_grassmann_range():
    rng = np.random.default_rng(5)
    for _ in range(20):
        a = random_hermitian_psd(rng, 5)
        b = random_hermitian_psd(rng, 5)
        se = grassmann_se(a, b)
        assert 0.0 <= se <= 1.0


def test_grassmann_rank_from_energy_fraction():
    # eigenvalues 10, 10, 1: two leading vectors reach 90% of the trace
    r_true = np.diag([10.0, 10.0, 1.0]).astype(complex)
    r_est = np.diag([1.0, 10.0, 10.0]).astype(complex)
    # r = 2; true frame spans e1,e2; estimate frame spans e2,e3
    assert grassmann_se(r_true, r_est) == pytest.approx(0.5)


def test_grassmann_tie_flagged():
    r_true = np.diag([3.0, 1.0, 0.1]).astype(complex)
    se, tied = grassmann_se(r_true, np.eye(3, dtype=complex), return_info=True)
    assert tied
    se2, tied2 = grassmann_se(r_true, np.diag([5.0, 1.0, 0.5]).astype(complex),
                              return_info=True)
    assert not tied2


def test_grassmann_deterministic_on_degenerate_estimate():
    r_true = random_hermitian_psd(np.random.default_rng(6), 4)
    a = grassmann_se(r_true, np.zeros((4, 4), dtype=complex))
    b = grassmann_se(r_true, np.zeros((4, 4), dtype=complex))
    assert a == b


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        normalized_frobenius_se(np.eye(3), np.eye(4))
    with pytest.raises(ValueError):
        grassmann_se(np.eye(3), np.eye(4))
