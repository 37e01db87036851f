import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from riccati_opnet import linalg
from riccati_opnet.errors import NoConvergence, NotSymmetric, SingularMatrix

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def square(n):
    return arrays(np.float64, (n, n), elements=finite)


@settings(max_examples=60, deadline=None)
@given(square(4), arrays(np.float64, (4,), elements=finite))
def test_solve_linear_matches_residual(a, b):
    a = a + 25.0 * np.eye(4)  # diagonally dominant, well conditioned
    x = linalg.solve_linear(a, b)
    assert np.allclose(a @ x, b, atol=1e-10)


def test_lu_rejects_singular():
    with pytest.raises(SingularMatrix):
        linalg.lu_factor(np.array([[1.0, 2.0], [2.0, 4.0]]))


def test_inverse_and_triangular(rng):
    a = rng.standard_normal((5, 5)) + 5 * np.eye(5)
    assert np.allclose(linalg.inv(a) @ a, np.eye(5), atol=1e-12)
    low = np.tril(a)
    b = rng.standard_normal(5)
    assert np.allclose(low @ linalg.solve_triangular(low, b), b)
    up = np.triu(a)
    assert np.allclose(up @ linalg.solve_triangular(up, b, lower=False), b)


def test_cholesky_spd_and_not_spd(rng):
    m = rng.standard_normal((4, 4))
    spd = m @ m.T + np.eye(4)
    low = linalg.cholesky(spd)
    assert np.allclose(low @ low.T, spd)
    assert linalg.cholesky(-spd) is None
    assert not linalg.is_spd(np.diag([1.0, -1.0]))
    with pytest.raises(NotSymmetric):
        linalg.cholesky(np.array([[1.0, 2.0], [0.0, 1.0]]))


@pytest.mark.parametrize("n", [1, 2, 3, 5, 8, 16, 32])
def test_eigenvalues_match_reference(n):
    a = np.random.default_rng(n).standard_normal((n, n))
    ours = np.sort_complex(linalg.eigenvalues(a))
    ref = np.sort_complex(np.linalg.eigvals(a))
    assert np.allclose(ours, ref, atol=1e-9)


def test_eigenvalues_of_companion_and_rotation():
    rot = np.array([[0.0, -2.0], [2.0, 0.0]])
    assert np.allclose(np.sort(linalg.eigenvalues(rot).imag), [-2.0, 2.0])
    assert linalg.spectral_abscissa(np.diag([-3.0, 1.5, -0.2])) == pytest.approx(1.5)


def test_eigenvalues_reports_partial_spectrum(monkeypatch):
    a = np.random.default_rng(0).standard_normal((6, 6))
    with pytest.raises(NoConvergence) as info:
        linalg._hqr(linalg.hessenberg(a), max_iter=1)
    assert info.value.partial is not None


def test_symmetric_eig(rng):
    m = rng.standard_normal((6, 6))
    s = m + m.T
    w, v = linalg.symmetric_eig(s)
    assert np.allclose(w, np.linalg.eigvalsh(s), atol=1e-12)
    assert np.allclose(v @ np.diag(w) @ v.T, s, atol=1e-12)
    assert linalg.op_norm2(m) == pytest.approx(np.linalg.norm(m, 2), rel=1e-12)


def test_lyapunov_solution(rng):
    a = rng.standard_normal((4, 4)) - 4 * np.eye(4)
    q = np.eye(4)
    p = linalg.solve_lyapunov(a, q)
    assert np.allclose(a.T @ p + p @ a, -q, atol=1e-12)
    assert linalg.is_symmetric(p)


def test_stability_tests_agree():
    assert linalg.is_hurwitz(-np.eye(3))
    spectral, lyap, _ = linalg.stability_tests(np.diag([1.0, -1.0]))
    assert not spectral and not lyap


def test_rank_real_and_complex():
    assert linalg.rank(np.ones((3, 3))) == 1
    assert linalg.rank(np.eye(4)) == 4
    z = np.array([[1j, 1.0], [-1.0, 1j]])
    assert linalg.rank(z) == 1


def test_sqrt_psd_clamps_negative(rng):
    m = rng.standard_normal((3, 3))
    q = m @ m.T
    r = linalg.sqrt_psd(q)
    assert np.allclose(r @ r, q, atol=1e-10)
    assert np.all(np.isfinite(linalg.sqrt_psd(np.diag([1.0, -1e-14]))))
