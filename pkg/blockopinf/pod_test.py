import numpy as np
import pytest

from .errors import DegenerateError, DomainError, ShapeError
from .pod import (
    CoupledBasis,
    ReducedBasis,
    compute_pod,
    cumulative_energy,
    read_basis,
    select_rank,
    spectrum_to_csv,
    write_basis,
)


@pytest.mark.parametrize("seed", range(10))
def test_truncation_error_matches_discarded_energy(seed):
    rng = np.random.default_rng(seed)
    Q = rng.standard_normal((200, 50))
    basis = compute_pod(Q)
    r = 10
    V = basis.truncate(r)
    error = np.linalg.norm(Q - V.reconstruct(V.project(Q)))
    expected = np.sqrt(np.sum(basis.singular_values[r:] ** 2))
    assert error == pytest.approx(expected, rel=1e-8)


def test_basis_is_orthonormal_with_fixed_signs(rng):
    basis = compute_pod(rng.standard_normal((30, 12)))
    np.testing.assert_allclose(basis.vectors.T @ basis.vectors, np.eye(12), atol=1e-12)
    rows = np.argmax(np.abs(basis.vectors), axis=0)
    assert np.all(basis.vectors[rows, np.arange(12)] > 0)


def test_gram_method_matches_svd(rng):
    Q = rng.standard_normal((80, 10))
    a, b = compute_pod(Q, "svd"), compute_pod(Q, "gram")
    np.testing.assert_allclose(a.singular_values, b.singular_values, rtol=1e-8)
    np.testing.assert_allclose(np.abs(a.vectors.T @ b.vectors), np.eye(10), atol=1e-6)


def test_rank_one_data():
    u = np.arange(1.0, 5.0)
    basis = compute_pod(np.outer(u, [1.0, -2.0, 3.0]))
    assert select_rank(basis.singular_values, 0.999) == 1
    np.testing.assert_allclose(basis.vectors[:, 0], u / np.linalg.norm(u))


def test_cumulative_energy():
    np.testing.assert_allclose(cumulative_energy([2.0, 1.0, 1.0]), [4 / 6, 5 / 6, 1.0])
    assert select_rank([2.0, 1.0, 1.0], 0.8) == 2
    assert select_rank([2.0, 1.0, 1.0], 1.0) == 3
    with pytest.raises(DegenerateError):
        cumulative_energy([0.0, 0.0])
    with pytest.raises(DomainError):
        cumulative_energy([1.0, 2.0])
    with pytest.raises(DomainError):
        select_rank([1.0], 0.0)


def test_non_finite_snapshots():
    with pytest.raises(DomainError):
        compute_pod(np.array([[1.0, np.inf]]))


def test_coupled_basis_projects_each_block(rng):
    Vs = ReducedBasis.identity(2)
    Vf = compute_pod(rng.standard_normal((5, 4))).truncate(3)
    basis = CoupledBasis(Vs, Vf)
    Q = rng.standard_normal((7, 3))
    Q_hat = basis.project(Q)
    assert Q_hat.shape == (5, 3)
    np.testing.assert_allclose(Q_hat[:2], Q[:2])
    np.testing.assert_allclose(basis.matrix().T @ Q, Q_hat)
    with pytest.raises(ShapeError):
        basis.project(np.zeros((6, 1)))


def test_basis_file_roundtrip(tmp_path, rng):
    basis = compute_pod(rng.standard_normal((6, 4))).truncate(2)
    back = read_basis(write_basis(basis, tmp_path / "b.bin"))
    np.testing.assert_array_equal(back.vectors, basis.vectors)
    np.testing.assert_array_equal(back.singular_values, basis.singular_values)
    lines = spectrum_to_csv(basis.singular_values, tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "index,sigma,energy"
    assert len(lines) == 5
