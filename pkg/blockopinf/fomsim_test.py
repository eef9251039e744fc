import numpy as np
import pytest

from .errors import BlowUpError, InsufficientDataError, ShapeError
from .fomsim import (
    BLOCK_NAMES,
    CoupledFom,
    burgers_operators,
    burgers_rhs,
    build_synthetic_fom,
    exact_derivatives,
    fd_time_derivative,
    fom_qoi,
    initial_state,
    integrate_fom,
    projected_exact_derivatives,
    random_initial_states,
    rk4,
    single_mode_cases,
)
from .models import FomConfig
from .pod import CoupledBasis, ReducedBasis, compute_pod
from .tensorkit import compact_self_kron


def test_burgers_operators_match_stencil(rng):
    A, H = burgers_operators(10, 0.07)
    u = rng.standard_normal(10)
    np.testing.assert_allclose(A @ u + H @ compact_self_kron(u), burgers_rhs(u, 0.07), rtol=1e-12, atol=1e-12)


def test_three_point_diffusion_matrix():
    A, _ = burgers_operators(3, 1.0)
    np.testing.assert_allclose(A, 16.0 * np.array([[-2, 1, 0], [1, -2, 1], [0, 1, -2]]))


def test_synthetic_fom_blocks(small_fom):
    assert small_fom.n_s == 4 and small_fom.n_f == 8
    assert set(small_fom.active) == {"A_s", "A_f", "E_s", "E_f", "H_f"}
    assert small_fom.layout.names == ["gdisp", "gvel", "u"]
    # displacement i drives fluid point i; fluid mean drives every modal velocity
    np.testing.assert_allclose(small_fom.E_f[:2, :2], 0.1 * np.eye(2))
    np.testing.assert_allclose(small_fom.E_s[2:], 0.1 / 8)
    np.testing.assert_array_equal(small_fom.E_s[:2], 0.0)


def test_fom_rhs_matches_hand_coded(small_fom, rng):
    q = rng.standard_normal(small_fom.n)
    qs, qf = q[:4], q[4:]
    expected = np.concatenate([
        small_fom.A_s @ qs + small_fom.E_s @ qf,
        small_fom.A_f @ qf + small_fom.H_f @ compact_self_kron(qf) + small_fom.E_f @ qs,
    ])
    np.testing.assert_allclose(small_fom.rhs(q), expected, rtol=1e-12)
    Q = rng.standard_normal((small_fom.n, 3))
    np.testing.assert_allclose(small_fom.rhs(Q)[:, 1], small_fom.rhs(Q[:, 1]), rtol=1e-12)


def test_unknown_block_rejected():
    with pytest.raises(ShapeError):
        CoupledFom(2, 2, {"X_s": np.zeros((2, 2))}, np.ones(2))
    with pytest.raises(ShapeError):
        CoupledFom(2, 2, {"A_s": np.zeros((3, 3))}, np.ones(2))


def test_initial_states(small_fom):
    q0 = initial_state(small_fom, gvel=0.1)
    np.testing.assert_array_equal(q0[2:4], 0.1)
    np.testing.assert_array_equal(np.delete(q0, [2, 3]), 0.0)
    cases = single_mode_cases(small_fom)
    assert list(cases) == ["gvel1", "gvel2"]
    assert cases["gvel2"][3] == 0.1 and cases["gvel2"][2] == 0.0
    states = random_initial_states(small_fom, 3, seed=1)
    assert states.shape == (small_fom.n, 3)
    np.testing.assert_array_equal(states, random_initial_states(small_fom, 3, seed=1))


def test_rk4_rotation_keeps_radius():
    A = np.array([[0.0, 1.0], [-1.0, 0.0]])
    steps = int(round(2 * np.pi / 0.01))
    result = rk4(lambda q: A @ q, np.array([1.0, 0.0]), 0.01, steps + 1)
    radius = np.linalg.norm(result.states, axis=0)
    assert np.max(np.abs(radius - 1.0)) < 1e-8
    assert result.blowup_step is None


def test_rk4_flags_blowup():
    result = rk4(lambda q: q * q, np.array([1.0]), 0.5, 50)
    assert result.blowup_step is not None
    assert result.states.shape[1] == result.blowup_step


def test_integrate_fom_raises_on_blowup():
    fom = CoupledFom(1, 1, {"A_s": [[1e6]]}, np.ones(1))
    with pytest.raises(BlowUpError):
        integrate_fom(fom, np.ones(2), 1.0, 200)


def test_integrate_fom_snapshots(small_fom, small_fom_config):
    S = integrate_fom(small_fom, initial_state(small_fom, gvel=0.1), small_fom_config.dt, 50)
    assert S.k == 50 and S.layout == small_fom.layout
    lift = fom_qoi(small_fom, S, "lift")
    np.testing.assert_allclose(lift, S.group("u").mean(axis=0))
    np.testing.assert_array_equal(fom_qoi(small_fom, S, "gvel_2"), S.data[3])
    with pytest.raises(KeyError):
        fom_qoi(small_fom, S, "gdisp_3")


def _fd_error(dt):
    t = np.arange(int(round(4.0 / dt)) + 1) * dt
    d = fd_time_derivative(np.sin(t)[None, :], dt)
    return np.max(np.abs(d.values[0] - np.cos(t[d.start:d.stop])))


def test_fd_sixth_order_convergence():
    errors = [_fd_error(0.2 / 2**i) for i in range(3)]
    slopes = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
    assert slopes == pytest.approx([6.0, 6.0], abs=0.3)


def test_fd_drops_boundaries():
    d = fd_time_derivative(np.arange(10.0)[None, :] * 2.0, 0.5)
    assert (d.start, d.stop) == (3, 7)
    np.testing.assert_allclose(d.values, 4.0)
    with pytest.raises(InsufficientDataError):
        fd_time_derivative(np.zeros((1, 6)), 0.1)


def test_exact_and_projected_derivatives(small_fom, small_fom_config, rng):
    S = integrate_fom(small_fom, initial_state(small_fom, gvel=0.1), small_fom_config.dt, 20)
    d = exact_derivatives(small_fom, S)
    np.testing.assert_allclose(d.values, small_fom.rhs(S.data))
    basis = CoupledBasis(ReducedBasis.identity(4), ReducedBasis.identity(8))
    Q_hat = basis.project(S.data)
    np.testing.assert_allclose(projected_exact_derivatives(small_fom, basis, Q_hat), d.values, atol=1e-12)


def test_block_names_cover_both_physics():
    assert len(BLOCK_NAMES) == 12
    assert {name[-1] for name in BLOCK_NAMES} == {"s", "f"}


def test_fd_is_exact_for_polynomials_up_to_degree_six():
    dt = 0.1
    t = 0.3 + dt * np.arange(20)
    powers = np.arange(7)
    Q = t[None, :] ** powers[:, None]
    d = fd_time_derivative(Q, dt)
    tt = t[d.start:d.stop]
    expected = powers[:, None] * tt[None, :] ** np.maximum(powers - 1, 0)[:, None]
    np.testing.assert_allclose(d.values, expected, rtol=1e-9, atol=1e-9)


def test_integrate_fom_follows_analytic_oscillator():
    fom = CoupledFom(2, 1, {"A_s": [[0.0, 1.0], [-1.0, 0.0]]}, np.ones(1))
    dt = 0.01
    k = int(round(2 * np.pi / dt)) + 1
    S = integrate_fom(fom, np.array([1.0, 0.0, 0.0]), dt, k)
    np.testing.assert_allclose(S.data[0], np.cos(S.times), atol=1e-8)
    np.testing.assert_allclose(S.data[1], -np.sin(S.times), atol=1e-8)


def test_decoupled_undamped_structure_conserves_energy():
    fom = build_synthetic_fom(FomConfig(m=2, n_f=8, nu=0.1, frequencies_hz=[1.0, 2.0], dt=1e-3,
                                        kappa_f=0.0, kappa_s=0.0))
    assert "E_s" not in fom.active and "E_f" not in fom.active
    S = integrate_fom(fom, initial_state(fom, gvel=0.1, gdisp=0.01), 1e-3, 1000)
    w = fom.structure.frequencies
    energy = 0.5 * np.sum(S.group("gvel") ** 2 + (w[:, None] * S.group("gdisp")) ** 2, axis=0)
    assert np.max(np.abs(energy / energy[0] - 1.0)) < 1e-8
