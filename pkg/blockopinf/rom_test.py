import numpy as np
import pytest

from .errors import DegenerateError, NumericError, ShapeError
from .fomsim import block_shape, fom_qoi, initial_state, integrate_fom
from .opinf import BLOCK, MONOLITHIC, OperatorSet, StructureMask, count_parameters
from .pod import CoupledBasis, ReducedBasis, compute_pod
from .rom import (
    RomTrajectory,
    bounded_growth_check,
    error_table_to_csv,
    extract_qoi,
    integrate_rom,
    qoi_functional,
    qoi_series_to_csv,
    reconstruct_slices,
    relative_rmse,
    rom_rhs,
    time_rhs,
)
from .snapshots import fit_shift_scale


def _linear_ops(A):
    A = np.atleast_2d(A)
    return OperatorSet(MONOLITHIC, 1, A.shape[0] - 1, {"A": A})


def test_rom_rhs_checks_input():
    ops = _linear_ops(np.eye(2))
    np.testing.assert_allclose(rom_rhs(ops, [1.0, 2.0]), [1.0, 2.0])
    with pytest.raises(NumericError):
        rom_rhs(ops, [np.nan, 0.0])
    with pytest.raises(ShapeError):
        rom_rhs(ops, [1.0])


def test_rotation_stays_on_circle():
    ops = _linear_ops([[0.0, 1.0], [-1.0, 0.0]])
    steps = int(round(2 * np.pi / 0.01))
    traj = integrate_rom(ops, [1.0, 0.0], 0.01, steps + 1)
    assert not traj.blew_up
    assert np.max(np.abs(np.linalg.norm(traj.states, axis=0) - 1.0)) <= 1e-8


def test_unstable_candidate_fails_growth_check():
    train = integrate_rom(_linear_ops([[0.0, 1.0], [-1.0, 0.0]]), [1.0, 0.0], 0.01, 300)
    unstable = integrate_rom(_linear_ops([[1.0, 0.0], [0.0, 1.0]]), [1.0, 0.0], 0.01, 300)
    check = bounded_growth_check(train, unstable, 10.0)
    assert not check.passed
    assert check.coordinate == 0
    for alpha in (1.0, 2.0, 10.0):
        assert bounded_growth_check(train, train, alpha).passed


def test_growth_check_threshold():
    train = np.array([[-1.0, 1.0]])
    assert not bounded_growth_check(train, np.array([[0.0, 10.5]]), 10.0).passed
    assert bounded_growth_check(train, np.array([[0.0, 9.5]]), 10.0).passed


def test_growth_check_zero_deviation_fallback():
    train = np.array([[0.0, 0.0], [-2.0, 2.0]])
    # coordinate 0 borrows the largest training deviation (2)
    assert bounded_growth_check(train, np.array([[19.0], [0.0]]), 10.0).passed
    assert not bounded_growth_check(train, np.array([[21.0], [0.0]]), 10.0).passed


def test_blown_up_trajectory_fails():
    ops = OperatorSet(BLOCK, 1, 1, {"H_s": [[1.0]]})
    traj = integrate_rom(ops, [10.0, 0.0], 0.5, 100)
    assert traj.blew_up
    assert not bounded_growth_check(np.array([[0.0, 1.0], [0.0, 1.0]]), traj, 10.0).passed


def test_relative_rmse_examples():
    assert relative_rmse([0.0, 1.0, 2.0], [0.0, 1.0, 2.0]) == 0.0
    assert relative_rmse([0.0, 2.0], [1.0, 1.0]) == pytest.approx(0.5)
    assert relative_rmse([0.0, 1.0, 2.0], [0.0, 1.0, 3.0]) == pytest.approx(np.sqrt(1 / 3) / 2)
    assert relative_rmse([9.0, 0.0, 2.0], [9.0, 1.0, 1.0], window=(1, 3)) == pytest.approx(0.5)
    with pytest.raises(DegenerateError):
        relative_rmse([1.0, 1.0], [0.0, 2.0])


def test_relative_rmse_affine_invariance(rng):
    a, b = rng.standard_normal(50), rng.standard_normal(50)
    assert relative_rmse(3 * a + 7, 3 * b + 7) == pytest.approx(relative_rmse(a, b))


def test_qoi_functional_identity_basis(small_fom, small_fom_config):
    S = integrate_fom(small_fom, initial_state(small_fom, gvel=0.1), small_fom_config.dt, 30)
    basis = CoupledBasis(ReducedBasis.identity(small_fom.n_s), ReducedBasis.identity(small_fom.n_f))
    traj = RomTrajectory(basis.project(S.data), S.dt, 0.0, basis.r_s, basis.r_f)
    for name in ("lift", "gdisp_1", "gvel_2"):
        series = extract_qoi(traj, qoi_functional(name, small_fom, basis))
        np.testing.assert_allclose(series.values, fom_qoi(small_fom, S, name), atol=1e-14)
    np.testing.assert_array_equal(extract_qoi(traj, qoi_functional("gdisp_2", small_fom, basis)).values, traj.states[1])
    with pytest.raises(KeyError):
        qoi_functional("gdisp_9", small_fom, basis)


def test_qoi_functional_pulls_back_preprocessing(small_fom, small_fom_config):
    S = integrate_fom(small_fom, initial_state(small_fom, gvel=0.1), small_fom_config.dt, 60)
    P = fit_shift_scale(S, groups=["u"])
    fluid = compute_pod(P.apply(S).group("u"))
    basis = CoupledBasis(ReducedBasis.identity(small_fom.n_s), fluid)
    Q_hat = basis.project(P.apply(S).data)
    traj = RomTrajectory(Q_hat, S.dt, 0.0, basis.r_s, basis.r_f)
    lift = extract_qoi(traj, qoi_functional("lift", small_fom, basis, P))
    np.testing.assert_allclose(lift.values, fom_qoi(small_fom, S, "lift"), rtol=1e-9, atol=1e-12)


def test_time_rhs_statistics(rng):
    ops = _linear_ops(rng.standard_normal((4, 4)))
    stats = time_rhs(ops, repetitions=5, evaluations=10)
    assert 0 < stats.p25 <= stats.median <= stats.p75


@pytest.mark.slow
def test_block_rhs_is_faster_than_monolithic(rng):
    r_s, r_f = 8, 12
    mask = StructureMask.agard()
    names = mask.learned("structural") + mask.learned("fluid")
    block = OperatorSet(BLOCK, r_s, r_f, {n: 0.01 * rng.standard_normal(block_shape(n, r_s, r_f)) for n in names})
    mono = block.to_monolithic()
    assert block.parameter_count() == count_parameters(BLOCK, r_s, r_f)
    t_block = time_rhs(block, repetitions=50, evaluations=500)
    t_mono = time_rhs(mono, repetitions=50, evaluations=500)
    assert t_block.median <= 0.9 * t_mono.median


def test_exports(tmp_path, small_fom):
    basis = CoupledBasis(ReducedBasis.identity(small_fom.n_s), ReducedBasis.identity(small_fom.n_f))
    q0 = initial_state(small_fom, gvel=0.1)
    traj = integrate_rom(OperatorSet(BLOCK, small_fom.n_s, small_fom.n_f, {}), q0, 0.1, 10)
    series = [extract_qoi(traj, qoi_functional(n, small_fom, basis)) for n in ("lift", "gvel_1")]
    lines = qoi_series_to_csv(series, tmp_path / "q.csv").read_text().splitlines()
    assert lines[0] == "time,lift,gvel_1"
    assert lines[1].split(",")[2] == "0.10000000000000001"

    slices = reconstruct_slices(traj, basis, None, 3, tmp_path / "s.csv").read_text().splitlines()
    assert slices[0].count("t=") == 3
    assert len(slices) == 1 + small_fom.n_f

    rows = [{"case": "train", "r_f": 8, "method": "block", "qoi": "lift", "eps_rel": 0.25}]
    assert error_table_to_csv(rows, tmp_path / "e.csv").read_text().splitlines()[1] == "train,8,block,lift,0.25"
