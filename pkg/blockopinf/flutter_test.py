import math

import pytest

from .errors import DomainError, MissingInputError
from .flutter import (
    FUN3D_PARAMETER_NAMES,
    compute_flow_condition,
    conditions_to_csv,
    final_time,
    parameter_names_to_csv,
    sutherland_viscosity,
    table1_conditions,
    time_step,
)
from .models import FlutterConstants


def test_sutherland_reference_point():
    consts = FlutterConstants()
    assert sutherland_viscosity(consts.T_ref) == pytest.approx(consts.mu_ref)
    assert sutherland_viscosity(271.95) == pytest.approx(2.1627e-7, rel=1e-4)


def test_time_step_and_final_time():
    assert time_step() == pytest.approx(2.452182e-4, rel=1e-6)
    assert final_time() == pytest.approx(0.245218, rel=1e-5)
    assert final_time(steps=2000) == pytest.approx(2 * final_time())


@pytest.mark.parametrize("row", table1_conditions(), ids=lambda r: f"M{r.mach}-q{r.q_inf:g}")
def test_tabulated_conditions(row):
    cond = compute_flow_condition(row.mach, row.q_inf, row.rho)
    assert cond.u_inf == pytest.approx(row.u_inf, rel=1e-9)
    assert cond.T == pytest.approx(row.temperature, rel=5e-4)
    assert cond.Re == pytest.approx(row.reynolds_number, rel=5e-4)
    assert cond.dt_nondim == pytest.approx(row.time_step_nondim, rel=5e-4)


def test_table_has_one_corrected_row():
    rows = table1_conditions()
    assert len(rows) == 9
    corrected = [r for r in rows if r.source == "corrected"]
    assert [(r.mach, r.q_inf) for r in corrected] == [(0.901, 90.0)]
    # density is constant per Mach number
    for mach in (0.901, 0.957, 1.141):
        densities = [r.rho for r in rows if r.mach == mach]
        assert max(densities) == pytest.approx(min(densities), rel=1e-3)


def test_scaling_with_dynamic_pressure():
    low = compute_flow_condition(0.9, 50.0, 2e-4)
    high = compute_flow_condition(0.9, 200.0, 2e-4)
    assert high.u_inf == pytest.approx(2 * low.u_inf)
    assert high.T == pytest.approx(4 * low.T)
    assert high.dt_nondim == pytest.approx(2 * low.dt_nondim)
    assert high.dt_dim == low.dt_dim


def test_nondim_length_scales_reynolds_number():
    consts = FlutterConstants(L_nondim=1.0)
    cond = compute_flow_condition(0.9, 50.0, 2e-4, consts)
    assert cond.Re_L == pytest.approx(cond.Re)
    assert cond.dt_nondim == pytest.approx(cond.a * cond.dt_dim / consts.L)


@pytest.mark.parametrize("args", [(0.0, 50.0, 2e-4), (0.9, -1.0, 2e-4), (0.9, 50.0, 0.0), (math.nan, 50.0, 2e-4)])
def test_nonpositive_inputs(args):
    with pytest.raises(DomainError):
        compute_flow_condition(*args)


def test_missing_table(tmp_path):
    with pytest.raises(MissingInputError):
        table1_conditions(tmp_path / "absent.csv")


def test_exports(tmp_path):
    conditions = [compute_flow_condition(r.mach, r.q_inf, r.rho) for r in table1_conditions()]
    lines = conditions_to_csv(conditions, tmp_path / "conditions.csv").read_text().splitlines()
    assert lines[0].startswith("M_inf,q_inf,rho,u_inf")
    assert len(lines) == 10
    names = parameter_names_to_csv(tmp_path / "names.csv").read_text().splitlines()
    assert names[0] == "variable,fun3d_name"
    assert len(names) == 1 + len(FUN3D_PARAMETER_NAMES)
