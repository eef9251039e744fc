"""Flow-condition inputs for the aeroelastic flow solver.

From a Mach number, dynamic pressure and density this computes the
freestream velocity, temperature, viscosity, Reynolds number and the
dimensional and nondimensional time steps.
"""

import csv
import logging
import math
from pathlib import Path
from typing import List, NamedTuple, Optional

from .errors import DomainError, MissingInputError
from .models import FlowCondition, FlutterConstants
from .snapshots import format_float

logger = logging.getLogger(__name__)

FIXTURE = Path(__file__).parent / "fixtures" / "table1_densities.csv"

# Output field -> flow-solver namelist parameter
FUN3D_PARAMETER_NAMES = {
    "u_inf": "uinf",
    "q_inf": "qinf",
    "T": "temperature",
    "Re_L": "reynolds_number",
    "M_inf": "mach_number",
    "dt_nondim": "time_step_nondim",
}


def sutherland_viscosity(T: float, consts: FlutterConstants = FlutterConstants()) -> float:
    if not T > 0:
        raise DomainError(f"temperature must be positive, got {T}")
    return consts.mu_ref * (consts.T_ref + consts.C) / (T + consts.C) * (T / consts.T_ref) ** 1.5


def time_step(consts: FlutterConstants = FlutterConstants()) -> float:
    """Dimensional step resolving one period of the frequency of interest in N steps."""
    return (1.0 / consts.f_char) / consts.N


def final_time(consts: FlutterConstants = FlutterConstants(), steps: int = 1000) -> float:
    return steps * time_step(consts)


def compute_flow_condition(M_inf: float, q_inf: float, rho: float,
                           consts: FlutterConstants = FlutterConstants()) -> FlowCondition:
    for name, value in (("Mach number", M_inf), ("dynamic pressure", q_inf), ("density", rho)):
        if not value > 0:
            raise DomainError(f"{name} must be positive, got {value}")
    u_inf = math.sqrt(2.0 * q_inf / rho)
    a = u_inf / M_inf
    T = a * a / (consts.gamma * consts.R)
    mu = sutherland_viscosity(T, consts)
    Re = rho * u_inf * consts.L / mu
    dt_dim = time_step(consts)
    return FlowCondition(
        M_inf=M_inf,
        q_inf=q_inf,
        rho=rho,
        u_inf=u_inf,
        a=a,
        T=T,
        mu=mu,
        Re=Re,
        Re_L=Re / consts.L_nondim,
        dt_dim=dt_dim,
        dt_nondim=a * (consts.L_nondim / consts.L) * dt_dim,
    )


class TableRow(NamedTuple):
    """One tabulated training flow condition with its back-out density ρ = 2q/u²."""

    mach: float
    q_inf: float
    rho: float
    u_inf: float
    temperature: float
    reynolds_number: float
    time_step_nondim: float
    source: str


def table1_conditions(path: Optional[Path] = None) -> List[TableRow]:
    """The nine training flow conditions.

    Densities are derived from the tabulated velocity, not experimental
    values. The row marked `corrected` carries the velocity consistent with
    its own temperature and time step.
    """
    path = Path(path or FIXTURE)
    if not path.exists():
        raise MissingInputError(f"flow-condition table not found: {path}")
    rows = []
    with path.open(newline="") as fh:
        for record in csv.DictReader(fh):
            u = float(record["u_inf"])
            q = float(record["q_inf"])
            rows.append(TableRow(
                mach=float(record["mach"]),
                q_inf=q,
                rho=2.0 * q / (u * u),
                u_inf=u,
                temperature=float(record["temperature"]),
                reynolds_number=float(record["reynolds_number"]),
                time_step_nondim=float(record["time_step_nondim"]),
                source=record["source"],
            ))
    return rows


def conditions_to_csv(conditions: List[FlowCondition], path) -> Path:
    path = Path(path)
    fields = list(FlowCondition.model_fields)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(fields)
        for cond in conditions:
            writer.writerow([format_float(getattr(cond, name)) for name in fields])
    return path


def parameter_names_to_csv(path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["variable", "fun3d_name"])
        writer.writerows(FUN3D_PARAMETER_NAMES.items())
    return path


def conditions_table(conditions: List[FlowCondition]):
    """Rich table in the tabulated column layout."""
    from rich.table import Table

    table = Table(title="Flow conditions")
    for header in ("M_inf", "q_inf [lb/ft²]", "u_inf [ft/s]", "T [°R]", "Re", "Δt [-]"):
        table.add_column(header, justify="right")
    for c in conditions:
        table.add_row(
            f"{c.M_inf:.3f}", f"{c.q_inf:g}", f"{c.u_inf:.2f}", f"{c.T:.2f}", f"{c.Re:.4g}", f"{c.dt_nondim:.5f}"
        )
    return table
