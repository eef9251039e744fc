import logging
from pathlib import Path
from typing import List, NamedTuple, Optional, Union

import typer
from rich.console import Console
from rich.table import Table

from .config import configure_logging
from .errors import BlockOpInfError
from .flutter import FUN3D_PARAMETER_NAMES, compute_flow_condition, conditions_table, table1_conditions
from .pipeline import STAGES, Run, run_pipeline

logger = logging.getLogger(__name__)

app = typer.Typer(
    help="Block-structured Operator Inference for coupled fluid-structure ROMs.",
    no_args_is_help=True,
    add_completion=False,
)
console = Console()


class Options(NamedTuple):
    config: Path
    out_dir: Optional[Path]
    seed: Optional[int]
    stages: Optional[str]


@app.callback()
def main(
    ctx: typer.Context,
    config: Path = typer.Option(Path("configs/default.ini"), "--config", "-c", help="Pipeline config file"),
    out_dir: Optional[Path] = typer.Option(None, "--out-dir", "-o", help="Overrides [run] out_dir"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Overrides [run] seed (timing inputs) and [fom] seed (random prediction cases)"),
    stages: Optional[str] = typer.Option(None, "--stages", help=f"Comma-separated subset of {','.join(STAGES)},compare"),
    log_level: Optional[str] = typer.Option(None, "--log-level", help="Overrides BLOCKOPINF_LOG_LEVEL"),
):
    configure_logging(log_level)
    ctx.obj = Options(config, out_dir, seed, stages)


def _execute(ctx: typer.Context, stages: Union[str, List[str], None]) -> Run:
    """Run stages, mapping library errors onto the process exit code."""
    opts: Options = ctx.obj
    try:
        return run_pipeline(opts.config, stages, opts.out_dir, opts.seed)
    except BlockOpInfError as e:
        logger.error(e.message)
        raise typer.Exit(code=e.exit_code)


@app.command()
def run(ctx: typer.Context):
    """Run the --stages subset (default: every stage except compare)."""
    done = _execute(ctx, ctx.obj.stages)
    console.print(f"[green]done[/green]: {len(done.manifest)} artifacts in {done.out}")


@app.command()
def simulate(ctx: typer.Context):
    """Integrate the synthetic full-order model."""
    _execute(ctx, ["simulate"])


@app.command()
def preprocess(ctx: typer.Context):
    """Fit and apply the shift/scale transform to the training window."""
    _execute(ctx, ["preprocess"])


@app.command()
def pod(ctx: typer.Context):
    """Compute the structural and fluid bases."""
    _execute(ctx, ["pod"])


@app.command()
def search(ctx: typer.Context):
    """Grid-search the regularization weights."""
    _execute(ctx, ["search"])


@app.command()
def train(ctx: typer.Context):
    """Infer reduced operators."""
    _execute(ctx, ["train"])


@app.command()
def predict(ctx: typer.Context):
    """Integrate the trained ROMs over the prediction horizon."""
    _execute(ctx, ["predict"])


@app.command()
def evaluate(ctx: typer.Context):
    """Relative errors of the predicted quantities of interest."""
    _execute(ctx, ["evaluate"])


@app.command()
def compare(ctx: typer.Context):
    """Accuracy, operator counts and per-step timing of block vs monolithic ROMs."""
    _execute(ctx, ["compare"])


@app.command()
def count(ctx: typer.Context):
    """Operator entries learned by each method."""
    done = _execute(ctx, ["count"])
    table = Table(title=f"Operator entries (r_s = {done.cfg.count.r_s})")
    for header in ("r_f", "monolithic", "block"):
        table.add_column(header, justify="right")
    with (done.out / "count" / "parameters.csv").open() as fh:
        next(fh)
        for line in fh:
            _, r_f, mono, block = line.strip().split(",")
            table.add_row(r_f, mono, block)
    console.print(table)


@app.command()
def flutter(ctx: typer.Context):
    """Flow-solver inputs for the tabulated flow conditions."""
    done = _execute(ctx, ["flutter"])
    consts = done.cfg.flutter
    conditions = [compute_flow_condition(row.mach, row.q_inf, row.rho, consts) for row in table1_conditions()]
    console.print(conditions_table(conditions))
    names = Table(title="Flow-solver parameter names")
    names.add_column("variable")
    names.add_column("parameter")
    for variable, name in FUN3D_PARAMETER_NAMES.items():
        names.add_row(variable, name)
    console.print(names)


if __name__ == "__main__":
    app()
