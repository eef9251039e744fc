"""Regularization hyperparameter search.

A coarse logarithmic product grid over the three regularization weights is
evaluated first; a second linear grid spanning a decade either side of the
incumbent refines it. Every candidate is trained, integrated over the
training window, checked for bounded growth and scored against the training
truth.
"""

import csv
import itertools
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import orjson
from pydantic import BaseModel

from .config import settings
from .errors import DegenerateError, NoFeasiblePointError, NumericError, ShapeError
from .models import GridAxis, GridSpec, weights_from_triple
from .opinf import BLOCK, MonolithicForm, StructureMask, infer
from .rom import QoiFunctional, bounded_growth_check, integrate_rom, relative_rmse
from .snapshots import format_float

logger = logging.getLogger(__name__)

Triple = Tuple[float, float, float]

AXIS_NAMES = {
    "block": ("gamma_s_linear", "gamma_f_linear", "gamma_f_quadratic"),
    "monolithic": ("gamma_constant", "gamma_linear", "gamma_quadratic"),
}


@dataclass(frozen=True, eq=False)
class TrainingBundle:
    """Everything one candidate evaluation needs.

    `Q_hat` holds the reduced training states; `Qdot_hat` the derivatives of
    columns `deriv_start`..`deriv_stop`-1. `truth` maps each tracked QoI to
    its training-window series (length Q_hat.shape[1]).
    """

    method: str
    Q_hat: np.ndarray
    Qdot_hat: np.ndarray
    deriv_start: int
    deriv_stop: int
    r_s: int
    r_f: int
    dt: float
    mask: StructureMask = field(default_factory=StructureMask.agard)
    form: MonolithicForm = MonolithicForm()
    truth: Dict[str, np.ndarray] = field(default_factory=dict)
    functionals: Dict[str, QoiFunctional] = field(default_factory=dict)

    def __post_init__(self):
        if self.Q_hat.shape[0] != self.r_s + self.r_f:
            raise ShapeError(f"reduced states have {self.Q_hat.shape[0]} rows, expected {self.r_s + self.r_f}")
        if self.Qdot_hat.shape != (self.Q_hat.shape[0], self.deriv_stop - self.deriv_start):
            raise ShapeError("derivatives do not match their column range")
        for name, series in self.truth.items():
            if np.shape(series) != (self.k,):
                raise ShapeError(f"truth series '{name}' needs {self.k} values")

    @property
    def k(self) -> int:
        return self.Q_hat.shape[1]

    @property
    def q0(self) -> np.ndarray:
        return self.Q_hat[:, 0]

    def train(self, triple: Triple):
        weights = weights_from_triple(self.method, triple)
        return infer(
            self.method,
            self.Q_hat[:, self.deriv_start:self.deriv_stop],
            self.Qdot_hat,
            self.r_s,
            self.r_f,
            mask=self.mask,
            weights=weights,
            form=self.form,
        )


@dataclass(frozen=True)
class Evaluation:
    stage: int
    triple: Triple
    objective: float = np.inf
    feasible: bool = False
    blowup_step: Optional[int] = None
    skipped: bool = False


@dataclass(frozen=True, eq=False)
class SearchResult:
    method: str
    best: Triple
    objective: float
    alpha: float
    log: List[Evaluation]

    @property
    def weights(self) -> BaseModel:
        return weights_from_triple(self.method, self.best)

    def incumbent(self, stage: int) -> Evaluation:
        return _select([e for e in self.log if e.stage == stage])


def axis_values(axis: GridAxis) -> np.ndarray:
    if axis.values is not None:
        return np.unique(np.asarray(axis.values, dtype=float))
    if axis.count == 1:
        return np.array([axis.lo])
    if axis.spacing == "log":
        return np.geomspace(axis.lo, axis.hi, axis.count)
    return np.linspace(axis.lo, axis.hi, axis.count)


def refine_values(incumbent: float, coarse: np.ndarray, decades: float, count: int) -> np.ndarray:
    """Linear grid within ±`decades` of the incumbent, clamped to the coarse range.

    The incumbent itself is always on the grid; an incumbent of 0 is not refined.
    """
    if incumbent == 0 or count == 1:
        return np.array([incumbent])
    positive = coarse[coarse > 0]
    lo = max(incumbent / 10**decades, positive.min() if positive.size else 0.0)
    hi = min(incumbent * 10**decades, coarse.max())
    values = np.linspace(lo, hi, count) if hi > lo else np.array([incumbent])
    return np.unique(np.append(values, incumbent))


def evaluate_candidate(bundle: TrainingBundle, triple: Triple, alpha: float, objective: str = "qoi",
                       qois: Sequence[str] = (), stage: int = 1) -> Evaluation:
    """Train, integrate over the training window, check growth and score one weight triple."""
    try:
        result = bundle.train(triple)
    except NumericError as e:
        logger.warning(f"candidate {triple} failed to train: {e.message}")
        return Evaluation(stage, triple)
    traj = integrate_rom(result.operators, bundle.q0, bundle.dt, bundle.k)
    if traj.blew_up:
        return Evaluation(stage, triple, blowup_step=traj.blowup_step)
    names = [name for name in qois if name in bundle.functionals]
    if objective != "state" and not names:
        raise ShapeError("none of the tracked QoIs has a functional in the training bundle")
    try:
        check = bounded_growth_check(bundle.Q_hat, traj, alpha)
        if objective == "state":
            spread = bundle.Q_hat.max() - bundle.Q_hat.min()
            if spread == 0:
                raise DegenerateError("training states are constant")
            value = float(np.sqrt(np.mean((traj.states - bundle.Q_hat) ** 2)) / spread)
        else:
            value = float(np.mean([
                relative_rmse(bundle.truth[name], bundle.functionals[name](traj.states)) for name in names
            ]))
    except DegenerateError as e:
        logger.warning(f"candidate {triple} cannot be scored: {e.message}")
        return Evaluation(stage, triple)
    if not np.isfinite(value):
        return Evaluation(stage, triple)
    return Evaluation(stage, triple, value, check.passed)


def scored_qois(bundle: TrainingBundle, spec: GridSpec) -> List[str]:
    """Tracked QoIs that can be scored; a constant truth series is dropped with a warning."""
    names = []
    for name in spec.qois:
        if name not in bundle.functionals or name not in bundle.truth:
            continue
        if np.ptp(bundle.truth[name]) == 0:
            logger.warning(f"QoI '{name}' is constant over the training window; left out of the objective")
            continue
        names.append(name)
    if spec.objective == "qoi" and not names:
        raise DegenerateError("no tracked QoI varies over the training window")
    return names


def _select(log: Sequence[Evaluation]) -> Optional[Evaluation]:
    feasible = [e for e in log if e.feasible]
    if not feasible:
        return None
    return min(feasible, key=lambda e: (e.objective, e.triple))


def _run_stage(bundle: TrainingBundle, grids: Sequence[np.ndarray], spec: GridSpec, qois: Sequence[str],
               stage: int, deadline: Optional[float], workers: int) -> List[Evaluation]:
    candidates = [tuple(float(v) for v in c) for c in itertools.product(*grids)]

    def evaluate(triple):
        if deadline is not None and time.monotonic() > deadline:
            return Evaluation(stage, triple, skipped=True)
        return evaluate_candidate(bundle, triple, spec.alpha, spec.objective, qois, stage)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        log = list(pool.map(evaluate, candidates))
    skipped = sum(e.skipped for e in log)
    if skipped:
        logger.warning(f"stage {stage}: time budget exhausted, {skipped} candidates skipped")
    return log


def grid_search(bundle: TrainingBundle, spec: GridSpec, workers: Optional[int] = None) -> SearchResult:
    """Two-stage grid search; the log is ordered by stage then grid index."""
    workers = workers or settings.WORKERS
    deadline = time.monotonic() + spec.time_budget if spec.time_budget else None
    coarse = [axis_values(axis) for axis in spec.axes]
    qois = scored_qois(bundle, spec)
    log = _run_stage(bundle, coarse, spec, qois, 1, deadline, workers)
    best = _select(log)
    if best is None:
        raise NoFeasiblePointError(f"no feasible regularization among {len(log)} candidates", log)
    logger.info(f"{bundle.method} stage 1 incumbent {best.triple} objective {best.objective:.6g}")

    if spec.stages == 2:
        fine = [
            refine_values(value, values, spec.refine_decades, spec.refine_count or axis.count)
            for value, values, axis in zip(best.triple, coarse, spec.axes)
        ]
        log += _run_stage(bundle, fine, spec, qois, 2, deadline, workers)
        best = _select(log)
        logger.info(f"{bundle.method} stage 2 incumbent {best.triple} objective {best.objective:.6g}")
    return SearchResult(bundle.method, best.triple, best.objective, spec.alpha, log)


def alpha_sweep(bundle: TrainingBundle, spec: GridSpec, alphas: Sequence[float],
                workers: Optional[int] = None) -> Dict[float, Optional[SearchResult]]:
    """Run the search once per α; an α with no feasible candidate maps to None."""
    results = {}
    for alpha in alphas:
        try:
            results[float(alpha)] = grid_search(bundle, spec.model_copy(update={"alpha": alpha}), workers)
        except NoFeasiblePointError:
            logger.warning(f"alpha={alpha}: no feasible candidate")
            results[float(alpha)] = None
    return results


def search_log_to_csv(result_or_log, path, method: str = BLOCK) -> Path:
    if isinstance(result_or_log, SearchResult):
        method, log = result_or_log.method, result_or_log.log
    else:
        log = result_or_log
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["stage", *AXIS_NAMES[method], "objective", "feasible", "blow_up_step", "skipped"])
        for e in log:
            writer.writerow([
                e.stage,
                *(format_float(v) for v in e.triple),
                format_float(e.objective),
                int(e.feasible),
                "" if e.blowup_step is None else e.blowup_step,
                int(e.skipped),
            ])
    return path


def write_search_result(result: SearchResult, path) -> Path:
    path = Path(path)
    payload = {
        "method": result.method,
        "weights": list(result.best),
        "objective": result.objective,
        "alpha": result.alpha,
        "evaluations": len(result.log),
    }
    path.write_bytes(orjson.dumps(payload, option=orjson.OPT_SORT_KEYS | orjson.OPT_INDENT_2))
    return path


def read_search_weights(path) -> Tuple[str, Triple]:
    payload = orjson.loads(Path(path).read_bytes())
    return payload["method"], tuple(float(v) for v in payload["weights"])
