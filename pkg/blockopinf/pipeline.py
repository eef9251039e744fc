"""Pipeline stages behind the command-line interface.

Each stage reads the artifacts of earlier stages from the output directory
and writes its own, recording every file with its sha256 in manifest.json.
"""

import csv
import hashlib
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import orjson

from .config import settings
from .errors import BlowUpError, ConfigError, MissingInputError, NoFeasiblePointError, NumericError
from .flutter import compute_flow_condition, conditions_to_csv, final_time, parameter_names_to_csv, table1_conditions
from .fomsim import (
    FLUID_GROUPS,
    STRUCTURAL_GROUPS,
    CoupledFom,
    build_synthetic_fom,
    fd_time_derivative,
    fom_qoi,
    initial_state,
    integrate_fom,
    random_initial_states,
    single_mode_cases,
)
from .models import PipelineConfig, RegWeights, load_config, weights_from_triple
from .opinf import BLOCK, StructureMask, count_parameters, infer, read_operators, write_operators
from .pod import CoupledBasis, ReducedBasis, compute_pod, read_basis, select_rank, spectrum_to_csv, write_basis
from .regsearch import (
    TrainingBundle,
    alpha_sweep,
    grid_search,
    read_search_weights,
    search_log_to_csv,
    write_search_result,
)
from .rom import (
    error_table_to_csv,
    extract_qoi,
    integrate_rom,
    qoi_functional,
    qoi_series_to_csv,
    reconstruct_slices,
    relative_rmse,
    time_rhs,
    RomTrajectory,
)
from .snapshots import (
    Preprocessor,
    SnapshotSet,
    fit_shift_scale,
    format_float,
    read_sections,
    read_snapshots,
    write_sections,
    write_snapshots,
)

logger = logging.getLogger(__name__)

STAGES = ("simulate", "preprocess", "pod", "search", "train", "predict", "evaluate", "count", "flutter")
ALL_STAGES = STAGES + ("compare",)
TRAINING_CASE = "train"


class Run:
    """Output directory of one pipeline run and its artifact manifest."""

    def __init__(self, cfg: PipelineConfig, out_dir: Path):
        self.cfg = cfg
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.manifest_path = self.out / "manifest.json"
        self.manifest: Dict[str, Dict] = {}
        if self.manifest_path.exists():
            self.manifest = orjson.loads(self.manifest_path.read_bytes())
        self._fom: Optional[CoupledFom] = None

    @property
    def fom(self) -> CoupledFom:
        if self._fom is None:
            self._fom = build_synthetic_fom(self.cfg.fom)
        return self._fom

    def path(self, stage: str, name: str) -> Path:
        folder = self.out / stage
        folder.mkdir(exist_ok=True)
        return folder / name

    def require(self, stage: str, name: str) -> Path:
        path = self.out / stage / name
        if not path.exists():
            raise MissingInputError(f"missing input {path}; run the '{stage}' stage first")
        return path

    def record(self, path: Path, stage: str, volatile: bool = False) -> Path:
        digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()
        entry = {"sha256": digest, "stage": stage}
        if volatile:
            entry["volatile"] = True
        self.manifest[Path(path).relative_to(self.out).as_posix()] = entry
        return path

    def write_manifest(self) -> Path:
        self.manifest_path.write_bytes(orjson.dumps(self.manifest, option=orjson.OPT_SORT_KEYS | orjson.OPT_INDENT_2))
        return self.manifest_path


# Shared loading ==============================================================

def _training_initial_state(run: Run) -> np.ndarray:
    fom, cfg = run.fom, run.cfg
    gvel = cfg.predict.gvel if cfg.predict.gvel is not None else cfg.fom.gvel_perturbation
    gdisp = cfg.predict.gdisp if cfg.predict.gdisp is not None else 0.0
    try:
        return initial_state(fom, gvel=gvel, gdisp=gdisp)
    except ValueError:
        raise ConfigError(f"initial perturbations need 1 or {fom.m} values")


def _qoi_names(fom: CoupledFom) -> List[str]:
    return ["lift"] + [f"gdisp_{i}" for i in range(1, fom.m + 1)] + [f"gvel_{i}" for i in range(1, fom.m + 1)]


def _load_preprocessor(run: Run) -> Preprocessor:
    return Preprocessor.from_json(run.require("preprocess", "preprocessor.json").read_bytes())


def _load_basis(run: Run) -> CoupledBasis:
    return CoupledBasis(
        read_basis(run.require("pod", "structural.bin")),
        read_basis(run.require("pod", "fluid.bin")),
    )


def _reduced_training(run: Run, basis: CoupledBasis) -> np.ndarray:
    return basis.project(read_snapshots(run.require("preprocess", "training.bin")).data)


def _derivatives(run: Run, basis: CoupledBasis, P: Preprocessor, Q_hat: np.ndarray):
    cfg = run.cfg
    if cfg.train.derivatives == "fd":
        d = fd_time_derivative(Q_hat, cfg.fom.dt)
        return d.values, d.start, d.stop
    # Exact FOM right-hand side, mapped into preprocessed coordinates (x̃' = x' / scale)
    physical = read_snapshots(run.require("simulate", "training.bin")).columns(0, cfg.train.k_train)
    scale, _ = P.row_affine()
    F = run.fom.rhs(physical.data) / scale[:, None]
    return basis.project(F), 0, Q_hat.shape[1]


def training_bundle(run: Run, method: str) -> TrainingBundle:
    cfg = run.cfg
    P = _load_preprocessor(run)
    basis = _load_basis(run)
    Q_hat = _reduced_training(run, basis)
    Qdot, start, stop = _derivatives(run, basis, P, Q_hat)
    physical = read_snapshots(run.require("simulate", "training.bin")).columns(0, cfg.train.k_train)
    names = sorted(set(cfg.regsearch.qois) | set(cfg.evaluate.qois))
    try:
        functionals = {name: qoi_functional(name, run.fom, basis, P) for name in names}
    except KeyError as e:
        raise ConfigError(str(e.args[0]))
    return TrainingBundle(
        method=method,
        Q_hat=Q_hat,
        Qdot_hat=Qdot,
        deriv_start=start,
        deriv_stop=stop,
        r_s=basis.r_s,
        r_f=basis.r_f,
        dt=cfg.fom.dt,
        mask=StructureMask.preset(cfg.train.mask),
        truth={name: fom_qoi(run.fom, physical, name) for name in names},
        functionals=functionals,
    )


def _extra_cases(run: Run) -> Dict[str, np.ndarray]:
    """Initial states of the prediction cases beyond the training trajectory."""
    cfg, fom = run.cfg, run.fom
    cases = {}
    if cfg.predict.single_mode_cases:
        cases.update(single_mode_cases(fom, cfg.fom.gvel_perturbation))
    if cfg.predict.random_cases:
        # drawn from [fom] seed; --seed sets it together with [run] seed
        states = random_initial_states(fom, cfg.predict.random_cases, cfg.fom.seed, cfg.predict.random_amplitude)
        cases.update({f"random{j + 1}": states[:, j] for j in range(states.shape[1])})
    return cases


def _case_files(run: Run) -> Dict[str, str]:
    cases = {TRAINING_CASE: "training.bin"}
    cases.update({name: f"case_{name}.bin" for name in _extra_cases(run)})
    return cases


# Stages ======================================================================

def stage_simulate(run: Run):
    cfg, fom = run.cfg, run.fom
    S = integrate_fom(fom, _training_initial_state(run), cfg.fom.dt, cfg.fom.steps)
    run.record(write_snapshots(S, run.path("simulate", "training.bin")), "simulate")

    names = _qoi_names(fom)
    with run.path("simulate", "qoi.csv").open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["time"] + names)
        series = [fom_qoi(fom, S, name) for name in names]
        for t in range(S.k):
            writer.writerow([format_float(S.times[t])] + [format_float(s[t]) for s in series])
    run.record(run.path("simulate", "qoi.csv"), "simulate")

    for name, q0 in _extra_cases(run).items():
        case = integrate_fom(fom, q0, cfg.fom.dt, cfg.fom.steps)
        run.record(write_snapshots(case, run.path("simulate", f"case_{name}.bin")), "simulate")
    logger.info(f"simulated {S.k} snapshots of a {S.n}-dimensional FOM")


def stage_preprocess(run: Run):
    cfg = run.cfg
    S = read_snapshots(run.require("simulate", "training.bin"))
    train = S.columns(0, cfg.train.k_train)
    if cfg.preprocess.enabled:
        unknown = set(cfg.preprocess.groups) - set(S.layout.names)
        if unknown:
            raise ConfigError(f"unknown preprocessing groups {sorted(unknown)}; layout has {S.layout.names}")
        P = fit_shift_scale(
            train,
            groups=cfg.preprocess.groups,
            shift_mode=cfg.preprocess.shift_mode,
            scale=cfg.preprocess.scale,
            allow_constant=cfg.preprocess.allow_constant,
        )
    else:
        P = Preprocessor(S.layout, {})
    path = run.path("preprocess", "preprocessor.json")
    path.write_bytes(P.to_json())
    run.record(path, "preprocess")
    run.record(write_snapshots(P.apply(train), run.path("preprocess", "training.bin")), "preprocess")


def _rank(requested: Optional[int], sigma, energy: float, available: int, label: str) -> int:
    r = requested if requested is not None else select_rank(sigma, energy)
    if r > available:
        raise ConfigError(f"{label} rank {r} exceeds the available snapshot rank {available}")
    return r


def stage_pod(run: Run):
    cfg = run.cfg
    T = read_snapshots(run.require("preprocess", "training.bin"))
    structural = T.select_groups(STRUCTURAL_GROUPS)
    fluid = T.select_groups(FLUID_GROUPS)

    if cfg.pod.structural_basis == "identity":
        if cfg.pod.r_s is not None and cfg.pod.r_s != structural.n:
            raise ConfigError(f"identity structural basis has r_s = {structural.n}, got r_s = {cfg.pod.r_s}")
        V_s = ReducedBasis.identity(structural.n)
    else:
        full = compute_pod(structural, cfg.pod.method)
        V_s = full.truncate(_rank(cfg.pod.r_s, full.singular_values, cfg.pod.energy_s, full.r, "structural"))
        run.record(spectrum_to_csv(full.singular_values, run.path("pod", "spectrum_structural.csv")), "pod")

    full = compute_pod(fluid, cfg.pod.method)
    V_f = full.truncate(_rank(cfg.pod.r_f, full.singular_values, cfg.pod.energy_f, full.r, "fluid"))
    run.record(spectrum_to_csv(full.singular_values, run.path("pod", "spectrum_fluid.csv")), "pod")
    run.record(write_basis(V_s, run.path("pod", "structural.bin")), "pod")
    run.record(write_basis(V_f, run.path("pod", "fluid.bin")), "pod")
    logger.info(f"reduced dimensions r_s={V_s.r}, r_f={V_f.r}")


def stage_search(run: Run):
    cfg = run.cfg
    spec = cfg.regsearch.grid_spec()
    for method in cfg.train.methods:
        bundle = training_bundle(run, method)
        try:
            result = grid_search(bundle, spec)
        except NoFeasiblePointError as e:
            if e.log:
                search_log_to_csv(e.log, run.path("search", f"{method}_log.csv"), method)
            raise
        run.record(search_log_to_csv(result, run.path("search", f"{method}_log.csv")), "search")
        run.record(write_search_result(result, run.path("search", f"{method}.json")), "search")
        if cfg.regsearch.alpha_sweep:
            sweep = alpha_sweep(bundle, spec, cfg.regsearch.alpha_sweep)
            path = run.path("search", f"{method}_alpha_sweep.csv")
            with path.open("w", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(["alpha", "gamma_1", "gamma_2", "gamma_3", "objective"])
                for alpha, res in sweep.items():
                    if res is None:
                        writer.writerow([format_float(alpha), "", "", "", ""])
                    else:
                        writer.writerow([format_float(alpha), *map(format_float, res.best), format_float(res.objective)])
            run.record(path, "search")


def _train_weights(run: Run, method: str):
    cfg = run.cfg
    if cfg.train.weights_from == "config":
        return cfg.train.weights(method)
    _, triple = read_search_weights(run.require("search", f"{method}.json"))
    weights = weights_from_triple(method, triple)
    if method == BLOCK:
        weights = RegWeights(**{**weights.model_dump(), "s_quadratic": cfg.train.s_quadratic})
    return weights


def stage_train(run: Run):
    for method in run.cfg.train.methods:
        bundle = training_bundle(run, method)
        weights = _train_weights(run, method)
        result = infer(
            method,
            bundle.Q_hat[:, bundle.deriv_start:bundle.deriv_stop],
            bundle.Qdot_hat,
            bundle.r_s,
            bundle.r_f,
            mask=bundle.mask,
            weights=weights,
        )
        if result.rank_deficient and settings.STRICT:
            raise NumericError(f"{method} least-squares problem is rank deficient")
        run.record(write_operators(result.operators, run.path("train", f"{method}.ops")), "train")
        summary = {
            "method": method,
            "weights": weights.model_dump(),
            "parameters": result.operators.parameter_count(),
            "rank_deficient": result.rank_deficient,
        }
        path = run.path("train", f"{method}.json")
        path.write_bytes(orjson.dumps(summary, option=orjson.OPT_SORT_KEYS | orjson.OPT_INDENT_2))
        run.record(path, "train")
        logger.info(f"trained {method} ROM with {summary['parameters']} operator entries")


def _case_initial_states(run: Run) -> Dict[str, np.ndarray]:
    states = {TRAINING_CASE: _training_initial_state(run)}
    states.update(_extra_cases(run))
    return states


def stage_predict(run: Run):
    cfg = run.cfg
    P = _load_preprocessor(run)
    basis = _load_basis(run)
    for method in cfg.train.methods:
        ops = read_operators(run.require("train", f"{method}.ops"))
        functionals = [qoi_functional(name, run.fom, basis, P) for name in _qoi_names(run.fom)]
        for case, x0 in _case_initial_states(run).items():
            x0_set = SnapshotSet(x0[:, None], cfg.fom.dt, run.fom.layout)
            q0 = basis.project(P.apply(x0_set).data)[:, 0]
            traj = integrate_rom(ops, q0, cfg.fom.dt, cfg.predict.horizon)
            write_sections({"states": traj.states}, run.path("predict", f"{method}_{case}.bin"))
            run.record(run.path("predict", f"{method}_{case}.bin"), "predict")
            series = [extract_qoi(traj, f) for f in functionals]
            run.record(qoi_series_to_csv(series, run.path("predict", f"{method}_{case}_qoi.csv")), "predict")
            if cfg.predict.export_slices:
                path = reconstruct_slices(traj, basis, P, cfg.train.k_train, run.path("predict", f"{method}_{case}_slices.csv"))
                run.record(path, "predict")
            if traj.blew_up:
                raise BlowUpError(f"{method} ROM blew up predicting case '{case}'", traj.blowup_step)


def evaluate_errors(run: Run) -> List[Dict]:
    cfg = run.cfg
    P = _load_preprocessor(run)
    basis = _load_basis(run)
    start = cfg.evaluate.window_start if cfg.evaluate.window_start is not None else cfg.train.k_train
    stop = cfg.evaluate.window_stop if cfg.evaluate.window_stop is not None else cfg.predict.horizon
    if not start < stop <= cfg.predict.horizon:
        raise ConfigError(f"evaluation window [{start}, {stop}) outside the prediction horizon {cfg.predict.horizon}")
    rows = []
    for case, filename in _case_files(run).items():
        truth = read_snapshots(run.require("simulate", filename)).columns(0, cfg.predict.horizon)
        for method in cfg.train.methods:
            states = read_sections(run.require("predict", f"{method}_{case}.bin"))["states"]
            traj = RomTrajectory(states, cfg.fom.dt, 0.0, basis.r_s, basis.r_f)
            for name in cfg.evaluate.qois:
                rom = extract_qoi(traj, qoi_functional(name, run.fom, basis, P))
                fom = fom_qoi(run.fom, truth, name)
                rows.append({
                    "case": case,
                    "r_f": basis.r_f,
                    "method": method,
                    "qoi": name,
                    "eps_rel": relative_rmse(fom, rom.values, (start, stop)),
                })
    return rows


def stage_evaluate(run: Run):
    rows = evaluate_errors(run)
    run.record(error_table_to_csv(rows, run.path("evaluate", "errors.csv")), "evaluate")
    for row in rows:
        logger.info(f"{row['case']:>8} {row['method']:>10} {row['qoi']:>8}  eps_rel={row['eps_rel']:.4e}")


def stage_count(run: Run):
    cfg = run.cfg
    mask = StructureMask.preset(cfg.train.mask)
    path = run.path("count", "parameters.csv")
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["r_s", "r_f", "monolithic", "block"])
        for r_f in range(1, cfg.count.r_f_max + 1):
            writer.writerow([
                cfg.count.r_s,
                r_f,
                count_parameters("monolithic", cfg.count.r_s, r_f),
                count_parameters("block", cfg.count.r_s, r_f, mask),
            ])
    run.record(path, "count")


def stage_flutter(run: Run):
    consts = run.cfg.flutter
    conditions = [compute_flow_condition(row.mach, row.q_inf, row.rho, consts) for row in table1_conditions()]
    run.record(conditions_to_csv(conditions, run.path("flutter", "conditions.csv")), "flutter")
    run.record(parameter_names_to_csv(run.path("flutter", "parameter_names.csv")), "flutter")
    logger.info(f"final time for {run.cfg.fom.steps} steps: {final_time(consts, run.cfg.fom.steps):.5g} s")
    return conditions


def cmd_compare(run: Run):
    """Accuracy, operator counts and per-step timing of every trained method."""
    cfg = run.cfg
    if len(cfg.train.methods) < 2:
        logger.warning("only one method configured; nothing to compare against")
    errors = [row for row in evaluate_errors(run) if row["case"] == TRAINING_CASE]
    ops = {method: read_operators(run.require("train", f"{method}.ops")) for method in cfg.train.methods}

    path = run.path("compare", "compare.csv")
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["qoi", "method", "eps_rel", "parameters"])
        for name in cfg.evaluate.qois:
            for method in cfg.train.methods:
                (row,) = [r for r in errors if r["qoi"] == name and r["method"] == method]
                writer.writerow([name, method, format_float(row["eps_rel"]), ops[method].parameter_count()])
    run.record(path, "compare")

    path = run.path("compare", "timing.csv")
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["method", "r_s", "r_f", "median", "p25", "p75"])
        for method, op in ops.items():
            stats = time_rhs(op, cfg.compare.repetitions, cfg.compare.evaluations, cfg.run.seed)
            writer.writerow([method, op.r_s, op.r_f, *map(format_float, stats)])
            logger.info(f"{method} RHS median {stats.median * 1e6:.2f} us")
    run.record(path, "compare", volatile=True)


HANDLERS = {
    "simulate": stage_simulate,
    "preprocess": stage_preprocess,
    "pod": stage_pod,
    "search": stage_search,
    "train": stage_train,
    "predict": stage_predict,
    "evaluate": stage_evaluate,
    "count": stage_count,
    "flutter": stage_flutter,
    "compare": cmd_compare,
}


def resolve_config(config_path, out_dir=None, seed: Optional[int] = None) -> PipelineConfig:
    cfg = load_config(config_path)
    update = {}
    if out_dir is not None:
        update["out_dir"] = str(out_dir)
    if seed is not None:
        update["seed"] = seed
        cfg = cfg.model_copy(update={"fom": cfg.fom.model_copy(update={"seed": seed})})
    if update:
        cfg = cfg.model_copy(update={"run": cfg.run.model_copy(update=update)})
    return cfg


def parse_stages(stages: Optional[Sequence[str]]) -> List[str]:
    if not stages:
        return list(STAGES)
    if isinstance(stages, str):
        stages = [s.strip() for s in stages.split(",") if s.strip()]
    unknown = set(stages) - set(ALL_STAGES)
    if unknown:
        raise ConfigError(f"unknown stages {sorted(unknown)}; choose from {', '.join(ALL_STAGES)}")
    return [s for s in ALL_STAGES if s in stages]


def run_pipeline(config_path, stages: Optional[Sequence[str]] = None, out_dir=None,
                 seed: Optional[int] = None) -> Run:
    """Run the requested stages in dependency order; the returned run carries the manifest."""
    cfg = resolve_config(config_path, out_dir, seed)
    run = Run(cfg, Path(cfg.run.out_dir))
    try:
        for stage in parse_stages(stages):
            logger.info(f"stage {stage}")
            HANDLERS[stage](run)
    finally:
        run.write_manifest()
    return run
