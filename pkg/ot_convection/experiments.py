"""
Subcommand pipelines. A pipeline takes a validated ExperimentConfig and an Artifacts directory, writes diagnostics
and snapshots there and returns its in-run checks; execute() adds timing, status and the run manifest.

=====
Artifacts
=====
manifest.json        resolved config echo, artifact digests, checks, status, wall time, version and seed
*_diag.csv           one row per step (columns documented in each solver module)
y_00010.dat          grid dumps of y every `stride` steps, plus y_final.dat
cloud_00010.dat      cloud dumps (atoms, values, sigma) every `stride` steps
B_00010.dat          cross-Burgers profiles over s every `stride` steps
eps_<i>/             one gnsb run per eps of a sweep, each with its own manifest; rate.csv and rate.json alongside
"""

import json
import logging
import math
import os
import shutil
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import django
import numpy as np
from django.conf import settings
from django.db import OperationalError

from ot_convection import __version__
from ot_convection.aht import JKOState, aht_run, jko_aht_step, jko_objective
from ot_convection.crossburgers import SpecialSolutionState, cb_run, lambda_energy_drift, s_nodes
from ot_convection.dumps import (
    DiagnosticSeries, file_digest, read_cloud_dump, read_grid_dump, write_cloud_dump, write_field_dump,
    write_grid_dump
)
from ot_convection.errors import InvariantCheck, ShapeMismatchError, SolverError
from ot_convection.forcing import ForcingSpec
from ot_convection.forms import ExperimentConfig
from ot_convection.ghb import GhbForcing, continuity_residual, cr_run, weak_ma_certificate
from ot_convection.gnsb import energy_tolerance, eps_error, gnsb_run, hf_reference, rate_report
from ot_convection.grid import BoxGrid, Grid, TorusGrid, VectorField
from ot_convection.models import RunRecord
from ot_convection.presets import aht_initial, box_atoms, cloud_values, gnsb_initial
from ot_convection.rearrange import LagrangianCloud, cyclical_monotonicity_check, rearrangement

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"

STATUS_OK = "ok"
STATUS_INVARIANT_FAILURE = "invariant_failure"
STATUS_SOLVER_ERROR = "solver_error"

EXIT_CODES = {STATUS_OK: 0, STATUS_INVARIANT_FAILURE: 1, STATUS_SOLVER_ERROR: 3}

Checks = Dict[str, InvariantCheck]


class Artifacts:
    """ The output directory of one run; remembers every file handed out. """

    def __init__(self, directory):
        self.directory = Path(directory)
        self.created = not self.directory.exists()
        self.directory.mkdir(parents=True, exist_ok=True)
        self.names: List[str] = []

    def path(self, name: str) -> Path:
        if name not in self.names:
            self.names.append(name)
        return self.directory / name

    def digests(self) -> Dict[str, str]:
        return {name: file_digest(self.directory / name) for name in sorted(self.names)}

    def discard(self):
        """ Removes what this run wrote: the whole directory if the run created it, else only its own files. """
        if self.created:
            shutil.rmtree(self.directory, ignore_errors=True)
            return
        for name in self.names:
            (self.directory / name).unlink(missing_ok=True)


@dataclass
class RunManifest:
    subcommand: str
    config: dict
    seed: int
    artifacts: Dict[str, str] = field(default_factory=dict)
    checks: Dict[str, dict] = field(default_factory=dict)
    status: str = STATUS_OK
    message: str = ""
    wall_time: float = 0.0
    version: str = __version__

    @property
    def exit_code(self) -> int:
        return EXIT_CODES[self.status]

    @property
    def failed_checks(self) -> List[str]:
        return sorted(name for name, check in self.checks.items() if not check["passed"])

    def serialize(self) -> dict:
        return asdict(self)

    def write(self, directory) -> Path:
        """ Temp file in the same directory, then os.replace, so readers never see a partial manifest. """
        directory = Path(directory)
        handle = tempfile.NamedTemporaryFile("w", dir=directory, prefix=".manifest-", suffix=".json", delete=False)
        try:
            with handle:
                json.dump(self.serialize(), handle, indent=2, sort_keys=True)
                handle.write("\n")
            os.replace(handle.name, directory / MANIFEST_NAME)
        except BaseException:
            Path(handle.name).unlink(missing_ok=True)
            raise
        return directory / MANIFEST_NAME

    @classmethod
    def read(cls, path) -> "RunManifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        return cls(**json.loads(path.read_text()))


def default_output_dir(config: ExperimentConfig) -> Path:
    if config["output"]:
        return Path(config["output"])
    return Path(settings.OT_CONVECTION["DEFAULT_OUTPUT_ROOT"]) / f"{config.subcommand}-{config['seed']}"


# ----- builders -----

def build_grid(config: ExperimentConfig) -> Grid:
    if config["domain"] == "box":
        return BoxGrid(n=config["n"], d=config["d"])
    return TorusGrid(d=config["d"], n=config["n"])


def build_forcing(config: ExperimentConfig) -> ForcingSpec:
    return ForcingSpec(
        kind=config["forcing"],
        d=config["d"],
        kappa=config["kappa"],
        density=config["density"],
        density_delta=config["density_delta"],
        friction=config["friction"],
        friction_delta=config["friction_delta"],
        carrier=config["carrier"],
        carrier_speed=config["carrier_speed"],
        clip_radius=config["clip_radius"],
        f_matrix=config["f_matrix"],
        f_offset=config["f_offset"],
        g_matrix=config["g_matrix"],
        g_offset=config["g_offset"],
    )


def build_gnsb_initial(config: ExperimentConfig, grid: Grid, spec: ForcingSpec) -> VectorField:
    return gnsb_initial(config["preset"], grid, spec.m, config["seed"], config["amplitude"])


def _snapshot_writer(artifacts: Artifacts, prefix: str) -> Callable:
    def on_snapshot(step: int, state):
        write_field_dump(artifacts.path(f"{prefix}_{step:05d}.dat"), state.y, state.t)

    return on_snapshot


def _flag(name: str, failed: bool) -> InvariantCheck:
    check = InvariantCheck(name, 0.0)
    check.record(1.0 if failed else 0.0)
    return check


# ----- pipelines -----

def run_rearrange(config: ExperimentConfig, artifacts: Artifacts) -> Checks:
    atoms = box_atoms(config["n"], config["d"])
    cloud = LagrangianCloud(atoms, cloud_values(config["preset"], atoms, config["seed"], config["amplitude"]))
    assignment = rearrangement(cloud, config["method"])
    rearranged = cloud.with_values(cloud.values[assignment.sigma])
    report = cyclical_monotonicity_check(
        rearranged, trials=config["trials"], cycle_len=config["cycle_len"], tol=config["tol"], seed=config["seed"]
    )
    write_cloud_dump(artifacts.path("cloud.dat"), cloud)
    write_cloud_dump(artifacts.path("rearranged.dat"), rearranged, sigma=assignment.sigma)
    with open(artifacts.path("assignment.json"), "w") as handle:
        json.dump({
            "method": assignment.method,
            "cost": float(assignment.cost),
            "epsilon": float(assignment.epsilon),
            "phases": int(assignment.phases),
            "rounds": int(assignment.rounds),
            "monotonicity": report.serialize(),
        }, handle, indent=2, sort_keys=True)

    monotonicity = InvariantCheck("monotonicity", config["tol"])
    monotonicity.record(report.worst)
    same_values = np.array_equal(np.sort(cloud.values, axis=0), np.sort(rearranged.values, axis=0))
    return {"monotonicity": monotonicity, "measure": _flag("measure", not same_values)}


def run_aht(config: ExperimentConfig, artifacts: Artifacts) -> Checks:
    grid = build_grid(config)
    y0 = aht_initial(config["preset"], grid, config["seed"], config["amplitude"])
    run = aht_run(
        y0, config["K"], config["T"], config["dt"], config["scheme"], stride=config["stride"],
        on_snapshot=_snapshot_writer(artifacts, "y"), balance_constant=config["balance_constant"],
        monotone_rtol=config["monotone_rtol"],
    )
    run.series.write_csv(artifacts.path("aht_diag.csv"))
    write_field_dump(artifacts.path("y_final.dat"), run.final.y, run.final.t)
    return run.checks


def run_jko(config: ExperimentConfig, artifacts: Artifacts) -> Checks:
    atoms = box_atoms(config["n"], config["d"])
    y0 = cloud_values(config["preset"], atoms, config["seed"], config["amplitude"])
    state = JKOState.start(atoms, y0, config["h"])
    series = DiagnosticSeries(("t", "objective", "energy"))
    series.append(t=0.0, objective=jko_objective(state, state.X), energy=state.energy())
    descent = InvariantCheck("descent", 0.0)
    stride = config["stride"]
    for step in range(1, config["steps"] + 1):
        before = jko_objective(state, state.X)
        new_state = jko_aht_step(state, config["method"])
        after = jko_objective(state, new_state.X)
        descent.record(after - before, step)
        state = new_state
        series.append(t=state.t, objective=after, energy=state.energy())
        if stride and (step % stride == 0 or step == config["steps"]):
            write_cloud_dump(
                artifacts.path(f"cloud_{step:05d}.dat"), LagrangianCloud(atoms, state.positions()), state.t, state.X
            )
    series.write_csv(artifacts.path("jko_diag.csv"))
    return {"descent": descent}


def run_gnsb(config: ExperimentConfig, artifacts: Artifacts, eps: Optional[float] = None) -> Checks:
    grid = build_grid(config)
    spec = build_forcing(config)
    y0 = build_gnsb_initial(config, grid, spec)
    eps = config["eps"] if eps is None else eps
    splitting = config["splitting"] if eps > 0.0 else "lie"
    run = gnsb_run(
        y0, spec, config["K"], eps, config["T"], config["dt"], splitting=splitting,
        mean_mode_damping=config["mean_mode_damping"], stride=config["stride"],
        on_snapshot=_snapshot_writer(artifacts, "y"), energy_constant=config["energy_constant"],
    )
    run.series.write_csv(artifacts.path("hf_diag.csv" if eps == 0.0 else "gnsb_diag.csv"))
    write_field_dump(artifacts.path("y_final.dat"), run.final.y, run.final.t)
    write_field_dump(artifacts.path("v_final.dat"), run.final.v, run.final.t)
    return run.checks


def run_hf(config: ExperimentConfig, artifacts: Artifacts) -> Checks:
    return run_gnsb(config, artifacts, eps=0.0)


def run_ghb(config: ExperimentConfig, artifacts: Artifacts) -> Checks:
    atoms = box_atoms(config["n"], config["d"])
    y0 = cloud_values(config["preset"], atoms, config["seed"], config["amplitude"])
    forcing = GhbForcing(kind=config["forcing"], d=config["d"], kappa=config["kappa"], anchor=config["anchor"])

    def on_snapshot(step: int, state):
        sigma = state.assignment.sigma if state.assignment is not None else None
        write_cloud_dump(artifacts.path(f"cloud_{step:05d}.dat"), state.cloud, state.t, sigma)

    run = cr_run(
        atoms, y0, forcing, config["T"], config["h"], config["method"], stride=config["stride"],
        on_snapshot=on_snapshot, monotonicity_trials=config["trials"],
    )
    run.series.write_csv(artifacts.path("cr_diag.csv"))
    write_cloud_dump(artifacts.path("cloud_final.dat"), run.trajectory[-1].cloud, run.trajectory[-1].t)

    continuity = continuity_residual(run.trajectory, bins=config["bins"])
    series = DiagnosticSeries(("t", "continuity_residual_max"))
    for index, residuals in enumerate(continuity, start=1):
        series.append(t=run.trajectory[index].t, continuity_residual_max=float(np.max(residuals)))
    series.write_csv(artifacts.path("cr_continuity.csv"))

    checks = dict(run.checks)
    if run.trajectory[-1].assignment is not None:
        certificate = weak_ma_certificate(run.trajectory[-1], trials=config["trials"])
        checks["ma_certificate"] = InvariantCheck("ma_certificate", certificate.tolerance)
        checks["ma_certificate"].record(certificate.identity_residual)
    return checks


def run_crossburgers(config: ExperimentConfig, artifacts: Artifacts) -> Checks:
    n_s = config["n_s"]
    family = SpecialSolutionState(alpha=config["alpha"], beta=config["beta"])
    nodes = s_nodes(n_s)[:, np.newaxis]

    def on_snapshot(step: int, state):
        write_grid_dump(artifacts.path(f"B_{step:05d}.dat"), "torus", n_s, state.t, nodes, state.B.T)

    run = cb_run(
        family.profile(n_s), config["T"], config["dt"], config["scheme"], cross=config["cross"],
        family=family if config["cross"] else None, stride=config["stride"], on_snapshot=on_snapshot,
        decay_tolerance=config["decay_tolerance"], family_tolerance=config["family_tolerance"],
    )
    run.series.write_csv(artifacts.path("cb_diag.csv"))
    checks = dict(run.checks)
    if run.family is not None:
        checks["ode_invariant"] = InvariantCheck("ode_invariant", config["invariant_tolerance"])
        checks["ode_invariant"].record(abs(run.family.invariant - family.invariant))
    if config["lambda_T"] > 0.0:
        # lambda = log(alpha), lambda' = -beta
        lam = math.log(config["alpha"])
        drift = lambda_energy_drift(lam, -config["beta"], config["lambda_T"], config["lambda_dt"])
        checks["lambda_energy"] = InvariantCheck("lambda_energy", config["lambda_tolerance"])
        checks["lambda_energy"].record(drift.shadow)
        with open(artifacts.path("lambda_drift.json"), "w") as handle:
            json.dump(asdict(drift), handle, indent=2, sort_keys=True)
    return checks


# ----- sweep -----

def _member_config(config: ExperimentConfig, eps: float, output: str) -> ExperimentConfig:
    values = {key: value for key, value in config.values.items() if key not in ("eps_list", "slope_min", "slope_max")}
    values.update(eps=eps, splitting="lie", output=output)
    return ExperimentConfig("gnsb", values)


def sweep_member(values: dict, eps: float, directory: str) -> Tuple[float, float, DiagnosticSeries, dict]:
    """
    One eps of a sweep, run in a worker process: rebuilds the forcing from plain config values, replays the
    zero-inertia reference and writes its own diagnostics and manifest.
    """
    started = time.monotonic()
    config = ExperimentConfig("sweep", values)
    artifacts = Artifacts(directory)
    grid = build_grid(config)
    spec = build_forcing(config)
    y0 = build_gnsb_initial(config, grid, spec)
    hf = hf_reference(y0, spec, config["K"], config["T"], config["dt"], config["mean_mode_damping"])
    y_error, v_error, series = eps_error(
        y0, spec, config["K"], eps, config["T"], config["dt"], hf, mean_mode_damping=config["mean_mode_damping"]
    )
    series.write_csv(artifacts.path("gnsb_diag.csv"))

    initial = series.column("total_energy")[0]
    energy = InvariantCheck("energy_inequality", energy_tolerance(grid, config["dt"], initial,
                                                                  config["energy_constant"]))
    excess = series.column("excess")
    energy.record(float(np.max(excess)), int(np.argmax(excess)))
    member = _member_config(config, eps, directory)
    manifest = RunManifest(
        subcommand="gnsb",
        config=member.serialize(),
        seed=config["seed"],
        artifacts=artifacts.digests(),
        checks={"energy_inequality": energy.serialize()},
        status=STATUS_OK if energy.passed else STATUS_INVARIANT_FAILURE,
        wall_time=time.monotonic() - started,
    )
    manifest.write(artifacts.directory)
    logger.info("Sweep member eps=%.1e done in %.1fs", eps, manifest.wall_time)
    return y_error, v_error, series, energy.serialize()


def run_sweep(config: ExperimentConfig, artifacts: Artifacts) -> Checks:
    eps_list = config["eps_list"]
    values = dict(config.values)
    directories = [str(artifacts.directory / f"eps_{index}") for index in range(len(eps_list))]
    workers = min(settings.OT_CONVECTION["SWEEP_MAX_WORKERS"], len(eps_list))
    logger.info("Sweep over %d eps values with %d workers", len(eps_list), workers)
    if workers <= 1:
        results = [sweep_member(values, eps, directory) for eps, directory in zip(eps_list, directories)]
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=django.setup) as pool:
            results = list(pool.map(sweep_member, [values] * len(eps_list), eps_list, directories))

    for directory in directories:
        name = Path(directory).name
        artifacts.path(f"{name}/{MANIFEST_NAME}")
        for artifact in RunManifest.read(directory).artifacts:
            artifacts.path(f"{name}/{artifact}")

    report = rate_report(eps_list, [result[:3] for result in results])
    rates = DiagnosticSeries(("eps", "y_error", "v_error"))
    for eps, y_error, v_error in zip(report.eps, report.y_errors, report.v_errors):
        rates.append(eps=eps, y_error=y_error, v_error=v_error)
    rates.write_csv(artifacts.path("rate.csv"))
    with open(artifacts.path("rate.json"), "w") as handle:
        json.dump(report.serialize(), handle, indent=2, sort_keys=True)

    checks: Checks = {}
    for eps, result in zip(eps_list, results):
        check = InvariantCheck(f"energy_inequality[eps={eps:g}]", result[3]["tolerance"])
        check.record(result[3]["worst"], result[3]["step"])
        checks[check.name] = check
    low, high = config["slope_min"], config["slope_max"]
    if low is not None or high is not None:
        low = -math.inf if low is None else low
        high = math.inf if high is None else high
        # v error inside [low, high]; y error decaying at least as fast as eps^low
        checks["v_slope"] = InvariantCheck("v_slope", 0.0)
        checks["v_slope"].record(_window_excess(report.v_slope, low, high))
        checks["y_slope"] = InvariantCheck("y_slope", 0.0)
        checks["y_slope"].record(_window_excess(report.y_slope, low, math.inf))
    logger.info("Sweep slopes: y %.3f, v %.3f", report.y_slope, report.v_slope)
    return checks


def _window_excess(slope: float, low: float, high: float) -> float:
    return max(low - slope, slope - high, 0.0) if math.isfinite(slope) else math.inf


PIPELINES: Dict[str, Callable[[ExperimentConfig, Artifacts], Checks]] = {
    "rearrange": run_rearrange,
    "aht": run_aht,
    "jko": run_jko,
    "gnsb": run_gnsb,
    "hf": run_hf,
    "ghb": run_ghb,
    "crossburgers": run_crossburgers,
    "sweep": run_sweep,
}


def execute(config: ExperimentConfig, output_dir=None) -> RunManifest:
    """
    Runs the pipeline of config.subcommand and writes the manifest. Solver errors are recorded in the manifest
    (status solver_error) rather than raised. A ValueError (input the pipeline rejects) removes
    whatever the run wrote and propagates.
    """
    artifacts = Artifacts(output_dir or default_output_dir(config))
    logger.info("Starting %s run in %s", config.subcommand, artifacts.directory)
    started = time.monotonic()
    checks: Checks = {}
    status, message = STATUS_OK, ""
    try:
        checks = PIPELINES[config.subcommand](config, artifacts)
    except SolverError as error:
        status, message = STATUS_SOLVER_ERROR, f"{type(error).__name__}: {error}"
        logger.error("%s run failed: %s", config.subcommand, message)
    except ValueError:
        artifacts.discard()
        raise
    if status == STATUS_OK and not all(check.passed for check in checks.values()):
        status = STATUS_INVARIANT_FAILURE

    manifest = RunManifest(
        subcommand=config.subcommand,
        config=config.serialize(),
        seed=config["seed"],
        artifacts=artifacts.digests(),
        checks={name: check.serialize() for name, check in sorted(checks.items())},
        status=status,
        message=message,
        wall_time=time.monotonic() - started,
    )
    manifest.write(artifacts.directory)
    logger.info("Finished %s run: %s in %.2fs", config.subcommand, status, manifest.wall_time)
    return manifest


# ----- compare -----

@dataclass
class Snapshot:
    t: float
    kind: str
    layout: tuple
    points: np.ndarray
    values: np.ndarray


def read_snapshot(path) -> Snapshot:
    with open(path, "r") as handle:
        header = handle.readline()
    if header.startswith("# grid="):
        dump = read_grid_dump(path)
        return Snapshot(dump.t, dump.grid, (dump.grid, dump.d, dump.n), dump.coordinates, dump.components)
    dump = read_cloud_dump(path)
    t = dump.t if dump.t is not None else 0.0
    return Snapshot(t, "cloud", ("cloud",) + dump.atoms.shape, dump.atoms, dump.values)


def _l2(difference: np.ndarray) -> float:
    return math.sqrt(math.fsum(np.sum(difference ** 2, axis=1)) / difference.shape[0])


def _max(difference: np.ndarray) -> float:
    return float(np.max(np.sqrt(np.sum(difference ** 2, axis=1))))


def _check_shapes(name: str, left: Snapshot, right: Snapshot):
    if left.layout != right.layout or left.values.shape != right.values.shape:
        raise ShapeMismatchError(
            f"Snapshots {name} are not comparable: {left.layout} {left.values.shape} vs "
            f"{right.layout} {right.values.shape}",
            artifact=name,
            left=left.layout + left.values.shape,
            right=right.layout + right.values.shape,
        )
    if not np.array_equal(left.points, right.points):
        raise ShapeMismatchError(f"Snapshots {name} sit on different nodes", artifact=name, left=left.layout,
                                 right=right.layout)


@dataclass
class CompareReport:
    snapshots: Dict[str, Dict[str, float]] = field(default_factory=dict)
    trajectories: Dict[str, float] = field(default_factory=dict)

    @property
    def max_difference(self) -> float:
        values = [diff["max"] for diff in self.snapshots.values()] + list(self.trajectories.values())
        return max(values, default=0.0)

    def serialize(self) -> dict:
        return {"snapshots": self.snapshots, "trajectories": self.trajectories}


def _trajectory_values(snapshots: List[Snapshot], t: float) -> np.ndarray:
    """ Piecewise linear in t between snapshots, constant past the ends. """
    times = [snapshot.t for snapshot in snapshots]
    if t <= times[0]:
        return snapshots[0].values
    if t >= times[-1]:
        return snapshots[-1].values
    index = int(np.searchsorted(times, t, side="right")) - 1
    weight = (t - times[index]) / (times[index + 1] - times[index])
    return (1.0 - weight) * snapshots[index].values + weight * snapshots[index + 1].values


def _family(name: str) -> Optional[str]:
    stem = Path(name).stem
    prefix, _, suffix = stem.rpartition("_")
    if "/" in name or not suffix.isdigit():
        return None
    return prefix


def compare_runs(run_a, run_b) -> CompareReport:
    """
    L2 (root mean square over nodes) and max-norm differences of snapshots present in both runs at the same time,
    and sup over t of the L2 difference of every snapshot family (y_*, cloud_*, B_*) seen as a trajectory.
    """
    run_a, run_b = Path(run_a), Path(run_b)
    manifest_a, manifest_b = RunManifest.read(run_a), RunManifest.read(run_b)
    names = sorted(set(manifest_a.artifacts) & set(manifest_b.artifacts))
    report = CompareReport()
    families: Dict[str, Tuple[List[Snapshot], List[Snapshot]]] = {}

    for name in sorted(set(manifest_a.artifacts) | set(manifest_b.artifacts)):
        family = _family(name)
        if family is not None:
            families.setdefault(family, ([], []))
            for run, manifest, side in ((run_a, manifest_a, 0), (run_b, manifest_b, 1)):
                if name in manifest.artifacts:
                    families[family][side].append(read_snapshot(run / name))

    for name in names:
        if not name.endswith(".dat") or "/" in name:
            continue
        left, right = read_snapshot(run_a / name), read_snapshot(run_b / name)
        _check_shapes(name, left, right)
        if abs(left.t - right.t) > 1e-12 * max(1.0, abs(left.t)):
            continue
        difference = left.values - right.values
        report.snapshots[name] = {"t": left.t, "l2": _l2(difference), "max": _max(difference)}

    for family, (left, right) in sorted(families.items()):
        if not left or not right:
            continue
        left.sort(key=lambda snapshot: snapshot.t)
        right.sort(key=lambda snapshot: snapshot.t)
        _check_shapes(family, left[0], right[0])
        horizon = min(left[-1].t, right[-1].t)
        times = [t for t in sorted({s.t for s in left} | {s.t for s in right}) if t <= horizon + 1e-12]
        report.trajectories[family] = max(
            _l2(_trajectory_values(left, t) - _trajectory_values(right, t)) for t in times
        )
    return report


# ----- registry -----

def register_run(manifest: RunManifest, output_dir) -> Optional[RunRecord]:
    """ Records a finished run; a missing or unreachable database only costs the registry entry. """
    try:
        return RunRecord.objects.create(
            subcommand=manifest.subcommand,
            seed=manifest.seed,
            config=manifest.config,
            output_dir=str(Path(output_dir).resolve()),
            status=manifest.status,
            exit_code=manifest.exit_code,
            wall_time=manifest.wall_time,
            version=manifest.version,
        )
    except OperationalError as ex:
        logger.warning("Run registry unavailable, %s run not recorded: %s", manifest.subcommand, ex)
        return None


def registered_run(reference: str) -> Optional[RunRecord]:
    """ The registry entry behind a numeric run id; None when the reference is a directory or not an id. """
    if Path(reference).is_dir() or not reference.isdigit():
        return None
    try:
        return RunRecord.objects.get(id=int(reference))
    except RunRecord.DoesNotExist:
        raise FileNotFoundError(f"No registered run with id {reference}")


def resolve_run(reference: str) -> Path:
    """ A run directory, or the id of a registered run. """
    path = Path(reference)
    if path.is_dir():
        return path
    record = registered_run(reference)
    if record is not None:
        return Path(record.output_dir)
    raise FileNotFoundError(f"{reference} is neither a run directory nor a registered run id")
