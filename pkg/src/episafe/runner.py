"""Run orchestration: simulate, audit, emit CSV outputs, parameter sweeps.

Trajectory CSV schema: one row per step with columns
``t,<compartments...>,u_raw,u,<h per constraint...>,d``.  Values are
written with 15 significant digits so a round trip through the file
reproduces them to better than 1e-12 relative, and identical runs produce
identical bytes.  A long-format companion table (t, series, value) serves
plotting tools directly.
"""

from __future__ import annotations

import dataclasses
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .safety import OUTLET, ControlDecision, InitialConditionReport, _extended_margin_t
from .sim import AuditReport, Scenario, Trajectory, safety_audit, simulate

__all__ = [
    "RunReport",
    "TrajectoryFormatError",
    "SWEEP_PARAMETERS",
    "run",
    "sweep",
    "export_trajectory",
    "import_trajectory",
    "write_long_table",
    "format_report",
]

SWEEP_PARAMETERS = ("tau", "dt", "seed", "delta", "t_end", "control_start")

# Margin dips beyond this fraction of the bound count as real violations for
# exit-code purposes; smaller dips are integration dust.
VIOLATION_TOL = 1e-6


class TrajectoryFormatError(ValueError):
    pass


def _fmt(value: float) -> str:
    return format(float(value), ".15g")


@dataclass(frozen=True)
class RunReport:
    """Everything a caller needs to judge one run."""

    name: str
    scenario: Scenario
    trajectory: Trajectory
    audit: AuditReport
    initial: InitialConditionReport | None
    peaks: dict[str, tuple[float, float]]
    outputs: dict[str, Path]
    exit_code: int


def _exit_code(scenario: Scenario, audit: AuditReport) -> int:
    if scenario.guaranteed:
        for c, audit_c in zip(scenario.constraints, audit.constraints):
            if audit_c.min_margin < -VIOLATION_TOL * c.bound:
                return 3
    if audit.infeasible_count > 0:
        return 4
    return 0


def run(
    scenario: Scenario,
    name: str = "run",
    out_dir: str | Path | None = None,
) -> RunReport:
    """Simulate, audit, and (optionally) write the output files."""
    trajectory = simulate(scenario)
    audit = safety_audit(trajectory)
    peaks = {lbl: trajectory.peak(lbl) for lbl in trajectory.labels}
    outputs: dict[str, Path] = {}
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        traj_path = out_dir / f"{name}_trajectory.csv"
        export_trajectory(trajectory, traj_path)
        long_path = out_dir / f"{name}_long.csv"
        write_long_table(trajectory, long_path)
        outputs = {"trajectory": traj_path, "long": long_path}
    return RunReport(
        name=name,
        scenario=scenario,
        trajectory=trajectory,
        audit=audit,
        initial=trajectory.initial_report,
        peaks=peaks,
        outputs=outputs,
        exit_code=_exit_code(scenario, audit),
    )


def sweep(
    scenario: Scenario,
    parameter: str,
    values: Sequence[float],
    name: str = "sweep",
    out_dir: str | Path | None = None,
) -> list[RunReport]:
    """Run the scenario once per value of one declared parameter.

    Reports come back sorted by parameter value, so aggregation order does
    not depend on the order values were given in.
    """
    if parameter not in SWEEP_PARAMETERS:
        raise ValueError(
            f"cannot sweep {parameter!r}; supported: {', '.join(SWEEP_PARAMETERS)}"
        )
    field = {"delta": "disturbance_delta"}.get(parameter, parameter)
    reports = []
    for value in sorted(values):
        cast = int(value) if parameter == "seed" else float(value)
        variant = dataclasses.replace(scenario, **{field: cast})
        label = f"{name}_{parameter}_{cast:g}" if parameter != "seed" else f"{name}_{parameter}_{cast}"
        reports.append(run(variant, name=label, out_dir=out_dir))
    return reports


def _constraint_columns(scenario: Scenario) -> list[str]:
    return [f"h_{c.label(k)}" for k, c in enumerate(scenario.constraints)]


def export_trajectory(trajectory: Trajectory, path: str | Path) -> Path:
    """Write the trajectory CSV (see module docstring for the schema)."""
    scenario = trajectory.scenario
    header = (
        ["t", *scenario.spec.labels, "u_raw", "u"]
        + _constraint_columns(scenario)
        + ["d"]
    )
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for k in range(len(trajectory)):
        row = [
            _fmt(trajectory.times[k]),
            *(_fmt(v) for v in trajectory.states[k]),
            _fmt(trajectory.inputs[k].u_raw),
            _fmt(trajectory.inputs[k].u),
            *(_fmt(v) for v in trajectory.barriers[k]),
            _fmt(trajectory.disturbances[k]),
        ]
        buf.write(",".join(row) + "\n")
    path = Path(path)
    path.write_text(buf.getvalue())
    return path


def import_trajectory(path: str | Path, scenario: Scenario) -> Trajectory:
    """Rebuild a Trajectory from an exported CSV and its scenario.

    Controller decisions are reconstructed from the u_raw/u columns; the
    per-decision margin details and the active-constraint marker are not
    part of the file format and come back empty.
    """
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise TrajectoryFormatError(f"cannot read trajectory: {exc}") from exc
    if not lines:
        raise TrajectoryFormatError(f"{path}: empty trajectory file")
    expected = (
        ["t", *scenario.spec.labels, "u_raw", "u"]
        + _constraint_columns(scenario)
        + ["d"]
    )
    header = lines[0].split(",")
    if header != expected:
        raise TrajectoryFormatError(
            f"{path}: header {','.join(header)!r} does not match scenario "
            f"(expected {','.join(expected)!r})"
        )
    try:
        data = np.array(
            [[float(cell) for cell in line.split(",")] for line in lines[1:] if line],
        )
    except ValueError as exc:
        raise TrajectoryFormatError(f"{path}: bad numeric cell: {exc}") from exc
    if data.ndim != 2 or data.shape[1] != len(expected):
        raise TrajectoryFormatError(f"{path}: malformed data block {data.shape}")
    n_state = len(scenario.spec.labels)
    n_c = len(scenario.constraints)
    times = data[:, 0]
    states = data[:, 1 : 1 + n_state]
    u_raw = data[:, 1 + n_state]
    u = data[:, 2 + n_state]
    barriers = data[:, 3 + n_state : 3 + n_state + n_c]
    dists = data[:, -1]
    decisions = tuple(
        ControlDecision(
            u_raw=float(u_raw[k]),
            u=float(u[k]),
            feasible=bool(u_raw[k] <= 1.0),
            active_constraint=None,
            barrier_values=(),
            extended_values=(),
        )
        for k in range(data.shape[0])
    )
    spec = scenario.spec
    extended = np.full((data.shape[0], n_c), np.nan)
    for j, c in enumerate(scenario.constraints):
        if c.kind == OUTLET:
            for k in range(data.shape[0]):
                w = tuple(states[k, : spec.n])
                z = tuple(states[k, spec.n :])
                extended[k, j] = _extended_margin_t(spec, c, w, z)
    return Trajectory(
        scenario=scenario,
        times=times,
        states=states,
        inputs=decisions,
        barriers=barriers,
        extended=extended,
        disturbances=dists,
        initial_report=None,
    )


def write_long_table(trajectory: Trajectory, path: str | Path) -> Path:
    """Plot-ready long-format table: one (t, series, value) row per sample
    and series."""
    scenario = trajectory.scenario
    series: list[tuple[str, np.ndarray]] = [
        (lbl, trajectory.states[:, i]) for i, lbl in enumerate(scenario.spec.labels)
    ]
    series.append(("u_raw", trajectory.u_raw))
    series.append(("u", trajectory.u))
    for j, name in enumerate(_constraint_columns(scenario)):
        series.append((name, trajectory.barriers[:, j]))
    series.append(("d", trajectory.disturbances))
    buf = io.StringIO()
    buf.write("t,series,value\n")
    for k in range(len(trajectory)):
        t = _fmt(trajectory.times[k])
        for name, values in series:
            buf.write(f"{t},{name},{_fmt(values[k])}\n")
    path = Path(path)
    path.write_text(buf.getvalue())
    return path


def format_report(report: RunReport) -> str:
    """Human-readable run summary (deterministic)."""
    sc = report.scenario
    lines = [
        f"run: {report.name}",
        f"model: {sc.spec.kind}  mode: {sc.feedback_mode}  "
        f"tau: {sc.tau:g}  dt: {sc.dt:g}  horizon: [{sc.t_start:g}, {sc.t_end:g}]",
        f"disturbance delta: {sc.disturbance_delta:g}  seed: {sc.seed}",
    ]
    if report.initial is not None:
        status = "pass" if report.initial.ok else "FAIL"
        lines.append(f"initial-condition checks: {status}")
        for check in report.initial.checks:
            extra = (
                ""
                if check.extended_margin is None
                else f", h_e={check.extended_margin:.6g}"
            )
            lines.append(f"  {check.label}: h={check.margin:.6g}{extra}")
    lines.append("peaks (clamped at zero):")
    for lbl, (value, t) in report.peaks.items():
        lines.append(f"  {lbl}: {value:.6g} at t={t:g}")
    lines.append("audit:")
    for c in report.audit.constraints:
        lines.append(
            f"  {c.label}: min h={c.min_margin:.6g} at t={c.min_margin_time:g}, "
            f"violations={c.violation_count}"
        )
    lines.append(f"  input clamping events: {report.audit.infeasible_count}")
    for kind, p in sorted(report.outputs.items()):
        lines.append(f"wrote {kind}: {p}")
    lines.append(f"exit code: {report.exit_code}")
    return "\n".join(lines)
