"""Fixed-step closed-loop simulation and trajectory auditing.

The loop advances the model with a classical Runge-Kutta step of size dt,
evaluating the feedback law once per step on the state selected by the
scenario's feedback mode: the true current state, a measurement delayed by
tau, or a forecast computed from that delayed measurement.  An optional
bounded input disturbance, sampled per step from the scenario seed, is
added to the applied input.  Everything a safety audit needs is recorded.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import engine
from .models import ModelSpec, ModelState
from .safety import (
    MULTIPLICATIVE,
    OUTLET,
    ControlDecision,
    InitialConditionReport,
    SafetyConstraint,
    _extended_margin_t,
    _margin_t,
    combined_control,
    validate_initial_condition,
)

__all__ = [
    "Scenario",
    "Trajectory",
    "MeasurementBuffer",
    "SimulationError",
    "InitialConditionError",
    "IntegrationError",
    "MODES",
    "rk4_step",
    "simulate",
    "safety_audit",
    "ConstraintAudit",
    "AuditReport",
]

MODES = ("instantaneous", "delayed", "predictor")

_GRID_TOL = 1e-9


class SimulationError(RuntimeError):
    pass


class InitialConditionError(SimulationError):
    """Guaranteed-mode run refused: the starting state does not satisfy the
    controller hypotheses."""

    def __init__(self, report: InitialConditionReport):
        super().__init__(
            "initial condition fails controller hypotheses:\n" + report.describe()
        )
        self.report = report


class IntegrationError(SimulationError):
    pass


def _is_multiple(value: float, step: float) -> bool:
    if value < 0.0:
        return False
    k = value / step
    return abs(k - round(k)) <= _GRID_TOL * max(1.0, abs(k))


@dataclass(frozen=True)
class Scenario:
    """One closed-loop experiment, fully specified and validated.

    feedback_mode is one of "instantaneous", "delayed", "predictor"; tau is
    the measurement delay used by the latter two and must be an integer
    multiple of dt.  disturbance_delta bounds the per-step uniform input
    disturbance (0 disables it; draws use seed).  The controller is off
    (u = 0) before control_start.
    """

    spec: ModelSpec
    state0: ModelState
    t_start: float
    t_end: float
    dt: float
    constraints: tuple[SafetyConstraint, ...] = ()
    feedback_mode: str = "instantaneous"
    tau: float = 0.0
    disturbance_delta: float = 0.0
    seed: int = 0
    control_start: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "constraints", tuple(self.constraints))
        if self.control_start is None:
            object.__setattr__(self, "control_start", self.t_start)
        if not self.dt > 0.0:
            raise ValueError("dt must be positive")
        if self.t_end < self.t_start:
            raise ValueError("t_end must not precede t_start")
        if not _is_multiple(self.t_end - self.t_start, self.dt):
            raise ValueError("horizon t_end - t_start must be a multiple of dt")
        if self.feedback_mode not in MODES:
            raise ValueError(f"feedback_mode must be one of {MODES}")
        if self.tau < 0.0:
            raise ValueError("tau must be non-negative")
        if self.tau > 0.0 and not _is_multiple(self.tau, self.dt):
            raise ValueError("tau must be an integer multiple of dt")
        if self.disturbance_delta < 0.0:
            raise ValueError("disturbance_delta must be non-negative")
        if not (self.t_start <= self.control_start <= self.t_end):
            raise ValueError("control_start must lie within [t_start, t_end]")
        if not _is_multiple(self.control_start - self.t_start, self.dt):
            raise ValueError("control_start must fall on the dt grid")
        if self.state0.labels != self.spec.labels:
            raise ValueError("initial state labels do not match the model")
        for c in self.constraints:
            c.check_against(self.spec)

    @property
    def n_steps(self) -> int:
        return int(round((self.t_end - self.t_start) / self.dt))

    @property
    def delay_steps(self) -> int:
        return int(round(self.tau / self.dt)) if self.tau > 0.0 else 0

    @property
    def guaranteed(self) -> bool:
        """True when the run claims a safety guarantee: feedback is either
        instantaneous or forecast-compensated, and no disturbance is
        injected."""
        return self.feedback_mode in ("instantaneous", "predictor") and (
            self.disturbance_delta == 0.0
        )

    def times(self) -> np.ndarray:
        return self.t_start + self.dt * np.arange(self.n_steps + 1)


class MeasurementBuffer:
    """Ring buffer of timestamped states serving delayed lookups.

    Holds exactly the delay window.  Lookups before the recorded history
    return the prehistory state (the initial state unless an explicit
    prehistory was supplied), matching the convention that the system sat
    at its initial state before the run began.
    """

    def __init__(
        self,
        t_start: float,
        dt: float,
        tau: float,
        prehistory: Sequence[float],
    ):
        self._t_start = t_start
        self._dt = dt
        self._entries: deque[tuple[float, list[float]]] = deque(
            maxlen=int(round(tau / dt)) + 1 if tau > 0 else 1
        )
        self._prehistory = list(prehistory)

    def push(self, t: float, x: Sequence[float]) -> None:
        self._entries.append((t, list(x)))

    def lookup(self, t: float) -> list[float]:
        if t < self._t_start - _GRID_TOL * self._dt:
            return list(self._prehistory)
        for entry_t, x in self._entries:
            if abs(entry_t - t) <= _GRID_TOL * max(1.0, abs(t)):
                return list(x)
        raise LookupError(f"no buffered measurement at t={t:g}")


@dataclass(frozen=True)
class Trajectory:
    """Recorded closed-loop run: the unit of audit and output.

    All series share one length; barriers/extended hold the per-constraint
    margins evaluated at the true state (extended is NaN for multiplicative
    constraints).  inputs holds the controller decisions as evaluated on the
    feedback state; disturbances the sampled input offsets.
    """

    scenario: Scenario
    times: np.ndarray
    states: np.ndarray
    inputs: tuple[ControlDecision, ...]
    barriers: np.ndarray
    extended: np.ndarray
    disturbances: np.ndarray
    initial_report: InitialConditionReport | None = None

    def __post_init__(self) -> None:
        k = self.times.size
        if not (
            len(self.inputs) == k
            and self.states.shape[0] == k
            and self.disturbances.size == k
            and self.barriers.shape[0] == k
            and self.extended.shape[0] == k
        ):
            raise ValueError("trajectory series lengths differ")
        for arr in (self.times, self.states, self.barriers, self.extended, self.disturbances):
            arr.setflags(write=False)

    def __len__(self) -> int:
        return int(self.times.size)

    @property
    def labels(self) -> tuple[str, ...]:
        return self.scenario.spec.labels

    def state_at(self, k: int) -> ModelState:
        return self.scenario.spec.state(self.states[k])

    @property
    def u_raw(self) -> np.ndarray:
        return np.array([d.u_raw for d in self.inputs])

    @property
    def u(self) -> np.ndarray:
        return np.array([d.u for d in self.inputs])

    def peak(self, label: str) -> tuple[float, float]:
        """(max value, time of max) for a compartment, clamped at zero."""
        col = self.labels.index(label)
        series = np.maximum(self.states[:, col], 0.0)
        k = int(np.argmax(series))
        return float(series[k]), float(self.times[k])


def rk4_step(spec: ModelSpec, state: ModelState, u: float, dt: float) -> ModelState:
    """One Runge-Kutta step of the model dynamics with u held constant."""
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    if state.n != spec.n or state.m != spec.m:
        raise ValueError("state does not match the model dimensions")
    x = engine.rk4_flat(spec.derivative_t, list(state.x), float(u), dt)
    if not all(math.isfinite(v) for v in x):
        raise IntegrationError(f"non-finite state after step from {state.x}")
    return spec.state(x)


def _clamp01(v: float) -> float:
    return 0.0 if v < 0.0 else (1.0 if v > 1.0 else v)


def simulate(scenario: Scenario, prehistory: Sequence[float] | None = None) -> Trajectory:
    """Run the closed loop over the scenario horizon.

    The feedback law is evaluated once per sample (including the final
    one, whose decision is recorded but not integrated) and the applied
    input clamp(u + d) is held constant across each step.  In guaranteed
    mode the run refuses to start if the initial controlled state violates
    the controller hypotheses.

    prehistory optionally overrides the state reported for measurement
    times before t_start (defaults to the initial state).
    """
    spec = scenario.spec
    cons = scenario.constraints
    n_steps = scenario.n_steps
    dt = scenario.dt
    n_c = len(cons)
    delayed = scenario.feedback_mode in ("delayed", "predictor")

    x = [float(v) for v in scenario.state0.x]
    times = scenario.times()
    states = np.empty((n_steps + 1, spec.n + spec.m))
    barriers = np.empty((n_steps + 1, n_c))
    extended = np.full((n_steps + 1, n_c), np.nan)
    dists = np.zeros(n_steps + 1)
    decisions: list[ControlDecision] = []

    buffer = None
    input_fn = None
    if delayed:
        buffer = MeasurementBuffer(
            scenario.t_start, dt, scenario.tau,
            prehistory if prehistory is not None else x,
        )
        buffer.push(scenario.t_start, x)
    if scenario.feedback_mode == "predictor":
        input_fn = engine.make_input_fn(spec, cons, scenario.control_start)

    rng = (
        np.random.default_rng(scenario.seed)
        if scenario.disturbance_delta > 0.0
        else None
    )
    delta = scenario.disturbance_delta
    report: InitialConditionReport | None = None

    for k in range(n_steps + 1):
        t = float(times[k])
        states[k] = x
        w = tuple(x[: spec.n])
        z = tuple(x[spec.n :])
        for j, c in enumerate(cons):
            barriers[k, j] = _margin_t(c, w, z)
            if c.kind == OUTLET:
                extended[k, j] = _extended_margin_t(spec, c, w, z)

        controlled = bool(cons) and t >= scenario.control_start - _GRID_TOL * dt
        if controlled:
            if report is None:
                report = validate_initial_condition(spec, cons, spec.state(x))
                if not report.ok and scenario.guaranteed:
                    raise InitialConditionError(report)
            feedback = x
            if delayed:
                t_meas = t - scenario.tau
                measured = buffer.lookup(t_meas)
                if scenario.feedback_mode == "delayed":
                    feedback = measured
                else:
                    start = max(t_meas, scenario.t_start)
                    span = int(round((t - start) / dt))
                    try:
                        feedback = engine.closed_loop_rollout(
                            spec, measured, start, span, dt, input_fn
                        )
                    except engine.RolloutSingularity as exc:
                        raise SimulationError(
                            f"forecast failed at t={t:g}: {exc}"
                        ) from exc
            decision = combined_control(spec, cons, spec.state(feedback))
            d = float(rng.uniform(-delta, delta)) if rng is not None else 0.0
            applied = _clamp01(decision.u + d)
        else:
            decision = ControlDecision.rest()
            d = 0.0
            applied = 0.0
        decisions.append(decision)
        dists[k] = d

        if k < n_steps:
            x = engine.rk4_flat(spec.derivative_t, x, applied, dt)
            if not all(math.isfinite(v) for v in x):
                raise IntegrationError(
                    f"non-finite state after step {k} (t={t:g}): {x}"
                )
            if buffer is not None:
                buffer.push(float(times[k + 1]), x)

    return Trajectory(
        scenario=scenario,
        times=times,
        states=states,
        inputs=tuple(decisions),
        barriers=barriers,
        extended=extended,
        disturbances=dists,
        initial_report=report,
    )


@dataclass(frozen=True)
class ConstraintAudit:
    """Safety audit of one constraint along a trajectory."""

    label: str
    min_margin: float
    min_margin_time: float
    violation_count: int
    violation_times: tuple[float, ...]
    decay_check_failures: int
    decay_check_worst: float
    decay_tolerance: float

    @property
    def ok(self) -> bool:
        return self.violation_count == 0


@dataclass(frozen=True)
class AuditReport:
    constraints: tuple[ConstraintAudit, ...]
    infeasible_count: int
    infeasible_times: tuple[float, ...]

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.constraints)

    def describe(self) -> str:
        lines = []
        for c in self.constraints:
            lines.append(
                f"{c.label}: min h = {c.min_margin:.6g} at t={c.min_margin_time:.6g}, "
                f"{c.violation_count} violation(s), "
                f"decay check failures {c.decay_check_failures} "
                f"(worst {c.decay_check_worst:.6g}, tol {c.decay_tolerance:.6g})"
            )
        lines.append(f"input clamping events: {self.infeasible_count}")
        return "\n".join(lines)


_MAX_LOGGED_TIMES = 20


def safety_audit(
    trajectory: Trajectory,
    constraints: Sequence[SafetyConstraint] | None = None,
) -> AuditReport:
    """Audit recorded states against the constraints.

    Margins are recomputed from the states, so a trajectory can be audited
    against constraint sets other than the one it ran with.  Reports, per
    constraint: the worst margin, every sign violation, and a discretized
    margin-decay check (h(t+dt) - h(t))/dt + alpha h(t) >= -tol with
    tol = 1e-6 * alpha * bound.  The decay check is informational: holding
    the input constant across a step shifts it by O(dt) even for a
    perfectly safe run.
    """
    if len(trajectory) == 0:
        raise ValueError("empty trajectory")
    scenario = trajectory.scenario
    spec = scenario.spec
    cons = tuple(constraints) if constraints is not None else scenario.constraints
    dt = scenario.dt
    audits = []
    for c in cons:
        c.check_against(spec)
        col = c.index if c.kind == MULTIPLICATIVE else spec.n + c.index
        series = c.sign * (c.bound - trajectory.states[:, col])
        k_min = int(np.argmin(series))
        viol = np.flatnonzero(series < 0.0)
        tol = 1e-6 * c.alpha * c.bound
        if series.size > 1:
            decay = np.diff(series) / dt + c.alpha * series[:-1]
            bad = decay < -tol
            failures = int(np.count_nonzero(bad))
            worst = float(decay.min())
        else:
            failures, worst = 0, math.inf
        audits.append(
            ConstraintAudit(
                label=c.label(),
                min_margin=float(series[k_min]),
                min_margin_time=float(trajectory.times[k_min]),
                violation_count=int(viol.size),
                violation_times=tuple(
                    float(trajectory.times[i]) for i in viol[:_MAX_LOGGED_TIMES]
                ),
                decay_check_failures=failures,
                decay_check_worst=worst,
                decay_tolerance=tol,
            )
        )
    infeasible = np.flatnonzero([not d.feasible for d in trajectory.inputs])
    return AuditReport(
        constraints=tuple(audits),
        infeasible_count=int(infeasible.size),
        infeasible_times=tuple(
            float(trajectory.times[i]) for i in infeasible[:_MAX_LOGGED_TIMES]
        ),
    )
