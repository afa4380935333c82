"""Flat-state integration core shared by the simulator and the predictor.

States travel as plain float lists here: the closed-loop rollouts evaluate
the dynamics and the feedback law up to a million times per run, and numpy
call overhead on length-5 vectors would dominate the cost.  The public
modules wrap these helpers with ModelState/ndarray interfaces.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

from .models import ModelSpec
from .safety import SafetyConstraint, SignAssumptionError, SingularControlError, _terms_t

__all__ = ["rk4_flat", "make_input_fn", "closed_loop_rollout", "RolloutSingularity"]

InputFn = Callable[[float, Sequence[float]], float]


class RolloutSingularity(RuntimeError):
    """Controller singularity (or sign violation) hit mid-rollout."""

    def __init__(self, time: float, cause: Exception):
        super().__init__(f"controller unavailable at t={time:g}: {cause}")
        self.time = time
        self.cause = cause


def rk4_flat(
    deriv: Callable[[Sequence[float], float], list[float]],
    x: Sequence[float],
    u: float,
    dt: float,
) -> list[float]:
    """One classical 4th-order Runge-Kutta step with u held constant."""
    k1 = deriv(x, u)
    y = [xi + 0.5 * dt * ki for xi, ki in zip(x, k1)]
    k2 = deriv(y, u)
    y = [xi + 0.5 * dt * ki for xi, ki in zip(x, k2)]
    k3 = deriv(y, u)
    y = [xi + dt * ki for xi, ki in zip(x, k3)]
    k4 = deriv(y, u)
    s = dt / 6.0
    return [
        xi + s * (a + 2.0 * (b + c) + d)
        for xi, a, b, c, d in zip(x, k1, k2, k3, k4)
    ]


def make_input_fn(
    spec: ModelSpec,
    constraints: Sequence[SafetyConstraint],
    control_start: float | None = None,
) -> InputFn:
    """Scalar feedback law u(t, x): zero before control_start, afterwards the
    clamped maximum of the individual min-norm laws.  Mirrors exactly what
    the simulator applies, so predictions replay the plant's behaviour."""
    cons = tuple(constraints)
    n = spec.n
    gate = -math.inf if control_start is None else control_start

    def input_fn(t: float, x: Sequence[float]) -> float:
        if t < gate - 1e-12 or not cons:
            return 0.0
        w = tuple(x[:n])
        z = tuple(x[n:])
        best = 0.0
        for c in cons:
            drift, authority = _terms_t(spec, c, w, z)
            if not authority < 0.0:
                raise SignAssumptionError(
                    f"control coefficient {authority:.3e} not negative for "
                    f"{c.kind} constraint on index {c.index}"
                )
            mag = abs(authority)
            if mag < spec.g_tol:
                raise SingularControlError(
                    f"control coefficient {authority:.3e} below tolerance "
                    f"{spec.g_tol:.3e} for {c.kind} constraint on index {c.index}"
                )
            ratio = drift / mag
            u_c = ratio if ratio > 0.0 else 0.0
            if u_c > best:
                best = u_c
        return best if best < 1.0 else 1.0

    return input_fn


def closed_loop_rollout(
    spec: ModelSpec,
    x0: Sequence[float],
    t0: float,
    n_steps: int,
    dt: float,
    input_fn: InputFn,
) -> list[float]:
    """Integrate the closed loop for n_steps of size dt; returns the final
    state.  The input is re-evaluated once per step and held constant."""
    x = list(x0)
    deriv = spec.derivative_t
    for k in range(n_steps):
        t = t0 + k * dt
        try:
            u = input_fn(t, x)
        except (SingularControlError, SignAssumptionError) as exc:
            raise RolloutSingularity(t, exc) from exc
        x = rk4_flat(deriv, x, u, dt)
    return x
