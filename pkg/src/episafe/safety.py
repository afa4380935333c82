"""Min-norm safety-critical intervention controllers.

Each controller renders a population bound forward invariant by enforcing a
minimum decay condition on the safety margin h: along solutions, dh/dt must
stay above -alpha*h.  Solving "smallest u**2 subject to that condition" in
closed form yields a rectified-linear law: zero intervention while the open
loop already satisfies the condition, and the exact boundary-preserving
input once it would be violated.

Multiplicative compartments (the input appears directly in their dynamics)
use the margin h itself.  Outlet compartments see the input only through
the inflow from the multiplicative block, so their controller works on the
once-differentiated margin h_e = dh/dt + alpha*h, with its own decay gain
alpha_e.  Bounds on several compartments at once combine by taking the
pointwise maximum of the individual laws, valid whenever every constraint
pushes the input in the same direction (negative control coefficients).

All controllers are pure functions of (model, constraint, state) and are
safe to evaluate concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .models import ModelSpec, ModelState, SihrdParams, SirParams

__all__ = [
    "MULTIPLICATIVE",
    "OUTLET",
    "SafetyConstraint",
    "ControlDecision",
    "SingularControlError",
    "SignAssumptionError",
    "ConstraintCheck",
    "InitialConditionReport",
    "barrier_value",
    "extended_barrier_value",
    "multiplicative_control",
    "outlet_control",
    "combined_control",
    "sign_assumption_check",
    "validate_initial_condition",
    "qp_oracle",
    "closed_form_infection_control",
    "closed_form_hospitalization_control",
    "closed_form_death_control",
]

MULTIPLICATIVE = "multiplicative"
OUTLET = "outlet"


class SingularControlError(RuntimeError):
    """The control coefficient vanished; the state offers no authority over
    the constrained compartment and the caller must decide a fallback."""


class SignAssumptionError(RuntimeError):
    """The combined controller requires every constraint's control
    coefficient to be negative at the query state; here they were not, so
    the max composition is not the minimum-norm solution.  A numeric QP
    with relaxation would be needed; this library reports the case as
    infeasible-by-this-method instead."""


@dataclass(frozen=True)
class SafetyConstraint:
    """One population bound to enforce.

    kind selects the controller family ("multiplicative" or "outlet");
    index addresses the compartment inside its block (0-based).  direction
    "upper" keeps the compartment below bound (margin h = bound - value),
    "lower" keeps it above (h = value - bound).  alpha is the margin decay
    gain; alpha_e is the extra gain for the differentiated margin and is
    required for outlet constraints.
    """

    kind: str
    index: int
    bound: float
    alpha: float
    alpha_e: float | None = None
    direction: str = "upper"
    name: str = ""

    def __post_init__(self) -> None:
        if self.kind not in (MULTIPLICATIVE, OUTLET):
            raise ValueError(f"unknown constraint kind {self.kind!r}")
        if self.direction not in ("upper", "lower"):
            raise ValueError(f"unknown direction {self.direction!r}")
        if self.index < 0:
            raise ValueError("compartment index must be non-negative")
        if not self.bound > 0.0:
            raise ValueError("bound must be strictly positive")
        if not self.alpha > 0.0:
            raise ValueError("alpha must be strictly positive")
        if self.kind == OUTLET:
            if self.alpha_e is None or not self.alpha_e > 0.0:
                raise ValueError("outlet constraints need alpha_e > 0")

    @property
    def sign(self) -> float:
        return 1.0 if self.direction == "upper" else -1.0

    def check_against(self, spec: ModelSpec) -> None:
        size = spec.n if self.kind == MULTIPLICATIVE else spec.m
        if self.index >= size:
            raise ValueError(
                f"{self.kind} index {self.index} out of range for model "
                f"{spec.kind!r} ({size} compartments)"
            )

    def label(self, k: int | None = None) -> str:
        if self.name:
            return self.name
        prefix = "w" if self.kind == MULTIPLICATIVE else "z"
        return f"{prefix}{self.index}" if k is None else f"c{k}_{prefix}{self.index}"


@dataclass(frozen=True)
class ControlDecision:
    """Audit record of one controller evaluation.

    u_raw is the unclamped law output, u its clamp to the admissible
    interval [0, 1].  feasible is False exactly when u_raw exceeded 1, i.e.
    the admissible set could not realize the safety condition.  For a
    combined evaluation, active_constraint is the position of the
    constraint attaining the maximum (ties to the lowest index).
    barrier_values holds the margin h per constraint at the evaluated
    state; extended_values holds the differentiated margin h_e for outlet
    constraints and None elsewhere.
    """

    u_raw: float
    u: float
    feasible: bool
    active_constraint: int | None
    barrier_values: tuple[float, ...]
    extended_values: tuple[float | None, ...]

    @classmethod
    def rest(cls) -> "ControlDecision":
        """No-intervention decision (controller off or no constraints)."""
        return cls(0.0, 0.0, True, None, (), ())


def _clamp01(v: float) -> float:
    return 0.0 if v < 0.0 else (1.0 if v > 1.0 else v)


def _decision(
    u_raw: float,
    active: int | None,
    h_values: tuple[float, ...],
    he_values: tuple[float | None, ...],
) -> ControlDecision:
    return ControlDecision(
        u_raw=u_raw,
        u=_clamp01(u_raw),
        feasible=u_raw <= 1.0,
        active_constraint=active,
        barrier_values=h_values,
        extended_values=he_values,
    )


# -- scalar core -------------------------------------------------------------
#
# Everything below works on plain float tuples so the same code path serves
# both the public API and the inner loop of the fixed-step simulator and
# predictor, where call rates reach ~1e6 evaluations per run.


def _margin_t(c: SafetyConstraint, w: tuple, z: tuple) -> float:
    value = w[c.index] if c.kind == MULTIPLICATIVE else z[c.index]
    return c.sign * (c.bound - value)


def _extended_margin_t(spec: ModelSpec, c: SafetyConstraint, w: tuple, z: tuple) -> float:
    q = spec.q_t(w)
    r = spec.r_t(z)
    j = c.index
    return c.sign * (-(q[j] + r[j]) + c.alpha * (c.bound - z[j]))


def _terms_t(
    spec: ModelSpec, c: SafetyConstraint, w: tuple, z: tuple
) -> tuple[float, float]:
    """Return (drift, authority) of the safety condition at the state.

    The condition on the input reads  -drift - authority * u >= 0.  For a
    lower bound both pieces flip sign together with the margin.
    """
    s = c.sign
    if c.kind == MULTIPLICATIVE:
        i = c.index
        fi = spec.f_t(w)[i]
        gi = spec.g_t(w)[i]
        h = s * (c.bound - w[i])
        return s * fi - c.alpha * h, s * gi
    j = c.index
    f = spec.f_t(w)
    g = spec.g_t(w)
    q = spec.q_t(w)
    r = spec.r_t(z)
    jq_row = spec.dq_dw_t(w)[j]
    jr_row = spec.dr_dz_t(z)[j]
    jq_f = sum(a * b for a, b in zip(jq_row, f))
    jq_g = sum(a * b for a, b in zip(jq_row, g))
    jr_flow = sum(a * (qb + rb) for a, qb, rb in zip(jr_row, q, r))
    outflow = q[j] + r[j]
    drift = (
        jq_f
        + jr_flow
        + (c.alpha + c.alpha_e) * outflow
        - c.alpha_e * c.alpha * (c.bound - z[j])
    )
    return s * drift, s * jq_g


def _u_raw_t(spec: ModelSpec, c: SafetyConstraint, w: tuple, z: tuple) -> float:
    drift, authority = _terms_t(spec, c, w, z)
    mag = abs(authority)
    if mag < spec.g_tol:
        raise SingularControlError(
            f"control coefficient {authority:.3e} below tolerance {spec.g_tol:.3e} "
            f"for {c.kind} constraint on index {c.index}"
        )
    ratio = drift / mag
    relu = ratio if ratio > 0.0 else 0.0
    return relu if authority < 0.0 else -relu


def _state_tuples(spec: ModelSpec, state: ModelState) -> tuple[tuple, tuple]:
    if state.n != spec.n or state.m != spec.m:
        raise ValueError(
            f"state dimensions ({state.n}, {state.m}) do not match model "
            f"({spec.n}, {spec.m})"
        )
    return tuple(state.w), tuple(state.z)


# -- public operations -------------------------------------------------------


def barrier_value(constraint: SafetyConstraint, state: ModelState) -> float:
    """Safety margin h at the state; non-negative means inside the safe set."""
    block = state.w if constraint.kind == MULTIPLICATIVE else state.z
    if constraint.index >= block.size:
        raise ValueError(
            f"{constraint.kind} index {constraint.index} out of range "
            f"for state with ({state.n}, {state.m}) compartments"
        )
    return _margin_t(constraint, tuple(state.w), tuple(state.z))


def extended_barrier_value(
    spec: ModelSpec, constraint: SafetyConstraint, state: ModelState
) -> float:
    """Differentiated margin h_e = dh/dt + alpha*h for an outlet constraint."""
    if constraint.kind != OUTLET:
        raise ValueError("extended margin is defined for outlet constraints only")
    constraint.check_against(spec)
    w, z = _state_tuples(spec, state)
    return _extended_margin_t(spec, constraint, w, z)


def multiplicative_control(
    spec: ModelSpec, constraint: SafetyConstraint, state: ModelState
) -> ControlDecision:
    """Min-norm intervention keeping a multiplicative compartment inside its
    bound.  Raises SingularControlError when the input has no effect on the
    compartment at this state."""
    if constraint.kind != MULTIPLICATIVE:
        raise ValueError("constraint is not multiplicative")
    constraint.check_against(spec)
    w, z = _state_tuples(spec, state)
    u_raw = _u_raw_t(spec, constraint, w, z)
    return _decision(u_raw, None, (_margin_t(constraint, w, z),), (None,))


def outlet_control(
    spec: ModelSpec, constraint: SafetyConstraint, state: ModelState
) -> ControlDecision:
    """Min-norm intervention keeping an outlet compartment inside its bound,
    acting through the differentiated margin.  The caller is responsible for
    checking the starting condition (see validate_initial_condition)."""
    if constraint.kind != OUTLET:
        raise ValueError("constraint is not an outlet constraint")
    constraint.check_against(spec)
    w, z = _state_tuples(spec, state)
    u_raw = _u_raw_t(spec, constraint, w, z)
    h = _margin_t(constraint, w, z)
    he = _extended_margin_t(spec, constraint, w, z)
    return _decision(u_raw, None, (h,), (he,))


def sign_assumption_check(
    spec: ModelSpec,
    constraints: Sequence[SafetyConstraint],
    state: ModelState,
) -> bool:
    """True iff every constraint's control coefficient is strictly negative
    at the state (lower bounds enter with their flipped sign), which is what
    makes the max composition below exact."""
    w, z = _state_tuples(spec, state)
    for c in constraints:
        c.check_against(spec)
        _, authority = _terms_t(spec, c, w, z)
        if not authority < 0.0:
            return False
    return True


def combined_control(
    spec: ModelSpec,
    constraints: Sequence[SafetyConstraint],
    state: ModelState,
) -> ControlDecision:
    """Enforce several bounds at once by taking the largest individual law.

    Exact minimum-norm solution of the jointly constrained problem whenever
    all control coefficients share a negative sign; otherwise raises
    SignAssumptionError.  Ties in the maximum resolve to the lowest
    constraint index for reproducible audits.
    """
    constraints = list(constraints)
    if not constraints:
        return ControlDecision.rest()
    w, z = _state_tuples(spec, state)
    if not sign_assumption_check(spec, constraints, state):
        raise SignAssumptionError(
            "control coefficients do not share a negative sign at this state; "
            "max composition is not applicable"
        )
    best = -np.inf
    active = 0
    h_values: list[float] = []
    he_values: list[float | None] = []
    for k, c in enumerate(constraints):
        u_k = _u_raw_t(spec, c, w, z)
        if u_k > best:
            best, active = u_k, k
        h_values.append(_margin_t(c, w, z))
        he_values.append(
            _extended_margin_t(spec, c, w, z) if c.kind == OUTLET else None
        )
    return _decision(best, active, tuple(h_values), tuple(he_values))


@dataclass(frozen=True)
class ConstraintCheck:
    """Starting-condition status for one constraint."""

    index: int
    label: str
    margin: float
    extended_margin: float | None
    ok: bool


@dataclass(frozen=True)
class InitialConditionReport:
    checks: tuple[ConstraintCheck, ...]

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    def failures(self) -> tuple[ConstraintCheck, ...]:
        return tuple(c for c in self.checks if not c.ok)

    def describe(self) -> str:
        lines = []
        for c in self.checks:
            status = "ok" if c.ok else "FAIL"
            extra = "" if c.extended_margin is None else f", h_e={c.extended_margin:.6g}"
            lines.append(f"{c.label}: h={c.margin:.6g}{extra} [{status}]")
        return "\n".join(lines)


def validate_initial_condition(
    spec: ModelSpec,
    constraints: Sequence[SafetyConstraint],
    state0: ModelState,
) -> InitialConditionReport:
    """Check the hypotheses under which the controllers guarantee safety.

    Multiplicative constraints need the starting state inside the safe set
    (h >= 0).  Outlet constraints additionally need the differentiated
    margin non-negative at the start (h_e >= 0), since only its 0-superlevel
    set is rendered invariant.
    """
    checks = []
    for k, c in enumerate(constraints):
        c.check_against(spec)
        h = barrier_value(c, state0)
        if c.kind == OUTLET:
            he = extended_barrier_value(spec, c, state0)
            ok = h >= 0.0 and he >= 0.0
        else:
            he = None
            ok = h >= 0.0
        checks.append(ConstraintCheck(k, c.label(k), h, he, ok))
    return InitialConditionReport(tuple(checks))


def qp_oracle(
    spec: ModelSpec,
    constraints: Sequence[SafetyConstraint],
    state: ModelState,
    grid_resolution: float = 1e-4,
) -> float | None:
    """Brute-force reference solver for the min-norm problem.

    Minimizes u**2 over a uniform grid on [0, 1] subject to the exact
    safety conditions of every constraint; returns the smallest feasible
    grid value, or None when no grid point is feasible.  Independent of the
    closed forms: used to cross-check them.
    """
    if not grid_resolution > 0.0:
        raise ValueError("grid_resolution must be positive")
    w, z = _state_tuples(spec, state)
    steps = int(round(1.0 / grid_resolution))
    grid = np.linspace(0.0, 1.0, steps + 1)
    feasible = np.ones_like(grid, dtype=bool)
    for c in constraints:
        c.check_against(spec)
        drift, authority = _terms_t(spec, c, w, z)
        feasible &= (-drift - authority * grid) >= 0.0
    idx = int(np.argmax(feasible))
    if not feasible[idx]:
        return None
    return float(grid[idx])


# -- closed-form specializations ---------------------------------------------
#
# Direct transcriptions of the per-model laws, written out in their own
# algebraic grouping.  They deliberately do not reuse the generic machinery
# above: the test suite holds both paths against each other.


def closed_form_infection_control(
    params: SirParams | SihrdParams,
    S: float,
    I: float,
    i_max: float,
    alpha: float,
) -> float:
    """Infection cap for SIR-type dynamics: ReLU(1 - (a*(Imax-I) + out*I) / T)
    with T the transmission flow and out the total outflow rate of I."""
    if isinstance(params, SihrdParams):
        out = params.gamma + params.lam + params.mu
    else:
        out = params.gamma
    transmission = params.beta0 * S * I / params.N
    val = 1.0 - (alpha * (i_max - I) + out * I) / transmission
    return val if val > 0.0 else 0.0


def closed_form_hospitalization_control(
    params: SihrdParams,
    S: float,
    I: float,
    H: float,
    h_max: float,
    alpha: float,
    alpha_e: float,
) -> float:
    """Hospitalization cap for SIHRD dynamics."""
    lam, nu = params.lam, params.nu
    out = params.gamma + params.lam + params.mu
    denom = lam * params.beta0 * S * I / params.N
    val = (
        1.0
        - alpha_e * alpha * (h_max - H) / denom
        - ((nu - alpha - alpha_e) * (lam * I - nu * H) + out * lam * I) / denom
    )
    return val if val > 0.0 else 0.0


def closed_form_death_control(
    params: SihrdParams,
    S: float,
    I: float,
    D: float,
    d_max: float,
    alpha: float,
    alpha_e: float,
) -> float:
    """Death-toll cap for SIHRD dynamics."""
    mu = params.mu
    out = params.gamma + params.lam + params.mu
    denom = mu * params.beta0 * S * I / params.N
    val = (
        1.0
        - alpha_e * alpha * (d_max - D) / denom
        - (out - alpha - alpha_e) * mu * I / denom
    )
    return val if val > 0.0 else 0.0
