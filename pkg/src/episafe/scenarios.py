"""Scenario files: a versioned plain-text key/value format with sections.

The format is line-oriented: ``key = value`` pairs grouped under
``[section]`` headers, ``#`` comments, blank lines ignored.  Sections are
``[model]``, ``[initial]``, ``[time]``, ``[feedback]``, optional
``[disturbance]``, and one ``[constraint]`` section per population bound.
A top-level ``schema_version = 1`` line is mandatory.  Unknown sections or
keys are rejected with file:line diagnostics, as are values violating the
scenario invariants.

Constraints name compartments by label; the parser resolves the label to
the multiplicative or outlet block of the chosen model.  Margin gains
default to one tenth of the relevant outflow rate when omitted (see
default_gains).
"""

from __future__ import annotations

import math
from pathlib import Path

from .models import (
    ModelSpec,
    SeirParams,
    SihrdParams,
    SirParams,
    build_seir,
    build_sihrd,
    build_sir,
)
from .safety import MULTIPLICATIVE, OUTLET, SafetyConstraint
from .sim import Scenario

__all__ = [
    "SCHEMA_VERSION",
    "ScenarioParseError",
    "parse_scenario",
    "parse_scenario_text",
    "write_scenario",
    "scenario_text",
    "default_gains",
    "PRESETS",
    "preset_names",
    "load_preset",
    "resolve_scenario",
]

SCHEMA_VERSION = 1

_MODEL_KEYS = {
    "sir": ("beta0", "gamma", "N"),
    "seir": ("beta0", "gamma", "N", "sigma"),
    "sihrd": ("beta0", "gamma", "N", "lam", "nu", "mu"),
}
_TIME_KEYS = {"t_start", "t_end", "dt", "control_start"}
_FEEDBACK_KEYS = {"mode", "tau"}
_DISTURBANCE_KEYS = {"delta", "seed"}
_CONSTRAINT_KEYS = {"compartment", "bound", "alpha", "alpha_e", "direction", "name"}


class ScenarioParseError(ValueError):
    def __init__(self, message: str, origin: str = "", line: int | None = None):
        where = origin if line is None else f"{origin}:{line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.origin = origin
        self.line = line


class _Section:
    """One parsed section: raw values plus the line each key came from."""

    def __init__(self, name: str, lineno: int):
        self.name = name
        self.lineno = lineno
        self.values: dict[str, str] = {}
        self.lines: dict[str, int] = {}

    def line(self, key: str) -> int | None:
        return self.lines.get(key)


def default_gains(spec: ModelSpec, kind: str, index: int) -> tuple[float, float | None]:
    """Margin decay gains used when a constraint omits them.

    One tenth of the constrained compartment's total outflow rate; outlet
    constraints additionally get alpha_e from their own outflow rate,
    falling back to the inflow-side rate for terminal compartments.
    """
    p = spec.params
    if spec.kind == "sihrd":
        i_out = p.gamma + p.lam + p.mu
        own = {0: p.nu, 1: 0.0, 2: 0.0}  # H, R, D
    else:
        i_out = p.gamma
        own = {0: 0.0}
    if kind == MULTIPLICATIVE:
        return i_out / 10.0, None
    alpha = i_out / 10.0
    own_rate = own.get(index, 0.0)
    alpha_e = own_rate / 10.0 if own_rate > 0.0 else alpha
    return alpha, alpha_e


def _as_float(sec: _Section, key: str, origin: str) -> float:
    raw = sec.values[key]
    try:
        v = float(raw)
    except ValueError:
        raise ScenarioParseError(
            f"key {key!r}: cannot parse {raw!r} as a number", origin, sec.line(key)
        ) from None
    if not math.isfinite(v):
        raise ScenarioParseError(f"key {key!r}: non-finite value", origin, sec.line(key))
    return v


def _as_int(sec: _Section, key: str, origin: str) -> int:
    raw = sec.values[key]
    try:
        return int(raw)
    except ValueError:
        raise ScenarioParseError(
            f"key {key!r}: cannot parse {raw!r} as an integer", origin, sec.line(key)
        ) from None


def _check_keys(sec: _Section, allowed: set[str], origin: str) -> None:
    where = f"[{sec.name}]" if sec.name else "top-level"
    for key in sec.values:
        if key not in allowed:
            raise ScenarioParseError(
                f"unknown {where} key {key!r}", origin, sec.line(key)
            )


def _build_model(sec: _Section, origin: str) -> ModelSpec:
    kind = sec.values.get("kind")
    if kind is None:
        raise ScenarioParseError("[model] section needs a 'kind'", origin, sec.lineno)
    if kind not in _MODEL_KEYS:
        raise ScenarioParseError(
            f"unknown model kind {kind!r} (choose from {sorted(_MODEL_KEYS)})",
            origin,
            sec.line("kind"),
        )
    wanted = _MODEL_KEYS[kind]
    missing = [k for k in wanted if k not in sec.values]
    if missing:
        raise ScenarioParseError(
            f"[model] missing parameter(s) {missing}", origin, sec.lineno
        )
    _check_keys(sec, set(wanted) | {"kind"}, origin)
    params = {k: _as_float(sec, k, origin) for k in wanted}
    try:
        if kind == "sir":
            return build_sir(SirParams(**params))
        if kind == "seir":
            return build_seir(SeirParams(**params))
        return build_sihrd(SihrdParams(**params))
    except ValueError as exc:
        raise ScenarioParseError(str(exc), origin, sec.lineno) from exc


def _build_constraint(spec: ModelSpec, sec: _Section, origin: str) -> SafetyConstraint:
    _check_keys(sec, _CONSTRAINT_KEYS, origin)
    label = sec.values.get("compartment")
    if label is None:
        raise ScenarioParseError("[constraint] needs a 'compartment'", origin, sec.lineno)
    if label not in spec.labels:
        raise ScenarioParseError(
            f"unknown compartment {label!r} for model {spec.kind!r}",
            origin,
            sec.line("compartment"),
        )
    if "bound" not in sec.values:
        raise ScenarioParseError(
            f"[constraint] on {label}: missing 'bound'", origin, sec.lineno
        )
    if spec.kind == "seir" and label in ("I", "R"):
        raise ScenarioParseError(
            f"the input has no authority over {label} in the seir model "
            "(bound S or E instead)",
            origin,
            sec.line("compartment"),
        )
    pos = spec.labels.index(label)
    kind = MULTIPLICATIVE if pos < spec.n else OUTLET
    index = pos if pos < spec.n else pos - spec.n
    d_alpha, d_alpha_e = default_gains(spec, kind, index)
    alpha = _as_float(sec, "alpha", origin) if "alpha" in sec.values else d_alpha
    alpha_e = _as_float(sec, "alpha_e", origin) if "alpha_e" in sec.values else d_alpha_e
    try:
        return SafetyConstraint(
            kind=kind,
            index=index,
            bound=_as_float(sec, "bound", origin),
            alpha=alpha,
            alpha_e=alpha_e if kind == OUTLET else None,
            direction=sec.values.get("direction", "upper"),
            name=sec.values.get("name", label),
        )
    except ValueError as exc:
        raise ScenarioParseError(
            f"[constraint] on {label}: {exc}", origin, sec.lineno
        ) from exc


def parse_scenario_text(text: str, origin: str = "<string>") -> Scenario:
    """Parse and fully validate a scenario document."""
    known = {"model", "initial", "time", "feedback", "disturbance", "constraint"}
    top = _Section("", 0)
    sections: list[_Section] = [top]
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if name not in known:
                raise ScenarioParseError(f"unknown section [{name}]", origin, lineno)
            if name != "constraint" and any(s.name == name for s in sections):
                raise ScenarioParseError(f"duplicate section [{name}]", origin, lineno)
            sections.append(_Section(name, lineno))
            continue
        if "=" not in line:
            raise ScenarioParseError(
                f"expected 'key = value', got {line!r}", origin, lineno
            )
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise ScenarioParseError(f"malformed assignment {line!r}", origin, lineno)
        sec = sections[-1]
        if key in sec.values:
            raise ScenarioParseError(f"duplicate key {key!r}", origin, lineno)
        sec.values[key] = value
        sec.lines[key] = lineno

    _check_keys(top, {"schema_version"}, origin)
    if "schema_version" not in top.values:
        raise ScenarioParseError("missing mandatory 'schema_version'", origin)
    version = _as_int(top, "schema_version", origin)
    if version != SCHEMA_VERSION:
        raise ScenarioParseError(
            f"schema_version {version} not supported (expected {SCHEMA_VERSION})",
            origin,
            top.line("schema_version"),
        )

    named = {s.name: s for s in sections if s.name != "constraint"}
    for required in ("model", "initial", "time", "feedback"):
        if required not in named:
            raise ScenarioParseError(f"missing section [{required}]", origin)

    spec = _build_model(named["model"], origin)

    init = named["initial"]
    _check_keys(init, set(spec.labels), origin)
    missing = [lbl for lbl in spec.labels if lbl not in init.values]
    if missing:
        raise ScenarioParseError(
            f"[initial] missing compartment(s) {missing}", origin, init.lineno
        )
    try:
        state0 = spec.state([_as_float(init, lbl, origin) for lbl in spec.labels])
    except ValueError as exc:
        raise ScenarioParseError(f"[initial]: {exc}", origin, init.lineno) from exc

    tsec = named["time"]
    _check_keys(tsec, _TIME_KEYS, origin)
    for key in ("t_start", "t_end", "dt"):
        if key not in tsec.values:
            raise ScenarioParseError(f"[time] missing {key!r}", origin, tsec.lineno)
    t_start = _as_float(tsec, "t_start", origin)
    t_end = _as_float(tsec, "t_end", origin)
    dt = _as_float(tsec, "dt", origin)
    control_start = (
        _as_float(tsec, "control_start", origin)
        if "control_start" in tsec.values
        else None
    )

    fsec = named["feedback"]
    _check_keys(fsec, _FEEDBACK_KEYS, origin)
    mode = fsec.values.get("mode")
    if mode is None:
        raise ScenarioParseError("[feedback] missing 'mode'", origin, fsec.lineno)
    tau = _as_float(fsec, "tau", origin) if "tau" in fsec.values else 0.0

    delta, seed = 0.0, 0
    if "disturbance" in named:
        dsec = named["disturbance"]
        _check_keys(dsec, _DISTURBANCE_KEYS, origin)
        if "delta" in dsec.values:
            delta = _as_float(dsec, "delta", origin)
        if "seed" in dsec.values:
            seed = _as_int(dsec, "seed", origin)

    constraints = tuple(
        _build_constraint(spec, s, origin) for s in sections if s.name == "constraint"
    )

    try:
        return Scenario(
            spec=spec,
            state0=state0,
            t_start=t_start,
            t_end=t_end,
            dt=dt,
            constraints=constraints,
            feedback_mode=mode,
            tau=tau,
            disturbance_delta=delta,
            seed=seed,
            control_start=control_start,
        )
    except ValueError as exc:
        raise ScenarioParseError(str(exc), origin) from exc


def parse_scenario(path: str | Path) -> Scenario:
    """Parse a scenario file; raises ScenarioParseError with file:line
    context on any problem."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioParseError(f"cannot read scenario: {exc}", str(path)) from exc
    if not text.strip():
        raise ScenarioParseError("empty scenario file", str(path))
    return parse_scenario_text(text, origin=str(path))


def _fmt(v: float) -> str:
    return repr(float(v))


def scenario_text(scenario: Scenario) -> str:
    """Serialize a scenario to the canonical document form."""
    spec = scenario.spec
    lines = [f"schema_version = {SCHEMA_VERSION}", "", "[model]", f"kind = {spec.kind}"]
    for key in _MODEL_KEYS[spec.kind]:
        lines.append(f"{key} = {_fmt(getattr(spec.params, key))}")
    lines += ["", "[initial]"]
    for lbl, value in zip(spec.labels, scenario.state0.x):
        lines.append(f"{lbl} = {_fmt(value)}")
    lines += [
        "",
        "[time]",
        f"t_start = {_fmt(scenario.t_start)}",
        f"t_end = {_fmt(scenario.t_end)}",
        f"dt = {_fmt(scenario.dt)}",
        f"control_start = {_fmt(scenario.control_start)}",
        "",
        "[feedback]",
        f"mode = {scenario.feedback_mode}",
        f"tau = {_fmt(scenario.tau)}",
    ]
    if scenario.disturbance_delta > 0.0 or scenario.seed != 0:
        lines += [
            "",
            "[disturbance]",
            f"delta = {_fmt(scenario.disturbance_delta)}",
            f"seed = {scenario.seed}",
        ]
    for c in scenario.constraints:
        pos = c.index if c.kind == MULTIPLICATIVE else spec.n + c.index
        lines += [
            "",
            "[constraint]",
            f"compartment = {spec.labels[pos]}",
            f"bound = {_fmt(c.bound)}",
            f"alpha = {_fmt(c.alpha)}",
        ]
        if c.kind == OUTLET:
            lines.append(f"alpha_e = {_fmt(c.alpha_e)}")
        if c.direction != "upper":
            lines.append(f"direction = {c.direction}")
        if c.name and c.name != spec.labels[pos]:
            lines.append(f"name = {c.name}")
    return "\n".join(lines) + "\n"


def write_scenario(scenario: Scenario, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(scenario_text(scenario))
    return path


# -- bundled presets ----------------------------------------------------------

PRESETS: dict[str, str] = {
    # US-fitted SIR, infection cap 200k, 11-day measurement delay compensated
    # by forecast feedback; control engages after a 10-day open-loop lead-in.
    "sir_fig2": """\
schema_version = 1

[model]
kind = sir
beta0 = 0.33
gamma = 0.2
N = 33e6

[initial]
S = 26e6
I = 1e5
R = 6.9e6

[time]
t_start = 0
t_end = 190
dt = 0.1
control_start = 10

[feedback]
mode = predictor
tau = 11

[constraint]
compartment = I
bound = 2e5
alpha = 0.02
""",
    # US-fitted SIHRD, hospital-load and death-toll caps enforced jointly,
    # 9-day delay compensated by forecast feedback.
    "sihrd_fig3": """\
schema_version = 1

[model]
kind = sihrd
beta0 = 0.53
gamma = 0.14
N = 15e6
lam = 0.03
nu = 0.14
mu = 0.01

[initial]
S = 14951000
I = 15000
H = 3000
R = 30000
D = 1000

[time]
t_start = 0
t_end = 160
dt = 0.1

[feedback]
mode = predictor
tau = 9

[constraint]
compartment = H
bound = 4e4
alpha = 0.018
alpha_e = 0.014

[constraint]
compartment = D
bound = 4e5
alpha = 0.018
alpha_e = 0.018
""",
    # Fast-growth regime where feeding back the raw 20-day-old measurement
    # breaches the cap while forecast feedback holds it.
    "sir_delay_danger": """\
schema_version = 1

[model]
kind = sir
beta0 = 0.33
gamma = 0.2
N = 33e6

[initial]
S = 32.9e6
I = 2000
R = 97998

[time]
t_start = 0
t_end = 60
dt = 0.1

[feedback]
mode = delayed
tau = 20

[constraint]
compartment = I
bound = 5e4
alpha = 0.02
""",
}

_PRESET_NOTES = {
    "sir_fig2": "SIR infection cap, predictor feedback over an 11-day delay",
    "sihrd_fig3": "SIHRD joint hospital/death caps, predictor feedback, 9-day delay",
    "sir_delay_danger": "delayed feedback breaching a cap that prediction holds",
}


def preset_names() -> list[str]:
    return sorted(PRESETS)


def preset_note(name: str) -> str:
    return _PRESET_NOTES.get(name, "")


def load_preset(name: str) -> Scenario:
    if name not in PRESETS:
        raise ScenarioParseError(
            f"unknown preset {name!r} (available: {', '.join(preset_names())})"
        )
    return parse_scenario_text(PRESETS[name], origin=f"<preset:{name}>")


def resolve_scenario(ref: str) -> tuple[str, Scenario]:
    """Resolve a CLI scenario reference: preset name or file path.

    Returns (name, scenario) where name is a short identifier for output
    file naming.
    """
    if ref in PRESETS:
        return ref, load_preset(ref)
    path = Path(ref)
    if path.exists():
        return path.stem, parse_scenario(path)
    raise ScenarioParseError(
        f"{ref!r} is neither a preset ({', '.join(preset_names())}) nor a file"
    )
