"""Scenario document parsing, serialization round-trips, presets."""

import numpy as np
import pytest

from episafe.safety import MULTIPLICATIVE, OUTLET
from episafe.scenarios import (
    PRESETS,
    ScenarioParseError,
    default_gains,
    load_preset,
    parse_scenario,
    parse_scenario_text,
    preset_names,
    resolve_scenario,
    scenario_text,
    write_scenario,
)
from episafe.sim import simulate

MINIMAL = """\
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
t_end = 40
dt = 0.1

[feedback]
mode = instantaneous

[constraint]
compartment = I
bound = 2e5
"""


def scenario_equal(a, b):
    assert a.spec.kind == b.spec.kind
    assert a.spec.params == b.spec.params
    assert np.array_equal(a.state0.x, b.state0.x)
    assert (a.t_start, a.t_end, a.dt) == (b.t_start, b.t_end, b.dt)
    assert a.control_start == b.control_start
    assert (a.feedback_mode, a.tau) == (b.feedback_mode, b.tau)
    assert (a.disturbance_delta, a.seed) == (b.disturbance_delta, b.seed)
    assert a.constraints == b.constraints


class TestParsing:
    def test_minimal_document(self):
        sc = parse_scenario_text(MINIMAL)
        assert sc.spec.kind == "sir"
        assert sc.constraints[0].kind == MULTIPLICATIVE
        assert sc.constraints[0].alpha == pytest.approx(0.02)  # gamma/10 default

    def test_unknown_key_reports_line(self):
        bad = MINIMAL.replace("dt = 0.1", "dt = 0.1\nstep_mode = fancy")
        with pytest.raises(ScenarioParseError, match=r":18: unknown \[time\] key 'step_mode'"):
            parse_scenario_text(bad)

    def test_unknown_section_rejected(self):
        with pytest.raises(ScenarioParseError, match=r"unknown section \[plotting\]"):
            parse_scenario_text(MINIMAL + "\n[plotting]\nstyle = fancy\n")

    def test_version_mismatch(self):
        with pytest.raises(ScenarioParseError, match="schema_version 2"):
            parse_scenario_text(MINIMAL.replace("schema_version = 1", "schema_version = 2"))

    def test_missing_version(self):
        with pytest.raises(ScenarioParseError, match="schema_version"):
            parse_scenario_text(MINIMAL.replace("schema_version = 1\n", ""))

    def test_tau_not_multiple_of_dt(self):
        bad = MINIMAL.replace("mode = instantaneous", "mode = delayed\ntau = 0.55")
        with pytest.raises(ScenarioParseError, match="tau"):
            parse_scenario_text(bad)

    def test_duplicate_key_rejected(self):
        bad = MINIMAL.replace("gamma = 0.2", "gamma = 0.2\ngamma = 0.3")
        with pytest.raises(ScenarioParseError, match="duplicate key 'gamma'"):
            parse_scenario_text(bad)

    def test_bad_number_reports_key(self):
        bad = MINIMAL.replace("beta0 = 0.33", "beta0 = fast")
        with pytest.raises(ScenarioParseError, match="beta0"):
            parse_scenario_text(bad)

    def test_unknown_compartment(self):
        bad = MINIMAL.replace("compartment = I", "compartment = X")
        with pytest.raises(ScenarioParseError, match="unknown compartment 'X'"):
            parse_scenario_text(bad)

    def test_missing_initial_compartment(self):
        bad = MINIMAL.replace("R = 6.9e6\n", "")
        with pytest.raises(ScenarioParseError, match=r"missing compartment\(s\) \['R'\]"):
            parse_scenario_text(bad)

    def test_empty_file(self, tmp_path):
        p = tmp_path / "empty.scenario"
        p.write_text("")
        with pytest.raises(ScenarioParseError, match="empty"):
            parse_scenario(p)

    def test_seir_infectious_bound_rejected(self):
        doc = MINIMAL.replace("kind = sir", "kind = seir\nsigma = 0.2").replace(
            "S = 26e6", "S = 26e6\nE = 1e4"
        )
        with pytest.raises(ScenarioParseError, match="no authority over I"):
            parse_scenario_text(doc)

    def test_seir_exposed_bound_accepted(self):
        doc = (
            MINIMAL.replace("kind = sir", "kind = seir\nsigma = 0.2")
            .replace("S = 26e6", "S = 26e6\nE = 1e4")
            .replace("compartment = I", "compartment = E")
        )
        sc = parse_scenario_text(doc)
        assert sc.constraints[0].kind == MULTIPLICATIVE
        assert sc.constraints[0].index == 1


class TestDefaultGains:
    def test_sihrd_outlet_gains_mirror_rates(self, sihrd_spec):
        alpha, alpha_e = default_gains(sihrd_spec, OUTLET, 0)  # H
        assert alpha == pytest.approx((0.14 + 0.03 + 0.01) / 10.0)
        assert alpha_e == pytest.approx(0.14 / 10.0)
        alpha_d, alpha_e_d = default_gains(sihrd_spec, OUTLET, 2)  # D: no own outflow
        assert alpha_d == alpha_e_d == pytest.approx(0.018)

    def test_sir_multiplicative_gain(self, sir_spec):
        alpha, alpha_e = default_gains(sir_spec, MULTIPLICATIVE, 1)
        assert alpha == pytest.approx(0.02)
        assert alpha_e is None


class TestRoundTrip:
    @pytest.mark.parametrize("name", sorted(PRESETS))
    def test_presets_round_trip(self, name, tmp_path):
        sc = load_preset(name)
        path = write_scenario(sc, tmp_path / f"{name}.scenario")
        scenario_equal(parse_scenario(path), sc)

    def test_serialization_deterministic(self):
        sc = load_preset("sir_fig2")
        assert scenario_text(sc) == scenario_text(sc)

    def test_disturbance_and_direction_round_trip(self, tmp_path):
        doc = MINIMAL + "\n[disturbance]\ndelta = 0.05\nseed = 99\n"
        doc += "\n[constraint]\ncompartment = S\nbound = 1e6\ndirection = lower\nname = s_floor\n"
        sc = parse_scenario_text(doc)
        path = write_scenario(sc, tmp_path / "rt.scenario")
        back = parse_scenario(path)
        scenario_equal(back, sc)
        assert back.constraints[1].direction == "lower"
        assert back.constraints[1].name == "s_floor"


class TestPresets:
    def test_names(self):
        assert preset_names() == sorted(["sir_fig2", "sihrd_fig3", "sir_delay_danger"])

    def test_fig2_preset_parameters(self):
        sc = load_preset("sir_fig2")
        p = sc.spec.params
        assert (p.beta0, p.gamma, p.N) == (0.33, 0.2, 33e6)
        assert sc.feedback_mode == "predictor" and sc.tau == 11.0
        c = sc.constraints[0]
        assert (c.bound, c.alpha) == (2e5, 0.02)

    def test_fig3_preset_parameters(self):
        sc = load_preset("sihrd_fig3")
        p = sc.spec.params
        assert (p.beta0, p.gamma, p.lam, p.nu, p.mu, p.N) == (
            0.53, 0.14, 0.03, 0.14, 0.01, 15e6,
        )
        assert sc.tau == 9.0
        bounds = {c.name: c.bound for c in sc.constraints}
        assert bounds == {"H": 4e4, "D": 4e5}
        gains = {c.name: (c.alpha, c.alpha_e) for c in sc.constraints}
        assert gains["H"] == (0.018, 0.014)
        assert gains["D"] == (0.018, 0.018)

    def test_resolve_prefers_presets_then_files(self, tmp_path):
        name, sc = resolve_scenario("sir_fig2")
        assert name == "sir_fig2"
        path = tmp_path / "custom.scenario"
        write_scenario(sc, path)
        name2, sc2 = resolve_scenario(str(path))
        assert name2 == "custom"
        with pytest.raises(ScenarioParseError, match="neither a preset"):
            resolve_scenario("nonexistent_thing")


def test_fig2_preset_halved_step_peak_stable():
    # halving dt moves the peak infection by well under 0.1 percent
    import dataclasses

    sc = load_preset("sir_fig2")
    peak_base = simulate(sc).states[:, 1].max()
    peak_half = simulate(dataclasses.replace(sc, dt=0.05)).states[:, 1].max()
    assert abs(peak_base - peak_half) / peak_half < 1e-3
