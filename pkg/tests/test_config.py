import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from meshwalk.config import (PRESETS, ConfigError, InitialState, load_config, load_preset,
                             parse_angle, parse_config, preset_text)

PI = np.pi

MINIMAL = """
protocol: {theta1: 0.25pi, theta2: 0.1, phi: -pi/2, n_sites: 6}
run: {n_periods: 5}
"""


@pytest.mark.parametrize("text, value", [
    ("pi", PI), ("-pi", -PI), ("0.25pi", 0.25 * PI), ("pi/2", PI / 2), ("-pi/4", -PI / 4),
    ("0.4 * pi", 0.4 * PI), ("2pi/3", 2 * PI / 3), ("1e-1pi", 0.1 * PI), (0.3, 0.3), (2, 2.0),
    ("0.7", 0.7)])
def test_parse_angle(text, value):
    assert parse_angle(text) == pytest.approx(value, abs=1e-15)


@pytest.mark.parametrize("bad", ["tau", "pi/0", True, "0.1pix"])
def test_parse_angle_rejects(bad):
    with pytest.raises(ValueError):
        parse_angle(bad)


def test_minimal_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg.protocol.phi == pytest.approx(-PI / 2)
    assert cfg.protocol.boundary == "open"
    assert cfg.noise.schedule == "none" and cfg.noise.sigma == 0.0
    assert cfg.engine == "trajectory" and cfg.n_steps == 10
    assert cfg.initial == InitialState("site", 0)


def test_fig2_preset():
    cfg = load_preset("fig2b")
    p = cfg.protocol
    assert (p.theta1, p.theta2, p.phi) == (0.0, pytest.approx(0.25 * PI), 0.0)
    assert cfg.noise.sigma == pytest.approx(0.4 * PI)
    assert cfg.n_realizations == 100 and cfg.n_steps == 80


def test_fig4_preset():
    cfg = load_preset("fig4")
    p = cfg.protocol
    assert p.n_sites == 44 and p.theta1 == pytest.approx(0.5 * PI) and p.theta2 == 0.0
    assert p.phi == pytest.approx(0.2 * PI) and cfg.noise.sigma == pytest.approx(0.12 * PI)
    assert cfg.initial.kind == "edge"


@pytest.mark.parametrize("name", PRESETS)
def test_presets_round_trip(name):
    cfg = load_preset(name)
    again = parse_config(cfg.to_yaml())
    assert again == cfg
    assert again.to_yaml() == cfg.to_yaml()


@given(st.floats(0, PI), st.floats(0, PI), st.floats(-PI, PI), st.integers(2, 200),
       st.sampled_from(["none", "per_step", "stroboscopic"]), st.floats(0, 3),
       st.integers(0, 2**64 - 1), st.integers(1, 500))
def test_round_trip_lossless(t1, t2, phi, n, schedule, sigma, seed, periods):
    text = f"""
protocol: {{theta1: {t1!r}, theta2: {t2!r}, phi: {phi!r}, n_sites: {n}, boundary: periodic}}
noise: {{distribution: uniform, sigma: {sigma!r}, schedule: {schedule}, seed: {seed}}}
run: {{engine: master, initial: "bloch:0.5pi", n_periods: {periods}, observables: [trace, "coherence:0,1"]}}
"""
    cfg = parse_config(text)
    assert parse_config(cfg.to_yaml()) == cfg


def test_empty_document_lists_required():
    with pytest.raises(ConfigError) as err:
        parse_config("")
    msg = str(err.value)
    for key in ("protocol.theta1", "protocol.theta2", "protocol.phi", "protocol.n_sites", "run.n_periods"):
        assert key in msg


def test_errors_carry_line_numbers():
    text = """protocol:
  theta1: 0.1
  theta2: 0.2
  phi: 0.0
  n_sites: 1
  colour: red
noise:
  sigma: -0.2
run:
  n_periods: 4
  observables: [magic]
"""
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    probs = err.value.problems
    assert any(p.startswith("line 5:") and "n_sites" in p for p in probs)
    assert any(p.startswith("line 6:") and "colour" in p for p in probs)
    assert any(p.startswith("line 8:") and "sigma" in p for p in probs)
    assert any(p.startswith("line 11:") and "magic" in p for p in probs)
    assert not any("missing" in p for p in probs)


@pytest.mark.parametrize("extra, needle", [
    ("bogus: 1", "unknown section"),
    ("run: {n_periods: 2, n_steps: 4}", "not both"),
    ("run: {n_steps: 5}", "even"),
    ("run: {n_periods: 2, initial: 'site:9'}", "outside lattice"),
    ("run: {n_periods: 2, initial: 'spot'}", "initial state"),
    ("run: {n_periods: 2}\nsweep: {out: [a, b]}", "cannot sweep"),
    ("run: {n_periods: 2}\nsweep: {sigma: []}", "non-empty"),
    ("run: {n_periods: 2}\nsweep: {sigma: [0.1, -1]}", "sweep.sigma"),
])
def test_specific_errors(extra, needle):
    base = "protocol: {theta1: 0.1, theta2: 0.2, phi: 0, n_sites: 4}\n"
    with pytest.raises(ConfigError) as err:
        parse_config(base + extra)
    assert needle in str(err.value)


def test_edge_needs_open_boundary():
    text = "protocol: {theta1: 0.1, theta2: 0.2, phi: 0, n_sites: 4, boundary: periodic}\n" \
           "run: {n_periods: 2, initial: edge}"
    with pytest.raises(ConfigError):
        parse_config(text)


def test_malformed_yaml():
    with pytest.raises(ConfigError) as err:
        parse_config("protocol: [unclosed\n")
    assert "malformed" in str(err.value)
    with pytest.raises(ConfigError):
        parse_config("- a\n- b\n")


def test_initial_state_forms():
    assert InitialState.parse("site:3:beta") == InitialState("site", 3, "beta")
    assert InitialState.parse("bloch:pi").k == pytest.approx(PI)
    assert InitialState.parse("edge:right").side == "right"
    for text in ("site:3:beta", "edge:left", "site:0"):
        assert InitialState.parse(text).text() == text


def test_sweep_expansion():
    cfg = load_preset("supp-return")
    points = cfg.expand_sweep()
    assert [pt for pt, _ in points] == [{"theta1": "0.5pi"}, {"theta1": "0.45pi"}]
    assert points[1][1].protocol.theta1 == pytest.approx(0.45 * PI)
    assert not points[0][1].sweep
    assert parse_config(MINIMAL).expand_sweep()[0][0] == {}


def test_overrides_validate():
    cfg = parse_config(MINIMAL)
    assert cfg.with_overrides(sigma=0.3).noise.sigma == 0.3
    with pytest.raises(ConfigError):
        cfg.with_overrides(colour="red")
    with pytest.raises(ConfigError):
        cfg.with_overrides(n_sites=0)


def test_unknown_preset_and_load_config(tmp_path):
    with pytest.raises(ConfigError):
        preset_text("fig9")
    path = tmp_path / "c.yaml"
    path.write_text(MINIMAL)
    assert load_config(path) == parse_config(MINIMAL)
