import pytest
from hypothesis import given, settings, strategies as st

from nsd_ensemble.config import (SCHEMA, emit_config, flatten, from_flat, parse_config,
                                 parse_config_text, parse_value)
from nsd_ensemble.errors import ConfigError


def _field(text):
    with pytest.raises(ConfigError) as exc:
        parse_config_text(text)
    return exc.value.field


def test_empty_scenario():
    assert _field("scenario =\n") == "scenario"
    assert _field("mesh.n = 8\n") == "scenario"


def test_y_domain_defaults():
    rc = parse_config_text("scenario = y-domain\n")
    e = rc.ensemble
    assert (e.k, e.beta, e.dt, e.t_end, e.J) == (3, 3.0, 1 / 32, 1.0, 100)
    assert rc.mesh_n == 32
    assert rc.conductivity_kind == "uniform-isotropic" and rc.conductivity_scale == 1e-2
    assert rc.study.fluxes[0] == (2.0, -1.0, -1.0)
    rc = parse_config_text("scenario = y-domain\nmesh.n = 16\n")
    assert rc.ensemble.dt == 1 / 16


def test_values_and_comments():
    rc = parse_config_text(
        "scenario = mms-temporal   # fixed mesh\n"
        "scheme.dt = 1/20\n"
        "study.dts = [1/10, 2**-4]\n"
        "conductivity.values = (1.0, 2.0)\n"
        "scheme.t_end = 0.5\n")
    assert rc.ensemble.dt == 0.05
    assert rc.study.dts == (0.1, 0.0625)
    assert rc.ensemble.J == 2
    assert parse_value("ensemble") == "ensemble"
    assert parse_value("[(1, -1, 0)]") == ((1, -1, 0),)


@pytest.mark.parametrize("text,field", [
    ("scenario = timing\nmesh.m = 3\n", "mesh.m"),
    ("scenario = timing\nmesh.n = 4\nmesh.n = 8\n", "mesh.n"),
    ("scenario = timing\nscheme.k = 5\n", "scheme.k"),
    ("scenario = timing\nscheme.dt = -1\n", "scheme.dt"),
    ("scenario = timing\nscheme.k = two\n", "scheme.k"),
    ("scenario = timing\nscheme.dt = 1/0\n", "scheme.dt"),
    ("scenario = y-domain\nmesh.n = 30\n", "mesh.n"),
    ("scenario = single-run\nconductivity.values = (1.0, 2.0)\nscheme.J = 3\n", "conductivity.values"),
    ("scenario = single-run\nsav.c_r = 0.5\n", "sav.c_r"),
    ("scenario = single-run\nscheme.mode = batched\n", "scheme.mode"),
    ("scenario = warp\n", "scenario"),
])
def test_validation_errors(text, field):
    assert _field(text) == field


def test_t_end_multiple_of_dt():
    with pytest.raises(ConfigError) as exc:
        parse_config_text("scenario = single-run\nscheme.dt = 0.3\nscheme.t_end = 1.0\n")
    assert exc.value.field == "scheme"


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "nope.cfg")


@pytest.mark.parametrize("scenario", ["mms-convergence", "mms-temporal", "longtime", "timing",
                                      "y-domain", "single-run"])
def test_round_trip(scenario):
    rc = parse_config_text(f"scenario = {scenario}\n")
    assert parse_config_text(emit_config(rc)) == rc
    assert set(flatten(rc)) == set(SCHEMA)


@given(n=st.sampled_from([4, 8, 12]), k=st.sampled_from([2, 3, 4]), seed=st.integers(0, 2 ** 31),
       gamma=st.floats(1e-4, 10), mode=st.sampled_from(["ensemble", "individual"]))
@settings(max_examples=40, deadline=None)
def test_round_trip_random(n, k, seed, gamma, mode):
    rc = from_flat({"scenario": "y-domain", "mesh.n": n, "scheme.k": k, "scheme.seed": seed,
                    "sav.gamma": gamma, "scheme.mode": mode})
    assert parse_config_text(emit_config(rc)) == rc


def test_overrides():
    rc = parse_config_text("scenario = single-run\n")
    rc2 = rc.with_overrides(**{"scheme.seed": 9, "scheme.mode": "individual"})
    assert rc2.ensemble.seed == 9 and rc2.ensemble.mode == "individual"
    with pytest.raises(ConfigError):
        rc.with_overrides(**{"scheme.foo": 1})
