import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from omh import config
from omh.config import ExperimentConfig
from omh.errors import InvalidConfig


def test_defaults_follow_reference_setting():
    c = ExperimentConfig()
    assert (c.depth, c.expansion, c.ot_temperature) == (3, 2.0, 0.02)
    assert (c.sparsity_weight, c.structure_weight) == (0.01, 0.3)


def test_format_parse_round_trip():
    c = ExperimentConfig(depth=2, expansion=1.5, data_seed=4, stop_gradient=True,
                         sweep=[("ot_temperature", [0.02, 0.05]), ("depth", [1, 2])])
    assert config.parse(c.format()) == c


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.sampled_from([1.0, 1.5, 2.0, 3.0]),
       st.floats(1e-3, 1.0, allow_nan=False), st.integers(0, 2**31), st.booleans(),
       st.one_of(st.none(), st.integers(0, 100)))
def test_round_trip_property(depth, rho, lam, seed, sg, ds):
    c = ExperimentConfig(depth=depth, expansion=rho, ot_temperature=lam, seed=seed,
                         stop_gradient=sg, data_seed=ds)
    assert config.parse(c.format()) == c
    assert config.parse(c.format()).hash() == c.hash()


def test_comments_and_unknown_keys():
    c = config.parse("# comment\ndepth = 2  # trailing\n\n")
    assert c.depth == 2
    with pytest.raises(InvalidConfig):
        config.parse("no_such_field = 1")
    with pytest.raises(InvalidConfig):
        config.parse("depth 2")
    with pytest.raises(InvalidConfig):
        config.parse("depth = two")


def test_validation():
    for bad in ("depth = 0", "expansion = 0.5", "ot_temperature = 0", "plan_scale = rows",
                "sparsity_weight = -1", "dim = 3"):
        with pytest.raises(InvalidConfig):
            config.parse(bad)


def test_precedence_file_env_set(tmp_path):
    f = tmp_path / "c.cfg"
    f.write_text("depth = 2\nseed = 5\nsteps = 7\n")
    env = {"OMH_SEED": "9", "OMH_STEPS": "11", "UNRELATED": "x"}
    c = config.load(f, ["steps=13"], env)
    assert (c.depth, c.seed, c.steps) == (2, 9, 13)


def test_env_bad_value():
    with pytest.raises(InvalidConfig):
        config.apply_env(ExperimentConfig(), {"OMH_DEPTH": "deep"})


def test_missing_file():
    with pytest.raises(InvalidConfig):
        config.load("/nonexistent/omh.cfg")


def test_sweep_parsing_and_presets():
    assert config.parse_sweep("temperature") == [("ot_temperature", [0.02, 0.05, 0.10])]
    axes = config.parse_sweep("depth=1,2; expansion")
    assert axes == [("depth", [1, 2]), ("expansion", [1.0, 1.5, 2.0, 3.0])]
    with pytest.raises(InvalidConfig):
        config.parse_axis("output_dir=a,b")
    with pytest.raises(InvalidConfig):
        config.parse_axis("depth")


def test_hash_ignores_output_location():
    a = ExperimentConfig(output_dir="x")
    b = ExperimentConfig(output_dir="y", sweep=[("depth", [1])])
    assert a.hash() == b.hash()
    assert a.hash() != a.with_values(seed=1).hash()
