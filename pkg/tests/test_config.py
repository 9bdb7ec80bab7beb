import pytest

from tsprl.config import (
    SCENARIO_SCALES, ConfigError, ScenarioConfig, dumps, load, loads, profile_names,
)


def test_defaults_round_trip():
    cfg = ScenarioConfig()
    assert loads(dumps(cfg)) == cfg


def test_override_parses_types():
    cfg = ScenarioConfig().with_overrides({"run.seed": "7", "demand.buses": "false",
                                           "signal.fixed_time_green_s": "10, 12, 7, 30"})
    assert cfg.run.seed == 7 and cfg.demand.buses is False
    assert cfg.signal.fixed_time_green_s == (10.0, 12.0, 7.0, 30.0)
    assert loads(dumps(cfg)) == cfg


@pytest.mark.parametrize("key", ["run.nope", "nosection.seed", "seed"])
def test_unknown_key_is_named(key):
    with pytest.raises(ConfigError, match=key.replace(".", r"\.")):
        ScenarioConfig().with_overrides({key: "1"})


def test_bad_value_is_named():
    with pytest.raises(ConfigError, match=r"run\.seed"):
        ScenarioConfig().with_overrides({"run.seed": "abc"})


def test_validation_error_names_section():
    with pytest.raises(ConfigError, match="reward"):
        ScenarioConfig().with_overrides({"reward.side_queue_penalty": "-1"})


@pytest.mark.parametrize("name", ["desk-sc", "desk-tsp", "full-sc", "full-tsp"])
def test_profiles_load(name):
    assert name in profile_names()
    cfg = load(name)
    assert loads(dumps(cfg)) == cfg


def test_profile_values():
    assert load("desk-sc").demand.volume_scale == pytest.approx(SCENARIO_SCALES["vc060"])
    assert (load("desk-sc").run.episodes, load("desk-sc").run.episode_s) == (150, 600.0)
    assert (load("desk-tsp").run.episodes, load("desk-tsp").run.episode_s) == (150, 3600.0)
    assert (load("full-sc").run.episodes, load("full-sc").run.episode_s) == (400, 1800.0)
    assert load("full-tsp").run.episode_s == 14400.0


def test_unknown_profile():
    with pytest.raises(ConfigError, match="desk-sc"):
        load("no-such-profile")


def test_scenario_scaling():
    cfg = ScenarioConfig().for_scenario("vc060")
    assert cfg.demand.volume_scale == pytest.approx(0.6 / 0.95)
    with pytest.raises(ConfigError):
        cfg.for_scenario("vc100")


def test_digest_tracks_content():
    a = ScenarioConfig()
    assert a.digest() == ScenarioConfig().digest()
    assert a.digest() != a.with_overrides({"run.seed": "1"}).digest()


def test_file_load(tmp_path):
    p = tmp_path / "x.ini"
    p.write_text("[run]\nseed = 3\n")
    assert load(p).run.seed == 3
