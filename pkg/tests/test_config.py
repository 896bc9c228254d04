import json

import pytest

from morphovox.config import PROFILES, load_manifest, manifest_document, parse_config, write_manifest
from morphovox.errors import ConfigError
from morphovox.physics import SimParams


def test_empty_file_gives_desk_defaults(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text("")
    cfg = parse_config(path, "desk")
    assert cfg.profile == "desk"
    assert cfg.torso == (4, 4, 2) and cfg.leg == (2, 2, 1)
    assert cfg.population == 20 and cfg.seeds == 5
    assert (cfg.generations_pre, cfg.generations_post) == (30, 20)
    assert cfg.sim.dt == 5e-4 and cfg.sim.eval_duration == 2.0
    assert len(cfg.scenarios) == 9


def test_paper_profile_values():
    cfg = parse_config(profile="paper")
    assert cfg.sim == SimParams()
    assert cfg.sim.dt == 0.000151 and cfg.sim.eval_duration == 4.0
    assert cfg.population == 50 and cfg.seeds == 20
    assert (cfg.generations_pre, cfg.generations_post) == (1500, 500)
    assert len(cfg.body.torso_cells()) == 108


def test_flag_overrides_file(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text("[sim]\ndt = 0.0002\n")
    assert parse_config(path, "desk").sim.dt == 0.0002
    assert parse_config(path, "desk", {"sim.dt": 0.000151}).sim.dt == 0.000151
    assert parse_config(path, "desk", {"sim.dt": None}).sim.dt == 0.0002


def test_file_selects_profile(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text('profile = "paper"\nseeds = 2\n')
    cfg = parse_config(path)
    assert cfg.profile == "paper" and cfg.seeds == 2


def test_unknown_key_is_named(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text("[sim]\ngravty = 9.8\n")
    with pytest.raises(ConfigError, match="sim.gravty"):
        parse_config(path)
    with pytest.raises(ConfigError, match="gravty"):
        parse_config(overrides={"gravty": 1})


@pytest.mark.parametrize("override,key", [
    ({"seeds": "five"}, "seeds"),
    ({"sim.dt": "fast"}, "sim.dt"),
    ({"seeds": 0}, "seeds"),
    ({"experiment.scenarios": ["tail"]}, "experiment.scenarios[0]"),
    ({"experiment.options": ["regrow"]}, "experiment.options[0]"),
    ({"body.torso": [4, 4]}, "body.torso"),
    ({"generations": 3}, "generations"),
])
def test_validation_names_key(override, key):
    with pytest.raises(ConfigError) as err:
        parse_config(profile="desk", overrides=override)
    assert err.value.key == key
    assert key in str(err.value)


def test_sim_domain_errors_become_config_errors():
    with pytest.raises(ConfigError):
        parse_config(overrides={"sim.dt": -1.0})


def test_bad_toml_and_missing_file(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[sim\n")
    with pytest.raises(ConfigError):
        parse_config(bad)
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "absent.toml")


def test_unknown_profile():
    with pytest.raises(ConfigError, match="profile"):
        parse_config(profile="cluster")


def test_threads_from_environment(monkeypatch):
    monkeypatch.setenv("MORPHOVOX_THREADS", "3")
    assert parse_config().threads == 3
    assert parse_config(overrides={"threads": 1}).threads == 1
    monkeypatch.setenv("MORPHOVOX_THREADS", "many")
    with pytest.raises(ConfigError, match="MORPHOVOX_THREADS"):
        parse_config()


def test_zero_threads_means_all_cores(monkeypatch):
    monkeypatch.delenv("MORPHOVOX_THREADS", raising=False)
    assert parse_config(overrides={"threads": 0}).n_threads >= 1


def test_manifest_round_trip(tmp_path):
    cfg = parse_config(profile="desk", overrides={"master_seed": 7, "sim.dt": 0.0004})
    path = write_manifest(cfg, tmp_path / "a" / "b")
    assert path.exists()
    assert parse_config(path) == cfg
    doc = load_manifest(tmp_path / "a" / "b")
    assert doc["master_seed"] == 7 and doc["versions"]["morphovox"]


def test_manifests_differ_only_in_timestamp():
    cfg = parse_config(profile="desk")
    a, b = manifest_document(cfg), manifest_document(cfg)
    a.pop("timestamp"), b.pop("timestamp")
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


def test_profiles_are_not_mutated():
    before = json.dumps(PROFILES, sort_keys=True)
    parse_config(profile="desk", overrides={"sim.dt": 0.001, "seeds": 2})
    assert json.dumps(PROFILES, sort_keys=True) == before
