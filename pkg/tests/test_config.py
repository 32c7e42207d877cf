import pytest

from navattack import config
from navattack.config import DEFAULT_SIGMAS, ExperimentConfig, parse_sigmas
from navattack.errors import ConfigError, InputError


def test_default_config_is_valid():
    cfg = ExperimentConfig().validate()
    assert cfg.cos_threshold == 0.95
    assert cfg.l2_fraction == 0.05


def test_validate_rejects_bad_values():
    with pytest.raises(ConfigError, match="cannot host"):
        ExperimentConfig(node_count=3, landmark_count=4).validate()
    with pytest.raises(ConfigError):
        ExperimentConfig(alpha=-1).validate()
    with pytest.raises(ConfigError):
        ExperimentConfig(workers=0).validate()
    with pytest.raises(InputError):
        ExperimentConfig(sigmas=(0.1, 0.01)).validate()


def test_default_sigma_grid():
    assert len(DEFAULT_SIGMAS) == 13
    assert DEFAULT_SIGMAS[0] == pytest.approx(1e-7)
    assert DEFAULT_SIGMAS[-1] == pytest.approx(0.9)
    assert all(b > a for a, b in zip(DEFAULT_SIGMAS, DEFAULT_SIGMAS[1:]))


def test_parse_sigmas():
    assert parse_sigmas("1e-5, 1e-3,0.1") == (1e-5, 1e-3, 0.1)
    for bad in ("", "0.1,0.01", "0,0.1", "x"):
        with pytest.raises(ConfigError):
            parse_sigmas(bad)


def test_env_values_fall_back_on_garbage(monkeypatch):
    monkeypatch.setenv("NAVATTACK_TEST_INT", "seven")
    monkeypatch.setenv("NAVATTACK_TEST_FLOAT", "0.25")
    assert config._env_int("NAVATTACK_TEST_INT", 3) == 3
    assert config._env_float("NAVATTACK_TEST_FLOAT", 1.0) == 0.25
    monkeypatch.setenv("NAVATTACK_TEST_FLOAT", "")
    assert config._env_float("NAVATTACK_TEST_FLOAT", 1.0) == 1.0
