import pytest

from cashflow_uw.config import DEFAULTS, ENV_PREFIX, PipelineConfig, ServiceConfig, reference_now
from cashflow_uw.errors import ConfigError


def write(tmp_path, text):
    p = tmp_path / "c.toml"
    p.write_text(text)
    return p


def test_defaults():
    cfg = PipelineConfig.load(env={})
    assert cfg.seed == 0 and cfg.section("split")["train_fraction"] == 0.6
    assert cfg.service().thresholds == (0.05, 0.15)


def test_file_overrides_and_hash(tmp_path):
    p = write(tmp_path, "[run]\nseed = 7\n[model]\nlambda = 3.0\n[synth]\nn_applicants = 50\n")
    cfg = PipelineConfig.load(p, env={})
    assert cfg.seed == 7 and cfg.section("model")["lambda"] == 3.0
    assert cfg.section("synth") == {"n_applicants": 50}
    assert cfg.config_hash() != PipelineConfig.load(env={}).config_hash()
    assert cfg.config_hash() == PipelineConfig.load(p, env={}).config_hash()
    assert cfg.provenance("train") == {"config_hash": cfg.config_hash(), "seed": 7, "command": "train"}


@pytest.mark.parametrize("text", [
    "[run]\nsed = 1\n",
    "[colour]\nx = 1\n",
    "[split]\ntrain_fraction = 1.5\n",
    "[split]\nfold_count = 1\n",
    "[model]\nthresholds = [0.2, 0.1]\n",
    "[service]\nt_low = 0.5\nt_high = 0.4\n",
    "[run]\nseed = -1\n",
    "not toml [",
])
def test_invalid_files(tmp_path, text):
    with pytest.raises(ConfigError) as ei:
        PipelineConfig.load(write(tmp_path, text), env={})
    assert ei.value.code == "CONFIG_INVALID"


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        PipelineConfig.load(tmp_path / "nope.toml", env={})


def test_env_overrides_service_table():
    env = {ENV_PREFIX + "PORT": "9001", ENV_PREFIX + "PSI_ALERT": "0.3", ENV_PREFIX + "HOST": "0.0.0.0"}
    svc = PipelineConfig.load(env=env).service()
    assert (svc.port, svc.psi_alert, svc.host) == (9001, 0.3, "0.0.0.0")
    with pytest.raises(ConfigError):
        PipelineConfig.load(env={ENV_PREFIX + "PORT": "eighty"})
    with pytest.raises(ConfigError):
        PipelineConfig.load(env={ENV_PREFIX + "PROMOTE_AFTER": "0"})


def test_service_config_fields_match_defaults():
    svc = ServiceConfig()
    for k, v in DEFAULTS["service"].items():
        assert getattr(svc, k) == v


def test_reference_now(monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "0")
    assert reference_now("2024-01-01T00:00:00+00:00") == "1970-01-01T00:00:00+00:00"
    monkeypatch.delenv("SOURCE_DATE_EPOCH")
    assert reference_now("2024-01-01T00:00:00+00:00") == "2024-01-01T00:00:00+00:00"
