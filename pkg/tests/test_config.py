from pathlib import Path

import pytest
import yaml

from dentobox import config_manager
from dentobox.config_manager import default_config_yaml, get_config, init_config, load_config
from dentobox.errors import ConfigError
from dentobox.models import AppConfig, Averaging, LossConfig, PatchConfig


def test_missing_file_gives_defaults(tmp_path, monkeypatch):
    monkeypatch.delenv("DENTOBOX_LOG", raising=False)
    config = load_config(str(tmp_path / "absent.yaml"))
    assert config == AppConfig()
    assert config.patch.size == 512 and config.patch.overlap == 10
    assert config.loss == LossConfig(focal_gamma=2.0, focal_alpha=0.25, dice_smooth=1.0)
    assert config.server.port == 8010
    assert not (tmp_path / "absent.yaml").exists()


def test_yaml_values_are_loaded(tmp_path, monkeypatch):
    monkeypatch.delenv("DENTOBOX_LOG", raising=False)
    path = tmp_path / "config.yaml"
    path.write_text(
        "patch:\n  size: 256\n  overlap: 16\n"
        "evaluation:\n  averaging: pixel_pooled\n"
        "runtime:\n  jobs: 4\n  log_level: debug\n",
        encoding="utf-8",
    )
    config = load_config(str(path))
    assert config.patch == PatchConfig(size=256, overlap=16)
    assert config.evaluation.averaging is Averaging.PIXEL_POOLED
    assert config.runtime.jobs == 4
    assert config.runtime.log_level == "DEBUG"


def test_env_log_level_overrides_file(tmp_path, monkeypatch):
    path = tmp_path / "config.yaml"
    path.write_text("runtime:\n  log_level: INFO\n", encoding="utf-8")
    monkeypatch.setenv("DENTOBOX_LOG", "warning")
    assert load_config(str(path)).runtime.log_level == "WARNING"


def test_config_file_from_environment(tmp_path, monkeypatch):
    path = tmp_path / "custom.yaml"
    path.write_text("server:\n  port: 9100\n", encoding="utf-8")
    monkeypatch.setenv("DENTOBOX_CONFIG_FILE", str(path))
    assert load_config().server.port == 9100


@pytest.mark.parametrize("text", [
    "patch:\n  size: 16\n  overlap: 16\n",
    "loss:\n  focal_alpha: 1.5\n",
    "loss:\n  dice_smooth: 0\n",
    "runtime:\n  jobs: 0\n",
    "runtime:\n  log_level: chatty\n",
    "- just\n- a list\n",
    "patch: [unclosed\n",
])
def test_invalid_config_raises_config_error(tmp_path, monkeypatch, text):
    monkeypatch.delenv("DENTOBOX_LOG", raising=False)
    path = tmp_path / "bad.yaml"
    path.write_text(text, encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(str(path))


def test_global_config_singleton(tmp_path, monkeypatch):
    monkeypatch.setattr(config_manager, "app_config", None)
    path = tmp_path / "config.yaml"
    path.write_text("patch:\n  size: 128\n", encoding="utf-8")
    config = init_config(str(path))
    assert get_config() is config
    assert get_config().patch.size == 128


def test_default_config_yaml_round_trips():
    data = yaml.safe_load(default_config_yaml())
    assert AppConfig(**data) == AppConfig()
    assert data["evaluation"]["averaging"] == "label_mean"


def test_bundled_config_matches_defaults(monkeypatch):
    monkeypatch.delenv("DENTOBOX_LOG", raising=False)
    bundled = Path(__file__).resolve().parent.parent / "config" / "config.yaml"
    assert load_config(str(bundled)) == AppConfig()
