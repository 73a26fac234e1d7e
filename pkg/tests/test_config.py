"""Environment and ingest-config loading tests."""
from __future__ import annotations

import json
from datetime import timedelta
from pathlib import Path

import pytest

from traffic_forecast import config


def test_defaults_without_environment(monkeypatch: pytest.MonkeyPatch) -> None:
    for name in ("ALPHA1", "BETA1", "GRID_SIZE", "INTERVAL_S", "LEVELS", "WORKERS"):
        monkeypatch.delenv(f"TRAFFIC_FORECAST_{name}", raising=False)

    assert config.get_alpha1() == 0.5
    assert config.get_beta1() == 1.0
    assert config.get_grid_size() == 1000
    assert config.get_interval_s() == 300
    assert config.get_levels() == (0.95, 0.99)
    assert config.get_workers() == 1


def test_environment_overrides(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.setenv("TRAFFIC_FORECAST_ALPHA1", "120")
    monkeypatch.setenv("TRAFFIC_FORECAST_GRID_SIZE", "250")
    monkeypatch.setenv("TRAFFIC_FORECAST_LEVELS", "0.99, 0.9,0.99")
    monkeypatch.setenv("TRAFFIC_FORECAST_WORKERS", "4")

    assert config.get_alpha1() == 120.0
    assert config.get_grid_size() == 250
    assert config.get_levels() == (0.9, 0.99)
    assert config.get_workers() == 4


@pytest.mark.parametrize("raw", ["-1", "0", "abc", "inf", "nan"])
def test_invalid_values_fall_back_to_defaults(monkeypatch: pytest.MonkeyPatch, raw: str) -> None:
    monkeypatch.setenv("TRAFFIC_FORECAST_BETA1", raw)
    monkeypatch.setenv("TRAFFIC_FORECAST_INTERVAL_S", raw)
    monkeypatch.setenv("TRAFFIC_FORECAST_LEVELS", raw)

    assert config.get_beta1() == 1.0
    assert config.get_interval_s() == 300
    assert config.get_levels() == (0.95, 0.99)


def test_grid_size_of_one_is_rejected(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.setenv("TRAFFIC_FORECAST_GRID_SIZE", "1")
    assert config.get_grid_size() == 1000


def test_load_ingest_config(tmp_path: Path) -> None:
    path = tmp_path / "ingest.json"
    path.write_text(
        json.dumps(
            {
                "timezone": "+09:00",
                "maintenance": [{"start": "2005-03-20T02:00:00Z", "end": "2005-03-20T03:00:00Z"}],
                "status_filter": ["2xx"],
            }
        ),
        encoding="utf-8",
    )

    settings = config.load_ingest_config(path)

    assert settings.timezone.utcoffset(None) == timedelta(hours=9)
    assert len(settings.maintenance) == 1
    assert settings.status_filter == ("2xx",)


def test_missing_config_path_gives_defaults() -> None:
    settings = config.load_ingest_config(None)
    assert settings == config.IngestConfig()


def test_invalid_config_raises(tmp_path: Path) -> None:
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"maintenance": [{"end": "2005-03-20T03:00:00Z"}]}), encoding="utf-8")
    with pytest.raises(KeyError):
        config.load_ingest_config(path)
