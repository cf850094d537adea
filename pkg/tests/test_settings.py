import logging

import pytest

from config.settings import Settings, get_settings_path, load_key_values
from core.errors import ConfigError
from utils import log_stream


@pytest.fixture
def fresh_settings(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return Settings()


def test_defaults_and_dotted_access(fresh_settings):
    assert fresh_settings.get("solver.method") == "GMM"
    assert fresh_settings.get("restart.restart") == "soft"
    assert fresh_settings.get("solver.unknown", 7) == 7
    fresh_settings.set("bench.out", "elsewhere")
    fresh_settings.set("extra.nested.key", 1)
    assert fresh_settings.get("bench.out") == "elsewhere"
    assert fresh_settings.get("extra.nested.key") == 1
    fresh_settings.reset()
    assert fresh_settings.get("bench.out") == "results"


def test_run_defaults_flatten_run_sections(fresh_settings):
    flat = fresh_settings.run_defaults()
    assert flat["problem"] == "lasso"
    assert flat["method"] == "GMM"
    assert flat["ref_budget"] > 0
    assert "log_dir" not in flat
    flat["method"] = "GM"
    assert fresh_settings.get("solver.method") == "GMM"


def test_save_and_reload(fresh_settings, tmp_path):
    assert not get_settings_path().exists()
    fresh_settings.set("solver.m", 8)
    assert fresh_settings.save()
    assert get_settings_path() == tmp_path / ".memgrad" / "settings.json"
    reloaded = Settings()
    assert reloaded.get("solver.m") == 8
    # 文件里没有的键保留默认值
    assert reloaded.get("solver.replacement") == "crs"


def test_update_run_defaults_writes_owning_sections(fresh_settings):
    fresh_settings.update_run_defaults({"method": "AGMM", "max-iters": 300, "D": 0.2})
    assert fresh_settings.get("solver.method") == "AGMM"
    assert fresh_settings.get("solver.max_iters") == 300
    assert fresh_settings.get("restart.D") == 0.2
    with pytest.raises(ConfigError):
        fresh_settings.update_run_defaults({"log_dir": "elsewhere"})
    assert fresh_settings.get("logging.log_dir") != "elsewhere"


def test_load_key_values(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# 注释\n\nproblem = RR\nmax-iters = 50   # 行尾注释\nmethod=AGMM,GMM\n", encoding="utf-8")
    assert load_key_values(path) == {"problem": "RR", "max_iters": "50", "method": "AGMM,GMM"}


@pytest.mark.parametrize("content", ["problem RR\n", " = 3\n"])
def test_load_key_values_rejects_bad_lines(tmp_path, content):
    path = tmp_path / "bad.cfg"
    path.write_text(content, encoding="utf-8")
    with pytest.raises(ConfigError):
        load_key_values(path)


def test_load_key_values_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_key_values(tmp_path / "nope.cfg")


def test_logging_writes_timestamped_lines(tmp_path):
    log_dir = tmp_path / "logs"
    path = log_stream.setup_logging("DEBUG", str(log_dir), "run.txt")
    try:
        assert path == log_dir / "run.txt"
        logging.getLogger("memgrad.test").info("第一行\n第二行")
        again = log_stream.setup_logging("INFO", str(log_dir), "run.txt")
        assert again == path
        names = [handler.get_name() for handler in logging.getLogger().handlers]
        assert names.count("memgrad-file") == 1
        assert names.count("memgrad-console") == 1
    finally:
        log_stream.shutdown_logging()
    lines = path.read_text(encoding="utf-8").splitlines()
    assert len(lines) == 2
    assert all(line.startswith("[") and "] " in line for line in lines)
    assert lines[1].endswith("第二行")

    assert log_stream.clear_log(str(log_dir), "run.txt")
    assert path.read_text(encoding="utf-8") == ""


def test_logging_without_file(tmp_path):
    try:
        assert log_stream.setup_logging("INFO", str(tmp_path / "logs"), "run.txt", enabled=False) is None
        names = [handler.get_name() for handler in logging.getLogger().handlers]
        assert "memgrad-file" not in names
    finally:
        log_stream.shutdown_logging()
    assert not (tmp_path / "logs").exists()
