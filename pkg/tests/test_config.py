import logging
import os

import pytest

from robust_fpca.config import DefaultCovariance, RunConfig, apply_overrides, load_run_config, parse_run_config
from robust_fpca.errors import ConfigError, DataFileError
from robust_fpca.log import AccumulatingLogHandler, find_accumulating_handler
from robust_fpca.utils import atomic_write, get_yaml_config, load_json_file, write_json_file


def test_empty_config_uses_defaults():
    config = parse_run_config(None)
    assert config.fpca.psi == DefaultCovariance.PSI
    assert config.fpca.method == "wpu"
    assert config.solver.max_iter == 200
    assert load_run_config(None) == RunConfig()


def test_unknown_keys_name_the_dotted_path():
    with pytest.raises(ConfigError) as info:
        parse_run_config({"fpca": {"psy": 0.8}})
    assert info.value.context["key"] == "fpca.psy"
    with pytest.raises(ConfigError) as info:
        parse_run_config({"plots": {}})
    assert info.value.context["key"] == "plots"


def test_format_version_and_types():
    with pytest.raises(ConfigError):
        parse_run_config({"format_version": 2})
    with pytest.raises(ConfigError):
        parse_run_config({"fpca": {"psi": "high"}})
    with pytest.raises(ConfigError):
        parse_run_config({"solver": ["max_iter", 10]})
    config = parse_run_config({"fpca": {"psi": 1}})
    assert isinstance(config.fpca.psi, float) and config.fpca.psi == 1.0


def test_overrides_win():
    config = parse_run_config({"simulate": {"seed": 1}, "fpca": {"psi": 0.5, "method": "dm"}})
    apply_overrides(config, seed=9, psi=0.9, components=3, method="classical")
    assert config.simulate.seed == 9 and config.breakdown.seed == 9
    assert config.fpca.psi == 0.9 and config.breakdown.psi == 0.9
    assert config.fpca.components == 3
    assert config.fpca.method == "classical"
    untouched = apply_overrides(parse_run_config({"fpca": {"psi": 0.5}}))
    assert untouched.fpca.psi == 0.5


def test_yaml_errors_are_data_file_errors(tmp_path):
    with pytest.raises(DataFileError):
        get_yaml_config(str(tmp_path / "missing.yaml"))
    broken = tmp_path / "broken.yaml"
    broken.write_text("fpca:\n  psi: [0.8\n")
    with pytest.raises(DataFileError) as info:
        get_yaml_config(str(broken))
    assert info.value.line is not None
    scalar = tmp_path / "scalar.yaml"
    scalar.write_text("42\n")
    with pytest.raises(DataFileError):
        get_yaml_config(str(scalar))


def test_json_helpers(tmp_path):
    path = write_json_file(str(tmp_path / "nested" / "out.json"), {"b": 1, "a": [1, 2]})
    assert load_json_file(path) == {"a": [1, 2], "b": 1}
    bad = tmp_path / "bad.json"
    bad.write_text("{\n  'a': 1\n}")
    with pytest.raises(DataFileError) as info:
        load_json_file(str(bad))
    assert info.value.line == 2


def test_atomic_write_leaves_nothing_on_failure(tmp_path):
    target = tmp_path / "result.csv"
    with pytest.raises(RuntimeError):
        with atomic_write(str(target)) as handle:
            handle.write("partial")
            raise RuntimeError("interrupted")
    assert not target.exists()
    assert os.listdir(tmp_path) == []


def test_accumulating_handler_keeps_warnings():
    logger = logging.getLogger("robust_fpca.tests")
    handler = AccumulatingLogHandler()
    logger.addHandler(handler)
    try:
        logger.info("progress")
        logger.warning("clipped 2 negative eigenvalues")
        assert handler.log_records == ["clipped 2 negative eigenvalues"]
        assert find_accumulating_handler(logger) is handler
        handler.clear()
        assert handler.get_accumulated_logs() == ""
    finally:
        logger.removeHandler(handler)
    assert find_accumulating_handler(logger) is None
