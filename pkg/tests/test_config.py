import pytest

from pexml.config import ConfigError, ExperimentConfig, load_config_file, parse_config_text


def test_parse_sections_and_dotted_keys():
    text = """
    # comment
    seed = 3
    [grid]
    n = 16        # trailing comment
    Nc = 4

    time.N = 10   # dotted keys are absolute even inside a section
    """
    values = parse_config_text(text)
    assert values == {"grid.n": "16", "grid.Nc": "4", "time.N": "10", "seed": "3"}


def test_parse_rejects_garbage():
    with pytest.raises(ConfigError, match="key=value"):
        parse_config_text("this is not a config")
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config_text("seed = 1\nseed = 2")
    with pytest.raises(ConfigError, match="empty key"):
        parse_config_text("= 4")
    with pytest.raises(ConfigError, match="section"):
        parse_config_text("[]")


def test_from_mapping_types_and_defaults():
    cfg = ExperimentConfig.from_mapping(
        {
            "example.id": "3",
            "grid.n": "16",
            "grid.Nc": "4",
            "time.N": "10",
            "train.hidden": "8,8",
            "scheme.picard": "true",
        }
    )
    assert cfg.example_id == 3
    assert cfg.nonlinear
    assert cfg.final_time == pytest.approx(0.001)  # example default
    assert cfg.dt == pytest.approx(1e-4)
    assert cfg.hidden == (8, 8)
    assert cfg.picard
    assert cfg.pod_energy_tol == pytest.approx(1e-6)  # default rule
    assert cfg.bounds == (1.0, 20.0)
    assert cfg.param_count == 10


def test_reject_unknown_and_inconsistent():
    with pytest.raises(ConfigError, match="unknown configuration key"):
        ExperimentConfig.from_mapping({"grid.m": "3"})
    with pytest.raises(ConfigError, match="cannot parse"):
        ExperimentConfig.from_mapping({"grid.n": "forty"})
    with pytest.raises(ConfigError, match="divide"):
        ExperimentConfig.from_mapping({"grid.n": "10", "grid.Nc": "4"})
    with pytest.raises(ConfigError, match="only one"):
        ExperimentConfig.from_mapping({"pod.l": "3", "pod.energy_tol": "1e-6"})
    with pytest.raises(ConfigError, match="unknown example"):
        ExperimentConfig.from_mapping({"example.id": "9"})
    with pytest.raises(ConfigError, match="history"):
        ExperimentConfig.from_mapping({"scheme.history": "both"})


def test_reference_time_stepping_defaults():
    # horizons per example and the step sizes they induce
    linear = ExperimentConfig.from_mapping({"grid.n": "100", "grid.Nc": "10",
                                            "time.N": "100"})
    assert linear.final_time == pytest.approx(0.01)
    assert linear.dt == pytest.approx(1e-4)
    nonlinear = ExperimentConfig.from_mapping({"example.id": "3", "time.N": "40"})
    assert nonlinear.final_time == pytest.approx(0.001)
    assert nonlinear.dt == pytest.approx(2.5e-5)


def test_round_trip_through_text(tmp_path):
    cfg = ExperimentConfig.from_mapping(
        {"grid.n": "8", "grid.Nc": "2", "time.N": "4", "pod.l": "2", "seed": "5"}
    )
    path = tmp_path / "cfg.txt"
    path.write_text(cfg.to_text())
    back = load_config_file(path)
    assert back == cfg
