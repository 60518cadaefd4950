import pytest

from chau15.config import (
    ConfigError,
    load_config,
    load_measured,
    measured_names,
    parse_config,
    parse_measured,
    preset_names,
)
from chau15.devices import DEFAULT_MISALIGNMENT

GOOD = """\
name: demo
protocol:
  L: 4
  intensity_classes:
    - {label: mu, mean: 0.5, probability: 0.9}
    - {label: nu1, mean: 0.1, probability: 0.05}
    - {label: nu2, mean: 0.001, probability: 0.05}
devices:
  channel:
    length_km: 30
  interferometer:
    delays: [1, 2, 3]
"""


def test_presets_load():
    names = preset_names()
    assert {"fifty_km", "hundred_km", "one_thirty_km", "one_fifty_km", "high_error_fifty_km"} <= set(names)
    for name in names:
        spec = load_config(name)
        assert spec.name == name
        assert spec.params.L == 5
    assert load_config("default").devices.channel.misalignment == DEFAULT_MISALIGNMENT


def test_preset_lengths():
    lengths = {n: load_config(n).devices.channel.length_km for n in ("fifty_km", "hundred_km", "one_thirty_km", "one_fifty_km")}
    assert lengths == {"fifty_km": 50, "hundred_km": 100, "one_thirty_km": 130, "one_fifty_km": 150}


def test_measured_fixtures_load():
    assert len(measured_names()) == 5
    row = load_measured("measured_50km")
    assert row.L == 5 and row.length_km == 50
    assert row.inputs.signal.E == pytest.approx(0.0183)
    assert row.inputs.decoy1.mean > row.inputs.decoy2.mean
    assert row.reference["R_inf"] == pytest.approx(1.45e-3)
    assert load_measured("measured_150km").reference["R_f"] is None


def test_parse_good_config():
    spec = parse_config(GOOD, "demo.yaml")
    assert spec.params.L == 4
    assert spec.devices.channel.length_km == 30
    assert spec.devices.interferometer.delays == (1, 2, 3)


def test_load_from_path(tmp_path):
    p = tmp_path / "cfg.yaml"
    p.write_text(GOOD)
    assert load_config(str(p)).name == "demo"


def test_missing_file():
    with pytest.raises(ConfigError, match="no such file"):
        load_config("/nonexistent/cfg.yaml")


@pytest.mark.parametrize(
    "old, new, line, field",
    [
        ("length_km: 30", "length_km: thirty", 10, "devices.channel.length_km"),
        ("length_km: 30", "lenght_km: 30", 10, "devices.channel.lenght_km"),
        ("  L: 4", "  L: 4.5", 3, "protocol.L"),
        ("probability: 0.05}\n    - {label: nu2", "probability: 0.5}\n    - {label: nu2", 4, "protocol.intensity_classes"),
        ("    delays: [1, 2, 3]", "    delays: [1, 2]", 12, "devices.interferometer.delays"),
    ],
)
def test_diagnostics_name_line_and_field(old, new, line, field):
    text = GOOD.replace(old, new)
    assert text != GOOD
    with pytest.raises(ConfigError) as info:
        parse_config(text, "demo.yaml")
    msg = str(info.value)
    assert msg.startswith(f"demo.yaml:{line}:")
    assert f"'{field}'" in msg


def test_unknown_sections_rejected():
    with pytest.raises(ConfigError, match="unknown"):
        parse_config(GOOD + "extra: 1\n", "demo.yaml")
    with pytest.raises(ConfigError, match="unknown device section"):
        parse_config(GOOD + "  laser: {}\n", "demo.yaml")


def test_yaml_syntax_error_has_line():
    with pytest.raises(ConfigError, match=r"demo.yaml:\d+: YAML syntax error"):
        parse_config(GOOD + "  bad: [1, 2\n", "demo.yaml")


def test_measured_requires_format():
    with pytest.raises(ConfigError, match="format"):
        parse_measured({"classes": []})


def test_measured_missing_yield_named():
    data = {
        "format": "chau15.measured",
        "classes": [
            {"label": "mu", "mean": 0.6, "probability": 0.9, "Q": 1e-3, "Q_prime": 1e-6, "E": 0.02},
            {"label": "nu1", "mean": 0.1, "probability": 0.05, "Q": 1e-4},
            {"label": "nu2", "mean": 0.001, "probability": 0.05, "Q": 1e-6, "Q_prime": 1e-7},
        ],
    }
    with pytest.raises(ConfigError, match=r"'classes\.1': missing required field 'Q_prime'"):
        parse_measured(data)
