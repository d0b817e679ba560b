import json

import pytest

from ssod3d.config import ClassConfig, ConfigError, ExperimentConfig, NoiseModel, load_config, parse_config


def write(tmp_path, text):
    p = tmp_path / "cfg.json"
    p.write_text(text)
    return p


def test_defaults():
    cfg = ExperimentConfig()
    assert cfg.classes.pl_threshold == (0.95, 0.85, 0.85)
    assert cfg.classes.fg_threshold == (0.65, 0.45, 0.40)
    assert cfg.classes.bg_threshold == 0.25
    assert cfg.classes.eval_threshold == (0.7, 0.5, 0.5)
    assert cfg.lambda_u == 1.0 and cfg.ema_momentum == 0.999 and cfg.sampler.k == 128
    assert cfg.scenes.objects == (6, 2, 1)


def test_shipped_configs_load():
    z = load_config("configs/zero_noise.json")
    assert z.classes.fg_threshold == z.classes.eval_threshold
    p = load_config("configs/paper_noise.json")
    assert p.scenes.count == 200 and p.seeds.count == 20


def test_threshold_section_merges(tmp_path):
    cfg = load_config(write(tmp_path, json.dumps({"thresholds": {"fg": 0.5, "pl": [0.9, 0.8, 0.8]}})))
    assert cfg.classes.fg_threshold == (0.5, 0.5, 0.5)
    assert cfg.classes.pl_threshold == (0.9, 0.8, 0.8)


def test_unknown_key_reports_line_and_field(tmp_path):
    text = '{\n  "noise": {\n    "centre_xy": 0.1\n  }\n}\n'
    with pytest.raises(ConfigError) as exc:
        load_config(write(tmp_path, text))
    assert exc.value.line == 3 and exc.value.field == "noise.centre_xy"
    assert "line 3" in str(exc.value)


def test_invalid_value_reports_field(tmp_path):
    text = '{\n  "thresholds": {\n    "bg": 0.5,\n    "fg": [0.65, 0.45, 0.40]\n  }\n}\n'
    with pytest.raises(ConfigError) as exc:
        load_config(write(tmp_path, text))
    assert exc.value.field.startswith("classes.fg_threshold")


def test_json_syntax_error_has_line(tmp_path):
    with pytest.raises(ConfigError) as exc:
        load_config(write(tmp_path, '{\n  "scheme": "BG",\n  oops\n}'))
    assert exc.value.line == 3


def test_missing_file():
    with pytest.raises(ConfigError, match="cannot read config"):
        load_config("/nonexistent/cfg.json")


@pytest.mark.parametrize("doc,field", [
    ({"scheme": "FANCY"}, "scheme"),
    ({"iou_mode": "2d"}, "iou_mode"),
    ({"sampler": {"kind": "random"}}, "sampler.kind"),
    ({"noise": {"miss_prob": 1.5}}, "noise.miss_prob"),
    ({"noise": {"center_xy": -0.1}}, "noise.center_xy"),
    ({"scenes": {"objects": [1, 2]}}, "scenes.objects"),
    ({"rng": "mt19937"}, "rng"),
    ({"bogus": 1}, "bogus"),
])
def test_rejections(doc, field):
    with pytest.raises(ConfigError) as exc:
        parse_config(doc, json.dumps(doc))
    assert exc.value.field == field


def test_noise_per_class_expansion():
    n = NoiseModel(center_xy=0.1, miss_prob=[0.1, 0.2, 0.3]).resolved(3)
    assert n.center_xy == (0.1, 0.1, 0.1) and n.miss_prob == (0.1, 0.2, 0.3)
    with pytest.raises(ConfigError):
        NoiseModel(miss_prob=[0.1, 0.2]).resolved(3)


def test_class_config_with_fg():
    c = ClassConfig().with_fg((0.75, 0.55, 0.5))
    assert c.fg_threshold == (0.75, 0.55, 0.5)
    with pytest.raises(ValueError, match="unknown class_id"):
        c.check_class(3)
