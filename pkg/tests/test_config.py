import json

import pytest

from microsplat.config import ConfigError, RunConfig, load_run_config, run_config_from_dict, to_dict, toy_config
from pathlib import Path

TOY = Path(__file__).resolve().parents[1] / "configs" / "toy.json"


def test_empty_document_gives_defaults():
    cfg = run_config_from_dict({})
    assert cfg == RunConfig()
    assert cfg.train.t_refine == 15000


def test_toy_file_matches_builtin_toy_config():
    cfg = load_run_config(TOY)
    ref = toy_config(cfg.output.dir)
    assert cfg == ref
    assert cfg.scene.seed == 42 and cfg.scene.width == 64 and cfg.scene.camera_count == 16
    assert cfg.train.total_iterations == 3000 and cfg.train.t_refine == 1500


def test_nested_sections_parse():
    cfg = run_config_from_dict({"train": {"growth": {"percentile": 50}, "weights": {"ssim": 0.0},
                                          "background": [1, 1, 1]}})
    assert cfg.train.growth.percentile == 50
    assert cfg.train.weights.ssim == 0.0
    assert cfg.train.background == (1.0, 1.0, 1.0)


@pytest.mark.parametrize("doc, where", [
    ({"bogus": 1}, "top level"),
    ({"train": {"growth": {"percentle": 80}}}, "train.growth"),
    ({"scene": {"width": 64, "hieght": 64}}, "scene"),
])
def test_unknown_keys_rejected(doc, where):
    with pytest.raises(ConfigError, match=where):
        run_config_from_dict(doc)


def test_invalid_values_rejected():
    with pytest.raises(ConfigError):
        run_config_from_dict({"train": {"total_iterations": 100, "refine_start": 100}})
    with pytest.raises(ConfigError):
        run_config_from_dict({"scene": {"width": 2}})
    with pytest.raises(ConfigError):
        run_config_from_dict({"train": []})


def test_dict_roundtrip(tmp_path):
    cfg = toy_config("x")
    p = tmp_path / "c.json"
    p.write_text(json.dumps(to_dict(cfg)))
    assert load_run_config(p) == cfg


def test_bad_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_run_config(p)
