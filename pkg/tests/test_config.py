import pytest

from emofuse import config
from emofuse.config import RunConfig, override
from emofuse.tensor import ConfigError


def test_defaults():
    cfg = RunConfig().validate()
    assert (cfg.lora.r, cfg.lora.alpha) == (32, 16.0)
    assert (cfg.tokens.visual, cfg.tokens.speech, cfg.tokens.face, cfg.tokens.fusion) == (32, 32, 4, 1)
    assert (cfg.curriculum.batch_size, cfg.curriculum.grad_accum) == (3, 4)
    assert cfg.curriculum.mixture == {"MER": 18, "OV_MER": 28, "MIR": 5, "ERI": 31, "ERG": 18}
    assert cfg.encoder.speech_taps == [16, 18, 22] and cfg.encoder.visual_taps == [12, 16, 22]


def test_yaml_round_trip(tmp_path):
    cfg = override(RunConfig(), curriculum__scale=1000, run__seed=4)
    path = tmp_path / "c.yaml"
    path.write_text(config.dump(cfg))
    assert config.load(path) == cfg


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError):
        config.from_dict({"lm": {"depth": 3}})
    with pytest.raises(ConfigError):
        config.from_dict({"optimiser": {}})
    with pytest.raises(ConfigError):
        override(RunConfig(), lm__depth=3)


@pytest.mark.parametrize("data", [
    {"fusion": {"mode": "sparse"}},
    {"fusion": {"pairing": "random"}},
    {"fusion": {"experts": 2}},
    {"lora": {"r": 65}},
    {"curriculum": {"mode": "shuffle"}},
    {"curriculum": {"scale": 0}},
    {"curriculum": {"lr_scale": 0}},
    {"curriculum": {"mixture": {"MER": 1, "TTS": 1}}},
    {"curriculum": {"phases": {"4": {"lr": 1e-3}}}},
    {"curriculum": {"phases": {"2": {"momentum": 0.9}}}},
    {"encoder": {"visual_taps": [12, 16, 30]}},
    {"tokens": {"fusion": 2}},
    {"run": {"precision": "float16"}},
    {"eval": {"tasks": ["MER", "TTS"]}},
    {"lm": {"dim": "wide"}},
])
def test_invalid_values_rejected(data):
    with pytest.raises(ConfigError):
        config.from_dict(data)


def test_malformed_yaml(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("run: [unclosed\n")
    with pytest.raises(ConfigError):
        config.load(p)
    with pytest.raises(FileNotFoundError):
        config.load(tmp_path / "missing.yaml")
