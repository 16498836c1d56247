import pytest

from leafscope import config
from leafscope.config import ConfigError


def test_defaults():
    cfg = config.load()
    assert cfg.seed == 0
    assert cfg.train.base_lr == 1e-4 and cfg.train.step == 20000
    assert cfg.segmentation.opening_kernel == (9, 9)
    assert cfg.features.glcm_levels == 32
    assert len(cfg.ablation_groups) == 11


def test_file_then_overrides(tmp_path):
    path = tmp_path / "run.conf"
    path.write_text("# comment\nseed = 3\nbase_lr = 0.01  # trailing\nopening_kernel = 7x5\nstep=10\n")
    cfg = config.load(path, {"step": "99"})
    assert cfg.seed == 3 and cfg.train.rng_seed == 3 and cfg.segmentation.rng_seed == 3
    assert cfg.train.base_lr == 0.01
    assert cfg.train.step == 99
    assert cfg.segmentation.opening_kernel == (7, 5)


def test_ablation_groups():
    cfg = config.load(overrides={"ablation_groups": "a, c+d, DCBA"})
    assert cfg.ablation_groups == ("A", "CD", "ABCD")


@pytest.mark.parametrize(
    "overrides, match",
    [
        ({"learning_rate": "1"}, "unknown"),
        ({"step": "ten"}, "step"),
        ({"opening_kernel": "9"}, "opening_kernel"),
        ({"momentum": "1.5"}, "momentum"),
        ({"ablation_groups": "AE"}, "groups"),
    ],
)
def test_rejects(overrides, match):
    with pytest.raises(ConfigError, match=match):
        config.load(overrides=overrides)


def test_missing_equals(tmp_path):
    path = tmp_path / "bad.conf"
    path.write_text("seed 3\n")
    with pytest.raises(ConfigError, match=":1:"):
        config.load(path)


def test_every_documented_key_is_known():
    doc = config.__doc__
    for key in config.known_keys():
        assert f"    {key} (" in doc, key
