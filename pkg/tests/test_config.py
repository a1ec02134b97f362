import pytest

from can_ssl.config import FLAGS, KEYS, ConfigError, RunConfig, flag_for, parse_overrides


def test_defaults_are_valid():
    cfg = RunConfig.from_values({})
    assert cfg.train.method == "can"
    assert cfg.model_spec().num_patches == 64
    assert cfg.augment_config().output_size == (32, 32)


def test_toml_file_and_overrides(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text('[train]\nmask_rate = 0.75\nlambda = 0.3\n[data]\nnum_classes = 3\n')
    cfg = RunConfig.load(path, {"train.mask_rate": "0.5"})
    assert cfg.train.mask_rate == 0.5  # command line wins over the file
    assert cfg.train.lambda_ == 0.3
    assert cfg.data.num_classes == 3


def test_every_key_has_a_flag():
    assert len(FLAGS) == len(KEYS)
    assert FLAGS["--lambda"] == "train.lambda"
    assert FLAGS["--mask-rate"] == "train.mask_rate"
    assert flag_for("crop_scale_min") == "--crop-scale-min"
    with pytest.raises(ConfigError, match="--bogus"):
        parse_overrides([("--bogus", "1")])


def test_method_preset_overrides_weights():
    cfg = RunConfig.from_values({"train.method": "mae", "train.lambda_infonce": 0.5, "train.sigma_max": 0.1})
    assert (cfg.train.lambda_infonce, cfg.train.sigma_max, cfg.train.num_views) == (0.0, 0.0, 1)


def test_heavy_masking_on_small_grid():
    # 90% of 64 patches leaves 6 visible; 90% of 4 patches leaves none
    assert RunConfig.from_values({"train.mask_rate": 0.9}).train.mask_rate == 0.9
    with pytest.raises(ConfigError, match="train.mask_rate"):
        RunConfig.from_values({"train.mask_rate": 0.9, "data.image_size": 8})


def test_all_problems_listed_at_once():
    with pytest.raises(ConfigError) as e:
        RunConfig.from_values({"train.tau": -1, "model.patch_size": 5, "train.nope": 1,
                               "augment.blur_prob": 2, "data.num_images": "many"})
    keys = [p.split(":")[0] for p in e.value.problems]
    assert keys == sorted(keys)
    for key in ("train.tau", "model.patch_size", "train.nope", "augment.blur_prob", "data.num_images"):
        assert key in keys


def test_cifar_without_directory(monkeypatch):
    monkeypatch.delenv("CAN_CIFAR10_DIR", raising=False)
    with pytest.raises(ConfigError, match="data.data_dir"):
        RunConfig.from_values({"data.dataset": "cifar10"})
    with pytest.raises(ConfigError, match="no CIFAR-10"):
        RunConfig.from_values({"data.dataset": "cifar10", "data.data_dir": "/nonexistent"})


def test_type_coercion_errors():
    with pytest.raises(ConfigError, match="expected true or false"):
        RunConfig.from_values({"train.sigma_conditioning": "maybe"})
    with pytest.raises(ConfigError, match="expected an integer"):
        RunConfig.from_values({"model.depth": 2.5})
    cfg = RunConfig.from_values({"augment.crop_scale_min": "0.3", "train.sigma_conditioning": "false"})
    assert cfg.augment.crop_scale_min == 0.3 and cfg.train.sigma_conditioning is False


def test_toml_roundtrip(tmp_path):
    cfg = RunConfig.from_values({"train.mask_rate": 0.6, "run.out_dir": 'runs/"quoted"', "train.method": "simclr",
                                 "model.decoder_depth": 0})
    cfg.write(tmp_path / "c.toml")
    again = RunConfig.load(tmp_path / "c.toml")
    assert again == cfg


def test_bad_toml_is_a_config_error(tmp_path):
    (tmp_path / "c.toml").write_text("train = [\n")
    with pytest.raises(ConfigError, match="c.toml"):
        RunConfig.load(tmp_path / "c.toml")


def test_out_dir_must_not_be_a_file(tmp_path):
    (tmp_path / "f").write_text("")
    with pytest.raises(ConfigError, match="run.out_dir"):
        RunConfig.from_values({"run.out_dir": str(tmp_path / "f")})
