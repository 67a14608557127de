import pytest

from volumetry_cli.config import PipelineSettings, load_settings
from volumetry_core.constants import Rating, SegmenterKind
from volumetry_core.exceptions import ConfigError


def _write(tmp_path, text: str):
    path = tmp_path / "volumetry.conf"
    path.write_text(text, encoding="utf-8")
    return path


def test_defaults():
    settings = load_settings(environ={})
    assert settings.N_TRIM == 3
    assert settings.CLIP_FRACTION == 0.01
    assert settings.PAD_SHAPE == (224, 192)
    assert settings.CONNECTIVITY == 6
    assert settings.LABEL_THRESHOLD == 0.5
    assert settings.SEGMENTER is SegmenterKind.EXTERNAL_MASKS
    assert settings.WORKERS == 1


def test_file_values(tmp_path):
    path = _write(
        tmp_path,
        "# run settings\nN_TRIM = 4\nPAD_SHAPE = 256x208\nCONNECTIVITY = 26\nAUTO_REINCLUDE = false\n",
    )
    settings = load_settings(path, environ={})
    assert settings.N_TRIM == 4
    assert settings.PAD_SHAPE == (256, 208)
    assert settings.CONNECTIVITY == 26
    assert settings.AUTO_REINCLUDE is False


def test_lowercase_keys_are_accepted(tmp_path):
    settings = load_settings(_write(tmp_path, "n_trim = 2\n"), environ={})
    assert settings.N_TRIM == 2


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_settings(tmp_path / "absent.conf")


def test_unknown_key(tmp_path):
    with pytest.raises(ConfigError):
        load_settings(_write(tmp_path, "N_TRIMS = 3\n"), environ={})


@pytest.mark.parametrize(
    "line",
    [
        "N_TRIM = -1",
        "CLIP_FRACTION = 0.5",
        "PAD_SHAPE = 224",
        "CONNECTIVITY = 18",
        "STAGE1_LOCATION = 0",
        "STAGE2_SCRAP = 1.5",
        "WORKERS = 0",
        "LOG_LEVEL = LOUD",
        "SEGMENTER = neural_net",
        "BLEND_SCHEME = cosine",
    ],
)
def test_invalid_values(tmp_path, line):
    with pytest.raises(ConfigError, match="Configuration Error"):
        load_settings(_write(tmp_path, line + "\n"), environ={})


def test_environment_overrides_operational_keys(tmp_path):
    path = _write(tmp_path, "LOG_LEVEL = INFO\nN_TRIM = 2\n")
    settings = load_settings(path, environ={"LOG_LEVEL": "debug", "LOG_DIR": "/tmp/volumetry-logs", "N_TRIM": "5"})
    assert settings.LOG_LEVEL == "DEBUG"
    assert settings.LOG_DIR == "/tmp/volumetry-logs"
    # Only logging keys come from the environment
    assert settings.N_TRIM == 2


def test_explicit_overrides_win(tmp_path):
    settings = load_settings(_write(tmp_path, "WORKERS = 2\n"), environ={}, WORKERS=4, N_TRIM=None)
    assert settings.WORKERS == 4
    assert settings.N_TRIM == 3


def test_settings_are_frozen():
    settings = PipelineSettings()
    with pytest.raises(ValueError):
        settings.N_TRIM = 5


def test_config_hash_ignores_operational_keys():
    base = PipelineSettings()
    assert PipelineSettings(WORKERS=8, LOG_LEVEL="DEBUG", LOG_DIR="elsewhere").config_hash() == base.config_hash()
    assert PipelineSettings(N_TRIM=2).config_hash() != base.config_hash()
    assert "WORKERS" not in base.result_settings()
    assert base.result_settings()["PAD_SHAPE"] == [224, 192]


def test_flagging_policy():
    policy = PipelineSettings(STAGE1_SEGMENTATION_FUSION=0.05, AUTO_REINCLUDE=False).flagging_policy()
    assert policy.stage1[Rating.SEGMENTATION_FUSION] == 0.05
    assert policy.stage1[Rating.LOCATION] == 0.01
    assert policy.stage2 == {Rating.SMOOTHNESS: 0.01, Rating.SCRAP: 0.01}
    assert policy.use_normalized
    assert not policy.auto_reinclude


def test_segmenter_spec():
    external = PipelineSettings(MASK_DIR="masks").segmenter_spec({("S1", 2): "a.nii"})
    assert external.kind is SegmenterKind.EXTERNAL_MASKS
    assert external.params == {"mask_dir": "masks", "n_trim": 3, "mask_paths": {("S1", 2): "a.nii"}}

    threshold = PipelineSettings(SEGMENTER="threshold_baseline", THRESHOLD_FRACTION=0.4).segmenter_spec()
    assert threshold.kind is SegmenterKind.THRESHOLD_BASELINE
    assert threshold.params["threshold"] == 0.4
    assert threshold.params["pad_shape"] == (224, 192)
