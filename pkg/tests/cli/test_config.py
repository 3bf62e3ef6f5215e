import pytest

from tests.utils import tiny_config_text
from tests.utils import TINY_CONFIG_PATH
from tests.utils import write_config
from zocertify.config import ExperimentConfig
from zocertify.config import load_config
from zocertify.config import parse_config
from zocertify.config import render_config
from zocertify.errors import ConfigValidationError
from zocertify.zo.estimators import Directions


def test_defaults_are_valid():
    assert ExperimentConfig().validate() == []


def test_tiny_config_propagates_dataset_dimensions():
    config = load_config(TINY_CONFIG_PATH).check()
    assert config.run.seed == 7
    assert config.run.threads == 2
    assert config.dataset.channels == 1
    for part in (config.classifier, config.rdunet, config.autoencoder):
        assert part.input_channels == 1
        assert part.image_size == 8
    assert config.classifier.num_classes == 3
    assert config.classifier.widths == (2, 3)
    assert config.zo.q == 2
    assert config.zo.seed == 7
    assert config.certify.radii == (0.0, 0.25, 0.5)
    assert config.train.lr_milestones is None


def test_overrides_resync_the_seed():
    config = load_config(TINY_CONFIG_PATH).with_overrides(seed=11, threads=4, output_dir="elsewhere")
    assert config.run.seed == 11
    assert config.zo.seed == 11
    assert config.run.threads == 4
    assert config.run.output_dir == "elsewhere"
    untouched = load_config(TINY_CONFIG_PATH).with_overrides()
    assert untouched.run.seed == 7


def test_parsers():
    config = parse_config(
        tiny_config_text(
            zo={"directions": "normal", "unhalved_cge": "yes"},
            loss={"bandwidth": "0.5"},
            train={"lr_milestones": "2, 4"},
            run={"record_wall_time": "true"},
        )
    )
    assert config.zo.directions is Directions.NORMAL
    assert config.zo.unhalved_cge is True
    assert config.loss.bandwidth == 0.5
    assert config.train.lr_milestones == (2, 4)
    assert config.train.record_wall_time is True


def test_every_problem_is_reported_at_once():
    text = tiny_config_text(
        zo={"q": "many", "bogus": "1"},
        loss={"bandwidth": "wide"},
        extra={"key": "value"},
    )
    with pytest.raises(ConfigValidationError) as e:
        parse_config(text)
    messages = "\n".join(e.value.errors)
    assert len(e.value.errors) == 4
    assert "unknown section [extra]" in messages
    assert "[zo] unknown key 'bogus'" in messages
    assert "[zo] 'q' should be an integer" in messages
    assert "[loss] 'bandwidth'" in messages


def test_validation_prefixes_sections():
    config = parse_config(
        tiny_config_text(
            certify={"n0": "50", "n": "10"},
            train={"batch_size": "0"},
            rdunet={"depth": "4"},
        )
    )
    errors = config.validate()
    assert any(e.startswith("[certify] 'n' (10)") for e in errors)
    assert any(e.startswith("[train] 'batch_size'") for e in errors)
    assert any(e.startswith("[rdunet] 'image_size' (8)") for e in errors)
    with pytest.raises(ConfigValidationError):
        config.check()


def test_idx_needs_single_channel():
    config = parse_config(tiny_config_text(dataset={"kind": "idx", "channels": "3"}))
    errors = config.validate()
    assert "[dataset] 'channels' should be 1 for idx datasets" in errors


def test_missing_file(tmp_path):
    with pytest.raises(ConfigValidationError, match="does not exist"):
        load_config(str(tmp_path / "absent.ini"))


def test_malformed_ini(tmp_path):
    path = write_config(tmp_path, text="no section header\n")
    with pytest.raises(ConfigValidationError):
        load_config(path)


def test_rendered_config_reloads_to_the_same_experiment(tmp_path):
    config = load_config(TINY_CONFIG_PATH)
    rendered = render_config(config)
    again = parse_config(rendered)
    assert again == config
    assert render_config(again) == rendered
