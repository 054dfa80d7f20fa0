"""Config registry: parsing, overrides, canonical resolution, hashing."""

import pytest

from egsa.config import DEFAULTS, RunConfig, fnv1a64, parse_config_text
from egsa.errors import ConfigError
from egsa.model import ModelConfig


class TestFnv1a64:
    def test_known_vectors(self):
        # published FNV-1a 64-bit reference values
        assert fnv1a64("") == 0xCBF29CE484222325
        assert fnv1a64("a") == 0xAF63DC4C8601EC8C
        assert fnv1a64("foobar") == 0x85944171F73967E8

    def test_sensitivity(self):
        assert fnv1a64("key = 1") != fnv1a64("key = 2")


class TestParsing:
    def test_comments_and_blanks_ignored(self):
        text = """
        # a comment
        schedule.T = 7   # trailing comment

        train.batch = 2
        """
        values = parse_config_text(text)
        assert values == {"schedule.T": 7, "train.batch": 2}

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown config key"):
            parse_config_text("no.such.key = 1")

    def test_missing_equals_rejected(self):
        with pytest.raises(ConfigError, match="key = value"):
            parse_config_text("schedule.T 7")

    def test_bad_int_rejected(self):
        with pytest.raises(ConfigError, match="schedule.T"):
            parse_config_text("schedule.T = 3.5")

    def test_bad_float_rejected(self):
        with pytest.raises(ConfigError, match="canny.sigma"):
            parse_config_text("canny.sigma = wide")

    def test_bool_forms(self):
        assert parse_config_text("fusion.cross = false")["fusion.cross"] is False
        assert parse_config_text("fusion.cross = True")["fusion.cross"] is True
        assert parse_config_text("fusion.cross = 0")["fusion.cross"] is False
        with pytest.raises(ConfigError):
            parse_config_text("fusion.cross = maybe")

    def test_tuple_of_ints(self):
        values = parse_config_text("model.encoder_channels = 8, 16, 32")
        assert values["model.encoder_channels"] == (8, 16, 32)

    def test_string_value(self):
        values = parse_config_text("fusion.variant = MODEST_CA")
        assert values["fusion.variant"] == "MODEST_CA"


class TestRunConfig:
    def test_defaults_present(self):
        cfg = RunConfig()
        assert cfg["train.epochs"] == 20
        assert cfg["train.batch"] == 4
        assert cfg["schedule.T"] == 5
        assert cfg["fusion.variant"] == "EGSA_SA"
        assert cfg["loss.beta_seg"] == 0.1

    def test_override_wins_over_file(self):
        cfg = RunConfig.load("schedule.T = 9\ntrain.batch = 2\n",
                             overrides=["schedule.T=3"])
        assert cfg["schedule.T"] == 3
        assert cfg["train.batch"] == 2

    def test_unknown_override_rejected(self):
        with pytest.raises(ConfigError):
            RunConfig.load(overrides=["nope=1"])

    def test_resolved_text_round_trips(self):
        cfg = RunConfig.load(overrides=["fusion.variant=EGSA_CA_SA",
                                        "train.lr_decoder=0.0001",
                                        "model.encoder_channels=8,16,32"])
        reparsed = RunConfig(parse_config_text(cfg.resolved_text()))
        assert reparsed.resolved_text() == cfg.resolved_text()
        assert reparsed.config_hash() == cfg.config_hash()

    def test_resolved_text_covers_every_key_once(self):
        lines = RunConfig().resolved_text().strip().splitlines()
        keys = [line.split(" = ")[0] for line in lines]
        assert keys == [key for key, _ in DEFAULTS]

    def test_hash_changes_with_values(self):
        base = RunConfig().config_hash()
        assert RunConfig.load(overrides=["schedule.T=6"]).config_hash() != base
        assert RunConfig().config_hash() == base

    def test_validation_bad_variant(self):
        with pytest.raises(ConfigError):
            RunConfig.load(overrides=["fusion.variant=BAD"])

    def test_validation_ranges(self):
        with pytest.raises(ConfigError):
            RunConfig.load(overrides=["train.batch=0"])
        with pytest.raises(ConfigError):
            RunConfig.load(overrides=["schedule.T=-1"])
        with pytest.raises(ConfigError):
            RunConfig.load(overrides=["train.lr_encoder=0"])

    def test_scene_config_mapping(self):
        cfg = RunConfig.load(overrides=["data.num_objects=6",
                                        "data.transparent_fraction=0.25"])
        scene_cfg = cfg.scene_config()
        assert scene_cfg.num_objects == 6
        assert scene_cfg.transparent_fraction == 0.25
        assert scene_cfg.height == 64

    def test_model_config_mapping(self):
        cfg = RunConfig.load(overrides=["fusion.variant=MODEST_SA",
                                        "model.num_iterations=2",
                                        "fusion.cross=false"])
        model_cfg = cfg.model_config()
        assert isinstance(model_cfg, ModelConfig)
        assert model_cfg.variant == "MODEST_SA"
        assert model_cfg.num_iterations == 2
        assert model_cfg.cross is False

    def test_invalid_model_settings_surface_as_config_error(self):
        with pytest.raises(ConfigError):
            RunConfig.load(overrides=["model.num_scales=4"]).model_config()
