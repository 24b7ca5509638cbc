"""Configuration loading, overrides, and digest stability."""

import pytest

from panoanno.backends import Gateway
from panoanno.config import (
    AgentSettings,
    Config,
    IngestSettings,
    PipelineSettings,
    apply_overrides,
    config_digest,
    load_config,
    make_gateway,
    make_suite,
    sdr_config,
)
from panoanno.errors import ConfigError


FULL_TOML = """\
store_root = "data/store"
frames_root = "data/frames"

[pipeline]
coverage_threshold = 0.85
match_threshold = 0.4
pad_fraction = 0.2
min_blank_fraction = 0.001
shift_fraction = 0.02
count_stuff_toward_coverage = false
refine = false
patch_width = 512
stride = 256

[ingest]
width = 1024
height = 512
min_seconds = 2.0
max_seconds = 60.0
default_fps = 5.0

[agents]
url = "mock:rules"
timeout = 30.0

[[backends]]
id = "ent0"
role = "entity"
url = "mock:scripted:fixtures/a.txt"

[[backends]]
id = "pan0"
role = "panoptic"
url = "mock:scripted:fixtures/b.txt"
taxonomy = "vendor-b"
"""


def write(tmp_path, text):
    path = tmp_path / "panoanno.toml"
    path.write_text(text, encoding="utf-8")
    return path


class TestLoading:
    def test_none_path_gives_defaults(self):
        config = load_config(None)
        assert config == Config()
        assert config.pipeline.coverage_threshold == 0.9
        assert config.pipeline.match_threshold == 0.5
        assert config.pipeline.pad_fraction == 0.25
        assert config.pipeline.min_blank_fraction == 0.0005
        assert config.pipeline.shift_fraction == 0.01
        assert config.pipeline.count_stuff_toward_coverage is True
        assert config.ingest.width == 2048
        assert config.ingest.height == 1024
        assert config.ingest.min_seconds == 5.0
        assert config.ingest.max_seconds == 30.0
        assert config.agents.url == "mock:rules"
        assert config.backends == ()

    def test_full_file_round_trip(self, tmp_path):
        config = load_config(write(tmp_path, FULL_TOML))
        assert config.store_root == "data/store"
        assert config.frames_root == "data/frames"
        assert config.pipeline.coverage_threshold == 0.85
        assert config.pipeline.count_stuff_toward_coverage is False
        assert config.pipeline.patch_width == 512
        assert config.ingest.width == 1024
        assert config.ingest.max_seconds == 60.0
        assert config.agents.timeout == 30.0
        assert len(config.backends) == 2
        assert config.backends[0].id == "ent0"
        assert config.backends[0].taxonomy == "none"
        assert config.backends[1].taxonomy == "vendor-b"

    def test_partial_file_keeps_other_defaults(self, tmp_path):
        config = load_config(write(tmp_path, "[pipeline]\ncoverage_threshold = 0.7\n"))
        assert config.pipeline.coverage_threshold == 0.7
        assert config.pipeline.match_threshold == 0.5
        assert config.ingest == IngestSettings()
        assert config.agents == AgentSettings()

    def test_integer_accepted_for_float_field(self, tmp_path):
        config = load_config(write(tmp_path, "[agents]\ntimeout = 60\n"))
        assert config.agents.timeout == 60.0
        assert isinstance(config.agents.timeout, float)

    def test_missing_file_is_an_error(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "absent.toml")

    def test_invalid_toml_is_an_error(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(write(tmp_path, "pipeline = [unclosed\n"))


class TestStrictness:
    def test_unknown_top_level_key(self, tmp_path):
        with pytest.raises(ConfigError, match="unknown key colour"):
            load_config(write(tmp_path, 'colour = "blue"\n'))

    def test_unknown_section_key(self, tmp_path):
        with pytest.raises(ConfigError, match=r"unknown key pipeline\.rho"):
            load_config(write(tmp_path, "[pipeline]\nrho = 0.9\n"))

    def test_unknown_backend_key(self, tmp_path):
        text = '[[backends]]\nid = "a"\nrole = "entity"\nurl = "mock:rules"\nport = 1\n'
        with pytest.raises(ConfigError, match=r"backends\[0\]\.port"):
            load_config(write(tmp_path, text))

    def test_backend_missing_required_field(self, tmp_path):
        with pytest.raises(ConfigError, match="missing 'url'"):
            load_config(write(tmp_path, '[[backends]]\nid = "a"\nrole = "entity"\n'))

    def test_duplicate_backend_ids(self, tmp_path):
        text = (
            '[[backends]]\nid = "a"\nrole = "entity"\nurl = "http://x/"\n'
            '[[backends]]\nid = "a"\nrole = "tracker"\nurl = "http://y/"\n'
        )
        with pytest.raises(ConfigError, match="duplicate backend id"):
            load_config(write(tmp_path, text))

    def test_wrong_value_type(self, tmp_path):
        with pytest.raises(ConfigError, match="must be a number"):
            load_config(write(tmp_path, '[pipeline]\ncoverage_threshold = "high"\n'))
        with pytest.raises(ConfigError, match="must be an integer"):
            load_config(write(tmp_path, "[pipeline]\npatch_width = 1.5\n"))
        with pytest.raises(ConfigError, match="must be true or false"):
            load_config(write(tmp_path, "[pipeline]\nrefine = 1\n"))

    def test_out_of_range_values(self, tmp_path):
        with pytest.raises(ConfigError, match="coverage_threshold"):
            load_config(write(tmp_path, "[pipeline]\ncoverage_threshold = 1.0\n"))
        with pytest.raises(ConfigError, match="min_seconds"):
            load_config(write(tmp_path, "[ingest]\nmin_seconds = 40.0\n"))
        with pytest.raises(ConfigError, match="timeout"):
            load_config(write(tmp_path, "[agents]\ntimeout = 0.0\n"))

    def test_bad_backend_role_rejected(self, tmp_path):
        text = '[[backends]]\nid = "a"\nrole = "oracle"\nurl = "http://x/"\n'
        with pytest.raises(ConfigError):
            load_config(write(tmp_path, text))


class TestOverrides:
    def test_section_override_parses_field_type(self):
        config = apply_overrides(
            Config(),
            [
                "pipeline.coverage_threshold=0.8",
                "pipeline.patch_width=128",
                "pipeline.refine=false",
                "agents.url=mock:rules",
            ],
        )
        assert config.pipeline.coverage_threshold == 0.8
        assert config.pipeline.patch_width == 128
        assert config.pipeline.refine is False
        assert config.agents.url == "mock:rules"

    def test_top_level_override(self):
        config = apply_overrides(Config(), ["store_root=/tmp/s"])
        assert config.store_root == "/tmp/s"

    def test_later_override_wins(self):
        config = apply_overrides(
            Config(), ["ingest.width=100", "ingest.width=200"]
        )
        assert config.ingest.width == 200

    def test_value_may_contain_equals(self):
        config = apply_overrides(Config(), ["agents.url=http://h/?a=b"])
        assert config.agents.url == "http://h/?a=b"

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown override key"):
            apply_overrides(Config(), ["pipeline.rho=0.9"])
        with pytest.raises(ConfigError, match="unknown override key"):
            apply_overrides(Config(), ["nonsense=1"])

    def test_malformed_item_rejected(self):
        with pytest.raises(ConfigError, match="key=value"):
            apply_overrides(Config(), ["pipeline.refine"])

    def test_bad_value_rejected(self):
        with pytest.raises(ConfigError, match="true or false"):
            apply_overrides(Config(), ["pipeline.refine=yes"])
        with pytest.raises(ConfigError, match="integer"):
            apply_overrides(Config(), ["ingest.width=wide"])

    def test_override_still_range_checked(self):
        with pytest.raises(ConfigError, match="coverage_threshold"):
            apply_overrides(Config(), ["pipeline.coverage_threshold=2.0"])


class TestDigest:
    def test_digest_is_stable(self, tmp_path):
        a = load_config(write(tmp_path, FULL_TOML))
        b = load_config(write(tmp_path, FULL_TOML))
        assert config_digest(a) == config_digest(b)
        assert len(config_digest(a)) == 64

    def test_digest_changes_with_behavior_values(self):
        base = config_digest(Config())
        changed = apply_overrides(Config(), ["pipeline.coverage_threshold=0.8"])
        assert config_digest(changed) != base
        changed = apply_overrides(Config(), ["ingest.width=4096"])
        assert config_digest(changed) != base

    def test_digest_ignores_storage_locations(self):
        base = config_digest(Config())
        moved = apply_overrides(
            Config(), ["store_root=elsewhere", "frames_root=others"]
        )
        assert config_digest(moved) == base

    def test_digest_sees_backend_order(self, tmp_path):
        ab = (
            '[[backends]]\nid = "a"\nrole = "entity"\nurl = "http://x/"\n'
            '[[backends]]\nid = "b"\nrole = "entity"\nurl = "http://y/"\n'
        )
        ba = (
            '[[backends]]\nid = "b"\nrole = "entity"\nurl = "http://y/"\n'
            '[[backends]]\nid = "a"\nrole = "entity"\nurl = "http://x/"\n'
        )
        assert config_digest(load_config(write(tmp_path, ab))) != config_digest(
            load_config(write(tmp_path, ba))
        )

    def test_default_digest_matches_loaded_empty_file(self, tmp_path):
        assert config_digest(load_config(write(tmp_path, ""))) == config_digest(
            Config()
        )


class TestFactories:
    def test_make_gateway_registers_backends(self, tmp_path):
        fixture = tmp_path / "fx.txt"
        fixture.write_text(
            "scripted-fixture v1\ncanvas 64 32 wrap1\n", encoding="ascii"
        )
        text = (
            f'[[backends]]\nid = "ent0"\nrole = "entity"\n'
            f'url = "mock:scripted:{fixture}"\n'
        )
        config = load_config(write(tmp_path, text))
        gateway = make_gateway(config)
        assert isinstance(gateway, Gateway)
        assert gateway.ids() == ["ent0"]
        assert gateway.ids("entity") == ["ent0"]
        assert gateway.ids("tracker") == []

    def test_make_suite_uses_settings(self):
        suite = make_suite(Config())
        assert suite.taxonomy.normalize("aeroplane") == "plane"

    def test_sdr_config_mapping(self):
        config = apply_overrides(
            Config(),
            [
                "pipeline.match_threshold=0.4",
                "pipeline.patch_width=512",
                "pipeline.stride=256",
                "pipeline.refine=false",
            ],
        )
        sc = sdr_config(config)
        assert sc.tau == 0.4
        assert sc.patch_width == 512
        assert sc.stride == 256
        assert sc.refine is False
        default = sdr_config(Config())
        assert default.patch_width is None
        assert default.stride is None
