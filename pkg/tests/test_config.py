"""Config files: coercion, includes, domain defaults, validation."""

import pytest

from latentlang.config import (DOMAIN_METHODS, DOMAINS, ExperimentConfig,
                               parse_value, read_config_file)
from latentlang.errors import ConfigError


# ---------------------------------------------------------------------------
# value parsing and coercion


def test_parse_value_types():
    assert parse_value("true") is True
    assert parse_value("False") is False
    assert parse_value("12") == 12
    assert parse_value("0.5") == 0.5
    assert parse_value("natural") == "natural"


def test_from_mapping_coerces_strings():
    cfg = ExperimentConfig.from_mapping(
        {"domain": "shapes", "seed": "7", "k": "10", "temperature": "0.5"})
    assert cfg.seed == 7 and cfg.k == 10 and cfg.temperature == 0.5


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown config key"):
        ExperimentConfig.from_mapping({"hidden_size": "64"})


# ---------------------------------------------------------------------------
# config files and includes


def test_read_config_file_comments_and_includes(tmp_path):
    base = tmp_path / "base.cfg"
    base.write_text("domain = strings\nk = 100\n# comment\n")
    child = tmp_path / "child.cfg"
    child.write_text(f"include = base.cfg\nk = 1\nseed = 3\n")
    values = read_config_file(child)
    # later lines override included ones
    assert values == {"domain": "strings", "k": "1", "seed": "3"}


def test_include_cycle_detected(tmp_path):
    a = tmp_path / "a.cfg"
    b = tmp_path / "b.cfg"
    a.write_text("include = b.cfg\n")
    b.write_text("include = a.cfg\n")
    with pytest.raises(ConfigError, match="include cycle"):
        read_config_file(a)


def test_missing_include_rejected(tmp_path):
    a = tmp_path / "a.cfg"
    a.write_text("include = nope.cfg\n")
    with pytest.raises(ConfigError):
        read_config_file(a)


def test_to_text_roundtrip():
    cfg = ExperimentConfig(domain="shapes", method="meta", seed=4).resolve()
    back = ExperimentConfig.from_mapping(dict(
        line.split(" = ", 1) for line in cfg.to_text().splitlines()))
    assert back == cfg


# ---------------------------------------------------------------------------
# resolution and validation


def test_resolve_fills_domain_defaults():
    shapes = ExperimentConfig(domain="shapes").resolve()
    strings = ExperimentConfig(domain="strings").resolve()
    nav = ExperimentConfig(domain="nav").resolve()
    assert (shapes.k, strings.k, nav.k) == (10, 100, 100)
    assert shapes.n_lang == 2000 and strings.n_lang == 1000
    assert nav.n_val == 0 and nav.n_test == 20


def test_explicit_values_survive_resolve():
    cfg = ExperimentConfig(domain="shapes", k=3, n_lang=12).resolve()
    assert cfg.k == 3 and cfg.n_lang == 12


def test_method_validated_per_domain():
    for domain in DOMAINS:
        for method in DOMAIN_METHODS[domain]:
            mode = "formal" if method == "l3-oracle-engine" else "natural"
            ExperimentConfig(domain=domain, method=method,
                             annotation_mode=mode).resolve()
    with pytest.raises(ConfigError, match="not defined for domain"):
        ExperimentConfig(domain="shapes", method="identity").resolve()
    with pytest.raises(ConfigError, match="not defined for domain"):
        ExperimentConfig(domain="nav", method="multitask").resolve()


def test_formal_annotations_strings_only():
    ExperimentConfig(domain="strings", annotation_mode="formal").resolve()
    with pytest.raises(ConfigError):
        ExperimentConfig(domain="shapes", annotation_mode="formal").resolve()


def test_oracle_engine_requires_formal():
    with pytest.raises(ConfigError, match="formal"):
        ExperimentConfig(domain="strings", method="l3-oracle-engine",
                         annotation_mode="natural").resolve()


def test_bad_numeric_fields_rejected():
    with pytest.raises(ConfigError):
        ExperimentConfig(domain="strings", k=0).resolve()
    with pytest.raises(ConfigError):
        ExperimentConfig(domain="strings", temperature=0.0).resolve()
    with pytest.raises(ConfigError):
        ExperimentConfig(domain="nav", n_val=5).resolve()


def test_grid_fractions_parsed_and_checked():
    cfg = ExperimentConfig(domain="strings",
                           checkpoint_grid="0.25, 0.5,1.0").resolve()
    assert cfg.grid_fractions() == (0.25, 0.5, 1.0)
    with pytest.raises(ConfigError):
        ExperimentConfig(domain="strings", checkpoint_grid="0,1").resolve()


def test_factories_match_fields():
    cfg = ExperimentConfig(domain="strings", hidden=24, emb=12, k=5).resolve()
    adapter = cfg.adapter()
    assert adapter.hidden == 24
    tc = cfg.train_config()
    assert tc.interp_steps == cfg.interp_steps
    cc = cfg.corpus_config()
    assert cc.n_lang == cfg.n_lang

    nav = ExperimentConfig(domain="nav", episode_budget=60).resolve()
    assert nav.adapter().episode_budget == 60
    ft = nav.finetune_config()
    assert ft.batches == nav.finetune_batches
    assert ft.gamma == nav.gamma
