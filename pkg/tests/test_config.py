from pathlib import Path

import pytest
import yaml

from opinionxf.config import SEED_ENV, VARIANTS, build_run_config, load_run_config, resolve_seed
from opinionxf.dataset import default_generator_config
from opinionxf.errors import ConfigError

REPO = Path(__file__).resolve().parents[1]


def test_seed_precedence():
    assert resolve_seed(1, None, {}) == 1
    assert resolve_seed(1, None, {SEED_ENV: "7"}) == 7
    assert resolve_seed(1, 3, {SEED_ENV: "7"}) == 3
    with pytest.raises(ConfigError):
        resolve_seed(1, None, {SEED_ENV: "abc"})


def test_seed_reaches_every_section():
    run = build_run_config({"seed": 2}, seed=None, environ={SEED_ENV: "5"})
    assert run.seed == run.generator.seed == run.training.seed == 5
    assert run.model_overrides("base")["seed"] == 5


def test_default_files_parse():
    run = load_run_config(REPO / "configs" / "default.yaml", environ={})
    assert run.generator.to_dict() == default_generator_config().to_dict()
    assert run.training.epochs == 40 and run.model["d_model"] == 128
    elastic = load_run_config(REPO / "configs" / "elasticity.yaml", environ={})
    assert [t.shift_prob[0] for t in elastic.generator.topics] == [0.05, 0.45]


def test_paths_relative_to_config(tmp_path):
    cfg = tmp_path / "sub" / "c.yaml"
    cfg.parent.mkdir()
    cfg.write_text(yaml.safe_dump({"paths": {"data_dir": "d", "output_dir": "o"}}))
    run = load_run_config(cfg, environ={})
    assert run.paths.dataset == cfg.parent / "d" / "dataset.jsonl"
    assert run.paths.output_dir == cfg.parent / "o"
    assert load_run_config(cfg, out=tmp_path / "x", environ={}).paths.output_dir == tmp_path / "x"


@pytest.mark.parametrize("raw", [
    {"bogus": 1},
    {"model": {"layers": 3}},
    {"training": {"learning_rate": 1}},
    {"training": {"lr_max": 0.0}},
    {"generator": {"noise_prob": 2.0}},
    {"generator": {"unknown": 1}},
])
def test_bad_configs(raw):
    with pytest.raises(ConfigError):
        build_run_config(raw, environ={})


def test_unparseable_yaml(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("a: [1, 2\n")
    with pytest.raises(ConfigError):
        load_run_config(p, environ={})
    p.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_run_config(p, environ={})


def test_echo_and_digest(tmp_path):
    run = build_run_config({"seed": 4}, base=tmp_path, environ={})
    run.echo(tmp_path / "out")
    text = (tmp_path / "out" / "config.yaml").read_text()
    assert yaml.safe_load(text)["seed"] == 4
    assert (tmp_path / "out" / "config.sha256").read_text().strip() == run.digest()
    other = build_run_config({"seed": 5}, base=tmp_path, environ={})
    assert other.digest() != run.digest()


def test_variants():
    assert VARIANTS["quantum"] == {"use_fusion": True, "use_quantum": True, "use_contrastive": True}
    run = build_run_config({"model": {"d_model": 32}}, environ={})
    assert run.model_overrides("fusion")["use_fusion"] is True
    assert run.model_overrides("fusion")["d_model"] == 32
