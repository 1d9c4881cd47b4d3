from __future__ import annotations

import re

import pytest

from instlift.cli import main
from instlift.config import help_text, load_config
from instlift.errors import ConfigError

BASE = """
[run]
seed = 1
[scene]
spec = sphere 1 0 0 0 0.5
"""


def test_defaults_match_reference_thresholds():
    cfg = load_config(text=BASE)
    assert (cfg.tau_global, cfg.tau_local, cfg.tau_community, cfg.tau_area, cfg.tau_merge) == (0.25, 0.8, 2, 0.15, 0.75)
    assert cfg.min_frames == 2


def test_missing_scene_spec_names_field():
    with pytest.raises(ConfigError) as ei:
        load_config(text="[run]\nseed = 1\n")
    assert ei.value.field == "scene.spec"


def test_missing_seed_is_an_error():
    with pytest.raises(ConfigError) as ei:
        load_config(text="[scene]\nspec = sphere 1 0 0 0 0.5\n")
    assert ei.value.field == "run.seed"


def test_tau_local_out_of_range():
    with pytest.raises(ConfigError) as ei:
        load_config(text=BASE + "[thresholds]\ntau_local = 1.5\n")
    assert ei.value.field == "thresholds.tau_local"
    assert "range" in ei.value.reason


def test_unknown_key_rejected():
    with pytest.raises(ConfigError) as ei:
        load_config(text=BASE + "[train]\nmomentum = 0.9\n")
    assert ei.value.field == "train.momentum"


def test_unparseable_value():
    with pytest.raises(ConfigError):
        load_config(text=BASE + "[camera]\nwidth = wide\n")


def test_overrides_take_precedence():
    cfg = load_config(text=BASE, overrides={("run", "seed"): 9, ("run", "out"): "elsewhere"})
    assert cfg.seed == 9
    assert str(cfg.out).endswith("elsewhere")


def test_help_lists_every_section():
    text = help_text()
    for section in ("[run]", "[scene]", "[thresholds]", "[train]", "[refine]"):
        assert section in text
    for key in ("seed", "spec", "tau_merge", "density_mode", "k_views"):
        assert re.search(rf"^\s+{key}\s", text, re.M)
    assert "(required) (required)" not in text


def test_cli_config_error_exit_code(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(BASE + "[thresholds]\ntau_local = 1.5\n")
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "tau_local" in capsys.readouterr().err


def test_cli_missing_config_file(tmp_path):
    assert main(["run", "--config", str(tmp_path / "nope.cfg")]) == 2


def test_cli_data_error_exit_code(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(BASE)
    # eval without any artifacts is a data error
    assert main(["eval", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3


def test_cli_help_exits_zero(capsys):
    with pytest.raises(SystemExit) as ei:
        main(["--help"])
    assert ei.value.code == 0
    assert "tau_local" in capsys.readouterr().out
