import json

import numpy as np
import pytest

from config import DEFAULTS, DESK_SCALE, PRESETS, Config, ConfigError, load_run_config, read_config_file


def _write(tmp_path, text, name="run.json"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_environment_config_is_valid():
    assert Config.validate()
    assert Config.LOG_LEVEL in ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL')


def test_defaults_follow_pre_norm():
    run = load_run_config(env={})
    assert run.model.norm.value == "pre"
    assert run.model.attention_dropout == 0.1
    assert run.beta2 == 0.997
    assert run.task.vocab_size == run.model.src_vocab == run.model.tgt_vocab
    assert run.task.seed == run.train.seed == 0


def test_post_norm_preset():
    run = load_run_config("base-postnorm-6L", env={})
    assert run.model.norm.value == "post"
    assert run.model.attention_dropout == 0.0
    assert run.beta2 == 0.98
    assert run.scheduler.lr_max == 7e-4
    assert run.train.steps == 100_000 // DESK_SCALE
    assert run.scheduler.warmup == 4000 // DESK_SCALE


def test_deep_presets_accumulate_and_halve_updates():
    run = load_run_config("deep-prenorm-20L", env={})
    assert run.model.encoder_depth == 20
    assert run.train.accumulation == 2
    assert run.scheduler.lr_max == 2e-3
    assert run.train.steps == 50_000 // DESK_SCALE
    assert run.scheduler.warmup == 16000 // DESK_SCALE


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_every_preset_builds(name):
    run = load_run_config(name, env={})
    assert run.preset == name
    assert run.to_dict()["encoder_depth"] == run.model.encoder_depth


def test_unknown_preset():
    with pytest.raises(ConfigError):
        load_run_config("huge-99L", env={})


def test_layer_precedence(tmp_path):
    path = _write(tmp_path, json.dumps({"train": {"seed": 3, "steps": 5}, "lr_max": 5e-4}))
    run = load_run_config("base-postnorm-6L", path, env={})
    assert (run.train.seed, run.train.steps, run.scheduler.lr_max) == (3, 5, 5e-4)

    run = load_run_config("base-postnorm-6L", path, env={"DLCL_SEED": "7"})
    assert run.train.seed == 7

    run = load_run_config("base-postnorm-6L", path, {"seed": "9", "steps": None}, env={"DLCL_SEED": "7"})
    assert run.train.seed == 9
    assert run.train.steps == 5



# (file value, flag value) for keys that validate independently of each other
LAYERED = {
    "steps": (5, 9),
    "lr_max": (5e-4, 3e-4),
    "warmup": (10, 20),
    "seed": (3, 4),
    "log_every": (7, 8),
    "checkpoint_every": (11, 12),
    "keep_checkpoints": (2, 3),
    "label_smoothing": (0.05, 0.2),
    "beam_size": (2, 6),
    "alpha": (0.8, 1.0),
    "decode_max_len": (10, 20),
    "heads": (2, 8),
}


@pytest.mark.parametrize("seed", range(25))
def test_precedence_over_random_key_subsets(tmp_path, seed):
    rng = np.random.default_rng(seed)
    keys = sorted(LAYERED)
    in_file = [k for k in keys if rng.random() < 0.5]
    in_flags = [k for k in keys if rng.random() < 0.5]
    env_seed = rng.random() < 0.3
    path = _write(tmp_path, json.dumps({k: LAYERED[k][0] for k in in_file}))
    flags = {k: str(LAYERED[k][1]) for k in in_flags}
    flags.update({k: None for k in keys if k not in in_flags})
    env = {"DLCL_SEED": "99"} if env_seed else {}

    values = load_run_config(path=path, flags=flags, env=env).to_dict()
    for key in keys:
        expected = DEFAULTS[key]
        if key in in_file:
            expected = LAYERED[key][0]
        if key == "seed" and env_seed:
            expected = 99
        if key in in_flags:
            expected = LAYERED[key][1]
        assert values[key] == expected, key


def test_flags_are_coerced():
    run = load_run_config(flags={"d_model": "32", "heads": "2", "aggregation": "all-one", "dropout": "0.2"}, env={})
    assert run.model.d_model == 32
    assert run.model.aggregation.value == "all-one"
    assert run.model.dropout == 0.2


@pytest.mark.parametrize("flags", [
    {"d_model": "wide"},
    {"encoder_depth": 2.5},
    {"norm": "middle"},
    {"heads": 3},
    {"steps": -1},
])
def test_invalid_values_raise_config_error(flags):
    with pytest.raises(ConfigError):
        load_run_config(flags=flags, env={})


def test_unknown_key_reports_line(tmp_path):
    path = _write(tmp_path, '{\n  "d_model": 32,\n  "learning_rate": 0.1\n}\n')
    with pytest.raises(ConfigError) as info:
        read_config_file(path)
    assert info.value.key == "learning_rate"
    assert info.value.line == 3
    assert "line 3" in str(info.value)


def test_sections_nest_one_level(tmp_path):
    flat = read_config_file(_write(tmp_path, '{"model": {"heads": 2}, "steps": 4}'))
    assert flat == {"heads": 2, "steps": 4}
    with pytest.raises(ConfigError):
        read_config_file(_write(tmp_path, '{"model": {"attention": {"heads": 2}}}', "deep.json"))
    with pytest.raises(ConfigError) as info:
        read_config_file(_write(tmp_path, '{\n"optimizer": {"beta1": 0.9}}', "section.json"))
    assert info.value.line == 2


def test_invalid_json_reports_line(tmp_path):
    with pytest.raises(ConfigError) as info:
        read_config_file(_write(tmp_path, '{\n  "steps": 4,\n}'))
    assert info.value.line == 3


def test_explicit_beta2_wins(tmp_path):
    run = load_run_config("base-prenorm-6L", _write(tmp_path, '{"scheduler": {"beta2": 0.95}}'), env={})
    assert run.beta2 == 0.95
