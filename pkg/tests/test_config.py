import pytest

from vuga.config import (ConfigError, config_hash, defaults, load_config_file, model_config, parse_config_text,
                         resolve, run_dir_for, snapshot_text, train_config, write_snapshot)


@pytest.mark.parametrize("file_val,flag_val,expected", [
    (None, None, 10),
    (3, None, 3),
    (None, 5, 5),
    (3, 5, 5),
])
def test_precedence_default_file_flag(file_val, flag_val, expected):
    file_values = {} if file_val is None else parse_config_text(f"epochs = {file_val}\n")
    assert resolve(file_values, {"epochs": flag_val})["epochs"] == expected


def test_parse_types_and_comments():
    v = parse_config_text("# run\nlr = 3e-4  # smaller\nstage_channels = 8, 16,32,64\nablate_sda = yes\n\n")
    assert v == {"lr": 3e-4, "stage_channels": (8, 16, 32, 64), "ablate_sda": True}


def test_unknown_key_reports_line():
    with pytest.raises(ConfigError, match=r"cfg:2: unknown key 'lerning_rate'"):
        parse_config_text("epochs = 2\nlerning_rate = 1\n", "cfg")


def test_bad_value_and_missing_equals():
    with pytest.raises(ConfigError) as info:
        parse_config_text("epochs = many\njust words\n")
    assert len(info.value.problems) == 2


def test_semantic_validation():
    with pytest.raises(ConfigError, match="resolution"):
        resolve({}, {"resolution": 100})
    with pytest.raises(ConfigError, match="train_fraction"):
        resolve({"train_fraction": 1.0})
    with pytest.raises(ConfigError):
        resolve({}, {"not_a_key": 1})


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config_file(tmp_path / "nope.cfg")


def test_snapshot_replays_exactly(tmp_path):
    values = resolve(parse_config_text("lr = 2e-4\nstage_channels = 8,16,32,64\nablate_cae = true\n"), {"seed": 13})
    write_snapshot(tmp_path / "snap", values)
    replayed = resolve(load_config_file(tmp_path / "snap"))
    assert replayed == values
    assert config_hash(replayed) == config_hash(values)
    assert snapshot_text(replayed) == snapshot_text(values)


def test_run_dir_is_content_addressed(tmp_path, monkeypatch):
    monkeypatch.setenv("VUGA_RUNS_DIR", str(tmp_path))
    a = resolve({}, {"seed": 1})
    b = resolve({}, {"seed": 1, "lr": 5e-4})
    assert run_dir_for("train", a) == run_dir_for("train", dict(a))
    assert run_dir_for("train", a) != run_dir_for("train", b)
    assert run_dir_for("train", a).name.endswith("-s1")
    assert run_dir_for("train", a).parent == tmp_path


def test_builds_component_configs():
    values = defaults()
    assert model_config(values).resolution == train_config(values).resolution == 224
    assert values["repeats"] == 1
    assert train_config(values).lr == 1e-4
