import json

import pytest

from indoornav import cli, features
from indoornav.cli import EXIT_OK, EXIT_USER_ERROR, main, parse_seeds, write_provenance
from indoornav.config import ExperimentConfig
from indoornav.exceptions import ConfigError
from indoornav.scene import load_scene, save_scene


@pytest.fixture(autouse=True)
def _no_user_dirs(monkeypatch):
    monkeypatch.setattr(cli, "init_logging", lambda config: None)
    monkeypatch.setattr(cli, "init_config_dir", lambda: None)


@pytest.fixture
def scene_dir(tmp_path, targeted_room):
    path = tmp_path / "scenes" / targeted_room.scene_id
    save_scene(targeted_room, path)
    return path


def test_parse_seeds():
    assert parse_seeds("1..3") == [1, 2, 3]
    assert parse_seeds("4, 9,10..11") == [4, 9, 10, 11]
    with pytest.raises(ConfigError):
        parse_seeds(" , ")


def test_write_provenance(tmp_path):
    inputs = tmp_path / "cloud.xyz"
    inputs.write_text("0 0 0\n")
    path = write_provenance(tmp_path / "run", "pipeline", ExperimentConfig(), [inputs, tmp_path / "missing"])
    record = json.loads(path.read_text())
    assert record["command"] == "pipeline"
    assert list(record["inputs"]) == [str(inputs)]
    assert (tmp_path / "run" / "effective_config.json").exists()


def test_stats_reference(tmp_path):
    assert main(["stats", "--reference", "--output-dir", str(tmp_path)]) == EXIT_OK


@pytest.mark.parametrize("extra", [[], ["--json"]])
def test_config_show(tmp_path, extra):
    assert main(["config", "show", "--output-dir", str(tmp_path), *extra]) == EXIT_OK


def test_bad_override_is_user_error(tmp_path):
    code = main(["config", "show", "--set", "train.wrokers=2", "--output-dir", str(tmp_path)])
    assert code == EXIT_USER_ERROR


def test_unknown_command_is_user_error():
    with pytest.raises(SystemExit) as exc:
        main(["teleport"])
    assert exc.value.code == EXIT_USER_ERROR


def test_empty_cloud_is_user_error(tmp_path):
    cloud = tmp_path / "empty.xyz"
    cloud.write_text("# nothing here\n")
    assert main(["pipeline", str(cloud), "--output-dir", str(tmp_path / "run")]) == EXIT_USER_ERROR
    assert (tmp_path / "run" / "provenance.json").exists()


def test_zero_frame_budget_is_user_error(tmp_path, scene_dir):
    code = main(["train", str(scene_dir), "--frames", "0", "--output-dir", str(tmp_path / "run")])
    assert code == EXIT_USER_ERROR


def test_eval_oracle(tmp_path, scene_dir):
    out = tmp_path / "run"
    code = main(
        [
            "eval",
            str(scene_dir),
            "--policy",
            "oracle",
            "--workers",
            "1",
            "--set",
            "eval.episodes_per_target=2",
            "--output-dir",
            str(out),
        ]
    )
    assert code == EXIT_OK
    assert (out / "eval.csv").exists()
    assert (out / "eval.txt").exists()
    assert json.loads((out / "provenance.json").read_text())["command"] == "eval"


def test_eval_model_policy_needs_checkpoint(tmp_path, scene_dir):
    code = main(["eval", str(scene_dir), "--output-dir", str(tmp_path / "run")])
    assert code == EXIT_USER_ERROR


def test_report_needs_inputs(tmp_path):
    assert main(["report", "--output-dir", str(tmp_path)]) == EXIT_USER_ERROR


@pytest.mark.slow
def test_procgen_default_preset(tmp_path):
    out = tmp_path / "corpus"
    code = main(["procgen", "--preset", "office", "--seeds", "7", "--workers", "2", "--output-dir", str(out)])
    assert code == EXIT_OK
    scene = load_scene(out / "scenes" / "office-0007")
    assert scene.num_locations > 0
    assert set(scene.landmark_targets) <= set(scene.featureful_targets)


def test_eval_oracle_walks_shortest_paths(tmp_path, scene_dir):
    import pandas as pd

    out = tmp_path / "run"
    args = ["eval", str(scene_dir), "--policy", "oracle", "--workers", "1"]
    # a nonzero exploration setting must not reach the oracle baseline
    args += ["--set", "eval.episodes_per_target=20", "--set", "eval.exploration=0.5"]
    assert main([*args, "--output-dir", str(out)]) == EXIT_OK
    assert "exploration=0.0" in (out / "eval.csv").read_text().splitlines()[0]
    episodes = pd.read_csv(out / "eval_episodes.csv")
    assert len(episodes) == 40
    assert episodes["success"].all()
    assert (episodes["steps"] == episodes["optimal"]).all()


def test_commands_share_one_feature_store(tmp_path, monkeypatch):
    monkeypatch.setattr(features, "_STORE", None)
    code = main(["config", "show", "--set", "perception.feature_dim=16", "--output-dir", str(tmp_path)])
    assert code == EXIT_OK
    assert features.get_store().settings.feature_dim == 16
