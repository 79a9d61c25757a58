import numpy as np
import pandas as pd
import pytest

from indoornav.agents import (
    UNIFIED_HEAD,
    DenseTargetSampler,
    LogRow,
    ModelPolicy,
    PolicyModel,
    SparseTargetSampler,
    TrainLog,
    dense_pool,
    finetune,
    select_action,
    sparse_assignments,
    stack_frames,
    train,
    unified_eval,
)
from indoornav.config import (
    EnvConfig,
    EvalProtocol,
    ModelVariant,
    NeuroSettings,
    TargetMode,
    TrainSettings,
)
from indoornav.env import EpisodeMode, run_episode
from indoornav.exceptions import AgentError
from indoornav.scene import Action, AgentState, Heading, TargetRef, with_targets


@pytest.fixture
def tiny() -> NeuroSettings:
    return NeuroSettings(embed_dim=8, fusion_dim=8, head_dim=8, lstm_hidden=4)


@pytest.fixture
def short_env() -> EnvConfig:
    return EnvConfig(train_max_steps=30, eval_max_steps=60, eval_exploration=0.0)


@pytest.fixture
def second_room(room_4x4):
    featureful = [TargetRef(loc.id, h) for loc in room_4x4.locations for h in Heading]
    return with_targets(room_4x4, [TargetRef(0, Heading.E), TargetRef(15, Heading.N)], featureful)


def test_stack_frames_pads_with_first_observation():
    a, b, c = np.array([1.0]), np.array([2.0]), np.array([3.0])
    np.testing.assert_array_equal(stack_frames([a], 4), [1, 1, 1, 1])
    np.testing.assert_array_equal(stack_frames([a, b, c], 4), [1, 1, 2, 3])
    np.testing.assert_array_equal(stack_frames([a, b, c, a, b], 4), [2, 3, 1, 2])
    with pytest.raises(AgentError):
        stack_frames([], 4)


def test_select_action():
    rng = np.random.default_rng(0)
    assert select_action(np.array([0.1, 0.4, 0.4, 0.1]), rng, greedy=True) is Action.MOVE_BACKWARD
    assert select_action(np.array([0.0, 0.0, 1.0, 0.0]), rng) is Action.TURN_LEFT


@pytest.mark.parametrize("variant", list(ModelVariant))
def test_model_input_width(variant, tiny):
    model = PolicyModel.create(["a"], variant, 8, tiny)
    frames = 4 if variant is ModelVariant.FOUR_FRAME else 1
    assert model.frames == frames
    assert model.network.input_dim == 8 * frames
    assert model.network.recurrent is (variant is ModelVariant.RECURRENT)
    history = [np.ones(8)]
    action, state = model.act(history, np.zeros(8), "a", np.random.default_rng(0))
    assert isinstance(action, Action)
    assert (state is not None) is (variant is ModelVariant.RECURRENT)


def test_heads(tiny):
    model = PolicyModel.create(["a", "b"], ModelVariant.ONE_FRAME, 8, tiny)
    assert model.heads == {"a": "a", "b": "b"}
    with pytest.raises(AgentError) as exc:
        model.add_scene("a")
    assert exc.value.code == "head-exists"
    with pytest.raises(AgentError) as exc:
        model.head_for("c")
    assert exc.value.code == "unknown-scene"
    model.add_scene("c")
    assert model.head_for("c") == "c"


def test_unified_head_serves_unseen_scenes(tiny):
    model = PolicyModel.create(["a"], ModelVariant.ONE_FRAME, 8, tiny, unified_head=True)
    assert model.network.heads == [UNIFIED_HEAD]
    assert model.head_for("a") == UNIFIED_HEAD
    assert model.head_for("never-seen") == UNIFIED_HEAD


def test_save_load_preserves_outputs(tmp_path, tiny):
    model = PolicyModel.create(["a", "b"], ModelVariant.RECURRENT, 8, tiny, seed=4)
    path = model.save(tmp_path / "model")
    loaded = PolicyModel.load(path)
    obs = np.random.default_rng(1).normal(size=(3, 8))
    target = np.random.default_rng(2).normal(size=(3, 8))
    for scene_id in ("a", "b"):
        expected = model.forward(obs, target, scene_id)
        actual = loaded.forward(obs, target, scene_id)
        np.testing.assert_array_equal(actual.logits, expected.logits)
        np.testing.assert_array_equal(actual.values, expected.values)
    assert loaded.shared_digest() == model.shared_digest()
    assert loaded.variant is ModelVariant.RECURRENT


def test_model_policy_runs_episode(targeted_room, feature_store, tiny, short_env):
    model = PolicyModel.create([targeted_room.scene_id], ModelVariant.FOUR_FRAME, feature_store.feature_dim, tiny)
    policy = ModelPolicy(model, feature_store)
    target = targeted_room.landmark_targets[0]
    record = run_episode(
        policy, targeted_room, target, AgentState(4, Heading.N), EpisodeMode.EVAL, np.random.default_rng(0), short_env
    )
    assert 1 <= record.steps <= short_env.eval_max_steps


def test_model_policy_rejects_unknown_scene(room_4x4, feature_store, tiny):
    model = PolicyModel.create(["elsewhere"], ModelVariant.ONE_FRAME, feature_store.feature_dim, tiny)
    with pytest.raises(AgentError):
        ModelPolicy(model, feature_store).begin_episode(room_4x4, TargetRef(0, Heading.N))


def test_sparse_sampler_rotates_assignments(targeted_room):
    pairs = [(targeted_room, TargetRef(i, Heading.N)) for i in range(5)]
    sampler = SparseTargetSampler(pairs, workers=2)
    rng = np.random.default_rng(0)
    assert [sampler(0, e, rng)[1].location_id for e in range(4)] == [0, 2, 4, 0]
    assert [sampler(1, e, rng)[1].location_id for e in range(3)] == [1, 3, 1]


def test_sparse_sampler_more_workers_than_targets(targeted_room):
    pairs = sparse_assignments([targeted_room])
    sampler = SparseTargetSampler(pairs, workers=4)
    rng = np.random.default_rng(0)
    assert sampler(3, 0, rng) == pairs[1]


def test_dense_pool_excludes_heldout(targeted_room):
    heldout = {targeted_room.scene_id: [TargetRef(4, Heading.S)]}
    pool = dense_pool([targeted_room], heldout)
    assert len(pool) == 35
    assert (targeted_room, TargetRef(4, Heading.S)) not in pool
    limited = dense_pool([targeted_room], heldout, limit=5, rng=np.random.default_rng(0))
    assert len(limited) == 5
    assert {t for _, t in limited} >= set(targeted_room.landmark_targets)
    sampler = DenseTargetSampler(limited)
    assert sampler(0, 0, np.random.default_rng(1)) in limited


def test_sparse_needs_landmarks(room_3x3):
    with pytest.raises(AgentError):
        sparse_assignments([room_3x3])


def test_train_log_curve_is_episode_weighted(tmp_path):
    log = TrainLog(
        "run",
        [
            LogRow(100, "a", 1, 10.0, 0.0),
            LogRow(100, "b", 3, 2.0, 0.0),
            LogRow(200, "a", 2, 5.0, 0.0),
        ],
    )
    curve = log.curve()
    assert curve["frames"].tolist() == [100, 200]
    assert curve["mean_length"].tolist() == pytest.approx([4.0, 5.0])
    log.save_csv(tmp_path / "run.csv")
    loaded = TrainLog.load_csv(tmp_path / "run.csv")
    assert loaded.name == "run"
    assert loaded.rows == log.rows
    assert TrainLog().curve().empty


@pytest.mark.parametrize("variant", list(ModelVariant))
def test_train_updates_shared_parameters(targeted_room, feature_store, tiny, short_env, variant):
    settings = TrainSettings(variant=variant, workers=2, total_frames=120, log_interval=40, seed=1)
    model = PolicyModel.create(
        [targeted_room.scene_id], variant, feature_store.feature_dim, tiny, seed=settings.seed
    )
    before = model.shared_digest()
    model, log = train([targeted_room], feature_store, settings, tiny, short_env, model=model)
    assert model.shared_digest() != before
    assert model.optimizer.steps >= 120 // tiny.rollout_length
    assert log.rows
    assert log.name == f"{variant.value}-sparse"
    assert all(row.scene == targeted_room.scene_id for row in log.rows)


def test_dense_training(targeted_room, feature_store, tiny, short_env):
    settings = TrainSettings(
        target_mode=TargetMode.DENSE, variant=ModelVariant.ONE_FRAME, workers=1, total_frames=60, log_interval=30
    )
    heldout = {targeted_room.scene_id: [TargetRef(4, Heading.S)]}
    model, log = train([targeted_room], feature_store, settings, tiny, short_env, heldout)
    assert log.name == "one-frame-dense"
    assert model.heads == {targeted_room.scene_id: targeted_room.scene_id}


def test_single_worker_strict_training_is_reproducible(targeted_room, feature_store, tiny, short_env):
    settings = TrainSettings(
        variant=ModelVariant.ONE_FRAME, workers=1, total_frames=80, log_interval=40, strict=True, seed=5
    )
    a, _ = train([targeted_room], feature_store, settings, tiny, short_env)
    b, _ = train([targeted_room], feature_store, settings, tiny, short_env)
    assert a.shared_digest() == b.shared_digest()
    assert a.params.digest() == b.params.digest()


def test_zero_budget_leaves_model_untouched(targeted_room, feature_store, tiny, short_env):
    settings = TrainSettings(variant=ModelVariant.ONE_FRAME, workers=2, total_frames=0)
    model = PolicyModel.create([targeted_room.scene_id], ModelVariant.ONE_FRAME, feature_store.feature_dim, tiny)
    before = model.params.digest()
    model, log = train([targeted_room], feature_store, settings, tiny, short_env, model=model)
    assert model.params.digest() == before
    assert not log.rows


def test_finetune_only_touches_new_head(targeted_room, second_room, feature_store, tiny, short_env):
    settings = TrainSettings(variant=ModelVariant.ONE_FRAME, workers=1, total_frames=40, log_interval=20)
    model, _ = train([targeted_room], feature_store, settings, tiny, short_env)
    shared = model.shared_digest()
    old_head = model.params.digest(model.head_param_names(targeted_room.scene_id))
    model, log = finetune(model, second_room, feature_store, 40, settings, short_env)
    assert model.shared_digest() == shared
    assert model.params.digest(model.head_param_names(targeted_room.scene_id)) == old_head
    assert model.head_for(second_room.scene_id) == second_room.scene_id
    assert log.name == f"finetune-{second_room.scene_id}"


def test_finetune_negative_budget(targeted_room, second_room, feature_store, tiny):
    model = PolicyModel.create([targeted_room.scene_id], ModelVariant.ONE_FRAME, feature_store.feature_dim, tiny)
    with pytest.raises(AgentError) as exc:
        finetune(model, second_room, feature_store, -1)
    assert exc.value.code == "bad-budget"


def test_unified_eval_needs_unified_model(targeted_room, feature_store, tiny):
    model = PolicyModel.create([targeted_room.scene_id], ModelVariant.ONE_FRAME, feature_store.feature_dim, tiny)
    with pytest.raises(AgentError):
        unified_eval(model, targeted_room, feature_store)


def test_unified_eval_runs_on_unseen_scene(targeted_room, second_room, feature_store, tiny, short_env):
    model = PolicyModel.create(
        [targeted_room.scene_id], ModelVariant.ONE_FRAME, feature_store.feature_dim, tiny, unified_head=True
    )
    protocol = EvalProtocol(episodes_per_target=2, max_steps=20, exploration=0.0)
    report = unified_eval(model, second_room, feature_store, protocol, short_env)
    assert len(report.episodes) == 4
    assert isinstance(report.episodes, pd.DataFrame)
    assert set(report.episodes["method"]) == {"Unified"}
