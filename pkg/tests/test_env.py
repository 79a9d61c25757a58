import numpy as np
import pytest

from indoornav.config import EnvConfig
from indoornav.env import (
    UNREACHABLE,
    EpisodeMode,
    NavSession,
    OraclePolicy,
    distance_to_target,
    expected_return,
    observe,
    run_episode,
    sample_start,
    shortest_path_length,
    transition,
    transition_table,
)
from indoornav.exceptions import EpisodeError
from indoornav.scene import Action, AgentState, Heading, TargetRef, scene_from_mask


class AlwaysTurnLeft:
    def begin_episode(self, scene, target):
        pass

    def act(self, state, rng):
        return Action.TURN_LEFT


def test_turns_compose_to_identity(room_4x4):
    for state in room_4x4.states():
        left, _ = transition(room_4x4, state, Action.TURN_LEFT)
        back, _ = transition(room_4x4, left, Action.TURN_RIGHT)
        assert back == state
        s = state
        for _ in range(4):
            s, collided = transition(room_4x4, s, Action.TURN_RIGHT)
            assert not collided
        assert s == state


def test_forward_then_backward_returns(room_4x4):
    for state in room_4x4.states():
        moved, collided = transition(room_4x4, state, Action.MOVE_FORWARD)
        if collided:
            assert moved == state
            continue
        back, _ = transition(room_4x4, moved, Action.MOVE_BACKWARD)
        assert back == state
        assert moved.heading is state.heading


def test_blocked_move_in_corridor(corridor):
    east_end = AgentState(corridor.location_at(0, 3), Heading.E)
    nxt, collided = transition(corridor, east_end, Action.MOVE_FORWARD)
    assert collided and nxt == east_end
    facing_north = AgentState(corridor.location_at(0, 1), Heading.N)
    nxt, collided = transition(corridor, facing_north, Action.MOVE_FORWARD)
    assert collided and nxt == facing_north
    nxt, collided = transition(corridor, east_end, Action.MOVE_BACKWARD)
    assert not collided
    assert nxt == AgentState(corridor.location_at(0, 2), Heading.E)


def test_distances_are_symmetric(room_4x4):
    states = list(room_4x4.states())
    dist = np.stack([distance_to_target(room_4x4, s) for s in states], axis=1)
    np.testing.assert_array_equal(dist, dist.T)


def test_distances_match_floyd_warshall():
    scene = scene_from_mask(np.ones((5, 5), dtype=bool), scene_id="room-5x5", seed=5)
    table = transition_table(scene)
    n = scene.num_states
    fw = np.full((n, n), np.inf)
    np.fill_diagonal(fw, 0)
    for s in range(n):
        for nxt in table[s]:
            if nxt != s:
                fw[s, nxt] = 1
    for k in range(n):
        fw = np.minimum(fw, fw[:, k : k + 1] + fw[k : k + 1, :])
    for target in list(scene.states())[::7]:
        np.testing.assert_array_equal(distance_to_target(scene, target), fw[:, scene.state_index(target)])


def test_shortest_path_length(room_3x3):
    start = AgentState(room_3x3.location_at(0, 0), Heading.E)
    assert shortest_path_length(room_3x3, start, start) == 0
    assert shortest_path_length(room_3x3, start, AgentState(room_3x3.location_at(0, 2), Heading.E)) == 2
    assert shortest_path_length(room_3x3, start, TargetRef(start.location_id, Heading.W)) == 2


def test_unreachable_target():
    mask = np.array([[1, 0, 1]], dtype=bool)
    scene = scene_from_mask(mask, scene_id="split", seed=6)
    a = AgentState(0, Heading.N)
    b = AgentState(1, Heading.N)
    assert shortest_path_length(scene, a, b) == UNREACHABLE
    for _ in range(20):
        start = sample_start(scene, b, np.random.default_rng(_))
        assert start.location_id == 1
        assert start != b


def test_sample_start_excludes_target(room_3x3, rng):
    target = AgentState(4, Heading.S)
    for _ in range(50):
        start = sample_start(room_3x3, target, rng)
        assert start != target
        assert room_3x3.is_valid_state(start)


def test_step_after_done_raises(room_3x3, no_explore, rng):
    target = AgentState(4, Heading.N)
    session = NavSession(room_3x3, target, AgentState(4, Heading.E), no_explore, EpisodeMode.EVAL)
    result = session.step(Action.TURN_LEFT, rng)
    assert result.done and session.record.success
    assert result.reward == pytest.approx(no_explore.goal_reward)
    with pytest.raises(EpisodeError) as exc:
        session.step(Action.TURN_LEFT, rng)
    assert exc.value.code == "step-after-done"


def test_invalid_start_rejected(room_3x3, no_explore):
    with pytest.raises(EpisodeError):
        NavSession(room_3x3, AgentState(0, Heading.N), AgentState(42, Heading.N), no_explore)


def test_observation_shape(room_3x3):
    view = observe(room_3x3, AgentState(0, Heading.S), size=(24, 12))
    assert view.shape == (12, 24, 3)
    assert view.min() >= 0.0 and view.max() <= 1.0


def test_oracle_follows_shortest_path(room_4x4, no_explore):
    oracle = OraclePolicy()
    rng = np.random.default_rng(7)
    for target in list(room_4x4.states())[::5]:
        start = sample_start(room_4x4, target, rng)
        record = run_episode(oracle, room_4x4, target, start, EpisodeMode.EVAL, rng, no_explore)
        assert record.success
        assert record.steps == shortest_path_length(room_4x4, start, target)
        assert record.trajectory[-1] == target
        assert record.episode_return == pytest.approx(expected_return(no_explore, record.steps, True))


def test_failed_episode_runs_to_cap(room_3x3, no_explore, rng):
    target = AgentState(8, Heading.N)
    record = run_episode(AlwaysTurnLeft(), room_3x3, target, AgentState(0, Heading.N), rng=rng, config=no_explore)
    assert not record.success
    assert record.steps == no_explore.eval_max_steps
    assert record.episode_return == pytest.approx(-no_explore.step_penalty * no_explore.eval_max_steps)


def test_train_mode_uses_train_cap(room_3x3, no_explore, rng):
    target = AgentState(8, Heading.N)
    record = run_episode(
        AlwaysTurnLeft(), room_3x3, target, AgentState(0, Heading.N), EpisodeMode.TRAIN, rng, no_explore
    )
    assert record.steps == no_explore.train_max_steps


def test_eval_start_equal_to_target_rejected(room_3x3, no_explore, rng):
    state = AgentState(0, Heading.N)
    with pytest.raises(EpisodeError):
        run_episode(OraclePolicy(), room_3x3, state, state, EpisodeMode.EVAL, rng, no_explore)


def test_exploration_substitutes_actions(room_3x3, rng):
    config = EnvConfig(eval_exploration=1.0, eval_max_steps=400, train_max_steps=10)
    target = AgentState(8, Heading.N)
    record = run_episode(AlwaysTurnLeft(), room_3x3, target, AgentState(0, Heading.N), rng=rng, config=config)
    assert set(record.actions) - {Action.TURN_LEFT}


@pytest.mark.parametrize("steps,success", [(1, True), (17, True), (30, False)])
def test_return_identity(steps, success):
    config = EnvConfig()
    assert expected_return(config, steps, success) == pytest.approx(
        config.goal_reward * success - config.step_penalty * (steps - success)
    )
