"""Target-driven navigation MDP over a GridScene.

States are (location, heading); targets are states too, and an episode
succeeds only on exact state equality. Reward is `goal_reward` on the step
that reaches the target and `-step_penalty` on every other step, collisions
included.
"""
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Callable, List, Optional, Protocol, Tuple, Union

import numpy as np
from loguru import logger

from .config import EnvConfig
from .exceptions import EpisodeError
from .perception import ViewImage, crop_view
from .scene import Action, AgentState, GridScene, Heading, TargetRef

UNREACHABLE = math.inf


class EpisodeMode(Enum):
    TRAIN = "train"
    EVAL = "eval"


def observe(
    scene: GridScene,
    state: AgentState,
    hfov: float = 90.0,
    size: Tuple[int, int] = (84, 84),
) -> ViewImage:
    return crop_view(scene.panorama(state.location_id), state.heading, hfov, size)


def transition(scene: GridScene, state: AgentState, action: Action) -> Tuple[AgentState, bool]:
    """Next state and whether a move was blocked."""
    action = Action(action)
    if action is Action.TURN_LEFT:
        return AgentState(state.location_id, state.heading.turn_left()), False
    if action is Action.TURN_RIGHT:
        return AgentState(state.location_id, state.heading.turn_right()), False
    direction = state.heading if action is Action.MOVE_FORWARD else Heading((state.heading + 2) % 4)
    nxt = scene.neighbor(state.location_id, direction)
    if nxt is None:
        return state, True
    return AgentState(nxt, state.heading), False


@lru_cache(maxsize=64)
def transition_table(scene: GridScene) -> np.ndarray:
    """(4N, 4) array of next-state indices for every (state, action)."""
    table = np.empty((scene.num_states, len(Action)), dtype=np.int64)
    for state in scene.states():
        s = scene.state_index(state)
        for action in Action:
            table[s, action] = scene.state_index(transition(scene, state, action)[0])
    return table


def _as_state(target: Union[TargetRef, AgentState]) -> AgentState:
    return target.state if isinstance(target, TargetRef) else target


def shortest_path_length(
    scene: GridScene, start: AgentState, target: Union[AgentState, TargetRef]
) -> float:
    """BFS distance on the state graph; `UNREACHABLE` (inf) if none."""
    table = transition_table(scene)
    src = scene.state_index(start)
    dst = scene.state_index(_as_state(target))
    if src == dst:
        return 0
    dist = {src: 0}
    queue = deque([src])
    while queue:
        s = queue.popleft()
        for nxt in table[s]:
            nxt = int(nxt)
            if nxt not in dist:
                if nxt == dst:
                    return dist[s] + 1
                dist[nxt] = dist[s] + 1
                queue.append(nxt)
    return UNREACHABLE


@lru_cache(maxsize=256)
def distance_to_target(scene: GridScene, target: AgentState) -> np.ndarray:
    """Shortest-path length from every state to `target` (inf if unreachable).

    Reverse BFS over the transition table.
    """
    table = transition_table(scene)
    n = len(table)
    reverse: List[List[int]] = [[] for _ in range(n)]
    for s in range(n):
        for nxt in set(int(x) for x in table[s]):
            if nxt != s:
                reverse[nxt].append(s)
    dist = np.full(n, UNREACHABLE)
    goal = scene.state_index(target)
    dist[goal] = 0
    queue = deque([goal])
    while queue:
        s = queue.popleft()
        for prev in reverse[s]:
            if dist[prev] == UNREACHABLE:
                dist[prev] = dist[s] + 1
                queue.append(prev)
    dist.setflags(write=False)
    return dist


class Policy(Protocol):
    def begin_episode(self, scene: GridScene, target: TargetRef) -> None:
        ...

    def act(self, state: AgentState, rng: np.random.Generator) -> Action:
        ...


class RandomPolicy:
    """Uniform over the four actions at every step."""

    def __init__(self, rng: Optional[np.random.Generator] = None) -> None:
        self.rng = rng

    def begin_episode(self, scene: GridScene, target: TargetRef) -> None:
        pass

    def act(self, state: AgentState, rng: np.random.Generator) -> Action:
        return Action(int((self.rng or rng).integers(len(Action))))


def random_policy(rng: Optional[np.random.Generator] = None) -> RandomPolicy:
    return RandomPolicy(rng)


class OraclePolicy:
    """Follows BFS distances to the target; ties go to the lowest action index."""

    def __init__(self) -> None:
        self._scene: Optional[GridScene] = None
        self._dist: Optional[np.ndarray] = None
        self._table: Optional[np.ndarray] = None

    def begin_episode(self, scene: GridScene, target: TargetRef) -> None:
        self._scene = scene
        self._dist = distance_to_target(scene, _as_state(target))
        self._table = transition_table(scene)

    def act(self, state: AgentState, rng: np.random.Generator) -> Action:
        if self._dist is None:
            raise EpisodeError("OraclePolicy.act before begin_episode")
        nxt = self._table[self._scene.state_index(state)]
        return Action(int(np.argmin(self._dist[nxt])))


@dataclass(frozen=True)
class StepResult:
    next_state: AgentState
    observation: object
    reward: float
    done: bool
    collided: bool
    action: Action
    """The action actually executed (after exploration substitution)."""


@dataclass
class EpisodeRecord:
    scene_id: str
    target: TargetRef
    start: AgentState
    steps: int = 0
    success: bool = False
    episode_return: float = 0.0
    trajectory: List[AgentState] = field(default_factory=list)
    actions: List[Action] = field(default_factory=list)

    def as_row(self) -> dict:
        return {
            "scene": self.scene_id,
            "target": str(self.target),
            "start": str(self.start),
            "steps": self.steps,
            "success": self.success,
            "return": self.episode_return,
        }


def expected_return(config: EnvConfig, steps: int, success: bool) -> float:
    """Return of an episode: the goal step earns `goal_reward`, every other
    step costs `step_penalty`."""
    return config.goal_reward * success - config.step_penalty * (steps - int(success))


class NavSession:
    """One episode. Single-threaded; many sessions may share a scene."""

    def __init__(
        self,
        scene: GridScene,
        target: Union[TargetRef, AgentState],
        start: AgentState,
        config: EnvConfig,
        mode: EpisodeMode = EpisodeMode.TRAIN,
        observe_fn: Optional[Callable[[AgentState], object]] = None,
    ) -> None:
        if not scene.is_valid_state(start):
            raise EpisodeError(f"Invalid start state {start}", "no-start-state")
        self.scene = scene
        self.target = _as_state(target)
        self.config = config
        self.mode = EpisodeMode(mode)
        self.cap = config.eval_max_steps if self.mode is EpisodeMode.EVAL else config.train_max_steps
        self.observe_fn = observe_fn or (lambda s: observe(scene, s))
        self.state = start
        self.record = EpisodeRecord(scene.scene_id, TargetRef.from_state(self.target), start)
        self.record.trajectory.append(start)
        self.done = False

    def observation(self) -> object:
        return self.observe_fn(self.state)

    def step(self, action: Action, rng: np.random.Generator) -> StepResult:
        if self.done:
            raise EpisodeError("step() called on a finished episode", "step-after-done")
        action = Action(action)
        if (
            self.mode is EpisodeMode.EVAL
            and self.config.eval_exploration > 0
            and rng.random() < self.config.eval_exploration
        ):
            action = Action(int(rng.integers(len(Action))))
        nxt, collided = transition(self.scene, self.state, action)
        rec = self.record
        rec.steps += 1
        rec.actions.append(action)
        rec.trajectory.append(nxt)
        self.state = nxt
        reached = nxt == self.target
        reward = self.config.goal_reward if reached else -self.config.step_penalty
        rec.episode_return += reward
        rec.success = reached
        self.done = reached or rec.steps >= self.cap
        return StepResult(nxt, self.observe_fn(nxt), reward, self.done, collided, action)


def sample_start(
    scene: GridScene, target: Union[TargetRef, AgentState], rng: np.random.Generator
) -> AgentState:
    """Uniform over states, other than the target, that can reach it."""
    goal = _as_state(target)
    dist = distance_to_target(scene, goal)
    candidates = np.flatnonzero(np.isfinite(dist) & (dist > 0))
    if not len(candidates):
        raise EpisodeError(f"No start state can reach {goal}", "no-start-state")
    return scene.index_state(int(rng.choice(candidates)))


def run_episode(
    policy: Policy,
    scene: GridScene,
    target: Union[TargetRef, AgentState],
    start: Optional[AgentState] = None,
    mode: EpisodeMode = EpisodeMode.EVAL,
    rng: Optional[np.random.Generator] = None,
    config: Optional[EnvConfig] = None,
) -> EpisodeRecord:
    """Run `policy` until success or the mode's step cap.

    Without `start` a random start is drawn with `sample_start`. A failed
    evaluation episode therefore records exactly `eval_max_steps` steps.
    """
    rng = rng if rng is not None else np.random.default_rng()
    config = config or EnvConfig()
    goal = _as_state(target)
    if start is None:
        start = sample_start(scene, goal, rng)
    elif start == goal and EpisodeMode(mode) is EpisodeMode.EVAL:
        raise EpisodeError("Evaluation start equals the target", "no-start-state")
    target_ref = TargetRef.from_state(goal)
    # Observations are not needed by state-based policies.
    session = NavSession(scene, goal, start, config, mode, observe_fn=lambda s: None)
    policy.begin_episode(scene, target_ref)
    state = start
    while not session.done:
        result = session.step(policy.act(state, rng), rng)
        state = result.next_state
    logger.trace(
        "{} {} -> {}: {} steps, success={}",
        scene.scene_id,
        start,
        target_ref,
        session.record.steps,
        session.record.success,
    )
    return session.record
