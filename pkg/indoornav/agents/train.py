"""Asynchronous advantage actor-critic training.

Worker threads run their own episodes and apply gradients to the model's
shared ParameterStore without waiting for each other. Every worker acts with
the parameters committed at the start of its current rollout.
"""
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Set, Tuple

import numpy as np
import pandas as pd
from loguru import logger

from ..config import EnvConfig, EvalProtocol, ModelVariant, NeuroSettings, TargetMode, TrainSettings
from ..env import EpisodeMode, NavSession, distance_to_target, sample_start
from ..exceptions import AgentError
from ..features import FeatureStore
from ..neuro import RMSProp, a3c_loss
from ..scene import GridScene, TargetRef
from .model import ModelPolicy, PolicyModel, select_action

Assignment = Tuple[GridScene, TargetRef]


@dataclass(frozen=True)
class LogRow:
    frames: int
    scene: str
    episodes: int
    mean_length: float
    mean_return: float


@dataclass
class TrainLog:
    """Per-interval training progress, one row per scene with finished episodes."""

    name: str = "train"
    rows: List[LogRow] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        columns = ["frames", "scene", "episodes", "mean_length", "mean_return"]
        return pd.DataFrame([r.__dict__ for r in self.rows], columns=columns)

    def save_csv(self, path: Path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False)

    @classmethod
    def load_csv(cls, path: Path, name: Optional[str] = None) -> "TrainLog":
        df = pd.read_csv(path)
        rows = [
            LogRow(int(r.frames), str(r.scene), int(r.episodes), float(r.mean_length), float(r.mean_return))
            for r in df.itertuples(index=False)
        ]
        return cls(name or Path(path).stem, rows)

    def curve(self) -> pd.DataFrame:
        """Episode-weighted mean length over all scenes at each logged frame count."""
        df = self.to_frame()
        if df.empty:
            return pd.DataFrame(columns=["frames", "mean_length"])
        df["total"] = df["mean_length"] * df["episodes"]
        grouped = df.groupby("frames", sort=True)[["total", "episodes"]].sum()
        return pd.DataFrame(
            {"frames": grouped.index, "mean_length": (grouped["total"] / grouped["episodes"]).values}
        )


class _Collector:
    """Shared frame budget and serialized TrainLog appends."""

    def __init__(self, budget: int, log_interval: int, name: str) -> None:
        self._lock = threading.Lock()
        self.budget = budget
        self.log_interval = log_interval
        self.frames = 0
        self._next_log = log_interval
        self._pending: Dict[str, List[Tuple[int, float]]] = {}
        self.log = TrainLog(name)

    def claim_frame(self) -> bool:
        with self._lock:
            if self.frames >= self.budget:
                return False
            self.frames += 1
            return True

    def episode_done(self, scene_id: str, length: int, ret: float) -> None:
        with self._lock:
            self._pending.setdefault(scene_id, []).append((length, ret))
            if self.frames >= self._next_log:
                self._flush()
                self._next_log = (self.frames // self.log_interval + 1) * self.log_interval

    def _flush(self) -> None:
        for scene_id in sorted(self._pending):
            eps = self._pending[scene_id]
            lengths = [e[0] for e in eps]
            returns = [e[1] for e in eps]
            self.log.rows.append(
                LogRow(self.frames, scene_id, len(eps), float(np.mean(lengths)), float(np.mean(returns)))
            )
            logger.info(
                "{} frames={} scene={} episodes={} mean_length={:.1f}",
                self.log.name,
                self.frames,
                scene_id,
                len(eps),
                float(np.mean(lengths)),
            )
        self._pending.clear()

    def finish(self) -> TrainLog:
        with self._lock:
            if self._pending:
                self._flush()
        return self.log


def _check_reachable(scene: GridScene, target: TargetRef) -> None:
    dist = distance_to_target(scene, target.state)
    if not np.any(np.isfinite(dist) & (dist > 0)):
        raise AgentError(
            f"{scene.scene_id}: target {target} is unreachable from every state",
            "unreachable-target",
        )


def sparse_assignments(scenes: Sequence[GridScene]) -> List[Assignment]:
    pairs = [(scene, t) for scene in scenes for t in scene.landmark_targets]
    if not pairs:
        raise AgentError("No landmark targets in the training scenes", "unreachable-target")
    return pairs


def dense_pool(
    scenes: Sequence[GridScene],
    heldout: Optional[Dict[str, Sequence[TargetRef]]] = None,
    limit: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> List[Assignment]:
    """Featureful targets minus the held-out ones.

    With `limit`, a fixed random subset of that size (landmarks first) is kept,
    which gives the middle-density setting.
    """
    heldout = heldout or {}
    pool: List[Assignment] = []
    for scene in scenes:
        excluded: Set[TargetRef] = set(heldout.get(scene.scene_id, ()))
        pool.extend((scene, t) for t in scene.featureful_targets if t not in excluded)
    if not pool:
        raise AgentError("No featureful training targets", "unreachable-target")
    if limit is not None and limit < len(pool):
        rng = rng or np.random.default_rng()
        landmarks = [i for i, (s, t) in enumerate(pool) if t in s.landmark_targets]
        others = [i for i in range(len(pool)) if i not in set(landmarks)]
        picked = landmarks[:limit]
        if len(picked) < limit:
            picked += [int(i) for i in rng.choice(others, size=limit - len(picked), replace=False)]
        pool = [pool[i] for i in sorted(picked)]
    return pool


class DenseTargetSampler:
    """Draws a fresh (scene, target) uniformly from the pool for every episode."""

    def __init__(self, pool: Sequence[Assignment]) -> None:
        self.pool = list(pool)

    def __call__(self, worker: int, episode: int, rng: np.random.Generator) -> Assignment:
        return self.pool[int(rng.integers(len(self.pool)))]


class SparseTargetSampler:
    """Worker i trains on assignment i; when there are more assignments than
    workers, each worker cycles through i, i + W, i + 2W, ... per episode."""

    def __init__(self, pairs: Sequence[Assignment], workers: int) -> None:
        self.pairs = list(pairs)
        self.workers = workers

    def __call__(self, worker: int, episode: int, rng: np.random.Generator) -> Assignment:
        mine = self.pairs[worker % len(self.pairs) :: self.workers] or [
            self.pairs[worker % len(self.pairs)]
        ]
        return mine[episode % len(mine)]


Sampler = Callable[[int, int, np.random.Generator], Assignment]


@dataclass
class _Context:
    model: PolicyModel
    store: FeatureStore
    sampler: Sampler
    optimizer: RMSProp
    neuro: NeuroSettings
    env: EnvConfig
    collector: _Collector


def _worker(ctx: _Context, worker: int, rng: np.random.Generator) -> int:
    model, net, store = ctx.model, ctx.model.network, ctx.store
    episodes = 0
    while True:
        scene, target = ctx.sampler(worker, episodes, rng)
        head = model.head_for(scene.scene_id)
        start = sample_start(scene, target, rng)
        session = NavSession(
            scene, target, start, ctx.env, EpisodeMode.TRAIN, observe_fn=lambda s: store.view(scene, s)
        )
        tgt = model.target_input(store.target(scene, target))
        history = [session.observation()]
        lstm = net.initial_state()
        while not session.done:
            params = model.params.snapshot()
            lstm0 = lstm.copy() if lstm is not None else None
            inputs: List[np.ndarray] = []
            actions: List[int] = []
            rewards: List[float] = []
            out_of_frames = False
            for _ in range(ctx.neuro.rollout_length):
                if not ctx.collector.claim_frame():
                    out_of_frames = True
                    break
                x = model.obs_input(history)
                out, _ = net.forward(params, x[None], tgt[None], head, lstm)
                lstm = out.state
                action = select_action(out.probs[0], rng)
                result = session.step(action, rng)
                inputs.append(x)
                actions.append(int(action))
                rewards.append(result.reward)
                history.append(result.observation)
                del history[1 : max(1, len(history) - model.frames)]
                if result.done:
                    break
            if inputs:
                bootstrap = 0.0
                if not session.done:
                    nxt, _ = net.forward(params, model.obs_input(history)[None], tgt[None], head, lstm)
                    bootstrap = float(nxt.values[0])
                T = len(inputs)
                out, cache = net.forward(params, np.stack(inputs), np.tile(tgt, (T, 1)), head, lstm0)
                loss = a3c_loss(
                    out.logits,
                    out.values,
                    np.array(actions),
                    np.array(rewards),
                    ctx.neuro.gamma,
                    ctx.neuro.beta_entropy,
                    bootstrap,
                )
                grads = net.backward(params, cache, loss.d_logits, loss.d_values)
                ctx.optimizer.apply_gradients(model.params, grads)
            if out_of_frames:
                return episodes
        episodes += 1
        ctx.collector.episode_done(scene.scene_id, session.record.steps, session.record.episode_return)


def _run(
    model: PolicyModel,
    store: FeatureStore,
    sampler: Sampler,
    optimizer: RMSProp,
    frames: int,
    workers: int,
    seed: int,
    neuro: NeuroSettings,
    env: EnvConfig,
    log_interval: int,
    name: str,
) -> TrainLog:
    if frames < 0:
        raise AgentError(f"Frame budget must be >= 0, got {frames}", "bad-budget")
    collector = _Collector(frames, log_interval, name)
    ctx = _Context(model, store, sampler, optimizer, neuro, env, collector)
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence([seed, 3]).spawn(workers)]
    logger.info("{}: {} workers, {} frames", name, workers, frames)
    with ThreadPoolExecutor(max_workers=workers, thread_name_prefix="a3c") as pool:
        futures = [pool.submit(_worker, ctx, i, rngs[i]) for i in range(workers)]
        episodes = sum(f.result() for f in futures)
    log = collector.finish()
    logger.info("{}: finished {} episodes in {} frames", name, episodes, collector.frames)
    return log


def _optimizer(neuro: NeuroSettings, trainable=None) -> RMSProp:
    return RMSProp(
        neuro.learning_rate, neuro.rms_decay, neuro.rms_epsilon, neuro.max_grad_norm, trainable
    )


def train(
    scenes: Sequence[GridScene],
    store: FeatureStore,
    settings: Optional[TrainSettings] = None,
    neuro: Optional[NeuroSettings] = None,
    env: Optional[EnvConfig] = None,
    heldout: Optional[Dict[str, Sequence[TargetRef]]] = None,
    model: Optional[PolicyModel] = None,
) -> Tuple[PolicyModel, TrainLog]:
    """Train a navigation model on `scenes`.

    Sparse mode trains on the scenes' landmark targets; dense mode draws a
    featureful target (outside `heldout`) for every episode.
    """
    settings = settings or TrainSettings()
    neuro = neuro or NeuroSettings()
    env = env or EnvConfig()
    if not scenes:
        raise AgentError("No training scenes", "unknown-scene")
    if model is None:
        model = PolicyModel.create(
            [s.scene_id for s in scenes],
            settings.variant,
            store.feature_dim,
            neuro,
            seed=settings.seed,
            unified_head=settings.unified_head,
            strict=settings.strict,
        )
    for scene in scenes:
        model.head_for(scene.scene_id)

    mode = TargetMode(settings.target_mode)
    if mode is TargetMode.SPARSE:
        pairs = sparse_assignments(scenes)
        sampler: Sampler = SparseTargetSampler(pairs, settings.workers)
    else:
        pairs = dense_pool(
            scenes,
            heldout,
            settings.dense_targets,
            np.random.default_rng(np.random.SeedSequence([settings.seed, 5])),
        )
        sampler = DenseTargetSampler(pairs)
    for scene, target in pairs:
        _check_reachable(scene, target)

    optimizer = model.optimizer or _optimizer(neuro)
    model.optimizer = optimizer
    name = f"{ModelVariant(settings.variant).value}-{mode.value}"
    log = _run(
        model,
        store,
        sampler,
        optimizer,
        settings.total_frames,
        settings.workers,
        settings.seed,
        neuro,
        env,
        settings.log_interval,
        name,
    )
    return model, log


def finetune(
    model: PolicyModel,
    scene: GridScene,
    store: FeatureStore,
    frames: int,
    settings: Optional[TrainSettings] = None,
    env: Optional[EnvConfig] = None,
) -> Tuple[PolicyModel, TrainLog]:
    """Add a fresh head for `scene` and train only that head on its landmarks."""
    settings = settings or TrainSettings()
    env = env or EnvConfig()
    model.add_scene(scene.scene_id, np.random.default_rng(np.random.SeedSequence([settings.seed, 7])))
    head_names = set(model.head_param_names(scene.scene_id))
    pairs = sparse_assignments([scene])
    for _, target in pairs:
        _check_reachable(scene, target)
    optimizer = _optimizer(model.settings, trainable=head_names.__contains__)
    log = _run(
        model,
        store,
        SparseTargetSampler(pairs, settings.workers),
        optimizer,
        frames,
        settings.workers,
        settings.seed,
        model.settings,
        env,
        settings.log_interval,
        f"finetune-{scene.scene_id}",
    )
    return model, log


def unified_eval(
    model: PolicyModel,
    scene: GridScene,
    store: FeatureStore,
    protocol: Optional[EvalProtocol] = None,
    env: Optional[EnvConfig] = None,
    workers: int = 1,
):
    """Evaluate a unified-head model on an unseen scene without adaptation."""
    from ..bench.evaluate import evaluate

    if not model.unified:
        raise AgentError("unified_eval needs a model trained with a unified head", "unknown-scene")
    return evaluate(
        lambda: ModelPolicy(model, store, greedy=True),
        [scene],
        {scene.scene_id: list(scene.landmark_targets)},
        protocol or EvalProtocol(),
        env,
        method="Unified",
        workers=workers,
    )
