"""Navigation agents: a siamese actor-critic with one head per scene."""
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from ..config import ModelVariant, NeuroSettings
from ..exceptions import AgentError
from ..features import FeatureStore
from ..neuro import (
    LSTMState,
    NetworkOutput,
    ParameterStore,
    RMSProp,
    SiameseActorCritic,
    load_checkpoint,
    save_checkpoint,
)
from ..scene import Action, AgentState, GridScene, TargetRef

UNIFIED_HEAD = "unified"


def stack_frames(history: Sequence[np.ndarray], frames: int) -> np.ndarray:
    """Concatenate the last `frames` observations, padding an episode's start
    by repeating its first observation."""
    if not history:
        raise AgentError("Empty observation history")
    recent = list(history[-frames:])
    recent = [history[0]] * (frames - len(recent)) + recent
    return np.concatenate(recent)


def select_action(probs: np.ndarray, rng: np.random.Generator, greedy: bool = False) -> Action:
    """Sample from `probs`, or take the argmax (lowest index on ties)."""
    if greedy:
        return Action(int(np.argmax(probs)))
    return Action(int(rng.choice(len(probs), p=probs)))


class PolicyModel:
    def __init__(
        self,
        network: SiameseActorCritic,
        params: ParameterStore,
        variant: ModelVariant,
        feature_dim: int,
        settings: NeuroSettings,
        heads: Optional[Dict[str, str]] = None,
        unified: bool = False,
    ) -> None:
        self.network = network
        self.params = params
        self.variant = ModelVariant(variant)
        self.feature_dim = feature_dim
        self.settings = settings
        self.heads: Dict[str, str] = dict(heads or {})
        self.unified = unified
        self.optimizer: Optional[RMSProp] = None

    @staticmethod
    def frames_for(variant: ModelVariant) -> int:
        return 4 if ModelVariant(variant) is ModelVariant.FOUR_FRAME else 1

    @property
    def frames(self) -> int:
        return self.frames_for(self.variant)

    @classmethod
    def create(
        cls,
        scene_ids: Iterable[str],
        variant: ModelVariant,
        feature_dim: int,
        settings: Optional[NeuroSettings] = None,
        seed: int = 0,
        unified_head: bool = False,
        strict: bool = False,
    ) -> "PolicyModel":
        settings = settings or NeuroSettings()
        variant = ModelVariant(variant)
        network = SiameseActorCritic(
            input_dim=cls.frames_for(variant) * feature_dim,
            embed_dim=settings.embed_dim,
            fusion_dim=settings.fusion_dim,
            head_dim=settings.head_dim,
            lstm_hidden=settings.lstm_hidden if variant is ModelVariant.RECURRENT else None,
            forget_bias=settings.forget_bias,
        )
        rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
        params = ParameterStore(network.init_shared(rng), strict=strict)
        model = cls(network, params, variant, feature_dim, settings, unified=unified_head)
        if unified_head:
            model._add_head(UNIFIED_HEAD, rng)
        for scene_id in scene_ids:
            if unified_head:
                model.heads[scene_id] = UNIFIED_HEAD
            else:
                model.add_scene(scene_id, rng)
        return model

    def _add_head(self, head: str, rng: np.random.Generator) -> None:
        self.network.add_head(head)
        for name, value in self.network.init_head(head, rng).items():
            self.params.add(name, value)

    def add_scene(self, scene_id: str, rng: Optional[np.random.Generator] = None) -> str:
        """Add a freshly initialized head for `scene_id`."""
        if scene_id in self.heads and self.heads[scene_id] != UNIFIED_HEAD:
            raise AgentError(f"Scene {scene_id!r} already has a head", "head-exists")
        if scene_id in self.network.heads:
            raise AgentError(f"Scene {scene_id!r} already has a head", "head-exists")
        self._add_head(scene_id, rng or np.random.default_rng())
        self.heads[scene_id] = scene_id
        logger.debug("Added head for scene {}", scene_id)
        return scene_id

    def head_for(self, scene_id: str) -> str:
        if scene_id in self.heads:
            return self.heads[scene_id]
        if self.unified:
            return UNIFIED_HEAD
        raise AgentError(f"No head for scene {scene_id!r}", "unknown-scene")

    def head_param_names(self, scene_id: str) -> List[str]:
        return self.network.head_param_names(self.head_for(scene_id))

    def shared_digest(self) -> str:
        """Hash of the shared (non-head) parameters."""
        return self.params.digest(self.network.shared_param_names())

    def obs_input(self, history: Sequence[np.ndarray]) -> np.ndarray:
        return stack_frames(history, self.frames)

    def target_input(self, target_features: np.ndarray) -> np.ndarray:
        return np.tile(target_features, self.frames)

    def forward(
        self,
        obs: np.ndarray,
        target: np.ndarray,
        scene_id: str,
        state: Optional[LSTMState] = None,
        params=None,
    ) -> NetworkOutput:
        out, _ = self.network.forward(
            params if params is not None else self.params.snapshot(),
            obs,
            target,
            self.head_for(scene_id),
            state,
        )
        return out

    def act(
        self,
        history: Sequence[np.ndarray],
        target_features: np.ndarray,
        scene_id: str,
        rng: np.random.Generator,
        greedy: bool = False,
        state: Optional[LSTMState] = None,
    ) -> Tuple[Action, Optional[LSTMState]]:
        """Pick an action from an observation history and a target view.

        Training samples from the policy; greedy evaluation takes the argmax.
        """
        out = self.forward(
            self.obs_input(history)[None], self.target_input(target_features)[None], scene_id, state
        )
        return select_action(out.probs[0], rng, greedy), out.state

    def save(self, path: Path) -> Path:
        meta = {
            "variant": self.variant.value,
            "feature_dim": self.feature_dim,
            "heads": self.heads,
            "head_order": self.network.heads,
            "unified": self.unified,
            "neuro": self.settings.dict(),
        }
        return save_checkpoint(path, self.params, self.optimizer, self.network.layer_specs(), meta)

    @classmethod
    def load(cls, path: Path, strict: bool = False) -> "PolicyModel":
        params, rms, sidecar = load_checkpoint(path)
        meta = sidecar["meta"]
        settings = NeuroSettings(**meta["neuro"])
        variant = ModelVariant(meta["variant"])
        network = SiameseActorCritic(
            input_dim=cls.frames_for(variant) * meta["feature_dim"],
            embed_dim=settings.embed_dim,
            fusion_dim=settings.fusion_dim,
            head_dim=settings.head_dim,
            lstm_hidden=settings.lstm_hidden if variant is ModelVariant.RECURRENT else None,
            forget_bias=settings.forget_bias,
        )
        for head in meta["head_order"]:
            network.add_head(head)
        model = cls(
            network,
            ParameterStore(params, strict=strict),
            variant,
            meta["feature_dim"],
            settings,
            heads=meta["heads"],
            unified=meta["unified"],
        )
        if sidecar.get("optimizer"):
            opt = sidecar["optimizer"]
            model.optimizer = RMSProp(
                opt["learning_rate"], opt["decay"], opt["epsilon"], opt["max_grad_norm"]
            )
            model.optimizer.accumulators.update(rms)
            model.optimizer.steps = opt["steps"]
        logger.info("Loaded {} model with heads {}", variant, sorted(model.heads))
        return model


class ModelPolicy:
    """Adapts a PolicyModel to the environment's Policy protocol.

    Observation features come from a FeatureStore; frame history and LSTM
    state are reset at every episode start.
    """

    def __init__(self, model: PolicyModel, store: FeatureStore, greedy: bool = True) -> None:
        self.model = model
        self.store = store
        self.greedy = greedy
        self._scene: Optional[GridScene] = None
        self._target: Optional[np.ndarray] = None
        self._history: List[np.ndarray] = []
        self._state: Optional[LSTMState] = None

    def begin_episode(self, scene: GridScene, target: TargetRef) -> None:
        self.model.head_for(scene.scene_id)
        self._scene = scene
        self._target = self.store.target(scene, target)
        self._history = []
        self._state = self.model.network.initial_state()

    def act(self, state: AgentState, rng: np.random.Generator) -> Action:
        self._history.append(self.store.view(self._scene, state))
        del self._history[1 : max(1, len(self._history) - self.model.frames)]
        action, self._state = self.model.act(
            self._history, self._target, self._scene.scene_id, rng, self.greedy, self._state
        )
        return action
