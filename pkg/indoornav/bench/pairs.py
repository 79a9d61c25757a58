"""Nearby-view pair diagnostic.

Pairs are two views one lattice step apart under the same heading; the label
says where the second view was taken relative to the first. A small siamese
classifier over image features predicts that label, which measures how much
spatial layout a feature representation keeps.
"""
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from ..config import DiagnoseSettings, FeatureMode, PerceptionSettings
from ..env import observe
from ..exceptions import BenchError
from ..features import FeatureStore
from ..neuro import Concat, Dense, RMSProp, ParameterStore, ReLU, log_softmax, softmax
from ..perception import FeatureExtractor, ViewImage
from ..scene import AgentState, GridScene, Heading


class Relation(IntEnum):
    AHEAD = 0
    BEHIND = 1
    LEFT = 2
    RIGHT = 3

    def direction(self, heading: Heading) -> Heading:
        if self is Relation.AHEAD:
            return heading
        if self is Relation.BEHIND:
            return Heading((heading + 2) % 4)
        if self is Relation.LEFT:
            return heading.turn_left()
        return heading.turn_right()


class PairSplit(Enum):
    SAME_SCENE = "same-scene"
    CROSS_SCENE = "cross-scene"


@dataclass(frozen=True)
class PairSample:
    """Two same-heading states one lattice step apart.

    Views are rendered on demand with `views()`.
    """

    scene_id: str
    a: AgentState
    b: AgentState
    relation: Relation

    def views(self, scene: GridScene, perception: Optional[PerceptionSettings] = None) -> Tuple[ViewImage, ViewImage]:
        p = perception or PerceptionSettings()
        size = (p.view_width, p.view_height)
        return observe(scene, self.a, p.hfov, size), observe(scene, self.b, p.hfov, size)


@dataclass
class PairSets:
    train: List[PairSample] = field(default_factory=list)
    test: List[PairSample] = field(default_factory=list)


def candidate_pairs(scene: GridScene) -> Dict[Relation, List[PairSample]]:
    """Every valid pair of `scene`, grouped by relation."""
    out: Dict[Relation, List[PairSample]] = {r: [] for r in Relation}
    for state in scene.states():
        for relation in Relation:
            nxt = scene.neighbor(state.location_id, relation.direction(state.heading))
            if nxt is not None:
                out[relation].append(
                    PairSample(scene.scene_id, state, AgentState(nxt, state.heading), relation)
                )
    return out


def _pool(scenes: Sequence[GridScene]) -> Dict[Relation, List[PairSample]]:
    pool: Dict[Relation, List[PairSample]] = {r: [] for r in Relation}
    for scene in scenes:
        for relation, pairs in candidate_pairs(scene).items():
            pool[relation].extend(pairs)
    return pool


def _pair_key(pair: PairSample) -> Tuple[str, FrozenSet[AgentState]]:
    """Unordered identity of a pair; (a, b) and (b, a) are the same views."""
    return pair.scene_id, frozenset({pair.a, pair.b})


def _draw(
    pool: Dict[Relation, List[PairSample]], counts: Sequence[int], rng: np.random.Generator
) -> List[List[PairSample]]:
    """Disjoint per-class draws of the given sizes, classes interleaved.

    A view pair drawn into one set never appears in another set under any
    relation, mirrored pairs included.
    """
    need = sum(counts)
    sets: List[List[PairSample]] = [[] for _ in counts]
    owner: Dict[Tuple[str, FrozenSet[AgentState]], int] = {}
    for relation in Relation:
        pairs = pool[relation]
        if len(pairs) < need:
            raise BenchError(
                f"Only {len(pairs)} {relation.name} pairs, need {need}", "insufficient-adjacency"
            )
        order = [pairs[int(i)] for i in rng.permutation(len(pairs))]
        taken = set()
        for k, count in enumerate(counts):
            drawn = 0
            for i, pair in enumerate(order):
                if drawn == count:
                    break
                if i in taken or owner.get(_pair_key(pair), k) != k:
                    continue
                taken.add(i)
                owner[_pair_key(pair)] = k
                sets[k].append(pair)
                drawn += 1
            if drawn < count:
                raise BenchError(
                    f"Only {drawn} {relation.name} pairs free of other splits, need {count}",
                    "insufficient-adjacency",
                )
    return sets


def generate_pairs(
    scenes: Sequence[GridScene],
    per_class: int,
    split: PairSplit,
    rng: np.random.Generator,
    test_per_class: Optional[int] = None,
    train_scenes: Optional[int] = None,
) -> PairSets:
    """Balanced train/test pair sets.

    Same-scene: disjoint pairs drawn from the same scenes. Cross-scene:
    train pairs from the training scenes (split tag "train", or the first
    `train_scenes` scenes when given) and test pairs from the others.
    """
    test_per_class = per_class if test_per_class is None else test_per_class
    split = PairSplit(split)
    if split is PairSplit.SAME_SCENE:
        train, test = _draw(_pool(scenes), [per_class, test_per_class], rng)
    else:
        if train_scenes is not None:
            train_set, test_set = list(scenes[:train_scenes]), list(scenes[train_scenes:])
        else:
            train_set = [s for s in scenes if s.split == "train"]
            test_set = [s for s in scenes if s.split != "train"]
        if not train_set or not test_set:
            raise BenchError("Cross-scene split needs both train and test scenes", "insufficient-adjacency")
        (train,) = _draw(_pool(train_set), [per_class], rng)
        (test,) = _draw(_pool(test_set), [test_per_class], rng)
    logger.debug("Generated {} train / {} test pairs ({})", len(train), len(test), split.value)
    return PairSets(train, test)


class PairFeatures:
    """Per-mode feature lookups for pair samples, sharing one extractor."""

    def __init__(
        self, scenes: Sequence[GridScene], perception: Optional[PerceptionSettings] = None
    ) -> None:
        perception = perception or PerceptionSettings()
        extractor = FeatureExtractor.from_settings(perception)
        self.scenes = {s.scene_id: s for s in scenes}
        self.stores = {
            mode: FeatureStore(extractor, perception.copy(update={"feature_mode": mode}))
            for mode in FeatureMode
        }

    def matrix(self, pairs: Sequence[PairSample], mode: FeatureMode) -> Tuple[np.ndarray, np.ndarray]:
        store = self.stores[FeatureMode(mode)]
        a = np.stack([store.view(self.scenes[p.scene_id], p.a) for p in pairs])
        b = np.stack([store.view(self.scenes[p.scene_id], p.b) for p in pairs])
        return a, b


@dataclass
class PairResult:
    feature_mode: FeatureMode
    train_accuracy: float
    test_accuracy: float


class PairClassifier:
    """feature -> dense(128) (shared by both inputs) -> concat -> dense(64) -> softmax(4)."""

    def __init__(self, input_dim: int, seed: int = 0, embed_dim: int = 128, hidden_dim: int = 64) -> None:
        self.embed = Dense("embed", input_dim, embed_dim)
        self.embed_relu = ReLU("embed_relu")
        self.concat = Concat("concat")
        self.hidden = Dense("hidden", 2 * embed_dim, hidden_dim)
        self.hidden_relu = ReLU("hidden_relu")
        self.out = Dense("out", hidden_dim, len(Relation))
        rng = np.random.default_rng(seed)
        params: Dict[str, np.ndarray] = {}
        for layer in (self.embed, self.hidden, self.out):
            params.update(layer.init_params(rng))
        self.params = ParameterStore(params)

    def logits(self, a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, tuple]:
        p = self.params
        ea, c_ea = self.embed.forward(p, a)
        ra, c_ra = self.embed_relu.forward(p, ea)
        eb, c_eb = self.embed.forward(p, b)
        rb, c_rb = self.embed_relu.forward(p, eb)
        joined, c_cat = self.concat.forward([ra, rb])
        h, c_h = self.hidden.forward(p, joined)
        hr, c_hr = self.hidden_relu.forward(p, h)
        z, c_out = self.out.forward(p, hr)
        return z, (c_ea, c_ra, c_eb, c_rb, c_cat, c_h, c_hr, c_out)

    def gradients(self, cache: tuple, d_logits: np.ndarray) -> Dict[str, np.ndarray]:
        p = self.params
        c_ea, c_ra, c_eb, c_rb, c_cat, c_h, c_hr, c_out = cache
        grads: Dict[str, np.ndarray] = {}
        d_hr, g = self.out.backward(p, c_out, d_logits)
        grads.update(g)
        d_h, _ = self.hidden_relu.backward(p, c_hr, d_hr)
        d_joined, g = self.hidden.backward(p, c_h, d_h)
        grads.update(g)
        d_ra, d_rb = self.concat.backward(c_cat, d_joined)
        d_ea, _ = self.embed_relu.backward(p, c_ra, d_ra)
        _, g_a = self.embed.backward(p, c_ea, d_ea)
        d_eb, _ = self.embed_relu.backward(p, c_rb, d_rb)
        _, g_b = self.embed.backward(p, c_eb, d_eb)
        for k in g_a:
            grads[k] = g_a[k] + g_b[k]
        return grads

    def predict(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        z, _ = self.logits(a, b)
        return np.argmax(softmax(z), axis=1)


def _standardize(train: np.ndarray, *others: np.ndarray) -> List[np.ndarray]:
    mean = train.mean(axis=0)
    std = train.std(axis=0) + 1e-8
    return [(x - mean) / std for x in (train, *others)]


def _check_balanced(pairs: Sequence[PairSample]) -> None:
    counts = np.bincount([int(p.relation) for p in pairs], minlength=len(Relation))
    if len(set(counts.tolist())) != 1:
        raise BenchError(f"Unbalanced classes {counts.tolist()}", "class-imbalance")


def train_pair_classifier(
    pairs: PairSets,
    features: PairFeatures,
    feature_mode: FeatureMode,
    settings: Optional[DiagnoseSettings] = None,
    seed: int = 0,
    permute_labels: bool = False,
) -> PairResult:
    """Train the siamese pair classifier and report train/test accuracy.

    With `permute_labels` the training labels are shuffled (chance control);
    test labels stay true.
    """
    settings = settings or DiagnoseSettings()
    if not pairs.train or not pairs.test:
        raise BenchError("Empty train or test pair set", "insufficient-adjacency")
    if {_pair_key(p) for p in pairs.train} & {_pair_key(p) for p in pairs.test}:
        raise BenchError("Train and test pairs overlap", "class-imbalance")
    _check_balanced(pairs.train)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 13]))
    mode = FeatureMode(feature_mode)

    tr_a, tr_b = features.matrix(pairs.train, mode)
    te_a, te_b = features.matrix(pairs.test, mode)
    stacked = np.concatenate([tr_a, tr_b])
    norm = _standardize(stacked, te_a, te_b)
    tr_a, tr_b = norm[0][: len(tr_a)], norm[0][len(tr_a) :]
    te_a, te_b = norm[1], norm[2]
    y_train = np.array([int(p.relation) for p in pairs.train])
    y_test = np.array([int(p.relation) for p in pairs.test])
    if permute_labels:
        y_train = rng.permutation(y_train)

    model = PairClassifier(tr_a.shape[1], seed=seed)
    optimizer = RMSProp(settings.learning_rate, decay=0.9, epsilon=1e-8, max_grad_norm=None)
    n = len(y_train)
    for epoch in range(settings.epochs):
        order = rng.permutation(n)
        for start in range(0, n, settings.batch_size):
            idx = order[start : start + settings.batch_size]
            z, cache = model.logits(tr_a[idx], tr_b[idx])
            onehot = np.eye(len(Relation))[y_train[idx]]
            d_logits = (softmax(z) - onehot) / len(idx)
            optimizer.apply_gradients(model.params, model.gradients(cache, d_logits))
        if epoch == settings.epochs - 1:
            z, _ = model.logits(tr_a, tr_b)
            loss = -float(np.mean(log_softmax(z)[np.arange(n), y_train]))
            logger.debug("pair classifier ({}) final training loss {:.4f}", mode, loss)

    train_acc = float(np.mean(model.predict(tr_a, tr_b) == y_train))
    test_acc = float(np.mean(model.predict(te_a, te_b) == y_test))
    logger.info("pair classifier ({}): train {:.3f}, test {:.3f}", mode, train_acc, test_acc)
    return PairResult(mode, train_acc, test_acc)
