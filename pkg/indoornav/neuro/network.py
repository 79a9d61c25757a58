"""Siamese actor-critic graph.

::

    obs features ----> embed (shared) --\
                                         concat -> fusion -> [lstm] -> head[scene] -> policy(4)
    target features -> embed (shared) --/                                         \-> value(1)

Inputs are sequences of T steps (a rollout, or T=1 when acting). The
recurrent variant unrolls its LSTM over the T steps; the others treat T as a
batch.
"""
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from ..exceptions import NeuroError
from .layers import Concat, Dense, Grads, LSTMCell, LSTMState, Params, ReLU, softmax

NUM_ACTIONS = 4
BRANCHES = ("obs", "target")


@dataclass(frozen=True)
class LayerSpec:
    """One entry of the ordered layer list recorded in checkpoints."""

    name: str
    kind: str
    shapes: Dict[str, Tuple[int, ...]]
    shared_with: Tuple[str, ...] = ()


@dataclass
class NetworkOutput:
    logits: np.ndarray
    probs: np.ndarray
    values: np.ndarray
    state: Optional[LSTMState] = None
    # post-ReLU embeddings of the obs and target branches
    embeddings: Tuple[np.ndarray, ...] = ()


@dataclass
class ForwardCache:
    head: str
    embed_obs: tuple
    embed_target: tuple
    concat: list
    fusion: tuple
    lstm: List[tuple] = field(default_factory=list)
    head_hidden: tuple = ()
    policy: object = None
    value: object = None


class SiameseActorCritic:
    def __init__(
        self,
        input_dim: int,
        embed_dim: int = 512,
        fusion_dim: int = 512,
        head_dim: int = 512,
        lstm_hidden: Optional[int] = None,
        forget_bias: float = 1.0,
    ) -> None:
        self.input_dim = input_dim
        self.embed = Dense("embed", input_dim, embed_dim)
        self.embed_relu = ReLU("embed_relu")
        self.concat = Concat("concat")
        self.fusion = Dense("fusion", 2 * embed_dim, fusion_dim)
        self.fusion_relu = ReLU("fusion_relu")
        self.lstm = (
            LSTMCell("lstm", fusion_dim, lstm_hidden, forget_bias) if lstm_hidden else None
        )
        self.head_in = lstm_hidden if lstm_hidden else fusion_dim
        self.head_dim = head_dim
        self._heads: Dict[str, Tuple[Dense, ReLU, Dense, Dense]] = {}

    @property
    def recurrent(self) -> bool:
        return self.lstm is not None

    @property
    def heads(self) -> List[str]:
        return list(self._heads)

    def shared_layers(self) -> List[object]:
        layers: List[object] = [self.embed, self.fusion]
        if self.lstm is not None:
            layers.append(self.lstm)
        return layers

    def shared_param_names(self) -> List[str]:
        return [n for layer in self.shared_layers() for n in layer.param_shapes()]

    def add_head(self, head: str) -> Tuple[Dense, ReLU, Dense, Dense]:
        if head in self._heads:
            raise NeuroError(f"Head {head!r} already exists")
        layers = (
            Dense(f"head/{head}/hidden", self.head_in, self.head_dim),
            ReLU(f"head/{head}/relu"),
            Dense(f"head/{head}/policy", self.head_dim, NUM_ACTIONS, scale=0.01),
            Dense(f"head/{head}/value", self.head_dim, 1, scale=0.1),
        )
        self._heads[head] = layers
        return layers

    def head_layers(self, head: str) -> Tuple[Dense, ReLU, Dense, Dense]:
        try:
            return self._heads[head]
        except KeyError:
            raise NeuroError(f"No head {head!r}") from None

    def head_param_names(self, head: str) -> List[str]:
        return [n for layer in self.head_layers(head) for n in layer.param_shapes()]

    def init_shared(self, rng: np.random.Generator) -> Dict[str, np.ndarray]:
        params: Dict[str, np.ndarray] = {}
        for layer in self.shared_layers():
            params.update(layer.init_params(rng))
        return params

    def init_head(self, head: str, rng: np.random.Generator) -> Dict[str, np.ndarray]:
        params: Dict[str, np.ndarray] = {}
        for layer in self.head_layers(head):
            params.update(layer.init_params(rng))
        return params

    def layer_specs(self) -> List[LayerSpec]:
        specs = [
            LayerSpec("embed", "dense", self.embed.param_shapes(), shared_with=BRANCHES),
            LayerSpec("embed_relu", "relu", {}),
            LayerSpec("concat", "concat", {}),
            LayerSpec("fusion", "dense", self.fusion.param_shapes()),
            LayerSpec("fusion_relu", "relu", {}),
        ]
        if self.lstm is not None:
            specs.append(LayerSpec("lstm", "lstm", self.lstm.param_shapes()))
        for head, layers in self._heads.items():
            for layer in layers:
                specs.append(LayerSpec(layer.name, layer.kind, layer.param_shapes()))
        return specs

    def initial_state(self) -> Optional[LSTMState]:
        return LSTMState.zeros(self.lstm.hidden) if self.lstm is not None else None

    def forward(
        self,
        params: Params,
        obs: np.ndarray,
        target: np.ndarray,
        head: str,
        state: Optional[LSTMState] = None,
    ) -> Tuple[NetworkOutput, ForwardCache]:
        """Run T steps. `obs` and `target` are (T, input_dim)."""
        obs = np.atleast_2d(obs)
        target = np.atleast_2d(target)
        if obs.shape != target.shape:
            raise NeuroError(
                f"obs {obs.shape} and target {target.shape} differ", "shape-mismatch"
            )
        hidden, relu, policy, value = self.head_layers(head)

        e_obs, c_eo = self.embed.forward(params, obs)
        a_obs, c_ro = self.embed_relu.forward(params, e_obs)
        e_tgt, c_et = self.embed.forward(params, target)
        a_tgt, c_rt = self.embed_relu.forward(params, e_tgt)
        joined, c_cat = self.concat.forward([a_obs, a_tgt])
        f, c_f = self.fusion.forward(params, joined)
        fa, c_fr = self.fusion_relu.forward(params, f)

        lstm_caches = []
        new_state = None
        if self.lstm is not None:
            st = state if state is not None else self.initial_state()
            outs = []
            for t in range(len(fa)):
                st, c = self.lstm.forward(params, fa[t : t + 1], st)
                lstm_caches.append(c)
                outs.append(st.hidden)
            feats = np.concatenate(outs, axis=0)
            new_state = st
        else:
            feats = fa

        h, c_h = hidden.forward(params, feats)
        ha, c_hr = relu.forward(params, h)
        logits, c_p = policy.forward(params, ha)
        values, c_v = value.forward(params, ha)
        out = NetworkOutput(logits, softmax(logits), values[:, 0], new_state, (a_obs, a_tgt))
        cache = ForwardCache(
            head=head,
            embed_obs=(c_eo, c_ro),
            embed_target=(c_et, c_rt),
            concat=c_cat,
            fusion=(c_f, c_fr),
            lstm=lstm_caches,
            head_hidden=(c_h, c_hr),
            policy=c_p,
            value=c_v,
        )
        return out, cache

    def backward(
        self,
        params: Params,
        cache: Optional[ForwardCache],
        d_logits: np.ndarray,
        d_values: np.ndarray,
        branches: Iterable[str] = BRANCHES,
    ) -> Grads:
        """Parameter gradients of a scalar loss given dL/dlogits and dL/dvalues.

        `branches` restricts which siamese branches contribute to the shared
        embedding gradient.
        """
        if cache is None:
            raise NeuroError("backward called without a forward pass", "no-forward")
        branches = set(branches)
        grads: Grads = {}

        def add(g: Grads) -> None:
            for k, v in g.items():
                grads[k] = grads[k] + v if k in grads else v

        hidden, relu, policy, value = self.head_layers(cache.head)
        d_ha_p, g = policy.backward(params, cache.policy, d_logits)
        add(g)
        d_ha_v, g = value.backward(params, cache.value, np.asarray(d_values)[:, None])
        add(g)
        d_h, _ = relu.backward(params, cache.head_hidden[1], d_ha_p + d_ha_v)
        d_feats, g = hidden.backward(params, cache.head_hidden[0], d_h)
        add(g)

        if self.lstm is not None:
            T = len(cache.lstm)
            d_fa = np.zeros((T, self.lstm.in_dim))
            dh_next = np.zeros((1, self.lstm.hidden))
            dc_next = np.zeros((1, self.lstm.hidden))
            for t in reversed(range(T)):
                dx, dh_next, dc_next, g = self.lstm.backward(
                    params, cache.lstm[t], d_feats[t : t + 1] + dh_next, dc_next
                )
                d_fa[t] = dx[0]
                add(g)
        else:
            d_fa = d_feats

        d_f, _ = self.fusion_relu.backward(params, cache.fusion[1], d_fa)
        d_joined, g = self.fusion.backward(params, cache.fusion[0], d_f)
        add(g)
        d_obs, d_tgt = self.concat.backward(cache.concat, d_joined)
        for branch, d, (c_e, c_r) in (
            ("obs", d_obs, cache.embed_obs),
            ("target", d_tgt, cache.embed_target),
        ):
            if branch not in branches:
                continue
            d_e, _ = self.embed_relu.backward(params, c_r, d)
            _, g = self.embed.backward(params, c_e, d_e)
            add(g)
        return grads
