"""Shared parameter store and the shared-statistics RMSProp optimizer.

Updates never modify an array in place: a new array is computed and swapped
into the store under the block's lock, so concurrent readers always see some
committed version of every block.
"""
import hashlib
import threading
from contextlib import ExitStack, contextmanager
from typing import Callable, Dict, Iterable, Iterator, Mapping, Optional

import numpy as np
from loguru import logger

from ..exceptions import NeuroError


class ParameterStore(Mapping[str, np.ndarray]):
    """Named parameter blocks shared between worker threads.

    With ``strict=True`` every update is serialized behind one global lock.
    """

    def __init__(self, params: Optional[Mapping[str, np.ndarray]] = None, strict: bool = False) -> None:
        self._params: Dict[str, np.ndarray] = {}
        self._locks: Dict[str, threading.Lock] = {}
        self._global = threading.Lock()
        self.strict = strict
        self.version = 0
        for name, value in (params or {}).items():
            self.add(name, value)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._params[name]

    def __iter__(self) -> Iterator[str]:
        return iter(list(self._params))

    def __len__(self) -> int:
        return len(self._params)

    def add(self, name: str, value: np.ndarray) -> None:
        with self._global:
            if name in self._params:
                raise NeuroError(f"Parameter {name!r} already exists")
            self._params[name] = np.array(value, dtype=np.float64)
            self._locks[name] = threading.Lock()

    def snapshot(self, names: Optional[Iterable[str]] = None) -> Dict[str, np.ndarray]:
        """References to the currently committed arrays (no copy)."""
        keys = list(self._params) if names is None else list(names)
        return {k: self._params[k] for k in keys}

    def assign(self, name: str, value: np.ndarray) -> None:
        if self._params[name].shape != value.shape:
            raise NeuroError(
                f"{name}: shape {value.shape} != {self._params[name].shape}", "shape-mismatch"
            )
        with self._locks[name]:
            self._params[name] = value

    def commit(self, name: str, value: np.ndarray) -> None:
        """Swap in a new block. The caller holds `update_lock` for `name`."""
        self._params[name] = value

    @contextmanager
    def update_lock(self, names: Iterable[str]) -> Iterator[None]:
        with ExitStack() as stack:
            if self.strict:
                stack.enter_context(self._global)
            else:
                for name in sorted(names):
                    stack.enter_context(self._locks[name])
            yield

    def digest(self, names: Optional[Iterable[str]] = None) -> str:
        """sha256 over the named blocks (all when None), in name order."""
        h = hashlib.sha256()
        for name in sorted(self._params if names is None else names):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self._params[name]).tobytes())
        return h.hexdigest()


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float((g**2).sum()) for g in grads.values())))


class RMSProp:
    """theta -= lr * g / sqrt(acc + eps), acc = decay * acc + (1 - decay) * g^2.

    Accumulators are shared by all workers, like the parameters.
    """

    def __init__(
        self,
        learning_rate: float = 7e-4,
        decay: float = 0.99,
        epsilon: float = 0.1,
        max_grad_norm: Optional[float] = 40.0,
        trainable: Optional[Callable[[str], bool]] = None,
    ) -> None:
        self.learning_rate = learning_rate
        self.decay = decay
        self.epsilon = epsilon
        self.max_grad_norm = max_grad_norm
        self.trainable = trainable
        self.accumulators: Dict[str, np.ndarray] = {}
        self.steps = 0

    def _accumulator(self, name: str, shape) -> np.ndarray:
        acc = self.accumulators.get(name)
        if acc is None:
            acc = np.zeros(shape)
            self.accumulators[name] = acc
        return acc

    def apply_gradients(self, store: ParameterStore, grads: Mapping[str, np.ndarray]) -> None:
        if self.trainable is not None:
            grads = {k: v for k, v in grads.items() if self.trainable(k)}
        if not grads:
            return
        for name, g in grads.items():
            if name not in store:
                raise NeuroError(f"Gradient for unknown parameter {name!r}", "shape-mismatch")
            if g.shape != store[name].shape:
                raise NeuroError(
                    f"{name}: gradient shape {g.shape} != {store[name].shape}", "shape-mismatch"
                )
            if not np.all(np.isfinite(g)):
                logger.error("Rejected non-finite gradient for {}", name)
                raise NeuroError(f"Non-finite gradient for {name}", "non-finite-gradient")
        scale = 1.0
        if self.max_grad_norm is not None:
            norm = global_norm(grads)
            if norm > self.max_grad_norm:
                scale = self.max_grad_norm / norm
        with store.update_lock(grads):
            for name in sorted(grads):
                g = grads[name] * scale
                acc = self.decay * self._accumulator(name, g.shape) + (1 - self.decay) * g**2
                self.accumulators[name] = acc
                store.commit(name, store[name] - self.learning_rate * g / np.sqrt(acc + self.epsilon))
            self.steps += 1
            store.version += 1
