"""Checkpoint format: ``<stem>.npz`` with ``param/<name>`` and ``rms/<name>``
arrays, plus a ``<stem>.json`` sidecar holding the version, layer list and
caller metadata."""
import json
from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from loguru import logger

from ..exceptions import NeuroError
from .network import LayerSpec
from .optim import ParameterStore, RMSProp

CHECKPOINT_VERSION = 1


def save_checkpoint(
    path: Path,
    store: ParameterStore,
    optimizer: Optional[RMSProp] = None,
    layers: Optional[List[LayerSpec]] = None,
    meta: Optional[Dict[str, Any]] = None,
) -> Path:
    path = Path(path).with_suffix(".npz")
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {f"param/{k}": v for k, v in store.snapshot().items()}
    if optimizer is not None:
        arrays.update({f"rms/{k}": v for k, v in optimizer.accumulators.items()})
    np.savez(path, **arrays)
    sidecar = {
        "version": CHECKPOINT_VERSION,
        "layers": [asdict(spec) for spec in layers or []],
        "optimizer": None
        if optimizer is None
        else {
            "learning_rate": optimizer.learning_rate,
            "decay": optimizer.decay,
            "epsilon": optimizer.epsilon,
            "max_grad_norm": optimizer.max_grad_norm,
            "steps": optimizer.steps,
        },
        "meta": meta or {},
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    logger.info("Saved checkpoint {} ({} parameter blocks)", path, len(store))
    return path


def load_checkpoint(
    path: Path,
) -> Tuple[Dict[str, np.ndarray], Dict[str, np.ndarray], Dict[str, Any]]:
    """Returns (params, rms accumulators, sidecar)."""
    path = Path(path).with_suffix(".npz")
    sidecar_file = path.with_suffix(".json")
    if not path.is_file() or not sidecar_file.is_file():
        raise NeuroError(f"Checkpoint {path} or its sidecar is missing", "bad-checkpoint")
    sidecar = json.loads(sidecar_file.read_text())
    if sidecar.get("version") != CHECKPOINT_VERSION:
        raise NeuroError(
            f"Unsupported checkpoint version {sidecar.get('version')!r}", "bad-checkpoint"
        )
    params: Dict[str, np.ndarray] = {}
    rms: Dict[str, np.ndarray] = {}
    with np.load(path) as data:
        for key in data.files:
            kind, _, name = key.partition("/")
            (params if kind == "param" else rms)[name] = data[key]
    return params, rms, sidecar
