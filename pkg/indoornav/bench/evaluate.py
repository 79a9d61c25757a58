"""Evaluation protocol and reports.

Every (scene, target) gets `episodes_per_target` episodes from random starts,
with its own generator derived from the protocol seed, so reports do not
depend on how tasks are spread over threads. A failed episode counts as
`max_steps` in every mean.
"""
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd
from loguru import logger

from ..config import EnvConfig, EvalProtocol
from ..env import EpisodeMode, EpisodeRecord, Policy, distance_to_target, run_episode, sample_start
from ..exceptions import BenchError, EpisodeError
from ..scene import GridScene, Heading, SceneCategory, TargetRef

CATEGORY_ORDER = [c.value for c in SceneCategory]
EPISODE_COLUMNS = [
    "method",
    "scene",
    "category",
    "target",
    "target_location",
    "target_heading",
    "start",
    "steps",
    "success",
    "return",
    "optimal",
]
SUMMARY_COLUMNS = ["method", "scene", "category", "target", "mean_len", "failures"]

PolicyFactory = Callable[[], Policy]


def effective_lengths(steps: Iterable[int], success: Iterable[bool], max_steps: int) -> np.ndarray:
    """Episode lengths with every failure counted as `max_steps`."""
    steps = np.asarray(list(steps), dtype=np.float64)
    success = np.asarray(list(success), dtype=bool)
    return np.where(success, steps, float(max_steps))


@dataclass
class EvalReport:
    protocol: EvalProtocol
    episodes: pd.DataFrame

    @classmethod
    def from_records(
        cls,
        records: Sequence[EpisodeRecord],
        protocol: EvalProtocol,
        method: str,
        categories: Optional[Mapping[str, str]] = None,
        optimal: Optional[Sequence[float]] = None,
    ) -> "EvalReport":
        categories = categories or {}
        rows = []
        for i, rec in enumerate(records):
            row = rec.as_row()
            row.update(
                method=method,
                category=categories.get(rec.scene_id, ""),
                target_location=rec.target.location_id,
                target_heading=int(rec.target.heading),
                optimal=float(optimal[i]) if optimal is not None else np.nan,
            )
            rows.append(row)
        return cls(protocol, pd.DataFrame(rows, columns=EPISODE_COLUMNS))

    @classmethod
    def combine(cls, reports: Sequence["EvalReport"]) -> "EvalReport":
        if not reports:
            raise BenchError("Nothing to combine")
        protocols = {r.protocol.json() for r in reports}
        if len(protocols) > 1:
            raise BenchError("Reports use different evaluation protocols")
        return cls(reports[0].protocol, pd.concat([r.episodes for r in reports], ignore_index=True))

    @property
    def lengths(self) -> np.ndarray:
        return effective_lengths(self.episodes["steps"], self.episodes["success"], self.protocol.max_steps)

    def mean_length(self, method: Optional[str] = None) -> float:
        df = self._with_lengths()
        if method is not None:
            df = df[df["method"] == method]
        return float(df["length"].mean())

    def _with_lengths(self) -> pd.DataFrame:
        df = self.episodes.copy()
        df["length"] = self.lengths
        return df

    def summary(self) -> pd.DataFrame:
        """One row per (method, scene, target): mean length and failure count."""
        df = self._with_lengths()
        df["failed"] = ~df["success"].astype(bool)
        grouped = df.groupby(["method", "scene", "category", "target"], sort=False).agg(
            mean_len=("length", "mean"), failures=("failed", "sum")
        )
        out = grouped.reset_index()
        out["failures"] = out["failures"].astype(int)
        return out[SUMMARY_COLUMNS]

    def by_category(self) -> pd.DataFrame:
        """Mean episode length per method: an "All" column, then one per category."""
        df = self._with_lengths()
        table = df.pivot_table(index="method", columns="category", values="length", aggfunc="mean", sort=False)
        table.insert(0, "All", df.groupby("method", sort=False)["length"].mean())
        cols = ["All"] + [c for c in CATEGORY_ORDER if c in table.columns]
        return table[cols]

    def header(self) -> List[str]:
        p = self.protocol
        return [
            f"# protocol: episodes_per_target={p.episodes_per_target} max_steps={p.max_steps} "
            f"exploration={p.exploration} seed={p.seed}"
        ]

    def to_csv(self, path: Path) -> Path:
        """Write the summary CSV, protocol echoed in a leading comment line."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w") as f:
            f.write("\n".join(self.header()) + "\n")
            self.summary().to_csv(f, index=False)
        self.episodes.to_csv(path.with_name(path.stem + "_episodes.csv"), index=False)
        return path

    @staticmethod
    def read_summary(path: Path) -> pd.DataFrame:
        return pd.read_csv(path, comment="#")

    @classmethod
    def from_csv(cls, path: Path) -> "EvalReport":
        """Reload a report written by `to_csv` (summary header + episodes file)."""
        path = Path(path)
        with path.open() as f:
            header = f.readline()
        if not header.startswith("# protocol:"):
            raise BenchError(f"{path}: missing protocol header")
        fields = dict(item.split("=", 1) for item in header.split(":", 1)[1].split())
        protocol = EvalProtocol(**fields)
        episodes = pd.read_csv(path.with_name(path.stem + "_episodes.csv"), keep_default_na=False)
        episodes["success"] = episodes["success"].astype(str).str.lower() == "true"
        episodes["optimal"] = pd.to_numeric(episodes["optimal"], errors="coerce")
        return cls(protocol, episodes[EPISODE_COLUMNS])


def _episode_config(env: Optional[EnvConfig], protocol: EvalProtocol) -> EnvConfig:
    env = env or EnvConfig()
    return env.copy(
        update={"eval_max_steps": protocol.max_steps, "eval_exploration": protocol.exploration}
    )


def evaluate(
    policy: Union[Policy, PolicyFactory],
    scenes: Sequence[GridScene],
    targets: Mapping[str, Sequence[TargetRef]],
    protocol: Optional[EvalProtocol] = None,
    env: Optional[EnvConfig] = None,
    method: str = "policy",
    workers: int = 1,
) -> EvalReport:
    """Run the evaluation protocol for every (scene, target) in `targets`.

    `policy` is either a policy instance (run on one thread) or a factory
    returning a fresh policy per (scene, target) task.
    """
    protocol = protocol or EvalProtocol()
    config = _episode_config(env, protocol)
    if hasattr(policy, "act"):
        instance = policy
        factory: PolicyFactory = lambda: instance  # noqa: E731
        workers = 1
    else:
        factory = policy

    tasks = [
        (si, ti, scene, target)
        for si, scene in enumerate(scenes)
        for ti, target in enumerate(targets.get(scene.scene_id, ()))
    ]

    def run(task):
        si, ti, scene, target = task
        rng = np.random.default_rng(np.random.SeedSequence([protocol.seed, si, ti]))
        agent = factory()
        dist = distance_to_target(scene, target.state)
        out = []
        for _ in range(protocol.episodes_per_target):
            try:
                start = sample_start(scene, target, rng)
            except EpisodeError as e:
                raise BenchError(f"{scene.scene_id} {target}: {e}", "no-start-state") from e
            rec = run_episode(agent, scene, target, start, EpisodeMode.EVAL, rng, config)
            out.append((rec, float(dist[scene.state_index(start)])))
        return out

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = [r for chunk in pool.map(run, tasks) for r in chunk]
    categories = {s.scene_id: s.category.value for s in scenes}
    report = EvalReport.from_records(
        [r for r, _ in results], protocol, method, categories, [d for _, d in results]
    )
    logger.info(
        "{}: {} episodes over {} targets, mean length {:.2f}",
        method,
        len(results),
        len(tasks),
        report.mean_length() if results else float("nan"),
    )
    return report


def select_heldout_targets(scene: GridScene, n: int, rng: np.random.Generator) -> List[TargetRef]:
    """`n` featureful targets that are not landmarks, in index order."""
    landmarks = set(scene.landmark_targets)
    candidates = [t for t in scene.featureful_targets if t not in landmarks]
    if not candidates:
        return []
    picks = rng.choice(len(candidates), size=min(n, len(candidates)), replace=False)
    return sorted((candidates[int(i)] for i in picks), key=lambda t: (t.location_id, int(t.heading)))


def heldout_split(
    scenes: Sequence[GridScene], n: int, seed: int
) -> Dict[str, List[TargetRef]]:
    """Held-out targets per scene, a function of (scene id, n, seed) only.

    Training and evaluation commands call this separately and must agree.
    """
    out = {}
    for scene in scenes:
        rng = np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(scene.scene_id.encode())]))
        out[scene.scene_id] = select_heldout_targets(scene, n, rng)
    return out


DISTANCE_BUCKETS = [(1, "1"), (2, "2"), (4, "4"), (8, "8"), (np.inf, "8+")]


def _bucket(d: float) -> str:
    for limit, label in DISTANCE_BUCKETS:
        if d <= limit:
            return label
    return DISTANCE_BUCKETS[-1][1]


def generalization_by_distance(
    report: EvalReport,
    scenes: Sequence[GridScene],
    trained: Mapping[str, Sequence[TargetRef]],
) -> pd.DataFrame:
    """Success rate of evaluated targets grouped by their shortest-path
    distance to the nearest trained target of the same scene."""
    by_id = {s.scene_id: s for s in scenes}
    dist_cache: Dict[tuple, float] = {}
    buckets = []
    for row in report.episodes.itertuples(index=False):
        key = (row.scene, row.target_location, row.target_heading)
        if key not in dist_cache:
            scene = by_id[row.scene]
            state = TargetRef(int(row.target_location), Heading(int(row.target_heading))).state
            idx = scene.state_index(state)
            dists = [distance_to_target(scene, t.state)[idx] for t in trained.get(row.scene, ())]
            dist_cache[key] = float(min(dists)) if dists else np.inf
        buckets.append(_bucket(dist_cache[key]))
    df = report.episodes.assign(bucket=buckets, length=report.lengths)
    order = [label for _, label in DISTANCE_BUCKETS]
    out = (
        df.groupby("bucket")
        .agg(episodes=("success", "size"), success_rate=("success", "mean"), mean_len=("length", "mean"))
        .reindex(order)
        .dropna(subset=["episodes"])
        .reset_index()
    )
    out["episodes"] = out["episodes"].astype(int)
    return out


def frames_to_threshold(curve: pd.DataFrame, threshold: float) -> float:
    """First logged frame count whose mean episode length is <= `threshold`
    (inf if never reached)."""
    hits = curve[curve["mean_length"] <= threshold]
    return float(hits["frames"].iloc[0]) if len(hits) else float("inf")
