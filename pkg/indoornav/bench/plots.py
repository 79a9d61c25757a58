"""Episode-length histograms and learning curves, rendered off-screen."""
from pathlib import Path
from typing import List, Protocol, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
from loguru import logger  # noqa: E402

from .evaluate import EvalReport  # noqa: E402

FAILURE_BUCKET = "failed"


class CurveSource(Protocol):
    """Anything with a name and a (frames, mean_length) curve, e.g. TrainLog."""

    name: str

    def curve(self) -> pd.DataFrame:
        ...


def length_bins(max_steps: int) -> List[Tuple[int, int]]:
    """Inclusive [lo, hi] length ranges doubling in width, up to `max_steps`."""
    bins = [(0, 0)]
    lo = 1
    while lo <= max_steps:
        hi = min(2 * lo - 1, max_steps)
        bins.append((lo, hi))
        lo = hi + 1
    return bins


def length_histogram(report: EvalReport) -> pd.DataFrame:
    """Successful episodes bucketed by length, then one failure bucket.

    Failed episodes never land in a length bucket even though their
    effective length is `max_steps`.
    """
    eps = report.episodes
    success = eps["success"].astype(bool).to_numpy()
    steps = eps["steps"].to_numpy()
    rows = []
    for lo, hi in length_bins(report.protocol.max_steps):
        count = int(np.sum(success & (steps >= lo) & (steps <= hi)))
        label = str(lo) if lo == hi else f"{lo}-{hi}"
        rows.append({"bucket": label, "lower": lo, "upper": hi, "count": count})
    rows.append(
        {
            "bucket": FAILURE_BUCKET,
            "lower": report.protocol.max_steps,
            "upper": report.protocol.max_steps,
            "count": int(np.sum(~success)),
        }
    )
    return pd.DataFrame(rows, columns=["bucket", "lower", "upper", "count"])


def episode_length_histogram(report: EvalReport, path: Path) -> Tuple[Path, Path]:
    """Write a bar chart (PNG) and its CSV next to it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    hist = length_histogram(report)
    csv_path = path.with_suffix(".csv")
    hist.to_csv(csv_path, index=False)

    fig, ax = plt.subplots(figsize=(8, 4))
    colors = ["tab:blue"] * (len(hist) - 1) + ["tab:red"]
    ax.bar(range(len(hist)), hist["count"], color=colors)
    ax.set_xticks(range(len(hist)))
    ax.set_xticklabels(hist["bucket"], rotation=45, ha="right")
    ax.set_xlabel("episode length")
    ax.set_ylabel("episodes")
    ax.set_title(f"Episode lengths ({len(report.episodes)} episodes)")
    fig.savefig(path.with_suffix(".png"), dpi=150, bbox_inches="tight")
    plt.close(fig)
    logger.info("Wrote episode length histogram to {}", path.with_suffix(".png"))
    return path.with_suffix(".png"), csv_path


def learning_curve_plot(logs: Sequence[CurveSource], path: Path) -> Path:
    """One marked polyline per log: frames on x, mean episode length on y."""
    path = Path(path).with_suffix(".png")
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(8, 4))
    for log in logs:
        curve = log.curve()
        ax.plot(curve["frames"], curve["mean_length"], marker="o", label=log.name)
    ax.set_xlabel("training frames")
    ax.set_ylabel("mean episode length")
    if logs:
        ax.legend()
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    logger.info("Wrote learning curves for {} run(s) to {}", len(logs), path)
    return path
