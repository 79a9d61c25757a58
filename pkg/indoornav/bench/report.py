"""Rich tables for evaluation and diagnostic results."""
import io
from pathlib import Path
from typing import Iterable, Optional, Sequence

import pandas as pd
from rich.console import Console
from rich.table import Table

from .evaluate import EvalReport
from .pairs import PairResult

CATEGORY_TITLES = {
    "office": "Office",
    "conference": "Conf",
    "open": "Open",
    "kitchen": "Kitchen",
    "storage": "Storage",
}


def _fmt(value: float) -> str:
    return "-" if pd.isna(value) else f"{value:.2f}"


def category_table(report: EvalReport, title: str = "Mean Episode Length") -> Table:
    """Methods as rows; "All" and one column per scene category."""
    by_cat = report.by_category()
    table = Table(title=title, title_justify="left", header_style="bold magenta")
    table.add_column("Method")
    for col in by_cat.columns:
        table.add_column(CATEGORY_TITLES.get(col, col), justify="right")
    for method, row in by_cat.iterrows():
        table.add_row(str(method), *(_fmt(v) for v in row))
    table.caption = " ".join(report.header()).lstrip("# ")
    return table


def summary_table(report: EvalReport) -> Table:
    summary = report.summary()
    table = Table(title="Per-target Results", title_justify="left", header_style="bold magenta")
    for col in summary.columns:
        table.add_column(col, justify="right" if col in ("mean_len", "failures") else "left")
    for row in summary.itertuples(index=False):
        table.add_row(*(_fmt(v) if isinstance(v, float) else str(v) for v in row))
    return table


def diagnostic_table(results: Iterable[tuple], title: str = "Nearby-view Pair Classification") -> Table:
    """Rows of (split, PairResult) as accuracy percentages."""
    table = Table(title=title, title_justify="left", header_style="bold magenta")
    table.add_column("Split")
    table.add_column("Features")
    table.add_column("Train Acc", justify="right")
    table.add_column("Test Acc", justify="right")
    for split, result in results:
        r: PairResult = result
        table.add_row(
            str(split),
            r.feature_mode.value,
            f"{100 * r.train_accuracy:.1f}%",
            f"{100 * r.test_accuracy:.1f}%",
        )
    return table


def distance_table(buckets: pd.DataFrame) -> Table:
    table = Table(title="Success by Distance to Nearest Trained Target", title_justify="left")
    table.add_column("Distance")
    table.add_column("Episodes", justify="right")
    table.add_column("Success", justify="right")
    table.add_column("Mean Length", justify="right")
    for row in buckets.itertuples(index=False):
        table.add_row(str(row.bucket), str(row.episodes), f"{100 * row.success_rate:.1f}%", _fmt(row.mean_len))
    return table


def export_text(tables: Sequence[Table], path: Optional[Path] = None, width: int = 100) -> str:
    """Render tables to plain text, optionally writing them to `path`."""
    console = Console(record=True, width=width, file=io.StringIO())
    for table in tables:
        console.print(table)
    text = console.export_text(styles=False)
    if path is not None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
    return text

