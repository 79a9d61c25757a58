"""Command-line entry point.

Every command loads the experiment config (file + `--set` overrides), writes
`effective_config.json` and `provenance.json` into its output directory and
exits with 0 on success, 1 on user errors and 2 on internal errors.
"""
import argparse
import hashlib
import json
import sys
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import numpy as np
from loguru import logger
from pydantic import ValidationError
from rich.console import Console

from .__about__ import __version__
from .config import ExperimentConfig, FeatureMode, TargetMode, init_config_dir, load_config
from .dirs import default_output_dir
from .exceptions import AgentError, ConfigError, IndoorNavError
from .features import get_store, init_store
from .logs import init_logging
from .notifications import notify_error, notify_success, notify_warning

EXIT_OK = 0
EXIT_USER_ERROR = 1
EXIT_INTERNAL_ERROR = 2

console = Console()

class _Parser(argparse.ArgumentParser):
    """Argument errors are user errors (exit code 1)."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(EXIT_USER_ERROR, f"{self.prog}: error: {message}\n")


def parse_seeds(text: str) -> List[int]:
    """`1..24`, `3` or `1,5,9` (ranges inclusive)."""
    seeds: List[int] = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            lo, hi = part.split("..", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        elif part:
            seeds.append(int(part))
    if not seeds:
        raise ConfigError(f"No seeds in {text!r}", "bad-override")
    return seeds


def parse_point(text: str) -> tuple:
    try:
        x, y = (float(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"Expected x,y, got {text!r}", "bad-override")
    return x, y


def _hash_path(path: Path) -> str:
    digest = hashlib.sha256()
    files = sorted(p for p in path.rglob("*") if p.is_file()) if path.is_dir() else [path]
    for f in files:
        digest.update(str(f.relative_to(path) if path.is_dir() else f.name).encode())
        digest.update(f.read_bytes())
    return digest.hexdigest()


def write_provenance(
    out_dir: Path, command: str, config: ExperimentConfig, inputs: Iterable[Path]
) -> Path:
    """Echo the effective config and hash every input file or package."""
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "effective_config.json").write_text(config.to_json() + "\n")
    record = {
        "command": command,
        "version": __version__,
        "seed": config.train.seed,
        "config_sha256": hashlib.sha256(config.to_json().encode()).hexdigest(),
        "inputs": {str(p): _hash_path(Path(p)) for p in inputs if Path(p).exists()},
    }
    path = out_dir / "provenance.json"
    path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    return path


def cmd_procgen(args: argparse.Namespace, config: ExperimentConfig, out_dir: Path) -> int:
    from .procgen import BuildSettings, build_scene_package, corpus_plan, preset_spec

    pg = config.procgen
    seeds = parse_seeds(args.seeds) if args.seeds else list(pg.seeds)
    if args.mixed or pg.mixed_corpus:
        specs = corpus_plan(seeds)
    else:
        specs = [
            preset_spec(
                args.preset or pg.preset,
                seed,
                rows=pg.rows,
                cols=pg.cols,
                obstacle_density=pg.obstacle_density,
                cell_size=pg.cell_size,
            )
            for seed in seeds
        ]
    settings = BuildSettings(
        pipeline=config.pipeline,
        perception=config.perception,
        pano_width=pg.pano_width,
        pano_height=pg.pano_height,
        samples_per_m2=pg.samples_per_m2,
        floor_samples_per_m2=pg.floor_samples_per_m2,
        workers=config.train.workers,
    )
    write_provenance(out_dir, "procgen", config, [])
    scenes_dir = out_dir / "scenes"
    for spec in specs:
        build_scene_package(spec, scenes_dir / spec.scene_id, settings)
    (out_dir / "specs.json").write_text(
        json.dumps([json.loads(s.json()) for s in specs], indent=2, sort_keys=True) + "\n"
    )
    notify_success(f"Built {len(specs)} scene package(s) in {scenes_dir}")
    return EXIT_OK


def cmd_pipeline(args: argparse.Namespace, config: ExperimentConfig, out_dir: Path) -> int:
    from PIL import Image

    from .pipeline import (
        CellState,
        HeightBand,
        build_laserscan_map,
        build_obstacle_map,
        read_point_cloud,
        rasterize_map_image,
        sample_grid_locations,
        save_map,
        traversal_plan,
    )

    pipe = config.pipeline
    write_provenance(out_dir, "pipeline", config, [args.cloud])
    cloud = read_point_cloud(args.cloud)
    obstacle = build_obstacle_map(cloud, HeightBand(pipe.z_min, pipe.z_max), pipe.resolution, pipe.min_points)
    laserscan = build_laserscan_map(
        cloud, pipe.sensor_height, pipe.slab_thickness, pipe.resolution, pipe.min_points
    )
    save_map(obstacle, out_dir / "maps" / "obstacle")
    save_map(laserscan, out_dir / "maps" / "laserscan")
    free = np.argwhere(obstacle.cells == CellState.FREE)
    if not len(free):
        notify_warning(f"{args.cloud}: map has no free cells ({len(cloud)} points)")
        logger.warning("All-unknown or fully occupied map from {}", args.cloud)
        return EXIT_USER_ERROR
    if args.start:
        start = parse_point(args.start)
    else:
        center = np.array([obstacle.rows / 2, obstacle.cols / 2])
        row, col = free[int(np.argmin(((free - center) ** 2).sum(axis=1)))]
        start = obstacle.center_of(int(row), int(col))
    locations = sample_grid_locations(obstacle, start, pipe.grid_size, pipe.clearance)
    plan = traversal_plan(locations)
    (out_dir / "plan.json").write_text(
        json.dumps(
            {
                "start": list(start),
                "locations": [[p.row, p.col, p.x, p.y] for p in locations],
                "traversal": plan,
            },
            indent=2,
        )
        + "\n"
    )
    Image.fromarray(rasterize_map_image(obstacle, locations)).save(out_dir / "maps" / "obstacle_locations.png")
    notify_success(f"{len(locations)} locations, traversal of {len(plan)} hops, written to {out_dir}")
    return EXIT_OK


def _load_scenes(paths: Sequence[Path]):
    from .scene import load_scenes

    if not paths:
        raise AgentError("No scene packages given", "unknown-scene")
    return load_scenes(paths)


def _check_budget(frames: int) -> None:
    if frames <= 0:
        raise AgentError(f"Frame budget must be positive, got {frames}", "bad-budget")


def cmd_train(args: argparse.Namespace, config: ExperimentConfig, out_dir: Path) -> int:
    from .agents import train
    from .bench import heldout_split, learning_curve_plot

    paths = args.scenes or list(config.train.scenes)
    _check_budget(config.train.total_frames)
    write_provenance(out_dir, "train", config, paths)
    scenes = _load_scenes(paths)
    heldout = None
    if TargetMode(config.train.target_mode) is TargetMode.DENSE:
        heldout = heldout_split(scenes, config.train.heldout_targets, config.train.seed)
        (out_dir / "heldout.json").write_text(
            json.dumps({k: [str(t) for t in v] for k, v in heldout.items()}, indent=2, sort_keys=True) + "\n"
        )
    model, log = train(scenes, get_store(), config.train, config.neuro, config.env, heldout)
    model.save(out_dir / "model")
    log.save_csv(out_dir / "train_log.csv")
    learning_curve_plot([log], out_dir / "learning_curve")
    notify_success(f"Trained {log.name} on {len(scenes)} scene(s); model in {out_dir / 'model.npz'}")
    return EXIT_OK


def cmd_finetune(args: argparse.Namespace, config: ExperimentConfig, out_dir: Path) -> int:
    from .agents import PolicyModel, finetune

    frames = args.frames if args.frames is not None else config.train.finetune_frames
    _check_budget(frames)
    write_provenance(out_dir, "finetune", config, [args.model, args.scene])
    (scene,) = _load_scenes([args.scene])
    model = PolicyModel.load(args.model, strict=config.train.strict)
    model, log = finetune(model, scene, get_store(), frames, config.train, config.env)
    model.save(out_dir / "model")
    log.save_csv(out_dir / "finetune_log.csv")
    notify_success(f"Fine-tuned a new head for {scene.scene_id}")
    return EXIT_OK


def _policy_factory(args: argparse.Namespace, config: ExperimentConfig):
    from .env import OraclePolicy, RandomPolicy

    if args.policy == "random":
        return (lambda: RandomPolicy()), args.method or "Random"
    if args.policy == "oracle":
        return (lambda: OraclePolicy()), args.method or "Shortest-path"
    if not args.model:
        raise ConfigError("--policy model needs --model", "bad-override")
    from .agents import ModelPolicy, PolicyModel

    model = PolicyModel.load(args.model)
    store = get_store()
    return (lambda: ModelPolicy(model, store, greedy=True)), args.method or model.variant.value


def cmd_eval(args: argparse.Namespace, config: ExperimentConfig, out_dir: Path) -> int:
    from .bench import (
        category_table,
        episode_length_histogram,
        evaluate,
        export_text,
        heldout_split,
        summary_table,
    )

    write_provenance(out_dir, "eval", config, list(args.scenes) + ([args.model] if args.model else []))
    scenes = _load_scenes(args.scenes)
    if args.targets == "heldout":
        targets = heldout_split(scenes, config.train.heldout_targets, config.train.seed)
    else:
        targets = {s.scene_id: list(s.landmark_targets) for s in scenes}
    factory, method = _policy_factory(args, config)
    protocol = config.eval
    if args.policy == "oracle":
        # shortest-path baseline: every action is the planned one
        protocol = protocol.copy(update={"exploration": 0.0})
    report = evaluate(
        factory, scenes, targets, protocol, config.env, method=method, workers=config.train.workers
    )
    report.to_csv(out_dir / "eval.csv")
    episode_length_histogram(report, out_dir / "episode_lengths")
    tables = [category_table(report), summary_table(report)]
    export_text(tables, out_dir / "eval.txt")
    console.print(tables[0])
    return EXIT_OK


def cmd_diagnose(args: argparse.Namespace, config: ExperimentConfig, out_dir: Path) -> int:
    import pandas as pd

    from .bench import (
        PairFeatures,
        PairResult,
        PairSplit,
        diagnostic_table,
        export_text,
        generate_pairs,
        train_pair_classifier,
    )

    diag = config.diagnose
    write_provenance(out_dir, "diagnose", config, args.scenes)
    scenes = _load_scenes(args.scenes)
    modes = list(FeatureMode) if args.features == "both" else [FeatureMode(args.features)]
    splits = list(PairSplit) if args.split == "both" else [PairSplit(args.split)]
    has_test = any(s.split != "train" for s in scenes)
    features = PairFeatures(scenes, config.perception)
    rows = []
    for split in splits:
        for seed in diag.seeds:
            pairs = generate_pairs(
                scenes,
                diag.per_class,
                split,
                np.random.default_rng(seed),
                diag.test_per_class,
                None if has_test else diag.train_scenes,
            )
            for mode in modes:
                result = train_pair_classifier(pairs, features, mode, diag, seed, args.permute_labels)
                rows.append(
                    {
                        "split": split.value,
                        "features": mode.value,
                        "seed": seed,
                        "train_accuracy": result.train_accuracy,
                        "test_accuracy": result.test_accuracy,
                    }
                )
    df = pd.DataFrame(rows)
    df.to_csv(out_dir / "diagnose.csv", index=False)
    means = df.groupby(["split", "features"], sort=False)[["train_accuracy", "test_accuracy"]].mean()
    results = [
        (split, PairResult(FeatureMode(mode), row.train_accuracy, row.test_accuracy))
        for (split, mode), row in means.iterrows()
    ]
    table = diagnostic_table(results)
    export_text([table], out_dir / "diagnose.txt")
    console.print(table)
    return EXIT_OK


def cmd_report(args: argparse.Namespace, config: ExperimentConfig, out_dir: Path) -> int:
    from .agents import TrainLog
    from .bench import EvalReport, category_table, export_text, learning_curve_plot

    write_provenance(out_dir, "report", config, list(args.evals) + list(args.logs))
    tables = []
    if args.evals:
        report = EvalReport.combine([EvalReport.from_csv(p) for p in args.evals])
        tables.append(category_table(report))
        report.by_category().to_csv(out_dir / "by_category.csv")
    if args.logs:
        learning_curve_plot([TrainLog.load_csv(p) for p in args.logs], out_dir / "learning_curves")
    if not tables and not args.logs:
        raise ConfigError("Nothing to report: give --evals and/or --logs", "bad-override")
    if tables:
        export_text(tables, out_dir / "report.txt")
        for table in tables:
            console.print(table)
    return EXIT_OK


def cmd_stats(args: argparse.Namespace, config: ExperimentConfig, out_dir: Path) -> int:
    from .scene import reference_dataset_stats, scene_stats, stats_table

    if args.reference:
        rows = reference_dataset_stats()
        title = "Reference Dataset Statistics"
    else:
        rows = [scene_stats(s) for s in _load_scenes(args.scenes)]
        title = "Dataset Statistics"
    console.print(stats_table(rows, title))
    return EXIT_OK


def cmd_config(args: argparse.Namespace, config: ExperimentConfig, out_dir: Path) -> int:
    if args.json:
        console.print_json(config.to_json())
    else:
        console.print(config)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="indoornav", description="Indoor visual navigation simulator and benchmark")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML experiment config")
    common.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
        help="Override a config value, e.g. train.workers=4 (repeatable)",
    )
    common.add_argument("--seed", type=int, help="Seed for training, evaluation and diagnostics")
    common.add_argument("--output-dir", type=Path, help="Run directory (default: $INDOORNAV_OUTPUT_DIR)")
    common.add_argument("--workers", type=int, help="Cap on worker threads")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("procgen", parents=[common], help="Generate synthetic scene packages")
    p.add_argument("--preset", help="office, conference, open, kitchen or storage")
    p.add_argument("--seeds", help="e.g. 1..24 or 1,2,3")
    p.add_argument("--mixed", action="store_true", help="Category mix of the reference corpus")
    p.set_defaults(func=cmd_procgen)

    p = sub.add_parser("pipeline", parents=[common], help="Maps, locations and plan from a point cloud")
    p.add_argument("cloud", type=Path, help="ASCII PLY or x y z [r g b] file")
    p.add_argument("--start", help="Start position x,y in meters (default: free cell nearest the map center)")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("train", parents=[common], help="Train a navigation agent")
    p.add_argument("scenes", nargs="*", type=Path, help="Scene packages (default: train.scenes)")
    p.add_argument("--mode", choices=[m.value for m in TargetMode], help="Target assignment")
    p.add_argument("--variant", help="one-frame, four-frame or lstm")
    p.add_argument("--frames", type=int, help="Total frame budget")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("finetune", parents=[common], help="Adapt a model to a new scene")
    p.add_argument("model", type=Path, help="Checkpoint (.npz)")
    p.add_argument("scene", type=Path, help="Scene package")
    p.add_argument("--frames", type=int, help="Frame budget (default: train.finetune_frames)")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", parents=[common], help="Run the evaluation protocol")
    p.add_argument("scenes", nargs="+", type=Path)
    p.add_argument("--policy", choices=["random", "oracle", "model"], default="model")
    p.add_argument("--model", type=Path, help="Checkpoint for --policy model")
    p.add_argument("--targets", choices=["trained", "heldout"], default="trained")
    p.add_argument("--method", help="Method name in the report")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("diagnose", parents=[common], help="Nearby-view pair classification")
    p.add_argument("scenes", nargs="+", type=Path)
    p.add_argument("--features", choices=["pooled", "spatial", "both"], default="both")
    p.add_argument("--split", choices=["same-scene", "cross-scene", "both"], default="both")
    p.add_argument("--permute-labels", action="store_true", help="Chance-level control")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("report", parents=[common], help="Combine evaluation CSVs and training logs")
    p.add_argument("--evals", nargs="*", type=Path, default=[], help="eval.csv files")
    p.add_argument("--logs", nargs="*", type=Path, default=[], help="train_log.csv files")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("stats", parents=[common], help="Dataset statistics table")
    p.add_argument("scenes", nargs="*", type=Path)
    p.add_argument("--reference", action="store_true", help="Bundled real-dataset statistics")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("config", help="Configuration")
    config_sub = p.add_subparsers(dest="config_command", required=True, parser_class=_Parser)
    show = config_sub.add_parser("show", parents=[common], help="Show the effective configuration")
    show.add_argument("--json", action="store_true")
    show.set_defaults(func=cmd_config)
    return parser


def _overrides(args: argparse.Namespace) -> List[str]:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides += [f"train.seed={args.seed}", f"eval.seed={args.seed}", f"diagnose.seeds=[{args.seed}]"]
    if args.workers is not None:
        overrides.append(f"train.workers={args.workers}")
    for flag, key in (("mode", "train.target_mode"), ("variant", "train.variant"), ("frames", "train.total_frames")):
        value = getattr(args, flag, None)
        if value is not None and not (args.command == "finetune" and flag == "frames"):
            overrides.append(f"{key}={json.dumps(value)}")
    return overrides


COMMANDS_WITHOUT_OUTPUT = {"stats", "config"}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        init_config_dir()
        config = load_config(args.config, _overrides(args))
        init_logging(config.logging)
        init_store(config.perception)
        out_dir = Path(args.output_dir or default_output_dir())
        if args.command not in COMMANDS_WITHOUT_OUTPUT:
            out_dir.mkdir(parents=True, exist_ok=True)
        return args.func(args, config, out_dir)
    except (IndoorNavError, ValidationError, OSError) as e:
        logger.error("{} failed: {}", args.command, e)
        notify_error(str(e), title=args.command)
        return EXIT_USER_ERROR
    except Exception as e:
        logger.exception("Internal error in {}", args.command)
        notify_error(f"Internal error: {e!r}", title=args.command)
        return EXIT_INTERNAL_ERROR


if __name__ == "__main__":
    sys.exit(main())
