"""Command-line entry point: ``ltsnet <command> [--config FILE] [--section.key=value ...]``.

Each command writes into ``<output root>/<command>/``. The output root is
``run.output_dir`` when set (relative paths resolve against
``$LTSNET_OUTPUT_ROOT``), otherwise ``$LTSNET_OUTPUT_ROOT``, otherwise
``./runs``. A run refuses to write into a non-empty directory unless
``--overwrite`` is given.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import CheckpointError, load_student, save_snapshot, save_student, save_teacher
from .config import ConfigError, ExperimentConfig, load_config
from .data import DataError, gen_gaussian_mixture_tasks, gen_glyph_tasks, load_manifest, materialize_idx, write_manifest
from .eval import accuracy_eval, forgetting_curve, interpolate_pair, nll_eval, traversal_grid, write_pnm
from .replay import TaskSequence, config_dict, lifelong_train
from .student import ModeError
from .theory import run_bound_suite, write_report

COMMANDS = ("train", "eval", "traverse", "interpolate", "bounds", "gen-data")
ENV_OUTPUT_ROOT = "LTSNET_OUTPUT_ROOT"

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_CHECKPOINT = 4
EXIT_DATA = 5
EXIT_RUNTIME = 6
EXIT_EXISTS = 7


class OutputExistsError(RuntimeError):
    pass


class MissingCheckpointError(RuntimeError):
    pass


def output_root(cfg: ExperimentConfig) -> Path:
    base = Path(os.environ.get(ENV_OUTPUT_ROOT) or "runs")
    configured = cfg["run.output_dir"]
    return base / configured if configured else base


def prepare_output(cfg: ExperimentConfig, command: str, overwrite: bool) -> Path:
    out = output_root(cfg) / command
    if out.exists() and any(out.iterdir()) and not overwrite:
        raise OutputExistsError(f"{out} is not empty; pass --overwrite to replace its contents")
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.to_ini())
    return out


def load_tasks(cfg: ExperimentConfig):
    source = cfg["data.source"]
    if source == "glyph":
        tasks = gen_glyph_tasks(cfg["data.task_count"], cfg["data.classes_per_task"], cfg["data.samples_per_class"],
                                size=cfg["data.size"], noise=cfg["data.noise"], seed=cfg.seed)
    elif source == "gaussian":
        tasks = gen_gaussian_mixture_tasks(cfg["data.task_count"], cfg["data.components"], cfg["data.dim"],
                                           cfg["data.separation"], cfg["data.n"], seed=cfg.seed)
    else:
        tasks = load_manifest(cfg["data.manifest"])
    order = cfg["data.task_order"]
    if order:
        if max(order) > len(tasks):
            raise DataError(f"data.task_order refers to task {max(order)} but only {len(tasks)} exist")
        tasks = [tasks[i - 1] for i in order]
    return tasks


def _model_configs(cfg: ExperimentConfig, tasks):
    shape = tasks[0].input_shape
    n_classes = max(t.n_classes for t in tasks)
    k = len(tasks)
    return cfg.student_config(shape, n_classes, k), cfg.teacher_config(shape, k), cfg.train_config()


def _student_path(cfg: ExperimentConfig) -> Path:
    path = Path(cfg["eval.checkpoint"]) if cfg["eval.checkpoint"] else output_root(cfg) / "train" / "student.ckpt"
    if not path.is_file():
        raise MissingCheckpointError(f"checkpoint {path} not found (run `train` first or set eval.checkpoint)")
    return path


def _test_example(tasks, task: int, index: int) -> np.ndarray:
    if not 1 <= task <= len(tasks):
        raise ConfigError(f"task {task} outside 1..{len(tasks)}")
    x = tasks[task - 1].test_x
    if not 0 <= index < len(x):
        raise ConfigError(f"test index {index} outside 0..{len(x) - 1} for task {task}")
    return x[index]


def cmd_train(cfg: ExperimentConfig, out: Path) -> dict:
    tasks = load_tasks(cfg)
    s_cfg, t_cfg, tr_cfg = _model_configs(cfg, tasks)
    result = lifelong_train(TaskSequence(tasks, tr_cfg.r), cfg.mode, s_cfg, t_cfg, tr_cfg, seed=cfg.seed)
    result.log.to_csv(out / "metrics.csv")
    result.log.to_jsonl(out / "metrics.jsonl")
    save_student(out / "student.ckpt", result.student)
    save_teacher(out / "teacher.ckpt", result.teacher)
    for snap in result.snapshots:
        save_snapshot(out / f"teacher_snapshot_{snap.k}.ckpt", snap)
    (out / "model_config.json").write_text(json.dumps(config_dict(s_cfg, t_cfg, tr_cfg), indent=2) + "\n")
    summary = {"tasks": [t.name for t in tasks]}
    if cfg.mode != "unsupervised":
        curve = forgetting_curve(result.log.rows)
        curve.to_csv(out / "forgetting.csv")
        summary["final_accuracy"] = {t.name: result.log.accuracy_after(len(tasks), i + 1)
                                     for i, t in enumerate(tasks)}
    return summary


def cmd_eval(cfg: ExperimentConfig, out: Path) -> dict:
    student = load_student(_student_path(cfg))
    tasks = load_tasks(cfg)
    report = {}
    for i, ds in enumerate(tasks):
        entry = {"nll": nll_eval(student, ds.test_x, np.full(len(ds.test_x), i), cfg["eval.samples_per_datum"],
                                 rng=cfg.seed)}
        if student.config.mode != "unsupervised":
            entry["accuracy"] = accuracy_eval(student, ds.test_x, ds.test_y)
        report[ds.name] = entry
    (out / "eval.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


def cmd_traverse(cfg: ExperimentConfig, out: Path) -> dict:
    student = load_student(_student_path(cfg))
    tasks = load_tasks(cfg)
    x = _test_example(tasks, cfg["traverse.task"], cfg["traverse.index"])
    grid = traversal_grid(student, x, lo=cfg["traverse.lo"], hi=cfg["traverse.hi"], steps=cfg["traverse.steps"],
                          domain=cfg["traverse.task"] - 1)
    path = out / "traverse.pgm"
    write_pnm(path, grid)
    return {"image": str(path), "shape": list(grid.shape)}


def cmd_interpolate(cfg: ExperimentConfig, out: Path) -> dict:
    student = load_student(_student_path(cfg))
    tasks = load_tasks(cfg)
    x_a = _test_example(tasks, cfg["interpolate.task_a"], cfg["interpolate.index_a"])
    x_b = _test_example(tasks, cfg["interpolate.task_b"], cfg["interpolate.index_b"])
    grid = interpolate_pair(student, x_a, x_b, steps=cfg["interpolate.steps"])
    path = out / "interpolate.pgm"
    write_pnm(path, grid)
    return {"image": str(path), "shape": list(grid.shape)}


def cmd_bounds(cfg: ExperimentConfig, out: Path) -> dict:
    suite = run_bound_suite(cfg["bounds.n_theorem1"], cfg["bounds.n_theorem2"], cfg["bounds.n_tasks"], cfg.seed)
    write_report(out / "bounds.json", suite)
    return {"theorem1_violations": suite["theorem1"]["violations"],
            "theorem2_violations": suite["theorem2"]["violations"]}


def cmd_gen_data(cfg: ExperimentConfig, out: Path) -> dict:
    source = cfg["data.source"]
    if source == "manifest":
        raise ConfigError("gen-data materializes synthetic data; set data.source to glyph or gaussian",
                          "data.source")
    if source == "glyph":
        entries = materialize_idx(load_tasks(cfg), out)
    else:
        params = {"task_count": cfg["data.task_count"], "components": cfg["data.components"],
                  "dim": cfg["data.dim"], "separation": cfg["data.separation"], "n": cfg["data.n"],
                  "seed": cfg.seed}
        entries = [{"kind": "gaussian", "name": f"gaussian_{i + 1}", "params": params, "task_index": i}
                   for i in range(cfg["data.task_count"])]
    write_manifest(out / "manifest.json", entries)
    return {"manifest": str(out / "manifest.json"), "tasks": len(entries)}


HANDLERS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "traverse": cmd_traverse,
    "interpolate": cmd_interpolate,
    "bounds": cmd_bounds,
    "gen-data": cmd_gen_data,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ltsnet",
        description="Teacher-Student lifelong learning experiments.",
        epilog="Config keys are overridden with --section.key=value, e.g. --train.epochs=3.",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="INI config file")
    parser.add_argument("--overwrite", action="store_true", help="allow writing into a non-empty output directory")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return parser


def _fail(code: int, message: str) -> int:
    print(f"ltsnet: error: {message}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    bad = [a for a in extra if not (a.startswith("--") and "=" in a)]
    if bad:
        parser.print_usage(sys.stderr)
        return _fail(EXIT_USAGE, f"unrecognized arguments: {' '.join(bad)}")
    try:
        cfg = load_config(args.config, extra)
        if args.command in ("eval", "traverse", "interpolate"):
            _student_path(cfg)
        out = prepare_output(cfg, args.command, args.overwrite)
        print(f"# effective config ({out / 'config.ini'})")
        print(cfg.to_ini(), end="")
        summary = HANDLERS[args.command](cfg, out)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    except OutputExistsError as exc:
        return _fail(EXIT_EXISTS, str(exc))
    except MissingCheckpointError as exc:
        return _fail(EXIT_CHECKPOINT, str(exc))
    except DataError as exc:
        return _fail(EXIT_DATA, str(exc))
    except (CheckpointError, ModeError, ValueError, RuntimeError, OSError) as exc:
        return _fail(EXIT_RUNTIME, f"{type(exc).__name__}: {exc}")
    print(json.dumps(summary, indent=2, sort_keys=True))
    if args.command == "bounds" and (summary["theorem1_violations"] or summary["theorem2_violations"]):
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
