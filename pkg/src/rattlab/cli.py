"""Command-line front end: ``generate``, ``split``, ``train`` and ``report``.

Experiment definitions live in JSON files validated against the schemas
in ``rattlab/schema``; flags are only for paths and verbosity. Progress
goes to stderr, results go to files (and tables to stdout).

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from importlib import resources
from pathlib import Path

import jsonschema

from . import ratt
from .errors import ConfigError, DefinitionError, DomainError, RattError
from .ewc import EwcConfig
from .harness import RattConfig, TrainConfig, build_tasks, run_sequence
from .lwf import LwfConfig
from .metrics import RunReport, export_report
from .splitter import (
    SPLITTERS,
    SyntheticSpec,
    TaskDef,
    format_stats,
    generate_synthetic,
    load_dataset,
    load_manifest,
    partition,
    save_dataset,
    save_manifest,
    vocab_stats,
)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("rattlab")


def load_schema(name: str) -> dict:
    return json.loads(resources.files("rattlab").joinpath("schema", f"{name}.schema.json").read_text())


def read_config(path, schema: str) -> dict:
    """Load a JSON document and validate it; any problem is a ``ConfigError``."""
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    try:
        jsonschema.validate(doc, load_schema(schema))
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{path}: {where}: {exc.message}") from None
    return doc


def _resolve(base: Path, p: str) -> Path:
    q = Path(p)
    return q if q.is_absolute() else base / q


# -- generate ---------------------------------------------------------------


def cmd_generate(args) -> int:
    doc = read_config(args.spec, "synthetic")
    seed = doc.pop("seed", 0)
    if "caption_len" in doc:
        doc["caption_len"] = tuple(doc["caption_len"])
    try:
        spec = SyntheticSpec(**doc)
    except DefinitionError as exc:
        raise ConfigError(f"{args.spec}: {exc}") from None
    images, cats = generate_synthetic(spec, seed)
    save_dataset(images, args.out, cats)
    log.info("wrote %d images in %d categories to %s", len(images), len(cats), args.out)
    return EXIT_OK


# -- split ------------------------------------------------------------------


def _task_defs(doc: dict, categories: list[str], source) -> list[TaskDef]:
    out = []
    for k, t in enumerate(doc["tasks"]):
        cats = set()
        for c in t["categories"]:
            if isinstance(c, str):
                if c not in categories:
                    raise ConfigError(f"{source}: task {t['name']!r} names unknown category {c!r}")
                cats.add(categories.index(c))
            else:
                if c >= len(categories):
                    raise ConfigError(f"{source}: task {t['name']!r} uses category index {c} out of range")
                cats.add(c)
        out.append(TaskDef(k, t["name"], frozenset(cats)))
    return out


def cmd_split(args) -> int:
    doc = read_config(args.tasks, "tasks")
    images, cats = load_dataset(args.dataset)
    tasks = _task_defs(doc, cats, args.tasks)
    split = SPLITTERS[args.procedure](images, tasks)
    split = partition(
        split,
        tuple(doc.get("fractions", (0.7, 0.15, 0.15))),
        seed=doc.get("seed", 0),
        max_examples=doc.get("max_examples"),
    )
    stats = vocab_stats(split, images)
    save_manifest(split, args.out, stats)
    print(format_stats(stats))
    log.info("wrote %s split of %d tasks to %s", args.procedure, len(tasks), args.out)
    return EXIT_OK


# -- train ------------------------------------------------------------------


def train_config(doc: dict) -> TrainConfig:
    try:
        return TrainConfig(
            method=doc["method"],
            seed=doc.get("seed", 0),
            ewc=EwcConfig(**doc.get("ewc", {})),
            lwf=LwfConfig(**doc.get("lwf", {})),
            ratt=RattConfig(**doc.get("ratt", {})),
            **doc.get("train", {}),
        )
    except (ValueError, DomainError) as exc:
        raise ConfigError(str(exc)) from None


def cmd_train(args) -> int:
    cfg_path = Path(args.config)
    doc = read_config(cfg_path, "run")
    cfg = train_config(doc)
    base = cfg_path.parent
    out = Path(args.out) if args.out else _resolve(base, doc.get("output", "run"))
    dataset = _resolve(base, doc["dataset"])
    split_path = _resolve(base, doc["split"])
    for p in (dataset, split_path):
        if not p.is_file():
            raise ConfigError(f"{cfg_path}: input file {p} does not exist")
    images, _ = load_dataset(dataset)
    split = load_manifest(split_path)
    if not split.partitions:
        raise ConfigError(f"{split_path}: split manifest has no train/valid/test partition")
    tasks = build_tasks(images, split)

    out.mkdir(parents=True, exist_ok=True)
    # the run directory carries everything needed to re-evaluate it
    run_doc = dict(doc, dataset=str(dataset.resolve()), split="split.json", output=".")
    (out / "config.json").write_text(json.dumps(run_doc, indent=2, sort_keys=True) + "\n")
    shutil.copyfile(split_path, out / "split.json")

    log.info("training %s on %d tasks -> %s", cfg.method, len(tasks), out)
    run = run_sequence(tasks, cfg, run_dir=out)
    csv_path, json_path = export_report(run.report, out / "report")
    if cfg.method == "RATT":
        ratt.export_mask_usage(run.state.masks, out / "mask_usage.csv")
    log.info("report written to %s and %s", csv_path, json_path)
    return EXIT_OK


# -- report -----------------------------------------------------------------


def format_report(report: RunReport) -> str:
    names = report.tasks
    w = max(12, *(len(n) + 2 for n in names))
    lines = [f"method: {report.method}", "after".ljust(w) + "".join(n.rjust(w) for n in names)]
    for i, row in enumerate(report.matrix):
        cells = "".join(("-" if v is None else f"{v:.4f}").rjust(w) for v in row)
        lines.append(names[i].ljust(w) + cells)
    fg = "".join(("N/A" if v is None else f"{v:.2f}%").rjust(w) for v in report.forgetting())
    lines.append("forgetting".ljust(w) + fg)
    return "\n".join(lines)


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    path = run_dir / "report.json"
    try:
        doc = json.loads(path.read_text())
    except OSError:
        raise ConfigError(f"{run_dir} has no report.json; is it a finished run directory?") from None
    report = RunReport.from_json(doc)
    csv_path, json_path = export_report(report, run_dir / "report")
    print(format_report(report))
    print(f"heatmap: {csv_path}")
    print(f"report: {json_path}")
    return EXIT_OK


# -- entry point ------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rattlab", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0, help="more progress output on stderr")
    p.add_argument("-q", "--quiet", action="store_true", help="only errors on stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic captioning dataset")
    g.add_argument("spec", help="synthetic spec JSON")
    g.add_argument("out", help="dataset JSON to write")
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("split", help="split a dataset into tasks and print vocabulary stats")
    s.add_argument("dataset")
    s.add_argument("tasks", help="task definitions JSON")
    s.add_argument("out", help="split manifest JSON to write")
    s.add_argument("--procedure", choices=sorted(SPLITTERS), default="disjoint")
    s.set_defaults(func=cmd_split)

    t = sub.add_parser("train", help="run a task sequence and write a run directory")
    t.add_argument("config", help="run config JSON")
    t.add_argument("--out", help="run directory (overrides the config's output)")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("report", help="print a run's BLEU-4 matrix and forgetting")
    r.add_argument("run_dir")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.ERROR if args.quiet else (logging.DEBUG if args.verbose > 1 else logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"rattlab: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DefinitionError as exc:
        print(f"rattlab: definition error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RattError, OSError, ValueError) as exc:
        print(f"rattlab: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
