#!/usr/bin/env python
import logging
import sys
from pathlib import Path
from typing import TYPE_CHECKING, Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

from mmdadapt.exceptions import NonFiniteError, TrainingError

if TYPE_CHECKING:  # pragma: no cover
    from mmdadapt.config import RunConfig
    from mmdadapt.training import TrainConfig

USAGE = {
    "synth": "mmdadapt synth --out <dir> [--seed <n>] [--side <n>] [--config <file>]",
    "train": (
        "mmdadapt train --source <manifest> --out <dir> [--target <manifest>] [--objective <name>] [--lam <x>] "
        "[--epochs <n>] [--batch-size <n>] [--lr <x>] [--seed <n>] [--labeled-subjects <k>] [--config <file>]"
    ),
    "eval": "mmdadapt eval --checkpoint <file> --manifest <manifest> --out <dir> [--seed <n>]",
    "cross-test": (
        "mmdadapt cross-test --source <manifest> --target <manifest> --out <dir> [--labeled-subjects <k>] "
        "[--methods <a,b,...>] [--lam <x>] [--epochs <n>] [--batch-size <n>] [--lr <x>] [--seed <n>] [--config <file>]"
    ),
    "project-features": (
        "mmdadapt project-features --checkpoint <file> --manifest <manifest> [--manifest <manifest> ...] "
        "--out <file> [--split <name>] [--components <n>]"
    ),
    "report": "mmdadapt report --out <dir> [--loss-log <file> ...] [--report <file> ...] [--projection <file>]",
}

TRAINING_OPTIONS: Dict[str, Optional[Callable[[str], Any]]] = {
    "--lam": float,
    "--epochs": int,
    "--batch-size": int,
    "--lr": float,
    "--seed": int,
    "--labeled-subjects": int,
    "--config": str,
}


class UsageError(Exception):
    def __init__(self, message: str, usage: Optional[str] = None) -> None:
        super().__init__(message)
        self.message = message
        self.usage = usage


def error_message(message: str, usage: Optional[str] = None) -> str:
    if not usage:
        return f"error:\n  {message}\n"

    return f"error:\n  {message}\n\nusage:\n  {usage}"


def get_error_options(argv: List[str], known: Sequence[str]) -> str:
    return ", ".join(
        [
            v
            for v in (argv if "--" not in argv else argv[: argv.index("--")])
            if v.startswith("-") and not v[1:2].isdigit() and v.split("=", 1)[0] not in known
        ]
    )


def parse_options(
    argv: List[str],
    options: Mapping[str, Optional[Callable[[str], Any]]],
    usage: str,
    required: Sequence[str] = (),
    repeated: Sequence[str] = (),
) -> Dict[str, Any]:
    """Parses ``--name value`` / ``--name=value`` options; options without a converter are flags."""
    error_options = get_error_options(argv, list(options))
    if error_options:
        raise UsageError(f"invalid option(s): {error_options}.", usage)

    values: Dict[str, Any] = {name: [] for name in repeated}
    position = 0
    while position < len(argv):
        item = argv[position]
        name, separator, inline = item.partition("=")
        if name not in options:
            raise UsageError(f'unexpected argument: "{item}".', usage)
        convert = options[name]
        if convert is None:
            values[name] = True
            position += 1
            continue
        if separator:
            raw = inline
            position += 1
        elif position + 1 < len(argv):
            raw = argv[position + 1]
            position += 2
        else:
            raise UsageError(f"missing value for option {name}.", usage)
        try:
            value = convert(raw)
        except ValueError:
            raise UsageError(f'invalid value for option {name}: "{raw}".', usage) from None
        if name in repeated:
            values[name].append(value)
        else:
            values[name] = value

    missing = [name for name in required if not values.get(name)]
    if missing:
        raise UsageError(f"missing required option(s): {', '.join(missing)}.", usage)
    return values


def configure_logging(argv: List[str]) -> List[str]:
    level = logging.WARNING
    if "--debug" in argv:
        level = logging.DEBUG
    elif "--verbose" in argv:
        level = logging.INFO
    logging.basicConfig(stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s", level=level)
    logging.getLogger("mmdadapt").setLevel(level)
    return [v for v in argv if v not in ("--debug", "--verbose")]


def print_help() -> None:
    from mmdadapt import __version__  # isort:skip

    print("usage:")
    for usage in USAGE.values():
        print(f"  {usage}")
    print("")
    print("commands:")
    print("  synth              | render the synthetic source/target benchmark and its manifests")
    print("  train              | train one objective (stdcnn, unsupervised, semisupervised)")
    print("  eval               | score a manifest with a checkpoint, threshold chosen on its devel split")
    print("  cross-test         | source -> target protocol for every method, with a comparison table")
    print("  project-features   | 3-component PCA export of last-pooling features")
    print("  report             | summaries and SVG plots of loss logs, reports and projections")
    print("")
    print("help:")
    print("  mmdadapt --help                  | short: -h   display this message")
    print(f"  mmdadapt --version               | short: -v   installed version ({__version__})")
    print("  mmdadapt <command> --verbose     | log progress to stderr (--debug for more)")


def _train_config(values: Mapping[str, Any], objective: Optional[str] = None) -> Tuple["RunConfig", "TrainConfig"]:
    from mmdadapt.config import load_config  # isort:skip

    config = load_config(values.get("--config"))
    return config, config.train_config(
        lam=values.get("--lam"),
        epochs=values.get("--epochs"),
        batch_size=values.get("--batch-size"),
        learning_rate=values.get("--lr"),
        seed=values.get("--seed"),
        objective=objective,
    )


def command_synth(argv: List[str]) -> int:
    from mmdadapt.config import load_config  # isort:skip
    from mmdadapt.synthetic import generate_synthetic  # isort:skip

    values = parse_options(
        argv, {"--out": str, "--seed": int, "--side": int, "--config": str}, USAGE["synth"], required=("--out",)
    )
    spec = load_config(values.get("--config")).synthetic_spec(seed=values.get("--seed"), side=values.get("--side"))
    benchmark = generate_synthetic(spec, values["--out"])
    print(benchmark.source_manifest)
    print(benchmark.target_manifest)
    return 0


def command_train(argv: List[str]) -> int:
    from mmdadapt.data import load_manifest  # isort:skip
    from mmdadapt.model import save_checkpoint  # isort:skip
    from mmdadapt.pipeline import protocol_views, select_labeled_subjects  # isort:skip
    from mmdadapt.training import train, write_loss_log  # isort:skip

    options = {"--source": str, "--target": str, "--out": str, "--objective": str, **TRAINING_OPTIONS}
    values = parse_options(argv, options, USAGE["train"], required=("--source", "--out"))
    config, train_config = _train_config(values, values.get("--objective"))
    if train_config.objective != "stdcnn" and not values.get("--target"):
        raise UsageError(f"the '{train_config.objective}' objective needs --target.", USAGE["train"])

    architecture = config.architecture()
    source = load_manifest(values["--source"], side=architecture.input_side)
    source_train = protocol_views(source, train_config.seed).train
    target_train = None
    if train_config.objective != "stdcnn":
        target = load_manifest(values["--target"], side=architecture.input_side, modalities=source.modalities)
        target_train = protocol_views(target, train_config.seed).train
        if train_config.objective == "semisupervised":
            target_train = select_labeled_subjects(target_train, values.get("--labeled-subjects", 1), train_config.seed)

    out_dir = Path(values["--out"])
    result = train(source_train, target_train, train_config, architecture)
    out_dir.mkdir(parents=True, exist_ok=True)

    print(save_checkpoint(result.params, out_dir / "checkpoint.ckpt"))
    print(write_loss_log(result.rows, out_dir / "loss.tsv"))
    return 0


def command_eval(argv: List[str]) -> int:
    from mmdadapt.data import load_manifest  # isort:skip
    from mmdadapt.metrics import write_scores  # isort:skip
    from mmdadapt.model import load_checkpoint  # isort:skip
    from mmdadapt.pipeline import evaluate_model, protocol_views  # isort:skip

    options = {"--checkpoint": str, "--manifest": str, "--out": str, "--seed": int}
    values = parse_options(argv, options, USAGE["eval"], required=("--checkpoint", "--manifest", "--out"))
    params = load_checkpoint(values["--checkpoint"])
    dataset = load_manifest(values["--manifest"], side=params.config.input_side)
    views = protocol_views(dataset, values.get("--seed", 0))
    report = evaluate_model(params, views.devel, views.test)

    out_dir = Path(values["--out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    print(write_scores(report.videos, out_dir / "scores.tsv"))
    report_path = out_dir / "report.json"
    report_path.write_text(report.to_json(), encoding="utf-8")
    print(report_path)
    return 0


def command_cross_test(argv: List[str]) -> int:
    from mmdadapt.data import load_manifest  # isort:skip
    from mmdadapt.pipeline import cross_test  # isort:skip

    options = {"--source": str, "--target": str, "--out": str, "--methods": str, **TRAINING_OPTIONS}
    values = parse_options(argv, options, USAGE["cross-test"], required=("--source", "--target", "--out"))
    config, train_config = _train_config(values)
    methods = tuple(item.strip() for item in values.get("--methods", "stdcnn,unsupervised,semisupervised").split(","))

    architecture = config.architecture()
    source = load_manifest(values["--source"], side=architecture.input_side)
    target = load_manifest(values["--target"], side=architecture.input_side, modalities=source.modalities)
    result = cross_test(
        source,
        target,
        train_config,
        labeled_subjects=values.get("--labeled-subjects", 1),
        methods=methods,
        architecture=architecture,
        out_dir=values["--out"],
    )
    print(Path(values["--out"]) / "comparison.tsv")
    for method, outcome in result.methods.items():
        print(f"{method}\tinter HTER {outcome.inter.hter:.4f}\tintra HTER {outcome.intra.hter:.4f}")
    return 0


def command_project_features(argv: List[str]) -> int:
    from mmdadapt.data import load_manifest  # isort:skip
    from mmdadapt.metrics import write_projection  # isort:skip
    from mmdadapt.model import load_checkpoint  # isort:skip
    from mmdadapt.pipeline import project_datasets  # isort:skip

    options = {"--checkpoint": str, "--manifest": str, "--out": str, "--split": str, "--components": int}
    values = parse_options(
        argv,
        options,
        USAGE["project-features"],
        required=("--checkpoint", "--manifest", "--out"),
        repeated=("--manifest",),
    )
    params = load_checkpoint(values["--checkpoint"])
    datasets = []
    for manifest in values["--manifest"]:
        dataset = load_manifest(manifest, side=params.config.input_side)
        datasets.append(dataset.select(split=values["--split"]) if values.get("--split") else dataset)
    projection = project_datasets(params, datasets, values.get("--components", 3))
    records = [record for dataset in datasets for record in dataset.records]
    print(
        write_projection(
            projection,
            [record.domain for record in records],
            [record.label for record in records],
            [record.modality for record in records],
            values["--out"],
        )
    )
    return 0


def command_report(argv: List[str]) -> int:
    from mmdadapt.metrics import EvalReport, read_projection  # isort:skip
    from mmdadapt.report import plot_far_frr, plot_loss_curve, plot_projection, write_summary  # isort:skip
    from mmdadapt.training import read_loss_log  # isort:skip

    options = {"--out": str, "--loss-log": str, "--report": str, "--projection": str}
    values = parse_options(argv, options, USAGE["report"], required=("--out",), repeated=("--loss-log", "--report"))
    if not values["--loss-log"] and not values["--report"] and not values.get("--projection"):
        raise UsageError("nothing to report - specify --loss-log, --report or --projection.", USAGE["report"])

    loss_logs = [(Path(path), read_loss_log(path)) for path in values["--loss-log"]]
    reports = {Path(path).stem: EvalReport.read(path) for path in values["--report"]}
    projection = read_projection(values["--projection"]) if values.get("--projection") else None

    out_dir = Path(values["--out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs: List[Path] = []
    for path, rows in loss_logs:
        outputs.append(plot_loss_curve(rows, out_dir / f"{path.stem}.svg", title=path.stem))
    if reports:
        outputs.append(write_summary(reports, out_dir / "summary.tsv"))
        for name, report in reports.items():
            outputs.append(plot_far_frr(report, out_dir / f"{name}-far-frr.svg", title=name))
    if projection is not None:
        metadata, coordinates, _ = projection
        outputs.append(plot_projection(metadata, coordinates, out_dir / "projection.svg"))
    for output in outputs:
        print(output)
    return 0


COMMANDS: Dict[str, Callable[[List[str]], int]] = {
    "synth": command_synth,
    "train": command_train,
    "eval": command_eval,
    "cross-test": command_cross_test,
    "project-features": command_project_features,
    "report": command_report,
}


def _exit_code(exc: BaseException) -> Tuple[int, str]:
    if isinstance(exc, (TrainingError, NonFiniteError)):
        return 3, str(exc)
    if isinstance(exc, ValueError):
        return 2, str(exc)
    return 3, f"{exc.__class__.__name__}: {exc}"


def cli_entrypoint(argv: Optional[List[str]] = None) -> int:
    if argv is None:  # pragma: no cover
        argv = sys.argv[1:]
    argv = list(argv)
    if argv and argv[0] in ("-v", "--version", "version"):
        # mmdadapt --version
        from mmdadapt import __version__  # isort:skip

        print(__version__)
        return 0
    if not argv or argv[0] in ("-h", "--help", "help") or "-h" in argv or "--help" in argv:
        # mmdadapt --help
        print_help()
        return 0

    command, argv = argv[0], configure_logging(argv[1:])
    if command not in COMMANDS:
        print(error_message(f'unknown command: "{command}".', " | ".join(COMMANDS)), file=sys.stderr)
        return 1

    try:
        return COMMANDS[command](argv)
    except UsageError as exc:
        print(error_message(exc.message, exc.usage), file=sys.stderr)
        return 1
    except (ValueError, RuntimeError, FloatingPointError, OSError) as exc:
        code, message = _exit_code(exc)
        logging.getLogger("mmdadapt").debug("command %s failed", command, exc_info=True)
        print(error_message(message), file=sys.stderr)
        return code
