from pathlib import Path
from typing import Any

import pytest

from mmdadapt import __version__ as mmdadapt_version
from mmdadapt.interface import USAGE, UsageError, cli_entrypoint, error_message, get_error_options, parse_options
from mmdadapt.metrics import EvalReport, read_projection
from mmdadapt.model import ArchitectureConfig, build_model, load_checkpoint, save_checkpoint

CONFIG = """
synth.subjects_train = 2
synth.subjects_test = 2
synth.subjects_devel = 1
synth.frames_per_video = 2
train.batches_per_epoch = 1
train.bandwidths = 2, 5
model.input_side = 8
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory: pytest.TempPathFactory) -> Path:
    root = tmp_path_factory.mktemp("cli")
    (root / "run.cfg").write_text(CONFIG)
    argv = ["synth", "--out", str(root / "bench"), "--side", "8", "--config", str(root / "run.cfg")]
    assert cli_entrypoint(argv) == 0
    return root


def test_cli_version_option(capsys: Any) -> None:
    exit_code = cli_entrypoint(["--version"])
    out, err = capsys.readouterr()
    assert err == ""
    assert exit_code == 0
    assert out == f"{mmdadapt_version}\n"


def test_cli_help_option(capsys: Any) -> None:
    exit_code = cli_entrypoint(["--help"])
    out, err = capsys.readouterr()
    assert err == ""
    assert exit_code == 0
    assert "cross-test" in out
    assert mmdadapt_version in out


def test_cli_no_arguments(capsys: Any) -> None:
    exit_code = cli_entrypoint([])
    out, err = capsys.readouterr()
    assert err == ""
    assert exit_code == 0
    assert out.startswith("usage:\n")


def test_cli_command_help(capsys: Any) -> None:
    exit_code = cli_entrypoint(["train", "-h"])
    out, _ = capsys.readouterr()
    assert exit_code == 0
    assert USAGE["train"] in out


def test_cli_unknown_command(capsys: Any) -> None:
    exit_code = cli_entrypoint(["fit"])
    out, err = capsys.readouterr()
    assert exit_code == 1
    assert out == ""
    assert err.startswith("error:\n")
    assert 'unknown command: "fit".' in err


def test_cli_invalid_option(capsys: Any) -> None:
    exit_code = cli_entrypoint(["synth", "--out", "x", "--bogus"])
    out, err = capsys.readouterr()
    assert exit_code == 1
    assert out == ""
    assert "invalid option(s): --bogus." in err
    assert USAGE["synth"] in err


@pytest.mark.parametrize(
    "argv,message",
    [
        (["synth"], "missing required option(s): --out."),
        (["synth", "--out"], "missing value for option --out."),
        (["synth", "--out", "x", "--seed", "abc"], 'invalid value for option --seed: "abc".'),
        (["synth", "--out", "x", "extra"], 'unexpected argument: "extra".'),
        (["train", "--source", "s.tsv", "--out", "x"], "needs --target."),
        (["report", "--out", "x"], "nothing to report"),
    ],
)
def test_cli_usage_errors(capsys: Any, argv: list, message: str) -> None:
    exit_code = cli_entrypoint(argv)
    _, err = capsys.readouterr()
    assert exit_code == 1
    assert message in err


def test_parse_options() -> None:
    options = {"--out": str, "--seed": int, "--flag": None, "--manifest": str}
    values = parse_options(
        ["--out=dir", "--seed", "-3", "--flag", "--manifest", "a", "--manifest", "b"],
        options,
        "usage",
        required=("--out",),
        repeated=("--manifest",),
    )
    assert values == {"--out": "dir", "--seed": -3, "--flag": True, "--manifest": ["a", "b"]}
    assert get_error_options(["--out", "x", "--nope", "-1", "--", "--after"], ["--out"]) == "--nope"
    with pytest.raises(UsageError) as info:
        parse_options(["--seed", "1"], options, "usage", required=("--out",))
    assert info.value.usage == "usage"


def test_error_message() -> None:
    assert error_message("boom") == "error:\n  boom\n"
    assert error_message("boom", "mmdadapt synth") == "error:\n  boom\n\nusage:\n  mmdadapt synth"


def test_cli_eval_empty_manifest(tmp_path: Path, capsys: Any) -> None:
    checkpoint = save_checkpoint(build_model(ArchitectureConfig.desk(8)), tmp_path / "model.ckpt")
    manifest = tmp_path / "empty.tsv"
    manifest.write_text("path\tdomain\tlabel\tmodality\tsubject\tsplit\tvideo\tframe\n")
    exit_code = cli_entrypoint(
        ["eval", "--checkpoint", str(checkpoint), "--manifest", str(manifest), "--out", str(tmp_path / "eval")]
    )
    out, err = capsys.readouterr()
    assert exit_code == 2
    assert out == ""
    assert "contains no samples" in err
    assert not (tmp_path / "eval" / "report.json").exists()


def test_cli_missing_checkpoint(tmp_path: Path, capsys: Any) -> None:
    exit_code = cli_entrypoint(
        ["eval", "--checkpoint", str(tmp_path / "none.ckpt"), "--manifest", "m.tsv", "--out", str(tmp_path)]
    )
    _, err = capsys.readouterr()
    assert exit_code == 2
    assert "cannot read checkpoint" in err


def test_cli_invalid_config(tmp_path: Path, capsys: Any) -> None:
    config = tmp_path / "bad.cfg"
    config.write_text("train.lam = lots\n")
    exit_code = cli_entrypoint(["synth", "--out", str(tmp_path / "bench"), "--config", str(config)])
    _, err = capsys.readouterr()
    assert exit_code == 2
    assert "bad.cfg:1:" in err


def test_cli_synth(workspace: Path) -> None:
    bench = workspace / "bench"
    assert (bench / "source.tsv").exists()
    assert (bench / "target.tsv").exists()
    assert any((bench / "images" / "target" / "devel").iterdir())


def test_cli_train(workspace: Path, capsys: Any) -> None:
    bench, out_dir = workspace / "bench", workspace / "train"
    argv = ["train", "--source", str(bench / "source.tsv"), "--target", str(bench / "target.tsv")]
    argv += ["--objective", "unsupervised", "--out", str(out_dir), "--epochs", "1", "--batch-size", "6"]
    exit_code = cli_entrypoint([*argv, "--config", str(workspace / "run.cfg")])
    out, _ = capsys.readouterr()
    assert exit_code == 0
    assert out.splitlines() == [str(out_dir / "checkpoint.ckpt"), str(out_dir / "loss.tsv")]
    assert load_checkpoint(out_dir / "checkpoint.ckpt").config.input_side == 8
    assert (out_dir / "loss.tsv").read_text().splitlines()[0].endswith("\tmmd\ttotal")


def test_cli_cross_test_eval_project_and_report(workspace: Path, capsys: Any) -> None:
    bench, out_dir = workspace / "bench", workspace / "cross"
    exit_code = cli_entrypoint(
        [
            "cross-test",
            "--source",
            str(bench / "source.tsv"),
            "--target",
            str(bench / "target.tsv"),
            "--out",
            str(out_dir),
            "--epochs",
            "1",
            "--batch-size",
            "6",
            "--labeled-subjects",
            "1",
            "--config",
            str(workspace / "run.cfg"),
        ]
    )
    out, _ = capsys.readouterr()
    assert exit_code == 0
    assert out.splitlines()[0] == str(out_dir / "comparison.tsv")
    for method in ("stdcnn", "unsupervised", "semisupervised"):
        for suffix in (".ckpt", "-loss.tsv", "-scores.tsv", "-inter-report.json", "-intra-report.json"):
            assert (out_dir / f"{method}{suffix}").exists()

    eval_dir = workspace / "eval"
    argv = ["eval", "--checkpoint", str(out_dir / "semisupervised.ckpt"), "--manifest", str(bench / "target.tsv")]
    assert cli_entrypoint([*argv, "--out", str(eval_dir)]) == 0
    report = EvalReport.read(eval_dir / "report.json")
    assert report.hter == (report.far + report.frr) / 2.0
    assert (eval_dir / "scores.tsv").exists()

    projection = workspace / "projection.tsv"
    argv = ["project-features", "--checkpoint", str(out_dir / "semisupervised.ckpt")]
    argv += ["--manifest", str(bench / "source.tsv"), "--manifest", str(bench / "target.tsv")]
    assert cli_entrypoint([*argv, "--split", "train", "--out", str(projection)]) == 0
    metadata, coordinates, variances = read_projection(projection)
    assert coordinates.shape == (len(metadata), 3)
    assert {row["domain"] for row in metadata} == {"source", "target"}
    assert len(variances) == 3

    report_dir = workspace / "report"
    argv = ["report", "--out", str(report_dir), "--loss-log", str(out_dir / "semisupervised-loss.tsv")]
    argv += ["--report", str(eval_dir / "report.json"), "--projection", str(projection)]
    capsys.readouterr()
    assert cli_entrypoint(argv) == 0
    out, _ = capsys.readouterr()
    expected = ["semisupervised-loss.svg", "summary.tsv", "report-far-frr.svg", "projection.svg"]
    assert [Path(line).name for line in out.splitlines()] == expected
    assert (report_dir / "projection.svg").read_text().lstrip().startswith("<?xml")
    assert (report_dir / "summary.tsv").read_text().splitlines()[1].startswith("report\t")
