import pytest

from etreelearn.cli import EXIT_INVALID, EXIT_OK, EXIT_RUNTIME, main


@pytest.fixture
def workdir(tiny_experiment, monkeypatch):
    monkeypatch.chdir(tiny_experiment.parent)
    return tiny_experiment.parent


def test_run_with_report(workdir, tiny_experiment, capsys):
    assert main(["run", str(tiny_experiment), "--report"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "etree" in out and "figure:" in out
    assert (workdir / "out" / "summary.csv").is_file()
    assert (workdir / "out" / "convergence_noniid-k2.png").stat().st_size > 0


def test_cluster_eval(workdir, tiny_experiment, capsys):
    assert main(["cluster-eval", str(tiny_experiment)]) == EXIT_OK
    assert "kma005" in capsys.readouterr().out
    assert not list((workdir / "out").glob("*.png"))


def test_bad_config_exits_one(workdir, tiny_experiment, capsys):
    tiny_experiment.write_text(tiny_experiment.read_text().replace("frequencies: [2]", "frequencies: [0]"))
    assert main(["run", str(tiny_experiment)]) == EXIT_INVALID
    assert "tree.frequencies[0]" in capsys.readouterr().err
    assert not (workdir / "out").exists()


def test_missing_config_exits_one(tmp_path):
    assert main(["run", str(tmp_path / "nope.yaml")]) == EXIT_INVALID


@pytest.mark.parametrize("argv", [[], ["fly"], ["run"], ["replicate-table3", "--seeds", "a,b"]])
def test_bad_arguments_exit_one(argv):
    assert main(argv) == EXIT_INVALID


def test_help_exits_zero():
    assert main(["--help"]) == EXIT_OK


def test_runtime_failure_exits_two(workdir, tiny_experiment, capsys):
    (workdir / "data" / "train.csv").write_text("1,2,3\n")
    assert main(["run", str(tiny_experiment)]) == EXIT_RUNTIME
    assert capsys.readouterr().err.startswith("error:")


def test_table3_needs_har_files(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv("ETREE_DATA_DIR", raising=False)
    assert main(["replicate-table3"]) == EXIT_INVALID
    assert main(["replicate-table3", "--data-dir", str(tmp_path)]) == EXIT_INVALID
    assert "prepare-har" in capsys.readouterr().err


def test_prepare_har_checks_layout(tmp_path):
    assert main(["prepare-har", str(tmp_path), str(tmp_path / "o")]) == EXIT_INVALID
