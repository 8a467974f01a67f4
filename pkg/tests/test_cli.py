import json
import os
import shutil
import subprocess
import sys

import pytest

from pgds.cli import main
from pgds.io import load_chain, load_counts, load_mask, load_predictions

FAST = ["--K", "3", "--iterations", "12", "--burn-in", "6", "--thin", "3"]


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def workdir(tmp_path):
    return tmp_path


def test_full_pipeline(workdir, capsys):
    d = workdir
    assert run("simulate", "--V", 8, "--T", 14, "--K", 3, "--gamma0", 3, "--eps0", 1, "--seed", 4,
               "--out", d / "y.txt", "--truth", d / "truth.npz") == 0
    Y = load_counts(str(d / "y.txt")).Y
    assert (Y.V, Y.T) == (8, 14)
    assert len(load_chain(str(d / "truth.npz"))) == 1

    assert run("masks", "--data", d / "y.txt", "--protocol", "short", "--count", 2, "--prefix", d / "m") == 0
    mask = load_mask(str(d / "m.1.mask"), 14)
    assert mask.forecast == (14,)

    assert run("fit", "--data", d / "y.txt", "--mask", d / "m.1.mask", "--out", d / "c.npz", *FAST,
               "--progress", d / "prog.jsonl", "--progress-every", 6) == 0
    chain = load_chain(str(d / "c.npz"))
    assert len(chain) == 2 and chain.states[0].T == 13
    prog = [json.loads(ln) for ln in open(d / "prog.jsonl")]
    assert [p["iteration"] for p in prog] == [6, 12]

    assert run("predict", "--chain", d / "c.npz", "--data", d / "y.txt", "--mask", d / "m.1.mask",
               "--out", d / "pred.txt") == 0
    rows = load_predictions(str(d / "pred.txt"))
    assert len(rows) == 8 * (len(mask.smoothing) + 1)

    capsys.readouterr()
    assert run("eval", "--predictions", f"PGDS={d / 'pred.txt'}", "--data", d / "y.txt", "--mask", d / "m.1.mask",
               "--out", d / "table.tsv") == 0
    table = capsys.readouterr().out
    assert table.splitlines()[0] == "task\tmetric\tPGDS\tfeature_mean\tlast_value"
    assert "# burstiness" in table
    assert open(d / "table.tsv").read() == table

    assert run("report", "--chain", d / "c.npz", "--data", d / "y.txt", "--outdir", d / "rep") == 0
    assert sorted(os.listdir(d / "rep")) == ["features.tsv", "theta.tsv", "transitions.tsv", "weights.tsv"]


def test_simulate_then_fit_is_reproducible(workdir):
    d = workdir
    for tag in ("a", "b"):
        run("simulate", "--V", 5, "--T", 8, "--K", 3, "--gamma0", 3, "--eps0", 1, "--seed", 4, "--out", d / f"{tag}.txt")
        run("fit", "--data", d / f"{tag}.txt", "--out", d / f"{tag}.npz", *FAST, "--seed", 4)
    assert open(d / "a.txt").read() == open(d / "b.txt").read()
    assert load_chain(str(d / "a.npz")) == load_chain(str(d / "b.npz"))


def test_config_file_with_flag_override(workdir):
    d = workdir
    run("simulate", "--V", 4, "--T", 6, "--K", 2, "--gamma0", 2, "--eps0", 1, "--out", d / "y.txt")
    (d / "run.cfg").write_text(f"K = 2\niterations = 10\nburn_in = 5\nthin = 5\ndata = {d / 'y.txt'}\n"
                               f"output = {d / 'c.npz'}\n")
    assert run("fit", "--config", d / "run.cfg", "--K", 4) == 0
    chain = load_chain(str(d / "c.npz"))
    assert chain.hyper.K == 4 and len(chain) == 1


def test_multiple_chains_get_separate_files(workdir):
    d = workdir
    run("simulate", "--V", 4, "--T", 6, "--K", 2, "--gamma0", 2, "--eps0", 1, "--out", d / "y.txt")
    assert run("fit", "--data", d / "y.txt", "--out", d / "c.npz", "--chains", 2, *FAST) == 0
    a, b = load_chain(str(d / "c.1.npz")), load_chain(str(d / "c.2.npz"))
    assert a != b


@pytest.mark.parametrize("argv,needle", [
    (["fit", "--data", "/nonexistent/y.txt", "--out", "x.npz"], "No such file"),
    (["fit", "--out", "x.npz"], "--data"),
    (["simulate", "--V", "3", "--T", "3", "--tau0", "-1", "--out", "y.txt"], "tau0"),
    (["fit", "--non-stationary", "--steady-state", "--data", "y", "--out", "x"], "steady_state"),
    (["masks", "--prefix", "m"], "--T"),
    (["eval"], "nothing to evaluate"),
])
def test_errors_are_one_line_and_exit_1(workdir, capsys, monkeypatch, argv, needle):
    monkeypatch.chdir(workdir)
    assert main(argv) == 1
    err = capsys.readouterr().err
    assert err.startswith("error: ") and err.count("\n") == 1
    assert needle in err


def test_corrupt_chain_reports_error(workdir, capsys):
    (workdir / "bad.npz").write_bytes(b"not a zip")
    assert run("report", "--chain", workdir / "bad.npz", "--outdir", workdir / "r") == 1
    assert "unreadable chain file" in capsys.readouterr().err


def test_console_script_entry_point(workdir):
    exe = shutil.which("pgds")
    cmd = [exe] if exe else [sys.executable, "-m", "pgds.cli"]
    out = subprocess.run(cmd + ["masks", "--T", "30", "--prefix", str(workdir / "m"), "--count", "1"],
                         capture_output=True, text=True)
    assert out.returncode == 0 and "smooth=" in out.stdout
    bad = subprocess.run(cmd + ["masks", "--T", "3", "--prefix", str(workdir / "m")], capture_output=True, text=True)
    assert bad.returncode == 1 and bad.stderr.startswith("error: ")


def test_eval_on_all_zero_data_omits_burstiness(workdir, capsys):
    d = workdir
    (d / "y.txt").write_text("3 10\n")
    (d / "p.txt").write_text("1 9 0 0.5 F\n")
    assert run("eval", "--predictions", d / "p.txt", "--data", d / "y.txt") == 0
    out = capsys.readouterr()
    assert "burstiness omitted" in out.err and "# burstiness" not in out.out
