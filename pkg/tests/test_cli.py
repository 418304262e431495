import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from ymlattice.cli import main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _run(argv, capsys):
    rc = main([str(a) for a in argv])
    out = capsys.readouterr()
    return rc, out.out, out.err


def _sample(tmp_path, name, *extra):
    return ["run", CONFIGS / "sample.yaml", "--output", tmp_path / name, "--set", "sampler.sweeps=600",
            "--set", "sampler.burn_in=100", "--set", "sampler.checkpoint_every=0", *extra]


def test_validate_passes(capsys, tmp_path):
    rc, out, _ = _run(["validate", "--seed", "0", "--report", tmp_path / "r.json"], capsys)
    assert rc == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["passed"] and rep["seed"] == 0 and len(rep["config_hash"]) == 64
    assert out.count("PASS ") == len(rep["checks"])


def test_validate_fault_is_named(capsys):
    rc, out, _ = _run(["validate", "--inject-fault", "skip-reunitarization"], capsys)
    assert rc == 1
    failed = [l.split()[1].rstrip(":") for l in out.splitlines() if l.startswith("FAIL ")]
    assert failed == ["algebra.unitarity_after_reunitarization"]


def test_run_is_deterministic(capsys, tmp_path):
    for name in ("a", "b"):
        assert _run(_sample(tmp_path, name), capsys)[0] == 0
    _run(_sample(tmp_path, "c", "--seed", "1"), capsys)
    a, b, c = ((tmp_path / n / "series.csv").read_bytes() for n in "abc")
    assert a == b and a != c
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["seed"] == 0 and man["outputs"]["series.csv"]


def test_split_and_resume_is_identical(capsys, tmp_path):
    _run(_sample(tmp_path, "full"), capsys)
    rc, out, _ = _run(_sample(tmp_path, "split", "--max-sweeps", "250"), capsys)
    assert rc == 0 and json.loads(out)["status"] == "paused"
    ck = tmp_path / "split" / "checkpoint.ymck"
    rc, out, _ = _run(["resume", ck, "--max-sweeps", "200"], capsys)
    assert json.loads(out)["status"] == "paused"
    rc, out, _ = _run(["resume", ck], capsys)
    assert rc == 0 and json.loads(out)["status"] == "complete" and not ck.exists()
    assert (tmp_path / "full" / "series.csv").read_bytes() == (tmp_path / "split" / "series.csv").read_bytes()


def test_resume_refuses_changed_config(capsys, tmp_path):
    _run(_sample(tmp_path, "s", "--max-sweeps", "100"), capsys)
    ck = tmp_path / "s" / "checkpoint.ymck"
    rc, _, err = _run(["resume", ck, "--set", "model.beta=0.3"], capsys)
    assert rc == 2 and "model.beta: 0.1 -> 0.3" in err
    data = bytearray(ck.read_bytes())
    data[-1] ^= 1
    ck.write_bytes(bytes(data))
    rc, _, err = _run(["resume", ck], capsys)
    assert rc == 1 and "corrupted" in err


def test_config_errors_exit_two(capsys, tmp_path):
    rc, _, err = _run(["run", CONFIGS / "sample.yaml", "--set", "sampler.bogus=1"], capsys)
    assert rc == 2 and "sampler.bogus" in err
    rc, _, err = _run(["run", CONFIGS / "sample.yaml", "--set", "experiment.name=nothing"], capsys)
    assert rc == 2 and "experiment.name" in err
    rc, _, err = _run(["run", CONFIGS / "volume.yaml", "--output", tmp_path / "v", "--max-sweeps", "5"], capsys)
    assert rc == 2


def test_threads_merge_chains(capsys, tmp_path):
    assert _run(_sample(tmp_path, "t", "--threads", "2"), capsys)[0] == 0
    with open(tmp_path / "t" / "series.csv") as fh:
        chains = {row["chain"] for row in csv.DictReader(fh)}
    assert chains == {"0", "1"}


def test_output_root_env(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv("YMLATTICE_OUTPUT_ROOT", str(tmp_path))
    rc, out, _ = _run(["run", CONFIGS / "sample.yaml", "--output", "rel", "--set", "sampler.sweeps=100",
                       "--set", "sampler.checkpoint_every=0"], capsys)
    assert rc == 0 and (tmp_path / "rel" / "series.csv").exists()


def test_massgap_smoke(capsys, tmp_path):
    rc, _, _ = _run(["run", CONFIGS / "massgap.yaml", "--output", tmp_path / "m", "--set", "geometry.L=3",
                     "--set", "sampler.sweeps=2048", "--set", "sampler.burn_in=100", "--threads", "2"], capsys)
    assert rc == 0
    fit = json.loads((tmp_path / "m" / "decay_fit.json").read_text())
    assert fit["status"] in ("fit", "below noise floor", "insufficient points")
    assert (tmp_path / "m" / "massgap.csv").read_text().startswith("schema_version,distance")


@pytest.mark.parametrize("cfg,sets,files", [
    ("volume.yaml", ["experiment.params.L_values=[1, 2, 3]"], ["volume.csv", "volume.json"]),
    ("largen.yaml", ["experiment.params.N_values=[2, 3, 4]", "geometry.L=1"], ["largen.csv", "largen.json"]),
    ("factorization.yaml", ["geometry.L=1"], ["factorization.csv"]),
    ("beta_derivative.yaml", ["geometry.L=1"], ["beta_derivative.csv"]),
    ("cluster_compare.yaml", ["experiment.params.nodes=8", "model.N=4"], ["cluster_compare.csv", "expansion.json"]),
    ("langevin.yaml", ["sampler.burn_in=10"], ["series.csv", "summary.json"]),
], ids=lambda v: v if isinstance(v, str) else None)
def test_experiment_smoke(capsys, tmp_path, cfg, sets, files):
    argv = ["run", CONFIGS / cfg, "--output", tmp_path / "o", "--set", "sampler.sweeps=512",
            "--set", "sampler.burn_in=50"]
    for s in sets:
        argv += ["--set", s]
    rc, _, err = _run(argv, capsys)
    assert rc == 0, err
    for f in files + ["manifest.json"]:
        assert (tmp_path / "o" / f).exists()


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "ymlattice.cli", "run", str(CONFIGS / "sample.yaml"), "--output",
                        str(tmp_path / "x"), "--set", "sampler.sweeps=50", "--set", "sampler.burn_in=0",
                        "--set", "sampler.checkpoint_every=0"], capture_output=True, text=True)
    assert r.returncode == 0 and json.loads(r.stdout)["status"] == "complete"


def test_completed_run_removes_checkpoint(capsys, tmp_path):
    rc, _, _ = _run(["run", CONFIGS / "sample.yaml", "--output", tmp_path / "k", "--set", "sampler.sweeps=300",
                     "--set", "sampler.checkpoint_every=100", "--set", "sampler.burn_in=10"], capsys)
    assert rc == 0 and not (tmp_path / "k" / "checkpoint.ymck").exists()
