import io
import json

import numpy as np
import pytest

from drme import cli
from drme.cli import main
from drme.data import InputError, read_csv


def run(argv):
    buf = io.StringIO()
    code = main(argv, out=buf)
    return code, buf.getvalue()


@pytest.fixture
def null_csv(tmp_path):
    path = tmp_path / "null.csv"
    code, _ = run(["generate", "sharp_null", "--n", "2000", "--seed", "3", "--out", str(path)])
    assert code == 0
    return path


def test_generated_csv_round_trips(null_csv):
    data = read_csv(null_csv)
    assert data.n == 2000 and data.X.shape[1] == 5 and data.Y.shape[1] == 1


def test_test_command_output_and_json(null_csv, tmp_path):
    out = tmp_path / "res.json"
    code, text = run(["test", "--data", str(null_csv), "--out", str(out), "--seed", "1"])
    assert code == 0
    res = json.loads(out.read_text())
    assert 0 < res["p_value"] <= 1 and res["schema_version"] == 1
    decision = "do not reject" if res["p_value"] > 0.05 else "reject"
    assert f"decision   {decision} at alpha=0.05" in text
    assert "v1 = (" in text and "v2 = (" in text
    manifest = json.loads((tmp_path / "res.manifest.json").read_text())
    assert manifest["subcommand"] == "test" and manifest["seed"] == 1
    assert manifest["config"]["lengthscale"] == res["lengthscale"]
    assert manifest["config"]["tau"] == res["tau"] and manifest["input_digest"]


def test_replay_is_byte_identical(null_csv, tmp_path):
    out = tmp_path / "res.json"
    run(["test", "--data", str(null_csv), "--out", str(out), "--seed", "2", "--J", "3"])
    before = out.read_bytes()
    out.write_text("tampered")
    code, text = run(["replay", str(tmp_path / "res.manifest.json")])
    assert code == 0 and "byte-identically" in text
    assert out.read_bytes() == before


def test_replay_detects_changed_input(null_csv, tmp_path):
    out = tmp_path / "res.json"
    run(["test", "--data", str(null_csv), "--out", str(out)])
    null_csv.write_text(null_csv.read_text().replace("\n1,", "\n2,", 1))
    code, _ = run(["replay", str(tmp_path / "res.manifest.json")])
    assert code == 2


def test_seed_from_environment(null_csv, tmp_path, monkeypatch):
    monkeypatch.setenv(cli.SEED_ENV, "17")
    run(["test", "--data", str(null_csv), "--out", str(tmp_path / "a.json")])
    run(["test", "--data", str(null_csv), "--out", str(tmp_path / "b.json"), "--seed", "17"])
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    monkeypatch.setenv(cli.SEED_ENV, "abc")
    code, _ = run(["test", "--data", str(null_csv), "--out", str(tmp_path / "c.json")])
    assert code == 2


@pytest.mark.parametrize("content,needle", [
    ("x_1,a,y_1\n0.1,1,0.2\n0.3,oops,0.1\n", "line 3"),
    ("x_1,a,y_1\n0.1,1,0.2\n0.3,0\n", "line 3"),
    ("x_1,a,y_1\n0.1,1,0.2\n0.3,2,0.1\n", "treatment"),
    ("x_1,a,y_1,z\n0.1,1,0.2,3\n", "header"),
    ("x_1,y_1\n0.1,0.2\n", "header"),
    ("x_2,a,y_1\n0.1,1,0.2\n", "header"),
    ("", "empty"),
])
def test_malformed_csv_is_input_error(tmp_path, capsys, content, needle):
    path = tmp_path / "bad.csv"
    path.write_text(content)
    with pytest.raises(InputError, match=needle):
        read_csv(path)
    code, _ = run(["test", "--data", str(path)])
    assert code == 2
    assert "input error" in capsys.readouterr().err


def test_missing_file_is_input_error(tmp_path):
    assert run(["test", "--data", str(tmp_path / "none.csv")])[0] == 2


def test_numeric_failure_exit_code(null_csv, tmp_path, monkeypatch):
    from scipy.linalg import LinAlgError

    def boom(*a, **k):
        raise LinAlgError("singular")

    monkeypatch.setattr(cli, "run_drme_test", boom)
    assert run(["test", "--data", str(null_csv), "--out", str(tmp_path / "r.json")])[0] == 3


def test_invalid_config_flag_is_input_error(null_csv):
    assert run(["test", "--data", str(null_csv), "--clip", "0.7", "0.2"])[0] == 2
    assert run(["test", "--data", str(null_csv), "--alpha", "2"])[0] == 2


def test_simulate_shape_and_artifacts(tmp_path):
    code, text = run(["simulate", "sharp_null", "--reps", "2", "--n", "300,600,1200,3000",
                      "--out", str(tmp_path), "--seed", "4"])
    assert code == 0
    lines = (tmp_path / "sharp_null.csv").read_text().strip().splitlines()
    methods = {ln.split(",")[0] for ln in lines[1:]}
    assert len(lines) - 1 == 4 * len(methods)
    assert (tmp_path / "sharp_null_plot.csv").exists()
    report = json.loads((tmp_path / "sharp_null.json").read_text())
    assert report["schema_version"] == 1 and report["seed"] == 4


def test_simulate_worker_count_does_not_change_results(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    base = ["simulate", "mean_shift", "--reps", "4", "--n", "300", "--methods", "drme,ipw"]
    assert run(base + ["--out", str(a), "--workers", "1"])[0] == 0
    assert run(base + ["--out", str(b), "--workers", "2"])[0] == 0
    assert (a / "mean_shift.csv").read_bytes() == (b / "mean_shift.csv").read_bytes()


def test_simulate_replay(tmp_path):
    run(["simulate", "two_bump", "--reps", "1", "--out", str(tmp_path)])
    code, text = run(["replay", str(tmp_path / "two_bump_dy5.manifest.json")])
    assert code == 0 and "3 artifact(s)" in text


def test_simulate_rejects_unknown_inputs(tmp_path):
    assert run(["simulate", "bogus", "--out", str(tmp_path)])[0] == 2
    assert run(["simulate", "sharp_null", "--methods", "magic", "--out", str(tmp_path)])[0] == 2
    assert run(["simulate", "sharp_null", "--reps", "0", "--out", str(tmp_path)])[0] == 2


def test_validate_theory_command(tmp_path):
    code, text = run(["validate-theory", "--reps", "20", "--h", "0,4", "--n", "500",
                      "--reference-spec", "--out", str(tmp_path)])
    assert code == 0
    assert text.splitlines()[0] == "n,h,empirical,theory,se"
    rows = json.loads((tmp_path / "local_path.json").read_text())["rows"]
    assert [r["h"] for r in rows] == [0.0, 4.0]


def test_mean_shift_power_at_larger_n(tmp_path):
    # 200 consecutive seeds: at a true rate near 0.94 a 50-run estimate has an
    # SE of about 0.03, too coarse for a 0.90 threshold
    path = tmp_path / "ms.csv"
    rejections = 0
    reps = 200
    for seed in range(reps):
        run(["generate", "mean_shift", "--n", "5000", "--seed", str(seed), "--out", str(path)])
        out = tmp_path / "r.json"
        assert run(["test", "--data", str(path), "--out", str(out), "--seed", str(seed)])[0] == 0
        rejections += json.loads(out.read_text())["p_value"] <= 0.05
    assert rejections / reps >= 0.9
