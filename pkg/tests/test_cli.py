import json
import shutil
import subprocess
from pathlib import Path

import pytest

from ergoverify import cli

CAMPAIGNS = Path(__file__).resolve().parents[1] / "campaigns"


def write(tmp_path, cfg, name="c.json"):
    path = tmp_path / name
    path.write_text(json.dumps({"schema": "ergoverify-campaign-v1", **cfg}))
    return path


SMALL_OU = {
    "name": "small_ou",
    "kind": "verify",
    "model": {"preset": "ou"},
    "seed": 5,
    "probes": [
        {"name": "trajectory", "params": {"x0": 1.0, "T": 0.5, "paths": 4, "n_out": 5}},
        {"name": "condition_C", "params": {"z": 0.0, "eps": 1.0, "x0s": [0.0, 3.0], "T_tail": 3.0, "T_end": 4.0, "paths": 500}},
    ],
}


def test_empty_campaign(tmp_path, capsys):
    assert cli.main(["run", "--config", str(CAMPAIGNS / "empty.json"), "--out", str(tmp_path / "run")]) == 0
    manifest = json.loads((tmp_path / "run" / "manifest.json").read_text())
    assert manifest["verdicts"] == [] and manifest["exit_status"] == 0
    assert not (tmp_path / "run" / "verdicts.jsonl").exists()
    assert cli.main(["report", "--out", str(tmp_path / "run")]) == 0
    assert "no probes" in (tmp_path / "run" / "summary.txt").read_text()


def test_rerun_is_reproducible(tmp_path):
    cfg = write(tmp_path, SMALL_OU)
    a, sa = cli.run_campaign(cfg, tmp_path / "a")
    b, sb = cli.run_campaign(cfg, tmp_path / "b", threads=2)
    assert sa == sb == 0
    assert a["verdict_digest"] == b["verdict_digest"]
    assert a["config_digest"] == b["config_digest"]
    assert (tmp_path / "a" / "verdicts.jsonl").read_text() == (tmp_path / "b" / "verdicts.jsonl").read_text()
    c, _ = cli.run_campaign(cfg, tmp_path / "c", seed_override=6)
    assert c["config_digest"] != a["config_digest"]


def test_report_lists_verdicts(tmp_path):
    cli.run_campaign(write(tmp_path, SMALL_OU), tmp_path / "run")
    summary, long_csv = cli.emit_report(tmp_path / "run")
    text = summary.read_text()
    assert "PASS condition_C" in text and "(report only)" in text
    assert "verdict digest:" in text and "asserted failures: none" in text
    assert long_csv.read_text().splitlines()[0].startswith("probe,")
    assert not list((tmp_path / "run").glob("*.png"))


def test_report_figures_are_opt_in(tmp_path, capsys):
    cli.run_campaign(write(tmp_path, SMALL_OU), tmp_path / "run")
    assert cli.main(["report", "--out", str(tmp_path / "run"), "--figures"]) == 0
    pngs = list((tmp_path / "run").glob("*.png"))
    assert pngs and all(p.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n" for p in pngs)


def test_report_requires_artifacts(tmp_path, capsys):
    cli.run_campaign(write(tmp_path, SMALL_OU), tmp_path / "run")
    (tmp_path / "run" / "verdicts.jsonl").unlink()
    assert cli.main(["report", "--out", str(tmp_path / "run")]) == 2
    assert "missing artifacts" in capsys.readouterr().err
    assert cli.main(["report", "--out", str(tmp_path / "nowhere")]) == 2


def test_list_probes(capsys):
    rows = cli.list_probes()
    names = [n for n, _ in rows]
    assert len(rows) >= 10 and names == sorted(names)
    assert all(ref.strip() for _, ref in rows)
    assert cli.main(["list-probes"]) == 0
    assert "martingale_tail" in capsys.readouterr().out


def test_asserted_failure_exit_code(tmp_path, capsys):
    cfg = write(
        tmp_path,
        {
            "name": "two_basins",
            "kind": "verify",
            "model": {"preset": "double_well"},
            "seed": 0,
            "probes": [{"name": "condition_C", "params": {"z": 1.0, "eps": 0.5, "x0s": [1.5, -1.5], "T_tail": 4.0, "T_end": 6.0, "paths": 4}}],
        },
    )
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "run")]) == 1
    assert json.loads(capsys.readouterr().out)["exit_status"] == 1
    cli.emit_report(tmp_path / "run")
    assert "asserted failures: condition_C" in (tmp_path / "run" / "summary.txt").read_text()


def test_non_asserted_failure_is_exit_zero(tmp_path, capsys):
    cfg = write(
        tmp_path,
        {
            "name": "two_basins",
            "kind": "verify",
            "model": {"preset": "double_well"},
            "seed": 0,
            "probes": [{"name": "condition_C", "asserted": False, "params": {"z": 1.0, "eps": 0.5, "x0s": [-1.5], "T_tail": 4.0, "T_end": 6.0, "paths": 4}}],
        },
    )
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "run")]) == 0


@pytest.mark.parametrize(
    "cfg, needle",
    [
        ({"name": "x", "kind": "verify", "seed": 0, "probes": [{"name": "nope"}]}, "unknown probes"),
        ({"name": "x", "kind": "verify", "seed": 0, "colour": "red"}, "invalid campaign"),
        ({"name": "x", "kind": "verify", "seed": 0, "probes": [{"name": "lyapunov"}]}, "need a model"),
        ({"name": "x", "kind": "verify", "seed": 0, "model": {"preset": "ou"}, "probes": [{"name": "lyapunov", "params": {"horizon": 1, "speed": 2}}]}, "invalid parameters for lyapunov"),
        ({"name": "x", "kind": "verify", "seed": 0, "model": {"preset": "mystery"}}, "unknown preset"),
        ({"name": "x", "kind": "verify", "seed": 0, "model": {"inline": {"schema": "ergoverify-model-v1", "kind": "ns2d", "viscosity": 1}}}, "invalid model"),
    ],
)
def test_config_errors_exit_two(tmp_path, capsys, cfg, needle):
    assert cli.main(["run", "--config", str(write(tmp_path, cfg)), "--out", str(tmp_path / "run")]) == 2
    err = json.loads(capsys.readouterr().err)
    assert needle in err["message"]


def test_missing_schema_and_file(tmp_path, capsys):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"name": "x", "kind": "verify", "seed": 0}))
    assert cli.main(["run", "--config", str(path)]) == 2
    assert "schema" in json.loads(capsys.readouterr().err)["message"]
    assert cli.main(["run", "--config", str(tmp_path / "absent.json")]) == 2
    assert json.loads(capsys.readouterr().err)["error"] == "FileNotFoundError"


def test_probe_crash_exit_three(tmp_path, capsys):
    cfg = write(
        tmp_path,
        {"name": "boom", "kind": "simulate", "model": {"preset": "ou", "params": {"nu": -50.0, "B0": 0.0}}, "seed": 0, "probes": [{"name": "trajectory", "params": {"x0": 1.0, "T": 1.0}}]},
    )
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "run")]) == 3
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "BlowUpError" and "numerical blow-up" in err["message"]


def test_chainlab_campaign_runs_without_model(tmp_path):
    cfg = write(
        tmp_path,
        {"name": "mini_chains", "kind": "chainlab", "seed": 1, "probes": [{"name": "chain_theorem4", "params": {"count": 50}}, {"name": "chain_prop_lbc", "params": {"count": 4}}]},
    )
    manifest, status = cli.run_campaign(cfg, tmp_path / "run")
    assert status == 0 and [v["pass"] for v in manifest["verdicts"]] == [True, True]


def test_console_script(tmp_path):
    exe = shutil.which("ergoverify")
    assert exe is not None
    proc = subprocess.run([exe, "run", "--config", str(CAMPAIGNS / "empty.json"), "--out", str(tmp_path / "run")], capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["exit_status"] == 0
