import contextlib
import io
import json

import pytest

from cashflow_uw.cli import build_parser, main


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out
    return code, out


def test_help_lists_commands():
    text = build_parser().format_help()
    for name in ("synth", "ingest", "featurize", "bin", "train", "evaluate", "ablate", "report", "serve"):
        assert name in text


def test_train_before_bin_is_config_error(tmp_path, capsys):
    code, out = run(capsys, "train", "--out", str(tmp_path), "--json")
    assert code == 2
    doc = json.loads(out)
    assert doc["ok"] is False and doc["error"]["code"] == "CONFIG_INVALID"


def test_bad_config_exit_code(tmp_path, capsys):
    bad = tmp_path / "c.toml"
    bad.write_text("[split]\ntrain_fraction = 2\n")
    assert run(capsys, "synth", "--config", str(bad), "--out", str(tmp_path))[0] == 2


@pytest.fixture(scope="module")
def chain(tmp_path_factory):
    root = tmp_path_factory.mktemp("ws")
    results = {}
    for cmd in (["synth", "--n", "150"], ["ingest"], ["featurize"], ["bin"], ["train"], ["evaluate"],
                ["ablate", "--trials", "1", "--models", "LR,AB"], ["report"]):
        buf = io.StringIO()
        with contextlib.redirect_stdout(buf):
            code = main(cmd + ["--out", str(root), "--seed", "2", "--json"])
        results[cmd[0]] = (code, json.loads(buf.getvalue()))
    return root, results


def test_chain_succeeds(chain):
    root, results = chain
    for name, (code, doc) in results.items():
        assert code == 0 and doc["ok"], (name, doc)
    assert results["synth"][1]["result"]["n_applicants"] == 150
    assert results["train"][1]["result"]["status"] == "champion"
    assert results["bin"][1]["result"]["n_train"] == 90
    for rel in ("store/woe_table.json", "store/split.json", "reports/evaluate/results.csv",
                "reports/ablation/results.csv", "reports/ablation/iv_report.csv", "reports/summary.json",
                "registry/events.jsonl"):
        assert (root / rel).exists(), rel
    summary = json.loads((root / "reports/summary.json").read_text())
    version = results["train"][1]["result"]["version"]
    assert summary["registry"][version]["status"] == "champion"


def test_rerun_stage_is_idempotent(chain, capsys):
    root, results = chain
    code, out = run(capsys, "train", "--out", str(root), "--seed", "2", "--json")
    assert code == 0 and json.loads(out)["result"]["status"] == "existing"


def test_plain_output(chain, capsys):
    root, _ = chain
    code, out = run(capsys, "report", "--out", str(root), "--seed", "2")
    assert code == 0 and out.startswith("summary: ")
