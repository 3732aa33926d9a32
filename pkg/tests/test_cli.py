import json

import pytest

from reprokit.cli import run_cli


def write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    write(d / "train.json", {
        "seed": 3,
        "data": {"kind": "synthetic_source", "split": "train", "n_train": 300, "n_test": 100},
        "heldout": {"kind": "synthetic_source", "split": "test", "n_train": 300, "n_test": 100},
        "arch": {"hidden": [16]},
        "train": {"epochs": 3},
        "checkpoint": "source.rpk",
    })
    assert run_cli(["train-source", "--config", str(d / "train.json")]) == 0
    return d


def run_doc(**extra):
    doc = {
        "seed": 1,
        "source": {"checkpoint": "source.rpk",
                   "heldout": {"kind": "synthetic_source", "split": "test", "n_train": 300, "n_test": 100}},
        "target": {"train": {"kind": "synthetic_target", "split": "train", "n_train": 40, "n_test": 40},
                   "test": {"kind": "synthetic_target", "split": "test", "n_train": 40, "n_test": 40}},
        "train": {"epochs": 3, "loss": "mse"},
        "diagnostics": {"n_rep": 32},
        "report_dir": "report",
    }
    doc.update(extra)
    return doc


class TestTrainSource:
    def test_checkpoint_written_and_reproducible(self, workdir, capsys):
        first = (workdir / "source.rpk").read_bytes()
        assert run_cli(["train-source", "--config", str(workdir / "train.json")]) == 0
        assert (workdir / "source.rpk").read_bytes() == first
        assert "param_digest" in capsys.readouterr().out

    def test_requires_config(self):
        assert run_cli(["train-source"]) == 2


class TestReprogram:
    def test_report_and_replay(self, workdir, tmp_path):
        cfg = write(workdir / "run.json", run_doc())
        assert run_cli(["reprogram", "--config", cfg]) == 0
        report = workdir / "report"
        for name in ("config.json", "transform.json", "output_map.json", "trace.jsonl", "summary.json"):
            assert (report / name).exists()
        echoed = json.loads((report / "config.json").read_text())
        assert echoed["train"]["lr_W"] == 0.05 and echoed["zo"]["q"] == 20
        summary = json.loads((report / "summary.json").read_text())
        assert summary["param_digest_before"] == summary["param_digest_after"]
        lines = (report / "trace.jsonl").read_text().splitlines()
        assert [json.loads(line)["epoch"] for line in lines] == [0, 1, 2, 3]

        replay = tmp_path / "replay"
        assert run_cli(["reprogram", "--config", str(report / "config.json"), "--report-dir", str(replay)]) == 0
        assert (replay / "trace.jsonl").read_bytes() == (report / "trace.jsonl").read_bytes()
        assert (replay / "transform.json").read_bytes() == (report / "transform.json").read_bytes()

    def test_seed_override_changes_run(self, workdir, tmp_path):
        cfg = write(workdir / "run_seed.json", run_doc(report_dir=str(tmp_path / "a")))
        assert run_cli(["reprogram", "--config", cfg, "--seed", "9"]) == 0
        assert json.loads((tmp_path / "a" / "config.json").read_text())["seed"] == 9

    def test_evaluate_and_diagnose(self, workdir, capsys):
        cfg = write(workdir / "run_diag.json", run_doc(report_dir="report_diag"))
        assert run_cli(["reprogram", "--config", cfg]) == 0
        capsys.readouterr()
        assert run_cli(["evaluate", "--report-dir", str(workdir / "report_diag")]) == 0
        assert "target test accuracy" in capsys.readouterr().out
        assert run_cli(["diagnose", "--report-dir", str(workdir / "report_diag")]) == 0
        out = capsys.readouterr().out
        assert "2sqrt(K)*W1_hat" in out
        rep = json.loads((workdir / "report_diag" / "theorem1.json").read_text())
        assert rep["bound"] == pytest.approx(rep["source_risk"] + rep["alignment_term"])

    def test_diagnose_refuses_many_to_one(self, workdir, capsys):
        cfg = write(workdir / "run_m2.json", run_doc(output_map={"m": 2}, report_dir="report_m2"))
        assert run_cli(["reprogram", "--config", cfg]) == 0
        capsys.readouterr()
        assert run_cli(["diagnose", "--report-dir", str(workdir / "report_m2")]) == 2
        assert "one-to-one" in capsys.readouterr().err

    def test_black_box_through_endpoint(self, workdir):
        cfg = write(workdir / "run_bb.json", run_doc(mode="black_box", zo={"q": 3},
                                                     train={"epochs": 1, "loss": "mse"},
                                                     diagnostics={"track_w1": False},
                                                     report_dir="report_bb"))
        assert run_cli(["reprogram", "--config", cfg]) == 0
        summary = json.loads((workdir / "report_bb" / "summary.json").read_text())
        assert summary["queries"] == summary["endpoint_served"]["samples"]
        assert summary["train_oracle_calls"] == 4 * summary["steps"]


class TestExitCodes:
    def test_missing_required_key(self, workdir):
        doc = run_doc()
        del doc["train"]
        assert run_cli(["reprogram", "--config", write(workdir / "bad1.json", doc)]) == 2

    def test_unknown_key(self, workdir, capsys):
        cfg = write(workdir / "bad2.json", run_doc(trian={"epochs": 1}))
        assert run_cli(["reprogram", "--config", cfg]) == 2
        assert "trian" in capsys.readouterr().err

    def test_unknown_flag(self):
        assert run_cli(["reprogram", "--frobnicate"]) == 2

    def test_missing_config_file(self, tmp_path):
        assert run_cli(["reprogram", "--config", str(tmp_path / "nope.json")]) == 2

    def test_corrupt_checkpoint_is_runtime_failure(self, workdir):
        (workdir / "broken.rpk").write_bytes(b"RPKMODEL\x01\x00")
        doc = run_doc(report_dir="report_broken")
        doc["source"] = {"checkpoint": "broken.rpk"}
        assert run_cli(["reprogram", "--config", write(workdir / "bad3.json", doc)]) == 3

    def test_layout_capacity_is_runtime_failure(self, workdir):
        doc = run_doc(report_dir="report_cap", layout={"mode": "replicate", "replicates": 5})
        assert run_cli(["reprogram", "--config", write(workdir / "bad4.json", doc)]) == 3
