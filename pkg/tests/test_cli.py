import csv
import json
import subprocess
import sys

import pytest

from hybridprior.autodiff import Tensor
from hybridprior.cli import main
from hybridprior.config import ExperimentConfig, ImageSet, PriorConfig, save_config
from hybridprior.datasets import load_png
from hybridprior.generator import generator_forward, load_weights, sample_latent

TINY_PRIOR = PriorConfig(latent_dim=8, channels=8, layers=2, epochs=20, batch_size=4)


def tiny_config(tmp, **changes):
    cfg = ExperimentConfig(image_size=16, dataset=ImageSet("blobs", 8, 0, 0), prior=TINY_PRIOR,
                           test_sets=(ImageSet("blobs", 2, 1000),), m_ladder=(100, 200), models=("dd", "hybrid"),
                           weights=str(tmp / "prior.hpgw"), out_dir=str(tmp / "sweep"), jobs=1)
    return cfg.replace(**changes)


@pytest.fixture(scope="module")
def prior(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("prior")
    save_config(tiny_config(tmp), tmp / "config.json")
    assert main(["train-prior", "--config", str(tmp / "config.json")]) == 0
    return tmp


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestTrainPrior:
    def test_writes_loadable_weights(self, prior):
        rep = load_weights(prior / "prior.hpgw")
        assert rep.frozen and rep.config.output_size == (16, 16)
        img = generator_forward(rep, Tensor(sample_latent(rep.latent_spec, 0))).data
        assert img.shape == (3, 16, 16) and img.min() >= 0 and img.max() <= 1
        log = rows(prior / "prior.training.csv")
        assert len(log) == 20 and float(log[-1]["loss"]) < float(log[0]["loss"])

    def test_rerun_is_byte_identical(self, prior, tmp_path):
        assert main(["train-prior", "--config", str(prior / "config.json"), "--out", str(tmp_path / "b.hpgw")]) == 0
        assert (tmp_path / "b.hpgw").read_bytes() == (prior / "prior.hpgw").read_bytes()

    def test_missing_dataset_section(self, tmp_path, capsys):
        doc = tiny_config(tmp_path).to_dict()
        del doc["dataset"]
        (tmp_path / "c.json").write_text(json.dumps(doc))
        assert main(["train-prior", "--config", str(tmp_path / "c.json")]) == 2
        assert "dataset" in capsys.readouterr().err
        assert not (tmp_path / "prior.hpgw").exists()


class TestInvert:
    def test_identity_dd(self, tmp_path, capsys):
        out = tmp_path / "inv"
        assert main(["invert", "--model", "dd", "--operator", "identity", "--noise", "0",
                     "--out-dir", str(out)]) == 0
        header, row = capsys.readouterr().out.strip().splitlines()
        rec = dict(zip(header.split("\t"), row.split("\t")))
        assert float(rec["psnr_db"]) >= 25.0
        assert load_png(out / "reconstruction.png").shape == (3, 64, 64)
        assert len(rows(out / "trajectory.csv")) == 500
        assert rows(out / "record.csv")[0]["psnr_db"] == rec["psnr_db"]

    def test_zero_measurements_rejected(self, tmp_path, capsys):
        assert main(["invert", "--model", "dd", "--m", "0", "--out-dir", str(tmp_path / "x")]) == 2
        assert "--m" in capsys.readouterr().err
        assert not (tmp_path / "x").exists()

    def test_generator_models_need_weights(self, tmp_path):
        assert main(["invert", "--model", "hybrid", "--m", "100", "--out-dir", str(tmp_path / "x")]) == 2

    def test_weight_size_mismatch(self, prior, tmp_path):
        assert main(["invert", "--model", "gan", "--m", "100", "--weights", str(prior / "prior.hpgw"),
                     "--out-dir", str(tmp_path / "x")]) == 2

    def test_hybrid_record(self, prior, tmp_path, capsys):
        out = tmp_path / "h"
        assert main(["invert", "--model", "hybrid", "--m", "300", "--image-size", "16",
                     "--weights", str(prior / "prior.hpgw"), "--out-dir", str(out)]) == 0
        rec = rows(out / "record.csv")[0]
        assert rec["alpha"] != "" and rec["beta"] != ""
        assert int(rec["param_count"]) < int(rec["n"]) == 768
        task = json.loads((out / "task.json").read_text())
        assert task["operator"]["m"] == 300

    def test_task_replay(self, prior, tmp_path, capsys):
        first, second = tmp_path / "a", tmp_path / "b"
        common = ["--model", "dd", "--image-size", "16", "--k", "4"]
        assert main(["invert", *common, "--m", "200", "--out-dir", str(first)]) == 0
        assert main(["invert", *common, "--task", str(first / "task.json"), "--out-dir", str(second)]) == 0
        assert (first / "reconstruction.png").read_bytes() == (second / "reconstruction.png").read_bytes()


@pytest.fixture(scope="module")
def sweep(prior):
    assert main(["sweep", "--config", str(prior / "config.json")]) == 0
    return prior / "sweep"


class TestSweep:
    def test_outputs(self, sweep):
        recs = rows(sweep / "results.csv")
        assert len(recs) == 8
        assert {(r["model"], r["m"]) for r in recs} == {(mo, m) for mo in ("dd", "hybrid") for m in ("100", "200")}
        assert (sweep / "psnr_blobs.svg").is_file() and (sweep / "coefficients.svg").is_file()
        assert len(list(sweep.glob("psnr_*.svg"))) == 1
        assert (sweep / "samples_blobs.png").is_file()
        assert len(list((sweep / "trajectories").rglob("*.csv"))) == 8
        assert all(r["alpha"] != "" for r in recs if r["model"] == "hybrid")

    def test_resume_reruns_only_missing_cell(self, sweep, prior, capsys):
        before = {p.name: p.read_bytes() for p in (sweep / "cells").iterdir()}
        (sweep / "cells" / "dd__m100__blobs.csv").unlink()
        capsys.readouterr()
        assert main(["sweep", "--config", str(prior / "config.json"), "--resume"]) == 0
        out = dict(line.split("\t") for line in capsys.readouterr().out.strip().splitlines())
        assert out["cells_run"] == "1" and out["cells_skipped"] == "3" and out["records"] == "8"
        after = {p.name: p.read_bytes() for p in (sweep / "cells").iterdir()}
        assert set(after) == set(before)
        for name, data in before.items():
            if name != "dd__m100__blobs.csv":
                assert after[name] == data

    def test_rerun_is_deterministic(self, sweep, prior, tmp_path):
        assert main(["sweep", "--config", str(prior / "config.json"), "--out-dir", str(tmp_path / "again"),
                     "--m-ladder", "100"]) == 0
        mask = lambda rs: [{k: v for k, v in r.items() if k != "seconds"} for r in rs]  # noqa: E731
        first = [r for r in rows(sweep / "results.csv") if r["m"] == "100"]
        assert mask(rows(tmp_path / "again" / "results.csv")) == mask(first)

    def test_report(self, sweep, capsys):
        (sweep / "aggregates.csv").unlink()
        assert main(["report", "--out-dir", str(sweep)]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0].startswith("image_set,model,m,mean_psnr_db")
        assert len(lines) == 5
        assert (sweep / "aggregates.csv").is_file()

    def test_report_without_results(self, tmp_path):
        assert main(["report", "--out-dir", str(tmp_path)]) == 2

    def test_missing_weights(self, prior, tmp_path):
        assert main(["sweep", "--config", str(prior / "config.json"), "--weights", str(tmp_path / "none"),
                     "--out-dir", str(tmp_path / "s")]) == 2


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "hybridprior", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("hybridprior ")
