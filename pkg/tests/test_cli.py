import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from ratetrack.cli import main
from ratetrack.dataset import load_dataset

SMALL_TRAIN = ["--window", "4", "--embed-dim", "8", "--heads", "2",
               "--ffn-dim", "16", "--head-hidden", "8", "--epochs", "1",
               "--stride", "4", "--seed", "0"]


def run(argv, capsys=None):
    code = main(argv)
    if capsys is not None:
        return code, capsys.readouterr()
    return code


def tree_digest(root: Path) -> dict[str, str]:
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One tiny end-to-end run shared across the round-trip assertions."""
    root = tmp_path_factory.mktemp("pipe")
    ds = root / "data"
    model = root / "model.json"
    ev = root / "eval"
    rep = root / "report"
    assert main(["generate", "--out", str(ds), "--routes", "8",
                 "--steps", "60", "--seed", "3"]) == 0
    assert main(["mask", "--dataset", str(ds), "--seed", "3"]) == 0
    assert main(["train", "--dataset", str(ds), "--model-out", str(model)]
                + SMALL_TRAIN) == 0
    assert main(["eval", "--dataset", str(ds), "--model", str(model),
                 "--out", str(ev)]) == 0
    assert main(["report", "--eval", str(ev), "--out", str(rep)]) == 0
    return root


class TestGenerate:
    def test_writes_manifest_and_routes(self, tmp_path):
        out = tmp_path / "ds"
        assert run(["generate", "--out", str(out), "--routes", "3", "--steps", "40"]) == 0
        ds = load_dataset(out)
        assert len(ds.routes) == 3
        assert all(t.steps == 40 for t in ds.routes)
        assert not ds.masked

    def test_refuses_nonempty_dir(self, tmp_path, capsys):
        out = tmp_path / "ds"
        out.mkdir()
        (out / "junk.txt").write_text("x")
        code, cap = run(["generate", "--out", str(out), "--routes", "1",
                         "--steps", "10"], capsys)
        assert code == 1
        assert "error: output-exists:" in cap.err

    def test_force_overwrites(self, tmp_path):
        out = tmp_path / "ds"
        out.mkdir()
        (out / "junk.txt").write_text("x")
        assert run(["generate", "--out", str(out), "--routes", "1",
                    "--steps", "10", "--force"]) == 0
        assert (out / "manifest.json").exists()

    def test_bad_mobility_in_config_file(self, tmp_path, capsys):
        cfgp = tmp_path / "cfg.json"
        cfgp.write_text(json.dumps({"mobility": "warp"}))
        code, cap = run(["generate", "--out", str(tmp_path / "ds"),
                         "--config", str(cfgp)], capsys)
        assert code == 1
        assert "error: config-invalid:" in cap.err

    def test_cli_overrides_config_file(self, tmp_path):
        cfgp = tmp_path / "cfg.json"
        cfgp.write_text(json.dumps({"routes": 5, "steps": 10}))
        out = tmp_path / "ds"
        assert run(["generate", "--out", str(out), "--routes", "2",
                    "--config", str(cfgp)]) == 0
        ds = load_dataset(out)
        assert len(ds.routes) == 2       # CLI wins
        assert ds.routes[0].steps == 10  # config fills the rest

    def test_byte_identical_reruns(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert run(["generate", "--out", str(out), "--routes", "2",
                        "--steps", "30", "--seed", "9"]) == 0
        assert tree_digest(a) == tree_digest(b)


class TestMask:
    def test_masks_every_route(self, tmp_path):
        out = tmp_path / "ds"
        run(["generate", "--out", str(out), "--routes", "2", "--steps", "30"])
        assert run(["mask", "--dataset", str(out)]) == 0
        ds = load_dataset(out)
        assert ds.masked
        for t in ds.routes:
            assert np.array_equal(t.mask == 1, ~np.isnan(t.obs_snr_db))
            assert np.all(t.mask.sum(axis=1) == 1)

    def test_missing_dataset(self, tmp_path, capsys):
        code, cap = run(["mask", "--dataset", str(tmp_path / "nope")], capsys)
        assert code == 1
        assert "error: dataset-missing:" in cap.err

    def test_byte_identical_reruns(self, tmp_path):
        digests = []
        for name in ("a", "b"):
            out = tmp_path / name
            run(["generate", "--out", str(out), "--routes", "2", "--steps", "30",
                 "--seed", "4"])
            run(["mask", "--dataset", str(out), "--seed", "4"])
            digests.append(tree_digest(out))
        assert digests[0] == digests[1]


class TestTrain:
    def test_unmasked_dataset_rejected(self, tmp_path, capsys):
        out = tmp_path / "ds"
        run(["generate", "--out", str(out), "--routes", "2", "--steps", "30"])
        code, cap = run(["train", "--dataset", str(out),
                         "--model-out", str(tmp_path / "m.json")] + SMALL_TRAIN, capsys)
        assert code == 1
        assert "error: dataset-unmasked:" in cap.err

    def test_writes_model_and_log(self, pipeline):
        assert (pipeline / "model.json").exists()
        log = (pipeline / "training_log.csv").read_text().splitlines()
        assert log[0] == "epoch,train_loss,val_loss"
        assert len(log) == 2  # one epoch


class TestEval:
    def test_outputs(self, pipeline):
        ev = pipeline / "eval"
        metrics = json.loads((ev / "metrics.json").read_text())
        assert metrics["units"] == "Mbps^2"
        assert set(metrics["methods"]) == {"model", "b1", "b2"}
        for m in metrics["methods"].values():
            assert len(m["per_link_mse"]) == 4
            assert m["overall_mse"] >= 0
        assert set(metrics["reductions_vs_baseline"]) == {"b1", "b2"}
        ts = sorted(ev.glob("timeseries_route_*.csv"))
        assert len(ts) == len(metrics["metadata"]["test_routes"])

    def test_model_link_mismatch(self, pipeline, tmp_path, capsys):
        other = tmp_path / "ds15"
        run(["generate", "--out", str(other), "--routes", "8", "--steps", "60",
             "--seed", "1"])
        run(["mask", "--dataset", str(other)])
        model = json.loads((pipeline / "model.json").read_text())
        model["model_config"]["rate_caps_bps"][0] *= 2
        bad = tmp_path / "bad_model.json"
        bad.write_text(json.dumps(model))
        code, cap = run(["eval", "--dataset", str(other), "--model", str(bad),
                         "--out", str(tmp_path / "ev")], capsys)
        assert code == 1
        assert "error: model-mismatch:" in cap.err

    def test_missing_model(self, pipeline, tmp_path, capsys):
        code, cap = run(["eval", "--dataset", str(pipeline / "data"),
                         "--model", str(tmp_path / "ghost.json"),
                         "--out", str(tmp_path / "ev")], capsys)
        assert code == 1
        assert "error: model-missing:" in cap.err


class TestReport:
    def test_outputs(self, pipeline):
        rep = pipeline / "report"
        cdf = (rep / "cdf.csv").read_text().splitlines()
        assert cdf[0] == "method,sqerr_mbps2,cum_prob"
        assert (rep / "timeseries.csv").exists()
        summary = json.loads((rep / "summary.json").read_text())
        assert set(summary["methods"]) == {"model", "b1", "b2"}

    def test_summary_consistent_with_eval_metrics(self, pipeline):
        metrics = json.loads((pipeline / "eval" / "metrics.json").read_text())
        summary = json.loads((pipeline / "report" / "summary.json").read_text())
        for m in metrics["methods"]:
            assert summary["methods"][m]["overall_mse"] == pytest.approx(
                metrics["methods"][m]["overall_mse"], abs=1e-9)

    def test_cdf_monotone_per_method(self, pipeline):
        import csv as csvmod
        with (pipeline / "report" / "cdf.csv").open(newline="") as f:
            rows = list(csvmod.DictReader(f))
        by_method = {}
        for r in rows:
            by_method.setdefault(r["method"], []).append(
                (float(r["sqerr_mbps2"]), float(r["cum_prob"])))
        for pts in by_method.values():
            vals = [v for v, _ in pts]
            probs = [p for _, p in pts]
            assert vals == sorted(vals)
            assert probs == sorted(probs)
            assert probs[-1] == 1.0

    def test_missing_eval_dir(self, tmp_path, capsys):
        code, cap = run(["report", "--eval", str(tmp_path / "void"),
                         "--out", str(tmp_path / "rep")], capsys)
        assert code == 1
        assert "error: eval-missing:" in cap.err


class TestDeterminism:
    def test_full_pipeline_byte_identical(self, tmp_path):
        digests = []
        for name in ("a", "b"):
            root = tmp_path / name
            ds, model, ev, rep = (root / "data", root / "model.json",
                                  root / "eval", root / "report")
            assert run(["generate", "--out", str(ds), "--routes", "8",
                        "--steps", "40", "--seed", "11"]) == 0
            assert run(["mask", "--dataset", str(ds), "--seed", "11"]) == 0
            assert run(["train", "--dataset", str(ds), "--model-out", str(model)]
                       + SMALL_TRAIN) == 0
            assert run(["eval", "--dataset", str(ds), "--model", str(model),
                        "--out", str(ev)]) == 0
            assert run(["report", "--eval", str(ev), "--out", str(rep)]) == 0
            digests.append(tree_digest(root))
        assert digests[0] == digests[1]
