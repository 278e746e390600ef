import hashlib
import json
import math

import numpy as np
import pytest

from conftest import build_pipeline_fixture

from viewlift import assets
from viewlift.cli import main
from viewlift.metrics import ProbeSet, save_embeddings


def hash_tree(paths):
    digest = hashlib.sha256()
    for path in sorted(paths):
        digest.update(path.name.encode())
        digest.update(path.read_bytes())
    return digest.hexdigest()


def read_jsonl(path):
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


@pytest.fixture(scope="module")
def calibrated(tmp_path_factory):
    fx = build_pipeline_fixture(tmp_path_factory.mktemp("pipe"))
    code = main(["calibrate", "--config", str(fx["config"])])
    assert code == 0
    return fx


class TestCalibrateCommand:
    def test_all_rows_accepted(self, calibrated, capsys):
        rows = read_jsonl(calibrated["out"] / "calibration.jsonl")
        assert len(rows) == 3
        assert all(r["accepted"] for r in rows)
        assert all(r["iou"] >= 0.7 for r in rows)

    def test_bad_row_is_isolated(self, tmp_path, capsys):
        fx = build_pipeline_fixture(tmp_path)
        blank = np.zeros((fx["size"], fx["size"]), np.uint8)
        assets.save_image(blank, fx["data"] / "mask_1.png")
        code = main(["calibrate", "--config", str(fx["config"])])
        assert code == 0
        rows = read_jsonl(fx["out"] / "calibration.jsonl")
        assert len(rows) == 3
        errors = [r for r in rows if "error" in r]
        assert len(errors) == 1
        assert errors[0]["error"] == "MaskError"
        assert sum(1 for r in rows if r.get("accepted")) == 2

    def test_empty_manifest_exits_nonzero(self, tmp_path, capsys):
        fx = build_pipeline_fixture(tmp_path)
        (fx["data"] / "manifest.jsonl").write_text("")
        assert main(["calibrate", "--config", str(fx["config"])]) == 1

    def test_all_rows_failing_exits_two(self, tmp_path, capsys):
        fx = build_pipeline_fixture(tmp_path, rows=1)
        blank = np.zeros((fx["size"], fx["size"]), np.uint8)
        assets.save_image(blank, fx["data"] / "mask_0.png")
        assert main(["calibrate", "--config", str(fx["config"])]) == 2

    def test_summary_line(self, tmp_path, capsys):
        fx = build_pipeline_fixture(tmp_path, rows=1)
        main(["calibrate", "--config", str(fx["config"])])
        out = capsys.readouterr().out
        assert "accepted" in out and "rate" in out


class TestSynthesizeCommand:
    def test_counts_and_direction(self, calibrated):
        code = main(["synthesize", "--config", str(calibrated["config"])])
        assert code == 0
        out = calibrated["out"]
        synth_rows = read_jsonl(out / "synthetic.jsonl")
        assert len(synth_rows) == 6          # 3 accepted rows x 2 views
        pngs = sorted((out / "synth").glob("*_v*.png"))
        assert len([p for p in pngs if "mask" not in p.name]) == 6
        for row in synth_rows:
            assert row["domain"] == "synthetic"
            assert row["delta_theta"] >= 0.0          # ground-to-aerial
            assert abs(row["delta_phi"]) <= 30.0
            assert (out / row["image"]).is_file()
            assert (out / row["mask"]).is_file()
        combined = read_jsonl(out / "combined.jsonl")
        assert len(combined) == 9

    def test_two_decimal_deltas(self, calibrated):
        for row in read_jsonl(calibrated["out"] / "synthetic.jsonl"):
            assert round(row["delta_theta"], 2) == row["delta_theta"]
            assert round(row["delta_phi"], 2) == row["delta_phi"]

    def test_deterministic_rerun(self, calibrated):
        out = calibrated["out"]
        before_manifest = (out / "synthetic.jsonl").read_bytes()
        before_images = hash_tree((out / "synth").glob("*.png"))
        assert main(["synthesize", "--config", str(calibrated["config"])]) == 0
        assert (out / "synthetic.jsonl").read_bytes() == before_manifest
        assert hash_tree((out / "synth").glob("*.png")) == before_images

    def test_stage_isolation(self, calibrated):
        # deleting stage-2 outputs and re-running reproduces them exactly
        # without touching the stage-1 report
        out = calibrated["out"]
        calib_bytes = (out / "calibration.jsonl").read_bytes()
        before = hash_tree((out / "synth").glob("*.png"))
        for p in (out / "synth").glob("*.png"):
            p.unlink()
        (out / "synthetic.jsonl").unlink()
        assert main(["synthesize", "--config", str(calibrated["config"])]) == 0
        assert hash_tree((out / "synth").glob("*.png")) == before
        assert (out / "calibration.jsonl").read_bytes() == calib_bytes

    def test_missing_calibration_report(self, tmp_path):
        fx = build_pipeline_fixture(tmp_path)
        assert main(["synthesize", "--config", str(fx["config"])]) == 1

    def test_empty_background_pool(self, tmp_path):
        fx = build_pipeline_fixture(tmp_path, rows=1)
        assert main(["calibrate", "--config", str(fx["config"])]) == 0
        for p in (fx["data"] / "bg").glob("*.png"):
            p.unlink()
        assert main(["synthesize", "--config", str(fx["config"])]) == 1

    def test_aerial_to_ground_flag(self, tmp_path):
        fx = build_pipeline_fixture(tmp_path, rows=1)
        assert main(["calibrate", "--config", str(fx["config"])]) == 0
        assert main(["synthesize", "--config", str(fx["config"]),
                     "--direction", "a2g"]) == 0
        rows = read_jsonl(fx["out"] / "synthetic.jsonl")
        assert rows
        for row in rows:
            assert row["delta_theta"] <= 0.0
            assert row["view"] == "ground"


class TestPlanCommand:
    def test_plan_and_determinism(self, calibrated):
        out = calibrated["out"]
        combined = out / "combined.jsonl"
        args = ["plan", "--config", str(calibrated["config"]),
                "--manifest", str(combined), "--epoch", "25",
                "--state-out", str(out / "pools.json"),
                "--out", str(out / "plan25.jsonl")]
        assert main(args) == 0
        first = (out / "plan25.jsonl").read_bytes()
        first_state = (out / "pools.json").read_bytes()
        assert main(args) == 0
        assert (out / "plan25.jsonl").read_bytes() == first
        assert (out / "pools.json").read_bytes() == first_state
        rows = read_jsonl(out / "plan25.jsonl")
        assert rows, "plan must contain at least one batch"
        for row in rows:
            assert row["epoch"] == 25
            for item in row["items"]:
                assert item["domain"] in ("real", "synthetic")

    def test_state_chain(self, calibrated):
        out = calibrated["out"]
        combined = out / "combined.jsonl"
        assert main(["plan", "--config", str(calibrated["config"]),
                     "--manifest", str(combined), "--epoch", "25",
                     "--state-out", str(out / "s0.json"),
                     "--out", str(out / "p0.jsonl")]) == 0
        assert main(["plan", "--config", str(calibrated["config"]),
                     "--manifest", str(combined), "--epoch", "26",
                     "--state-in", str(out / "s0.json"),
                     "--state-out", str(out / "s1.json"),
                     "--out", str(out / "p1.jsonl")]) == 0
        assert (out / "p1.jsonl").read_bytes() != (out / "p0.jsonl").read_bytes()

    def test_manifest_without_real_rows(self, tmp_path):
        path = tmp_path / "syn_only.jsonl"
        assets.DatasetManifest([assets.SampleRecord(
            identity="a", image="a.png", domain=assets.SYNTHETIC,
            delta_theta=5.0)]).save(path)
        assert main(["plan", "--manifest", str(path), "--epoch", "0",
                     "--out", str(tmp_path / "p.jsonl")]) == 1


class TestEvaluateCommand:
    def write_probes(self, tmp_path, g_emb, g_ids):
        query = ProbeSet(embeddings=np.array([[1.0, 0.0]]), identities=["a"],
                         cameras=["q"])
        gallery = ProbeSet(embeddings=np.asarray(g_emb, dtype=float),
                           identities=g_ids, cameras=["g"] * len(g_ids))
        save_embeddings(query, tmp_path / "q.emb", tmp_path / "q.jsonl")
        save_embeddings(gallery, tmp_path / "g.emb", tmp_path / "g.jsonl")
        return [str(tmp_path / "q.emb"), str(tmp_path / "q.jsonl"),
                str(tmp_path / "g.emb"), str(tmp_path / "g.jsonl")]

    def test_perfect_fixture(self, tmp_path, capsys):
        paths = self.write_probes(tmp_path, [[1.0, 0.0], [0.0, 1.0]], ["a", "b"])
        assert main(["evaluate", *paths, "--out", str(tmp_path / "r.json")]) == 0
        result = json.loads((tmp_path / "r.json").read_text())
        assert result["mAP"] == 1.0
        assert result["rank1"] == 1.0

    def test_ranks_one_and_three_fixture(self, tmp_path, capsys):
        paths = self.write_probes(
            tmp_path, [[1.0, 0.0], [0.9, 0.1], [0.8, 0.3], [0.0, 1.0]],
            ["a", "b", "a", "b"])
        assert main(["evaluate", *paths, "--out", str(tmp_path / "r.json")]) == 0
        result = json.loads((tmp_path / "r.json").read_text())
        assert result["mAP"] == pytest.approx(5.0 / 6.0, abs=1e-12)

    def test_corrupted_magic(self, tmp_path, capsys):
        paths = self.write_probes(tmp_path, [[1.0, 0.0]], ["a"])
        data = (tmp_path / "q.emb").read_bytes()
        (tmp_path / "q.emb").write_bytes(b"XXXX" + data[4:])
        assert main(["evaluate", *paths]) == 1


class TestLossesCheckCommand:
    def test_total(self, capsys):
        assert main(["losses-check", "total", "--components", "1", "2", "4"]) == 0
        assert capsys.readouterr().out.strip() == "5.0"

    def test_id_uniform(self, tmp_path, capsys):
        (tmp_path / "logits.txt").write_text("0 0\n0 0\n")
        (tmp_path / "labels.txt").write_text("0 1\n")
        assert main(["losses-check", "id", "--logits", str(tmp_path / "logits.txt"),
                     "--labels", str(tmp_path / "labels.txt"),
                     "--smoothing", "0"]) == 0
        assert float(capsys.readouterr().out) == pytest.approx(math.log(2), abs=1e-12)

    def test_triplet(self, tmp_path, capsys):
        (tmp_path / "emb.txt").write_text("0 0\n0 1\n1 0\n1 1\n")
        (tmp_path / "labels.txt").write_text("a a b b\n")
        assert main(["losses-check", "triplet", "--embeddings", str(tmp_path / "emb.txt"),
                     "--labels", str(tmp_path / "labels.txt"),
                     "--margin", "0.3"]) == 0
        assert float(capsys.readouterr().out) == pytest.approx(0.3, abs=1e-12)


class TestRejectProbCommand:
    def test_mid_value(self, capsys):
        assert main(["reject-prob", "--delta-theta", "15", "--epoch", "10"]) == 0
        assert capsys.readouterr().out.strip() == "0.25"

    def test_zero(self, capsys):
        assert main(["reject-prob", "--delta-theta", "0", "--epoch", "0"]) == 0
        assert capsys.readouterr().out.strip() == "0.0"

    def test_out_of_range(self, capsys):
        assert main(["reject-prob", "--delta-theta", "35", "--epoch", "0"]) == 1
        assert "ValidationError" in capsys.readouterr().err
