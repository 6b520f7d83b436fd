import hashlib
import json
import subprocess
import sys
from pathlib import Path

import pytest

from gcdetect.cli import main


def tree_digest(root: Path, exclude=("run_metadata.json",)) -> dict:
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file() and p.name not in exclude:
            out[str(p.relative_to(root))] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--out", str(out), "--seed", "11", "--count", "2", "--size", "512"]) == 0
    return out


class TestSynth:
    def test_identical_seeds_identical_bytes(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            code = main(["synth", "--out", str(out), "--seed", "7", "--count", "2", "--size", "512"])
            assert code == 0
        assert tree_digest(a) == tree_digest(b)

    def test_different_seed_differs(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        main(["synth", "--out", str(a), "--seed", "1", "--count", "1", "--size", "512"])
        main(["synth", "--out", str(b), "--seed", "2", "--count", "1", "--size", "512"])
        assert tree_digest(a) != tree_digest(b)

    def test_ground_truth_boxes_inside_slide(self, synth_dir):
        payload = json.loads((synth_dir / "annotations" / "slide_0000.json").read_text())
        for b in payload["boxes"]:
            assert 0 <= b["x0"] < b["x1"] <= 512
            assert 0 <= b["y0"] < b["y1"] <= 512


class TestExitCodes:
    def test_detect_without_backend_is_validation_error(self, synth_dir, tmp_path, capsys):
        code = main(
            ["detect", "--manifest", str(synth_dir / "manifest.json"), "--out", str(tmp_path)]
        )
        assert code == 1
        assert "--stub or --model" in capsys.readouterr().err

    def test_missing_manifest_is_io_error(self, tmp_path):
        code = main(
            ["detect", "--manifest", str(tmp_path / "nope.json"), "--out", str(tmp_path), "--stub"]
        )
        assert code == 2

    def test_unknown_subcommand_exits_1(self):
        proc = subprocess.run(
            [sys.executable, "-m", "gcdetect.cli", "frobnicate"],
            capture_output=True, text=True,
        )
        assert proc.returncode == 1
        assert "usage" in proc.stderr.lower()

    def test_unknown_flag_exits_1(self):
        proc = subprocess.run(
            [sys.executable, "-m", "gcdetect.cli", "synth", "--bogus-flag", "1"],
            capture_output=True, text=True,
        )
        assert proc.returncode == 1

    def test_console_entry_point_help(self):
        proc = subprocess.run(
            [sys.executable, "-m", "gcdetect.cli", "--help"], capture_output=True, text=True
        )
        assert proc.returncode == 0
        assert "pipeline" in proc.stdout


class TestConfigFile:
    def test_config_supplies_flags_and_cli_overrides(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"out": str(tmp_path / "from_config"), "seed": 3, "count": 1, "size": 512}))
        assert main(["synth", "--config", str(cfg)]) == 0
        assert (tmp_path / "from_config" / "manifest.json").is_file()

        assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "cli_wins")]) == 0
        assert (tmp_path / "cli_wins" / "manifest.json").is_file()

    def test_run_metadata_is_a_valid_config(self, tmp_path):
        out = tmp_path / "first"
        assert main(["synth", "--out", str(out), "--seed", "5", "--count", "1", "--size", "512"]) == 0
        meta = out / "run_metadata.json"
        assert meta.is_file()
        rerun = tmp_path / "second"
        assert main(["synth", "--config", str(meta), "--out", str(rerun)]) == 0
        assert tree_digest(out) == tree_digest(rerun)

    def test_malformed_config_rejected(self, tmp_path):
        cfg = tmp_path / "bad.json"
        cfg.write_text("{nope")
        assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "x")]) == 1


class TestPipelineCommands:
    def test_tile_command(self, synth_dir, tmp_path):
        out = tmp_path / "tiles"
        assert main(["tile", "--manifest", str(synth_dir / "manifest.json"), "--out", str(out)]) == 0
        lines = (out / "tiles.jsonl").read_text().strip().splitlines()
        assert len(lines) == 2 * 4  # two 512px slides, 2x2 grid of 244px tiles
        rec = json.loads(lines[0])
        assert rec["box"] == [0, 0, 244, 244]

    def test_propose_dumps_are_worker_invariant(self, synth_dir, tmp_path):
        outs = []
        for name, workers in (("w1", "1"), ("w4", "4")):
            out = tmp_path / name
            code = main([
                "propose", "--manifest", str(synth_dir / "manifest.json"),
                "--out", str(out), "--workers", workers,
            ])
            assert code == 0
            outs.append(tree_digest(out))
        assert outs[0] == outs[1]

    def test_detect_eval_overlay_chain(self, synth_dir, tmp_path):
        out = tmp_path / "run"
        code = main([
            "detect", "--manifest", str(synth_dir / "manifest.json"),
            "--out", str(out), "--stub",
        ])
        assert code == 0
        assert (out / "detections" / "slide_0000.json").is_file()

        code = main([
            "eval", "--manifest", str(synth_dir / "manifest.json"),
            "--pred", str(out / "detections"), "--ref", str(synth_dir / "annotations"),
            "--out", str(out), "--mode-label", "center",
        ])
        assert code == 0
        assert (out / "report.json").is_file()
        assert (out / "report.csv").read_text().splitlines()[0] == "mode,mean_iou"
        assert (out / "discrepancy.csv").read_text().splitlines()[-1].startswith("Total,")

        code = main([
            "overlay", "--manifest", str(synth_dir / "manifest.json"),
            "--out", str(out),
            "--sources", str(synth_dir / "annotations"), str(out / "detections"),
        ])
        assert code == 0
        assert (out / "overlays" / "slide_0000.png").is_file()

    def test_build_dataset_contract(self, synth_dir, tmp_path):
        out = tmp_path / "ds"
        code = main([
            "build-dataset", "--manifest", str(synth_dir / "manifest.json"),
            "--annotations", str(synth_dir / "annotations"),
            "--out", str(out), "--seed", "1",
        ])
        assert code == 0
        index = out / "index.csv"
        lines = index.read_text().strip().splitlines()
        assert lines[0] == "path,label,slide_id,x0,y0,x1,y1,max_iou"
        assert len(lines) > 1
        labels = {row.split(",")[1] for row in lines[1:]}
        assert labels <= {"roi", "background"}
        assert "roi" in labels
        first_rel = lines[1].split(",")[0]
        assert (out / first_rel).is_file()
