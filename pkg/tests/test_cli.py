"""Tests for the command-line interface."""

import csv
import hashlib
import os
import re

import pytest

from fglr.cli import load_case, main


def file_hashes(directory):
    out = {}
    for name in sorted(os.listdir(directory)):
        with open(os.path.join(directory, name), "rb") as fh:
            out[name] = hashlib.sha256(fh.read()).hexdigest()
    return out


def gen_case(path, scene="constant", size=32, seed=7, sigma=15.0, extra=()):
    rc = main([
        "gen", "--scene", scene, "--size", str(size), "--seed", str(seed),
        "--sigma-noise", str(sigma), "-o", str(path), *extra,
    ])
    assert rc == 0
    return path


RUN_FAST = ["--patch", "16", "--stride", "12", "--iters", "2"]


class TestGen:
    def test_writes_five_files_with_seed(self, tmp_path):
        case = gen_case(tmp_path / "case1", seed=9)
        names = sorted(os.listdir(case))
        assert names == [
            "calibration.txt", "input.png", "manifest.txt", "mask.pgm", "reference.png",
        ]
        manifest = (case / "manifest.txt").read_text()
        assert "seed = 9" in manifest

    def test_identical_flags_give_identical_bytes(self, tmp_path):
        a = gen_case(tmp_path / "a", scene="checker", seed=3)
        b = gen_case(tmp_path / "b", scene="checker", seed=3)
        assert file_hashes(a) == file_hashes(b)

    def test_bogus_scene_is_usage_error(self, tmp_path, capsys):
        rc = main(["gen", "--scene", "bogus", "-o", str(tmp_path / "x")])
        assert rc == 2

    def test_case_loads_back(self, tmp_path):
        case = gen_case(tmp_path / "case2", scene="ramp", size=32)
        loaded = load_case(str(case))
        assert loaded.label == "ramp"
        assert loaded.bayer.width == 64  # fisheye is 2x the rectified size
        assert loaded.reference.width == 32
        assert loaded.table.valid.any()


class TestRun:
    def test_joint_run_writes_image_and_csv(self, tmp_path, capsys):
        case = gen_case(tmp_path / "case", scene="checker", size=32)
        rc = main(["run", str(case), "--method", "joint", *RUN_FAST])
        assert rc == 0
        assert (case / "joint.png").exists()
        rows = list(csv.DictReader(open(case / "metrics.csv")))
        assert len(rows) == 1
        assert rows[0]["method"] == "joint"
        assert float(rows[0]["psnr_db"]) > 0
        assert 0.0 <= float(rows[0]["ssim"]) <= 1.0

    def test_three_methods_three_rows(self, tmp_path):
        case = gen_case(tmp_path / "case", scene="checker", size=32)
        for method in ("joint", "bilinear", "hql"):
            assert main(["run", str(case), "--method", method, *RUN_FAST]) == 0
        rows = list(csv.DictReader(open(case / "metrics.csv")))
        assert [r["method"] for r in rows] == ["joint", "bilinear", "hql"]

    def test_multifov_equivalent_flags(self, tmp_path):
        case = gen_case(tmp_path / "case", scene="constant", size=32, sigma=0.0)
        rc = main([
            "run", str(case), "--method", "joint",
            "--mu", "1", "--iters", "5", "--sigma-w", "0.01,0.02",
            "--patch", "16", "--stride", "12",
        ])
        assert rc == 0

    def test_nonconvergence_sets_warning_flag(self, tmp_path):
        case = gen_case(tmp_path / "case", scene="checker", size=32)
        cfg = tmp_path / "strict.txt"
        cfg.write_text("cg_tol = 1e-15\ncg_max_iterations = 1\n")
        rc = main([
            "run", str(case), "--method", "joint", "--config", str(cfg),
            "--patch", "16", "--stride", "12", "--iters", "1",
        ])
        assert rc == 0  # non-convergence is a warning, not a failure
        rows = list(csv.DictReader(open(case / "metrics.csv")))
        assert rows[0]["warnings"] == "cg_nonconverged"

    def test_preset_flag(self, tmp_path):
        case = gen_case(tmp_path / "case", scene="constant", size=32, sigma=0.0)
        rc = main(["run", str(case), "--preset", "multifov", "--patch", "16",
                   "--stride", "12", "--iters", "1"])
        assert rc == 0

    def test_missing_case_dir_is_input_error(self, tmp_path):
        rc = main(["run", str(tmp_path / "missing"), "--method", "joint"])
        assert rc == 2


class TestCompare:
    def test_single_case_table(self, tmp_path, capsys):
        case = gen_case(tmp_path / "case", scene="edges", size=32)
        rc = main(["compare", str(case), "--methods", "bilinear", *RUN_FAST])
        assert rc == 0
        out = capsys.readouterr().out
        assert "edges" in out and "mean" in out
        assert re.search(r"bilinear ssim", out)

    def test_empty_case_list_is_usage_error(self):
        assert main(["compare"]) == 2

    def test_unknown_method_rejected(self, tmp_path):
        case = gen_case(tmp_path / "case", scene="edges", size=32)
        assert main(["compare", str(case), "--methods", "voodoo"]) == 2

    def test_inconsistent_sizes_rejected(self, tmp_path):
        a = gen_case(tmp_path / "a", scene="edges", size=32)
        b = gen_case(tmp_path / "b", scene="edges", size=48)
        assert main(["compare", str(a), str(b), "--methods", "bilinear"]) == 2

    def test_joint_beats_bilinear_ssim_on_noisy_checker(self, tmp_path):
        case = gen_case(tmp_path / "case", scene="checker", size=64, seed=5, sigma=15.0)
        rc = main(["compare", str(case), "--methods", "joint,bilinear",
                   "--preset", "inhouse", *RUN_FAST])
        assert rc == 0
        rows = {r["method"]: r for r in csv.DictReader(open(case / "metrics.csv"))}
        assert float(rows["joint"]["ssim"]) >= float(rows["bilinear"]["ssim"])

    def test_thread_count_does_not_change_bytes(self, tmp_path):
        a = gen_case(tmp_path / "a", scene="checker", size=32, seed=5)
        b = gen_case(tmp_path / "b", scene="checker", size=32, seed=5)
        assert main(["compare", str(a), "--threads", "1", *RUN_FAST]) == 0
        assert main(["compare", str(b), "--threads", "4", *RUN_FAST]) == 0
        assert file_hashes(a) == file_hashes(b)


class TestBench:
    def test_stage_accounting(self, tmp_path, capsys):
        # Default configuration on a 64x64 case; well under the time budget.
        case = gen_case(tmp_path / "case", scene="checker", size=64)
        rc = main(["bench", str(case)])
        assert rc == 0
        out = capsys.readouterr().out
        stages = {}
        for line in out.splitlines():
            m = re.match(r"(mapping|graph|solve|aggregate|total)\s+([0-9.]+) s", line)
            if m:
                stages[m.group(1)] = float(m.group(2))
        assert set(stages) == {"mapping", "graph", "solve", "aggregate", "total"}
        assert all(v > 0 for v in stages.values())
        parts = stages["mapping"] + stages["graph"] + stages["solve"] + stages["aggregate"]
        assert abs(parts - stages["total"]) <= 0.1 * stages["total"]
        assert stages["total"] < 60.0

    def test_repeated_runs_same_output_hash(self, tmp_path, capsys):
        case = gen_case(tmp_path / "case", scene="texture", size=32)
        assert main(["bench", str(case), *RUN_FAST]) == 0
        first = capsys.readouterr().out
        assert main(["bench", str(case), *RUN_FAST]) == 0
        second = capsys.readouterr().out
        get_hash = lambda text: re.search(r"output sha256 (\w+)", text).group(1)
        assert get_hash(first) == get_hash(second)


class TestEnvironment:
    def test_bad_log_level_rejected(self, tmp_path, monkeypatch):
        monkeypatch.setenv("FGLR_LOG", "verbose")
        assert main(["gen", "--scene", "constant", "-o", str(tmp_path / "x")]) == 2

    def test_log_levels_accepted(self, tmp_path, monkeypatch):
        monkeypatch.setenv("FGLR_LOG", "debug")
        case = gen_case(tmp_path / "case", scene="constant", size=32)
        assert (case / "manifest.txt").exists()
