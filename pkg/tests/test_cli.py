"""Tests for the command-line interface: outputs, determinism, manifests,
and exit codes."""

import json
import os

import numpy as np
import pytest

from curvemrf.cli import main
from curvemrf.core import (PatternBank, bank_with_specials,
                           boundary_anchor_mask, cutoff_only_bank)
from curvemrf.learning import ErrorTrace
from curvemrf.pnm import read_pnm, write_pnm
from curvemrf.shapes import sample_shape
from curvemrf.tasks import BACKGROUND, FOREGROUND, FREE

TRAIN_ARGS = ["--K", "4", "--orientations", "2", "--curvature-bins", "2",
              "--samples", "150", "--iterations", "2", "--seed", "1"]


def run(*args) -> int:
    return main(list(args))


@pytest.fixture(scope="module")
def bank_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("bank") / "bank.json"
    bank_with_specials([], side=4, f_max=2.0).save(path)
    return str(path)


@pytest.fixture(scope="module")
def cutoff_bank_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cutoff") / "bank.json"
    cutoff_only_bank(4, 2.0).save(path)
    return str(path)


def write_mask(path, tags):
    write_pnm(path, tags)
    return str(path)


def make_inpaint_mask():
    tags = np.full((12, 12), FREE, dtype=np.uint8)
    tags[3:6, 3:6] = FOREGROUND
    tags[:, 10] = BACKGROUND
    tags[10, :] = BACKGROUND
    return tags


def make_segment_fixtures(tmp_path):
    rng = np.random.default_rng(0)
    img = np.zeros((16, 16, 3))
    img[:, :8] = [0.2, 0.3, 0.7]
    img[:, 8:] = [0.8, 0.6, 0.2]
    img = np.clip(img + rng.normal(0, 0.02, img.shape), 0, 1)
    image_path = tmp_path / "img.ppm"
    write_pnm(image_path, (img * 255).astype(np.uint8))
    tags = np.full((16, 16), FREE, dtype=np.uint8)
    tags[6:10, 12:14] = FOREGROUND
    tags[6:10, 2:4] = BACKGROUND
    strokes_path = tmp_path / "strokes.pgm"
    write_pnm(strokes_path, tags)
    truth = np.zeros((16, 16), dtype=np.uint8)
    truth[:, 8:] = 1
    return str(image_path), str(strokes_path), truth


class TestTrain:
    def test_writes_bank_trace_manifest(self, tmp_path):
        out = tmp_path / "run"
        out.mkdir()
        assert run("train", "--outdir", str(out), *TRAIN_ARGS) == 0
        bank = PatternBank.load(out / "bank.json")
        assert bank.side == 4
        assert len(bank.patterns) == 3 + 4
        trace = ErrorTrace.read_csv(out / "trace.csv")
        assert len(trace) >= 2
        assert all(
            b <= a + 1e-9
            for a, b in zip(trace.train_errors, trace.train_errors[1:])
        )
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "train"
        assert manifest["params"]["orientations"] == 2

    def test_missing_outdir_exits_2(self, tmp_path):
        missing = tmp_path / "nope"
        with pytest.raises(SystemExit) as err:
            run("train", "--outdir", str(missing), *TRAIN_ARGS)
        assert err.value.code == 2
        assert not missing.exists()

    def test_deterministic_and_rerun(self, tmp_path):
        first, second, third = (tmp_path / n for n in ("a", "b", "c"))
        for d in (first, second, third):
            d.mkdir()
        assert run("train", "--outdir", str(first), *TRAIN_ARGS) == 0
        assert run("train", "--outdir", str(second), *TRAIN_ARGS) == 0
        assert (first / "bank.json").read_bytes() == (
            second / "bank.json"
        ).read_bytes()
        assert (first / "trace.csv").read_bytes() == (
            second / "trace.csv"
        ).read_bytes()
        assert run("rerun", "--manifest", str(first / "manifest.json"),
                   "--outdir", str(third)) == 0
        assert (first / "bank.json").read_bytes() == (
            third / "bank.json"
        ).read_bytes()

    def test_inconsistent_pattern_flags(self, tmp_path):
        out = tmp_path / "run"
        out.mkdir()
        with pytest.raises(SystemExit) as err:
            run("train", "--outdir", str(out), "--K", "4",
                "--patterns", "5", "--orientations", "2",
                "--curvature-bins", "2", "--samples", "100")
        assert err.value.code == 1


class TestEvalApprox:
    def test_cutoff_bank_matches_boundary_count(self, tmp_path,
                                                cutoff_bank_file):
        out = tmp_path / "eval"
        out.mkdir()
        assert run("eval-approx", "--outdir", str(out), "--bank",
                   cutoff_bank_file, "--shapes", "circles", "--n", "3",
                   "--dims", "32", "--seed", "5") == 0
        rows = (out / "pairs.csv").read_text().strip().splitlines()[1:]
        assert len(rows) == 3
        rng = np.random.default_rng(5)
        for row in rows:
            shape = sample_shape("circle", rng, (32, 32), 2.0)
            model_per_length = float(row.split(",")[1])
            anchored = boundary_anchor_mask(shape.labeling, 4).sum()
            expected = 2.0 * anchored / shape.true_length
            assert model_per_length == pytest.approx(expected, rel=1e-9)
            ceiling = 2.0 * shape.boundary_count / shape.true_length
            assert model_per_length <= ceiling + 1e-9
        stats = json.loads((out / "stats.json").read_text())
        assert set(stats) == {"n", "pearson", "mean_signed_relative_error",
                              "mean_absolute_relative_error"}

    def test_deterministic(self, tmp_path, cutoff_bank_file):
        dirs = []
        for name in ("x", "y"):
            d = tmp_path / name
            d.mkdir()
            assert run("eval-approx", "--outdir", str(d), "--bank",
                       cutoff_bank_file, "--shapes", "fourier", "--n", "2",
                       "--dims", "80", "--seed", "3") == 0
            dirs.append(d)
        assert (dirs[0] / "pairs.csv").read_bytes() == (
            dirs[1] / "pairs.csv"
        ).read_bytes()
        assert (dirs[0] / "stats.json").read_bytes() == (
            dirs[1] / "stats.json"
        ).read_bytes()


class TestInpaint:
    def test_constraints_and_reports(self, tmp_path, bank_file):
        mask_path = write_mask(tmp_path / "mask.pgm", make_inpaint_mask())
        out = tmp_path / "out"
        out.mkdir()
        assert run("inpaint", "--outdir", str(out), "--bank", bank_file,
                   "--mask", mask_path, "--passes", "30") == 0
        labeling = read_pnm(out / "labeling.pgm")
        tags = make_inpaint_mask()
        assert (labeling[tags == FOREGROUND] == 255).all()
        assert (labeling[tags == BACKGROUND] == 0).all()
        report = json.loads((out / "report.json").read_text())
        assert report["polished_energy"] <= report["rounded_energy"] + 1e-9
        assert report["lower_bound"] <= report["energy"] + 1e-6
        assert report["passes"] == 30
        trace_rows = (out / "lb_trace.csv").read_text().strip().splitlines()
        assert len(trace_rows) == 31
        assert read_pnm(out / "min_marginals.pgm").shape == (12, 12)

    def test_empty_mask_gives_all_background(self, tmp_path, bank_file):
        tags = np.full((8, 8), FREE, dtype=np.uint8)
        mask_path = write_mask(tmp_path / "free.pgm", tags)
        out = tmp_path / "out"
        out.mkdir()
        assert run("inpaint", "--outdir", str(out), "--bank", bank_file,
                   "--mask", mask_path, "--passes", "10") == 0
        assert (read_pnm(out / "labeling.pgm") == 0).all()
        report = json.loads((out / "report.json").read_text())
        assert report["energy"] == pytest.approx(0.0, abs=1e-9)

    def test_oversized_mask_rejected(self, tmp_path, bank_file):
        tags = np.full((161, 161), FREE, dtype=np.uint8)
        mask_path = write_mask(tmp_path / "big.pgm", tags)
        out = tmp_path / "out"
        out.mkdir()
        assert run("inpaint", "--outdir", str(out), "--bank", bank_file,
                   "--mask", mask_path) == 1
        assert not (out / "labeling.pgm").exists()

    def test_deterministic(self, tmp_path, bank_file):
        mask_path = write_mask(tmp_path / "mask.pgm", make_inpaint_mask())
        outputs = []
        for name in ("p", "q"):
            d = tmp_path / name
            d.mkdir()
            assert run("inpaint", "--outdir", str(d), "--bank", bank_file,
                       "--mask", mask_path, "--passes", "15") == 0
            outputs.append(d)
        for fname in ("labeling.pgm", "lb_trace.csv", "min_marginals.pgm",
                      "report.json"):
            assert (outputs[0] / fname).read_bytes() == (
                outputs[1] / fname
            ).read_bytes()


class TestSegment:
    def test_two_color_split(self, tmp_path, bank_file):
        image, strokes, truth = make_segment_fixtures(tmp_path)
        out = tmp_path / "out"
        out.mkdir()
        assert run("segment", "--outdir", str(out), "--bank", bank_file,
                   "--image", image, "--strokes", strokes,
                   "--lambda", "1.0", "--passes", "30") == 0
        labeling = (read_pnm(out / "labeling.pgm") > 0).astype(np.uint8)
        accuracy = (labeling == truth).mean()
        assert accuracy >= 0.95
        report = json.loads((out / "report.json").read_text())
        assert report["lower_bound"] <= report["energy"] + 1e-6

    def test_lambda_zero_is_likelihood_argmax(self, tmp_path, bank_file):
        image, strokes, truth = make_segment_fixtures(tmp_path)
        out = tmp_path / "out"
        out.mkdir()
        assert run("segment", "--outdir", str(out), "--bank", bank_file,
                   "--image", image, "--strokes", strokes,
                   "--lambda", "0") == 0
        labeling = (read_pnm(out / "labeling.pgm") > 0).astype(np.uint8)
        assert (labeling == truth).mean() >= 0.95
        report = json.loads((out / "report.json").read_text())
        assert report["prior_weight"] == 0.0
        assert "energy" not in report

    def test_one_sided_strokes_rejected(self, tmp_path, bank_file):
        image, _, _ = make_segment_fixtures(tmp_path)
        tags = np.full((16, 16), FREE, dtype=np.uint8)
        tags[4:6, 4:6] = FOREGROUND
        strokes = write_mask(tmp_path / "oneside.pgm", tags)
        out = tmp_path / "out"
        out.mkdir()
        assert run("segment", "--outdir", str(out), "--bank", bank_file,
                   "--image", image, "--strokes", strokes) == 1

    def test_lambda_sweep_report(self, tmp_path, bank_file):
        image, strokes, _ = make_segment_fixtures(tmp_path)
        out = tmp_path / "out"
        out.mkdir()
        assert run("segment", "--outdir", str(out), "--bank", bank_file,
                   "--image", image, "--strokes", strokes,
                   "--lambda", "1.0", "--passes", "15",
                   "--sweep", "0.5,2.0") == 0
        sweep = json.loads((out / "sweep.json").read_text())
        assert sweep["lambdas"] == [0.5, 2.0]
        assert len(sweep["boundary_counts"]) == 2
        assert isinstance(sweep["monotone_nonincreasing"], bool)


class TestBaseline:
    def test_line_is_free(self, tmp_path):
        out = tmp_path / "out"
        out.mkdir()
        assert run("baseline", "--outdir", str(out), "--scenario", "line",
                   "--length", "12") == 0
        report = json.loads((out / "report.json").read_text())
        assert report["cost"] == 0.0
        assert report["staircase_cost"] == 0.0

    def test_quarter_slope_beats_staircase(self, tmp_path):
        out = tmp_path / "out"
        out.mkdir()
        assert run("baseline", "--outdir", str(out), "--scenario",
                   "line-quarter-slope", "--length", "16") == 0
        report = json.loads((out / "report.json").read_text())
        assert 0.0 < report["cost"] < report["staircase_cost"]

    def test_quarter_circle_path(self, tmp_path):
        out = tmp_path / "out"
        out.mkdir()
        assert run("baseline", "--outdir", str(out), "--scenario",
                   "quarter-circle", "--radius", "8") == 0
        report = json.loads((out / "report.json").read_text())
        assert report["cost"] > 0.0
        rows = (out / "path.csv").read_text().strip().splitlines()[1:]
        points = [tuple(int(v) for v in r.split(",")) for r in rows]
        assert points[0] == (8, 0)
        assert points[-1] == (0, 8)

    def test_bad_slope_length(self, tmp_path):
        out = tmp_path / "out"
        out.mkdir()
        assert run("baseline", "--outdir", str(out), "--scenario",
                   "line-quarter-slope", "--length", "13") == 1


class TestRerun:
    def test_baseline_rerun_is_byte_identical(self, tmp_path):
        first, second = tmp_path / "a", tmp_path / "b"
        first.mkdir()
        second.mkdir()
        assert run("baseline", "--outdir", str(first), "--scenario",
                   "quarter-circle", "--radius", "6") == 0
        assert run("rerun", "--manifest", str(first / "manifest.json"),
                   "--outdir", str(second)) == 0
        for fname in ("report.json", "path.csv"):
            assert (first / fname).read_bytes() == (
                second / fname
            ).read_bytes()

    def test_unknown_manifest_command(self, tmp_path):
        manifest = tmp_path / "manifest.json"
        manifest.write_text(json.dumps({"command": "serve", "params": {}}))
        with pytest.raises(SystemExit) as err:
            run("rerun", "--manifest", str(manifest))
        assert err.value.code == 1
