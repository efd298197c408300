"""End-to-end coverage of the command-line surface.

Runs every subcommand in-process through main() against tiny generated
corpora, pinning the exit-code contract, the artifact layouts, and
determinism under a repeated seed.
"""

import filecmp
import json

import numpy as np
import pytest

from camcond.blur import defocus_kernel, kernel_mtf
from camcond.cli import main
from camcond.image import save_gray
from camcond.iopc import Iopc
from camcond.scenes import textured_patch

RECIPE_DEFOCUS = '[{"kind":"defocus","extent":7},{"kind":"noise","sources":"dcsn","sigma":10}]'


@pytest.fixture(scope="session")
def clean_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("clean")
    for i in range(2):
        save_gray(textured_patch(1000 + i, size=256), d / f"img{i}.pgm")
    return d


@pytest.fixture(scope="session")
def corrupted_dir(clean_dir, tmp_path_factory):
    d = tmp_path_factory.mktemp("corrupted")
    rc = main(["corrupt", "--input", str(clean_dir), "--out", str(d),
               "--seed", "7", "--recipe", RECIPE_DEFOCUS])
    assert rc == 0
    return d


# configuration handling


class TestConfig:
    def test_toml_config_file_drives_a_run(self, clean_dir, tmp_path):
        cfg = tmp_path / "run.toml"
        cfg.write_text(
            f'seed = 9\ninput = "{clean_dir}"\nout = "{tmp_path / "out"}"\n'
            'recipe = [{kind = "defocus", extent = 7}]\n')
        assert main(["corrupt", "--config", str(cfg)]) == 0
        assert (tmp_path / "out" / "img0.pgm").is_file()

    def test_flags_override_config_file_values(self, clean_dir, tmp_path):
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps({
            "seed": 9, "input": str(clean_dir), "out": str(tmp_path / "a"),
            "recipe": [{"kind": "defocus", "extent": 7}]}))
        assert main(["corrupt", "--config", str(cfg),
                     "--out", str(tmp_path / "b")]) == 0
        assert not (tmp_path / "a").exists()
        manifest = json.loads((tmp_path / "b" / "manifest.json").read_text())
        assert manifest["run"]["options"]["out"] == str(tmp_path / "b")
        assert manifest["run"]["options"]["seed"] == 9

    def test_missing_config_file_exits_2(self, tmp_path):
        assert main(["corrupt", "--config", str(tmp_path / "no.toml")]) == 2

    def test_malformed_toml_exits_2(self, tmp_path):
        cfg = tmp_path / "run.toml"
        cfg.write_text("seed = [unclosed\n")
        assert main(["corrupt", "--config", str(cfg)]) == 2

    def test_unsupported_config_suffix_exits_2(self, tmp_path):
        cfg = tmp_path / "run.yaml"
        cfg.write_text("seed: 1\n")
        assert main(["corrupt", "--config", str(cfg)]) == 2


@pytest.mark.parametrize("args", [
    ["corrupt", "--input", "x", "--out", "y", "--recipe", "[]"],
    ["build-iopc", "--out", "y"],
    ["reproduce", "--figure", "table2", "--out", "y"],
])
def test_randomized_subcommands_require_a_seed(args, capsys):
    assert main(args) == 2
    assert "seed" in capsys.readouterr().err


def test_unknown_estimator_rejected_before_any_data_is_read(tmp_path, capsys):
    # the input directory does not even exist; parsing must fail first
    rc = main(["estimate", "--input", str(tmp_path / "missing"),
               "--out", str(tmp_path / "x.jsonl"), "--methods", "wavelet"])
    assert rc == 2
    assert "wavelet" in capsys.readouterr().err


def test_unknown_figure_id_exits_2(tmp_path, capsys):
    assert main(["reproduce", "--figure", "fig1", "--seed", "1",
                 "--out", str(tmp_path)]) == 2
    assert "fig1" in capsys.readouterr().err


# corrupt


class TestCorrupt:
    def test_writes_images_sidecars_and_manifest(self, corrupted_dir):
        assert (corrupted_dir / "img0.pgm").is_file()
        assert (corrupted_dir / "img1.gt.json").is_file()
        manifest = json.loads((corrupted_dir / "manifest.json").read_text())
        assert manifest["run"]["subcommand"] == "corrupt"
        assert manifest["images"] == ["img0.pgm", "img1.pgm"]

    def test_sidecar_records_the_true_kernel_curve(self, corrupted_dir):
        sidecar = json.loads((corrupted_dir / "img0.gt.json").read_text())
        assert sidecar["source"] == "img0.pgm"
        kernel_entry = sidecar["kernels"][0]
        assert kernel_entry["kind"] == "defocus"
        want = kernel_mtf(defocus_kernel(7))
        np.testing.assert_allclose(kernel_entry["mtf"]["h"], want.h, atol=1e-12)
        np.testing.assert_allclose(kernel_entry["mtf"]["v"], want.v, atol=1e-12)

    def test_photon_noise_before_motion_is_marked_pre_blur(self, clean_dir, tmp_path):
        rc = main(["corrupt", "--input", str(clean_dir), "--out", str(tmp_path),
                   "--seed", "21", "--recipe",
                   '[{"kind":"noise","sources":"photon","sigma":8},'
                   '{"kind":"linear-motion","extent":3}]'])
        assert rc == 0
        sidecar = json.loads((tmp_path / "img0.gt.json").read_text())
        assert sidecar["noises"][0]["position"] == "pre_blur"

    def test_photon_noise_after_blur_is_a_config_error(self, clean_dir, tmp_path):
        rc = main(["corrupt", "--input", str(clean_dir), "--out", str(tmp_path),
                   "--seed", "21", "--recipe",
                   '[{"kind":"linear-motion","extent":3},'
                   '{"kind":"noise","sources":"photon","sigma":8}]'])
        assert rc == 2

    def test_same_seed_reproduces_identical_bytes(self, clean_dir, tmp_path):
        for tag in ("a", "b"):
            rc = main(["corrupt", "--input", str(clean_dir),
                       "--out", str(tmp_path / tag), "--seed", "7",
                       "--recipe", RECIPE_DEFOCUS])
            assert rc == 0
        assert filecmp.cmp(tmp_path / "a" / "img0.pgm",
                           tmp_path / "b" / "img0.pgm", shallow=False)

    def test_empty_input_directory_exits_3(self, tmp_path):
        (tmp_path / "empty").mkdir()
        rc = main(["corrupt", "--input", str(tmp_path / "empty"),
                   "--out", str(tmp_path / "out"), "--seed", "1",
                   "--recipe", RECIPE_DEFOCUS])
        assert rc == 3

    def test_bad_recipe_kind_exits_2(self, clean_dir, tmp_path, capsys):
        rc = main(["corrupt", "--input", str(clean_dir), "--out", str(tmp_path),
                   "--seed", "1", "--recipe", '[{"kind":"warp"}]'])
        assert rc == 2
        assert "warp" in capsys.readouterr().err


# estimate


class TestEstimate:
    def test_jsonl_has_run_header_then_records(self, corrupted_dir, tmp_path):
        out = tmp_path / "est.jsonl"
        rc = main(["estimate", "--input", str(corrupted_dir), "--out", str(out),
                   "--methods", "pca,mtf-oracle"])
        assert rc == 0
        lines = [json.loads(l) for l in out.read_text().splitlines()]
        assert lines[0]["record"] == "run"
        assert lines[0]["subcommand"] == "estimate"
        noise_records = [l for l in lines if l.get("method") == "pca"]
        # two 256px images tile into four 128px noise patches each
        assert len(noise_records) == 8
        assert all("sigma_hat" in r and r["origin"] is not None
                   for r in noise_records)

    def test_oracle_records_carry_the_sidecar_product(self, corrupted_dir, tmp_path):
        out = tmp_path / "est.jsonl"
        assert main(["estimate", "--input", str(corrupted_dir), "--out", str(out),
                     "--methods", "mtf-oracle"]) == 0
        lines = [json.loads(l) for l in out.read_text().splitlines()]
        record = next(l for l in lines if l.get("method") == "mtf-oracle")
        want = kernel_mtf(defocus_kernel(7))
        np.testing.assert_allclose(record["mtf_h"], want.h, atol=1e-12)
        np.testing.assert_allclose(record["mtf_v"], want.v, atol=1e-12)

    def test_oracle_without_sidecars_exits_3(self, clean_dir, tmp_path):
        rc = main(["estimate", "--input", str(clean_dir),
                   "--out", str(tmp_path / "x.jsonl"), "--methods", "mtf-oracle"])
        assert rc == 3

    def test_spectral_without_calibration_dir_exits_2(self, corrupted_dir, tmp_path):
        rc = main(["estimate", "--input", str(corrupted_dir),
                   "--out", str(tmp_path / "x.jsonl"), "--methods", "mtf-spectral"])
        assert rc == 2

    def test_spectral_with_calibration_dir_runs(self, clean_dir, corrupted_dir,
                                                tmp_path):
        out = tmp_path / "est.jsonl"
        rc = main(["estimate", "--input", str(corrupted_dir), "--out", str(out),
                   "--methods", "mtf-spectral", "--calibration", str(clean_dir)])
        assert rc == 0
        lines = [json.loads(l) for l in out.read_text().splitlines()]
        record = next(l for l in lines if l.get("method") == "mtf-spectral")
        assert len(record["mtf_h"]) == 8
        assert all(0.0 <= v <= 1.0 for v in record["mtf_h"])


# evaluate


class TestEvaluate:
    def test_oracle_rows_score_zero_and_noise_rows_appear(self, corrupted_dir,
                                                          tmp_path, capsys):
        rc = main(["evaluate", "--input", str(corrupted_dir), "--out", str(tmp_path),
                   "--methods", "pca,bf,mtf-oracle"])
        assert rc == 0
        blur_lines = (tmp_path / "blur_amae.csv").read_text().splitlines()
        assert blur_lines[0].startswith("method,kernels,")
        oracle_row = next(l for l in blur_lines if l.startswith("mtf-oracle"))
        assert oracle_row.endswith(",0,0,0")
        noise_lines = (tmp_path / "noise_sigma.csv").read_text().splitlines()
        methods = {l.split(",")[0] for l in noise_lines[1:]}
        assert methods == {"pca", "bf"}
        # the dcsn target was 10; medians should land in the neighborhood
        for line in noise_lines[1:]:
            median = float(line.split(",")[6])
            assert 5.0 < median < 16.0

    def test_inputs_without_sidecars_exit_3(self, clean_dir, tmp_path):
        rc = main(["evaluate", "--input", str(clean_dir), "--out", str(tmp_path)])
        assert rc == 3


# build-iopc and control


class TestBuildIopc:
    def test_artifacts_and_embedded_run(self, tmp_path):
        rc = main(["build-iopc", "--out", str(tmp_path), "--seed", "11",
                   "--n-scenes", "3", "--sigma-levels", "0,10,25",
                   "--blur-levels", "0,7,15"])
        assert rc == 0
        grid = Iopc.load(tmp_path / "iopc.json")
        assert grid.metadata["run"]["subcommand"] == "build-iopc"
        assert grid.metadata["run"]["options"]["seed"] == 11
        csv_lines = (tmp_path / "iopc.csv").read_text().splitlines()
        assert csv_lines[0].startswith("sigma,")
        assert len(csv_lines) == 4

    def test_grid_orders_clean_above_degraded(self, tmp_path):
        assert main(["build-iopc", "--out", str(tmp_path), "--seed", "11",
                     "--n-scenes", "3", "--sigma-levels", "0,10,25",
                     "--blur-levels", "0,7,15"]) == 0
        grid = Iopc.load(tmp_path / "iopc.json")
        clean = grid.lookup_ap(0.0, 1.0)
        degraded = grid.lookup_ap(25.0, grid.mtf_grid[0])
        assert degraded < clean

    def test_bad_noise_method_exits_2(self, tmp_path):
        assert main(["build-iopc", "--out", str(tmp_path), "--seed", "1",
                     "--noise-method", "wavelet"]) == 2


@pytest.fixture(scope="session")
def iopc_file(tmp_path_factory):
    d = tmp_path_factory.mktemp("grid")
    rc = main(["build-iopc", "--out", str(d), "--seed", "11", "--n-scenes", "3",
               "--sigma-levels", "0,10,25", "--blur-levels", "0,7,15"])
    assert rc == 0
    return d / "iopc.json"


class TestControl:
    def test_action_record_covers_the_contract(self, iopc_file, tmp_path):
        out = tmp_path / "action.json"
        rc = main(["control", "--iopc", str(iopc_file), "--sigma-hat", "12",
                   "--mtf-hat", "0.55", "--out", str(out)])
        assert rc == 0
        record = json.loads(out.read_text())
        for key in ("alpha", "direction", "new_exposure_s", "new_iso",
                    "predicted_ap_before", "predicted_ap_after", "clipped",
                    "blur_extent_before", "blur_extent_after",
                    "sigma_after", "mtf_after"):
            assert key in record
        assert record["direction"] in ("blur-reduce", "noise-reduce", "hold")
        assert record["alpha"] >= 1.0
        assert record["run"]["subcommand"] == "control"
        assert record["predicted_ap_after"] >= record["predicted_ap_before"]

    def test_camera_file_limits_mark_clipping(self, iopc_file, tmp_path):
        camera = tmp_path / "camera.json"
        camera.write_text(json.dumps({
            "exposure_s": 0.01, "iso": 1.0,
            "exposure_range": [0.0095, 0.012], "iso_range": [0.9, 1.1]}))
        out = tmp_path / "action.json"
        rc = main(["control", "--iopc", str(iopc_file), "--sigma-hat", "12",
                   "--mtf-hat", "0.55", "--camera", str(camera),
                   "--out", str(out)])
        assert rc == 0
        record = json.loads(out.read_text())
        assert record["clipped"] is True
        assert 0.0095 <= record["new_exposure_s"] <= 0.012
        assert 0.9 <= record["new_iso"] <= 1.1

    def test_query_outside_the_grid_exits_3(self, iopc_file, capsys):
        rc = main(["control", "--iopc", str(iopc_file), "--sigma-hat", "500",
                   "--mtf-hat", "0.9"])
        assert rc == 3
        assert "hull" in capsys.readouterr().err

    def test_missing_grid_file_exits_3(self, tmp_path):
        assert main(["control", "--iopc", str(tmp_path / "no.json"),
                     "--sigma-hat", "1", "--mtf-hat", "0.9"]) == 3


# reproduce


class TestReproduce:
    def test_division_recovery_table_is_deterministic(self, tmp_path):
        for tag in ("a", "b"):
            rc = main(["reproduce", "--figure", "table2", "--seed", "5",
                       "--out", str(tmp_path / tag)])
            assert rc == 0
        first = (tmp_path / "a" / "table2.csv").read_bytes()
        assert first == (tmp_path / "b" / "table2.csv").read_bytes()

    def test_division_recovery_table_layout(self, tmp_path):
        assert main(["reproduce", "--figure", "table2", "--seed", "5",
                     "--out", str(tmp_path)]) == 0
        lines = (tmp_path / "table2.csv").read_text().splitlines()
        assert lines[0] == "blur_extent,noise_sigma,mae_h,mae_v,amae,expected_amae"
        cells = [line.split(",") for line in lines[1:]]
        assert [(c[0], c[1]) for c in cells] == [
            ("3", "10"), ("3", "25"), ("11", "10"), ("11", "25")]
        # expected error is noise-free, so it repeats within each extent
        assert cells[0][5] == cells[1][5]
        assert cells[2][5] == cells[3][5]
        for c in cells:
            assert 0.0 < float(c[4]) < 40.0

    def test_walkthrough_states_tell_the_correction_story(self, tmp_path):
        assert main(["reproduce", "--figure", "fig10-walkthrough", "--seed", "3",
                     "--out", str(tmp_path)]) == 0
        trace = json.loads((tmp_path / "walkthrough.json").read_text())
        names = [s["name"] for s in trace["states"]]
        assert names == ["reference", "degraded", "reduced-exposure",
                         "restored-gain"]
        reference, degraded, reduced, restored = trace["states"]
        assert reference["estimates"]["mtf_hat"] == 1.0
        assert reference["estimates"]["blur_extent_hat"] == 0.0
        # 750 px/s over 28 ms is a 21 px streak; the blind reading lands near
        assert degraded["true"]["blur_extent"] == pytest.approx(21.0)
        assert 15.0 < degraded["estimates"]["blur_extent_hat"] < 21.0
        assert 1.6 < trace["alpha"] < 2.4
        # the dimmed frame refuses a contrast estimate and scores worst
        assert reduced["estimates"]["mtf_hat"] is None
        assert reduced["detection"]["ap"] < reference["detection"]["ap"]
        assert restored["detection"]["ap"] > reduced["detection"]["ap"]
        assert restored["estimates"]["sigma_hat"] > degraded["estimates"]["sigma_hat"]
        assert restored["iso"] == pytest.approx(trace["alpha"])

    def test_heat_map_recipe_writes_grid_artifacts(self, tmp_path):
        rc = main(["reproduce", "--figure", "fig9-heat", "--seed", "2",
                   "--out", str(tmp_path), "--n-scenes", "3",
                   "--sigma-levels", "0,10,25", "--blur-levels", "0,7,15"])
        assert rc == 0
        assert (tmp_path / "heat.csv").is_file()
        assert not (tmp_path / "iopc.csv").exists()
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["run"]["options"]["figure"] == "fig9-heat"


def test_json_flag_prints_a_parseable_summary(clean_dir, tmp_path, capsys):
    rc = main(["corrupt", "--input", str(clean_dir), "--out", str(tmp_path),
               "--seed", "7", "--recipe", RECIPE_DEFOCUS, "--json"])
    assert rc == 0
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary["n_images"] == 2
    assert "message" in summary
