import csv
import json
import math

import numpy as np
import pytest

from batk.attack import AttackConfig
from batk.cli import main as cli_main
from batk.dataset import load_png
from batk.harness import (
    HarnessError,
    compare_attacks,
    gradcam_report,
    per_image_seed,
    read_results_csv,
    run_campaign,
    scaled_patch_region,
    width_sr_table,
)
from batk.metrics import mae_single, mse_single, psnr_single
from batk.tensor import DOMAIN_255
from batk.weights import load_model_file

from conftest import make_dataset_dir, small_conv_net


@pytest.fixture
def campaign_cfg():
    return AttackConfig(
        epsilon0=10.0, minimum=3.0, max_width=6, inner_limit=4,
        pixel_domain=DOMAIN_255, seed=11,
    )


@pytest.fixture
def dataset(tmp_path, rng):
    model = small_conv_net(rng, input_shape=(8, 8, 3), num_classes=3, domain=DOMAIN_255)
    return make_dataset_dir(tmp_path / "data", model, rng, n=12)


class TestRunCampaign:
    def test_filters_to_correctly_classified(self, dataset, tmp_path, campaign_cfg):
        model_path, manifest = dataset
        result = run_campaign(model_path, manifest, "boundary", campaign_cfg,
                              tmp_path / "out", timings=False)
        counts = result.summary["counts"]
        assert counts["manifest"] == 12
        assert counts["misclassified"] == 3  # every 4th image mislabeled
        assert counts["attacked"] == 9
        assert len(result.records) == 9

    def test_empty_m_set(self, tmp_path, rng, campaign_cfg):
        model = small_conv_net(rng, input_shape=(8, 8, 3), num_classes=3, domain=DOMAIN_255)
        model_path, manifest = make_dataset_dir(tmp_path / "d", model, rng, n=4,
                                                mislabel_every=1)
        result = run_campaign(model_path, manifest, "boundary", campaign_cfg,
                              tmp_path / "out", timings=False)
        assert result.summary["counts"]["attacked"] == 0
        assert result.summary["metrics"]["count_m"] == 0
        assert result.records == []

    def test_decode_failures_are_counted(self, dataset, tmp_path, campaign_cfg):
        model_path, manifest = dataset
        bad = manifest.parent / "bad.png"
        bad.write_bytes(b"not a png")
        rows = manifest.read_text().rstrip() + "\nbad.png,0\n"
        manifest.write_text(rows)
        result = run_campaign(model_path, manifest, "boundary", campaign_cfg,
                              tmp_path / "out", timings=False)
        assert result.summary["counts"]["decode_failures"] == 1

    def test_deterministic_csv_bytes(self, dataset, tmp_path, campaign_cfg):
        model_path, manifest = dataset
        out1, out2 = tmp_path / "o1", tmp_path / "o2"
        run_campaign(model_path, manifest, "boundary", campaign_cfg, out1, timings=False)
        run_campaign(model_path, manifest, "boundary", campaign_cfg, out2, timings=False)
        assert (out1 / "results.csv").read_bytes() == (out2 / "results.csv").read_bytes()
        assert (out1 / "traces.json").read_bytes() == (out2 / "traces.json").read_bytes()
        assert (out1 / "summary.json").read_bytes() == (out2 / "summary.json").read_bytes()

    def test_semantic_fields_stable_with_timings(self, dataset, tmp_path, campaign_cfg):
        model_path, manifest = dataset
        out1, out2 = tmp_path / "t1", tmp_path / "t2"
        run_campaign(model_path, manifest, "boundary", campaign_cfg, out1, timings=True)
        run_campaign(model_path, manifest, "boundary", campaign_cfg, out2, timings=True)
        rows1 = read_results_csv(out1 / "results.csv")
        rows2 = read_results_csv(out2 / "results.csv")
        for a, b in zip(rows1, rows2):
            a.pop("wall_time_ms")
            b.pop("wall_time_ms")
            assert a == b

    def test_summary_sr_matches_recount_from_csv(self, dataset, tmp_path, campaign_cfg):
        model_path, manifest = dataset
        result = run_campaign(model_path, manifest, "boundary", campaign_cfg,
                              tmp_path / "out", timings=False)
        rows = read_results_csv(tmp_path / "out" / "results.csv")
        flips = sum(1 for r in rows if r["success"] == "true")
        assert result.summary["metrics"]["sr"] == pytest.approx(flips / len(rows))

    def test_per_record_metrics_recomputable_from_float_dump(self, dataset, tmp_path,
                                                             campaign_cfg):
        model_path, manifest = dataset
        out = tmp_path / "out"
        run_campaign(model_path, manifest, "boundary", campaign_cfg, out,
                     timings=False, save_images=True)
        model = load_model_file(model_path)
        for row in read_results_csv(out / "results.csv"):
            image_id = row["image_id"]
            clean = load_png(manifest.parent / f"{image_id}.png", model.pixel_domain)
            adv = np.load(out / "images" / f"{image_id}_adv.npy")
            assert float(row["mse"]) == pytest.approx(mse_single(clean, adv), abs=1e-5)
            assert float(row["mae"]) == pytest.approx(mae_single(clean, adv), abs=1e-5)
            p = psnr_single(clean, adv, model.pixel_domain)
            if math.isfinite(p):
                assert float(row["psnr_db"]) == pytest.approx(p, abs=1e-5)

    def test_png_round_trip_within_quantization(self, dataset, tmp_path, campaign_cfg):
        model_path, manifest = dataset
        out = tmp_path / "out"
        run_campaign(model_path, manifest, "boundary", campaign_cfg, out,
                     timings=False, save_images=True)
        model = load_model_file(model_path)
        step = model.pixel_domain.hi / 255.0  # one 8-bit quantization step
        for row in read_results_csv(out / "results.csv"):
            image_id = row["image_id"]
            clean = load_png(out / "images" / f"{image_id}_clean.png", model.pixel_domain)
            adv = load_png(out / "images" / f"{image_id}_adv.png", model.pixel_domain)
            # quantization moves each element at most half a step
            assert abs(float(row["mae"]) - mae_single(clean, adv)) <= step
            rmse_csv = math.sqrt(float(row["mse"]))
            rmse_png = math.sqrt(mse_single(clean, adv))
            assert abs(rmse_csv - rmse_png) <= step

    def test_filter_soundness(self, dataset, tmp_path, campaign_cfg):
        model_path, manifest = dataset
        result = run_campaign(model_path, manifest, "boundary", campaign_cfg,
                              tmp_path / "out", timings=False)
        model = load_model_file(model_path)
        for entry in result.m_entries:
            clean = load_png(entry.path, model.pixel_domain)
            assert model.predict(clean) == entry.label

    def test_per_image_seed_is_stable(self):
        assert per_image_seed(7, 3) == per_image_seed(7, 3)
        assert per_image_seed(7, 3) != per_image_seed(7, 4)
        assert per_image_seed(8, 3) != per_image_seed(7, 3)


class TestWidthSrTable:
    def test_nondecreasing_and_last_equals_sr(self, dataset, tmp_path, campaign_cfg):
        model_path, manifest = dataset
        table = width_sr_table(model_path, manifest, campaign_cfg, out_dir=tmp_path / "o")
        srs = [sr for _, sr in table]
        assert srs == sorted(srs)
        result = run_campaign(model_path, manifest, "boundary", campaign_cfg,
                              tmp_path / "c", timings=False)
        assert srs[-1] == pytest.approx(result.summary["metrics"]["sr"])
        assert (tmp_path / "o" / "sr_table.csv").exists()

    def test_matches_hand_count_from_traces(self, dataset, tmp_path, campaign_cfg):
        model_path, manifest = dataset
        result = run_campaign(model_path, manifest, "boundary", campaign_cfg,
                              tmp_path / "out", timings=False)
        table = width_sr_table(model_path, manifest, campaign_cfg)
        traces = json.loads((tmp_path / "out" / "traces.json").read_text())
        m_count = len(result.records)
        for w, sr in table:
            hand = 0
            for payload in traces.values():
                firsts = [t["width"] for t in payload["trace"] if t["flipped"]]
                if firsts and firsts[0] <= w:
                    hand += 1
            assert sr == pytest.approx(hand / m_count)

    def test_rejects_unsorted_widths(self, dataset, campaign_cfg):
        model_path, manifest = dataset
        with pytest.raises(HarnessError):
            width_sr_table(model_path, manifest, campaign_cfg, widths=[3, 1, 2])


class TestCompareAttacks:
    def test_four_attacks_same_m(self, dataset, tmp_path, campaign_cfg):
        model_path, manifest = dataset
        rows = compare_attacks(model_path, manifest, campaign_cfg, tmp_path / "cmp",
                               region_inner_limit=6)
        assert [r["attack"] for r in rows] == ["boundary", "patch", "frame", "whole"]
        assert len({r["count_m"] for r in rows}) == 1
        for kind in ("boundary", "patch", "frame", "whole"):
            assert (tmp_path / "cmp" / kind / "results.csv").exists()
        assert (tmp_path / "cmp" / "compare.csv").exists()

    def test_whole_can_touch_everything_boundary_cannot(self, dataset, tmp_path,
                                                        campaign_cfg):
        model_path, manifest = dataset
        rows = compare_attacks(model_path, manifest, campaign_cfg, tmp_path / "cmp",
                               region_inner_limit=6)
        whole_rows = read_results_csv(tmp_path / "cmp" / "whole" / "results.csv")
        boundary_rows = read_results_csv(tmp_path / "cmp" / "boundary" / "results.csv")
        assert all(float(r["attacked_fraction"]) <= 1.0 for r in whole_rows)
        # boundary never exceeds its final mask fraction
        model = load_model_file(model_path)
        h, w, _ = model.input_shape
        for r in boundary_rows:
            bw = int(r["final_width"])
            inner_h, inner_w = max(h - 2 * bw, 0), max(w - 2 * bw, 0)
            mask_frac = 1 - (inner_h * inner_w) / (h * w)
            assert float(r["attacked_fraction"]) <= mask_frac + 1e-9

    def test_patch_scales_down_for_small_images(self):
        region = scaled_patch_region((32, 32, 3), 50)
        assert region.height == region.pwidth == round(32 * 50 / 224)
        region224 = scaled_patch_region((224, 224, 3), 50)
        assert region224.height == 50


class TestGradcamReport:
    def test_file_count_and_labels(self, dataset, tmp_path, campaign_cfg, rng):
        model_path, manifest = dataset
        result = run_campaign(model_path, manifest, "boundary", campaign_cfg,
                              tmp_path / "c", timings=False)
        samples = [r["image_id"] for r in result.records[:2]]
        widths = (1, 2, 3)
        out = tmp_path / "cam"
        report = gradcam_report(model_path, manifest, campaign_cfg, samples, out,
                                widths=widths, region_inner_limit=4)
        pngs = list(out.glob("*_cam.png"))
        assert len(pngs) == len(samples) * (1 + len(widths) + 2)
        rows = read_results_csv(out / "results.csv")
        by_key = {(r["image_id"], r["attack_kind"], r["final_width"]): r for r in rows}
        for sample_id, payload in report["samples"].items():
            for entry in payload["attacks"]:
                key_width = str(entry["width"]) if entry["attack"] != "patch" else None
                row = None
                for (rid, rkind, rwidth), r in by_key.items():
                    if rid == sample_id and rkind == entry["attack"]:
                        if entry["attack"] == "patch" or rwidth == str(entry["width"]):
                            row = r
                            break
                assert row is not None
                if entry["success"]:
                    assert int(row["adversarial_label"]) == entry["predicted_label"]
                else:
                    assert row["adversarial_label"] == ""
                    assert entry["predicted_label"] == payload["true_label"]

    def test_unknown_sample_rejected(self, dataset, tmp_path, campaign_cfg):
        model_path, manifest = dataset
        with pytest.raises(HarnessError):
            gradcam_report(model_path, manifest, campaign_cfg, ["nope"], tmp_path / "x")


class TestWorkers:
    def test_parallel_matches_serial(self, dataset, tmp_path, campaign_cfg):
        model_path, manifest = dataset
        out1 = tmp_path / "serial"
        out2 = tmp_path / "parallel"
        run_campaign(model_path, manifest, "boundary", campaign_cfg, out1, timings=False)
        run_campaign(model_path, manifest, "boundary", campaign_cfg, out2, timings=False,
                     workers=2)
        assert (out1 / "results.csv").read_bytes() == (out2 / "results.csv").read_bytes()


class TestCli:
    def test_attack_and_model_info(self, dataset, tmp_path, capsys):
        model_path, manifest = dataset
        rc = cli_main([
            "attack", "--model", str(model_path), "--data", str(manifest),
            "--attack", "boundary", "--max-width", "4", "--inner-limit", "3",
            "--out", str(tmp_path / "cli_out"), "--no-timings", "--seed", "5",
        ])
        assert rc == 0
        assert (tmp_path / "cli_out" / "results.csv").exists()
        assert cli_main(["model-info", "--model", str(model_path)]) == 0
        out = capsys.readouterr().out
        assert "conv2d" in out

    def test_bad_model_path_fails(self, tmp_path, dataset):
        _, manifest = dataset
        rc = cli_main([
            "attack", "--model", str(tmp_path / "missing.batk"), "--data", str(manifest),
            "--out", str(tmp_path / "x"),
        ])
        assert rc == 1

    def test_bad_arguments_exit_2(self, dataset, tmp_path):
        model_path, manifest = dataset
        with pytest.raises(SystemExit) as e:
            cli_main(["attack", "--model", str(model_path), "--data", str(manifest),
                      "--attack", "sideways", "--out", str(tmp_path / "x")])
        assert e.value.code == 2

    def test_sr_table_cli(self, dataset, tmp_path):
        model_path, manifest = dataset
        rc = cli_main([
            "sr-table", "--model", str(model_path), "--data", str(manifest),
            "--max-width", "4", "--inner-limit", "2", "--out", str(tmp_path / "srt"),
        ])
        assert rc == 0
        assert (tmp_path / "srt" / "sr_table.csv").exists()
