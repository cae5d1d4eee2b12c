"""Campaign orchestration: run attacks over a dataset, write CSV/JSON
reports, width-vs-success tables, attack comparisons and attention reports.

Outputs are deterministic for a fixed seed: records are sorted by image id
before writing, per-image RNG seeds are derived from (campaign seed, image
index), and wall-clock timing can be disabled so two runs of the same
campaign produce byte-identical CSV files.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .attack import (
    AttackConfig,
    AttackOutcome,
    AttackRegion,
    boundary_attack,
    fixed_width_attack,
    frame,
    patch,
    region_attack,
    whole,
)
from .dataset import DatasetManifest, load_manifest, load_png, save_png
from .gradcam import attention_shift, gradcam_map, render_overlay
from .metrics import (
    EvalRecord,
    EvalSet,
    attacked_fraction,
    mae_single,
    metrics_report,
    mse_single,
    psnr_single,
)
from .model import ModelGraph
from .tensor import DOMAIN_01, Tensor
from .weights import load_model_file

log = logging.getLogger("batk")

RESULT_FIELDS = [
    "image_id",
    "true_label",
    "attack_kind",
    "success",
    "adversarial_label",
    "final_width",
    "final_epsilon",
    "total_steps",
    "mse",
    "mae",
    "psnr_db",
    "attacked_fraction",
    "wall_time_ms",
    "seed",
]

DEFAULT_PATCH_SIZE = 50  # square side on a 224x224 image, scaled for others
DEFAULT_FRAME_WIDTH = 5
REPORT_WIDTHS = (1, 5, 10, 20, 39)


class HarnessError(ValueError):
    pass


@dataclass
class MEntry:
    """One correctly-classified image: a member of the attacked set."""

    index: int  # position in the manifest (drives the per-image seed)
    image_id: str
    path: Path
    label: int


@dataclass
class CampaignResult:
    records: list[dict]
    outcomes: dict[str, AttackOutcome]
    summary: dict
    m_entries: list[MEntry]


def per_image_seed(campaign_seed: int, index: int) -> int:
    """64-bit per-image seed, independent of scheduling order."""
    ss = np.random.SeedSequence((campaign_seed & 0xFFFFFFFFFFFFFFFF, index))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def scaled_patch_region(input_shape: tuple, size: int = DEFAULT_PATCH_SIZE) -> AttackRegion:
    """Top-left square patch; shrunk proportionally when the conventional
    224-image size does not fit."""
    h, w = input_shape[0], input_shape[1]
    side = size
    if side > min(h, w):
        side = max(1, round(min(h, w) * size / 224))
    return patch(0, 0, side, side)


def region_for(kind: str, input_shape: tuple, patch_size: int = DEFAULT_PATCH_SIZE,
               frame_width: int = DEFAULT_FRAME_WIDTH) -> AttackRegion:
    if kind == "patch":
        return scaled_patch_region(input_shape, patch_size)
    if kind == "frame":
        return frame(frame_width)
    if kind == "whole":
        return whole()
    raise HarnessError(f"no region for attack kind {kind!r}")


def classify_manifest(model: ModelGraph, manifest: DatasetManifest):
    """Split the manifest into the correctly-classified set M and the
    skipped rest (decode failures are logged, misclassified are dropped)."""
    m_entries: list[MEntry] = []
    decode_failures = 0
    misclassified = 0
    for index, (path, label) in enumerate(manifest.entries):
        if not 0 <= label < model.num_classes:
            raise HarnessError(f"{path}: label {label} out of range")
        try:
            image = load_png(path, model.pixel_domain)
        except Exception as e:  # noqa: BLE001 - per-image robustness
            log.warning("skipping %s: decode failed (%s)", path, e)
            decode_failures += 1
            continue
        if tuple(image.shape) != model.input_shape:
            log.warning("skipping %s: shape %s != %s", path, image.shape, model.input_shape)
            decode_failures += 1
            continue
        if model.predict(image) == label:
            m_entries.append(MEntry(index, path.stem, path, label))
        else:
            misclassified += 1
    return m_entries, decode_failures, misclassified


def _attack_one(model: ModelGraph, image: Tensor, entry: MEntry, attack_kind: str,
                cfg: AttackConfig, region: AttackRegion | None) -> AttackOutcome:
    cfg_img = replace(cfg, seed=per_image_seed(cfg.seed, entry.index))
    if attack_kind == "boundary":
        return boundary_attack(model, image, entry.label, cfg_img)
    return region_attack(model, image, entry.label, region, cfg_img)


_WORKER: dict = {}


def _worker_init(model_path, attack_kind, cfg, region):
    _WORKER["model"] = load_model_file(model_path)
    _WORKER["attack_kind"] = attack_kind
    _WORKER["cfg"] = cfg
    _WORKER["region"] = region


def _worker_run(entry: MEntry):
    model = _WORKER["model"]
    image = load_png(entry.path, model.pixel_domain)
    t0 = time.perf_counter()
    outcome = _attack_one(model, image, entry, _WORKER["attack_kind"], _WORKER["cfg"],
                          _WORKER["region"])
    elapsed = (time.perf_counter() - t0) * 1000.0
    return entry, image, outcome, elapsed


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isinf(value):
            return "inf"
        return repr(value)
    return str(value)


def write_results_csv(path, records: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(RESULT_FIELDS)
        for rec in records:
            writer.writerow([_fmt(rec[k]) for k in RESULT_FIELDS])


def read_results_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def _record_for(entry: MEntry, image: Tensor, outcome: AttackOutcome, attack_kind: str,
                cfg: AttackConfig, wall_ms: float | None) -> dict:
    return {
        "image_id": entry.image_id,
        "true_label": entry.label,
        "attack_kind": attack_kind,
        "success": outcome.success,
        "adversarial_label": outcome.adversarial_label,
        "final_width": outcome.final_width,
        "final_epsilon": outcome.final_epsilon,
        "total_steps": outcome.total_steps,
        "mse": mse_single(image, outcome.adversarial),
        "mae": mae_single(image, outcome.adversarial),
        "psnr_db": psnr_single(image, outcome.adversarial, cfg.pixel_domain),
        "attacked_fraction": attacked_fraction(image, outcome.adversarial),
        "wall_time_ms": 0.0 if wall_ms is None else round(wall_ms, 3),
        "seed": per_image_seed(cfg.seed, entry.index),
    }


def run_attacks(model: ModelGraph, model_path, m_entries: list[MEntry], attack_kind: str,
                cfg: AttackConfig, region: AttackRegion | None = None, workers: int = 1,
                timings: bool = True):
    """Attack every M entry; returns (records, outcomes, eval_set) sorted by
    image id regardless of worker scheduling."""
    if attack_kind != "boundary" and region is None:
        region = region_for(attack_kind, model.input_shape)
    results = []
    if workers <= 1:
        for entry in m_entries:
            image = load_png(entry.path, model.pixel_domain)
            t0 = time.perf_counter()
            outcome = _attack_one(model, image, entry, attack_kind, cfg, region)
            results.append((entry, image, outcome, (time.perf_counter() - t0) * 1000.0))
    else:
        with ProcessPoolExecutor(
            max_workers=workers,
            initializer=_worker_init,
            initargs=(model_path, attack_kind, cfg, region),
        ) as pool:
            results = list(pool.map(_worker_run, m_entries))
    results.sort(key=lambda r: r[0].image_id)
    records, outcomes, eval_records = [], {}, []
    for entry, image, outcome, elapsed in results:
        records.append(
            _record_for(entry, image, outcome, attack_kind, cfg, elapsed if timings else None)
        )
        outcomes[entry.image_id] = outcome
        eval_records.append(
            EvalRecord(
                clean=image,
                adversarial=outcome.adversarial,
                true_label=entry.label,
                predicted_label=outcome.adversarial_label if outcome.success else entry.label,
                success=outcome.success,
            )
        )
    eval_set = EvalSet(records=eval_records, pixel_domain=cfg.pixel_domain)
    return records, outcomes, eval_set


def _config_echo(cfg: AttackConfig) -> dict:
    return {
        "epsilon0": cfg.epsilon0,
        "minimum": cfg.minimum,
        "decay": cfg.decay,
        "max_width": cfg.max_width,
        "inner_limit": cfg.inner_limit,
        "psnr_threshold": cfg.psnr_threshold,
        "pixel_domain": {"lo": cfg.pixel_domain.lo, "hi": cfg.pixel_domain.hi},
        "clip": cfg.clip,
        "seed": cfg.seed,
    }


def _write_traces(path, outcomes: dict[str, AttackOutcome]) -> None:
    payload = {
        image_id: {
            "success": o.success,
            "final_width": o.final_width,
            "total_steps": o.total_steps,
            "trace": [
                {
                    "width": t.width,
                    "epsilon": t.epsilon,
                    "inner_steps": t.inner_steps,
                    "flipped": t.flipped,
                    "psnr_at_flip": t.psnr_at_flip,
                }
                for t in o.trace
            ],
        }
        for image_id, o in sorted(outcomes.items())
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=1, sort_keys=True)


def run_campaign(model_path, manifest_path, attack_kind: str, cfg: AttackConfig, out_dir,
                 region: AttackRegion | None = None, workers: int = 1, timings: bool = True,
                 save_images: bool = False) -> CampaignResult:
    """Full campaign: filter to correctly-classified images, attack each,
    write results.csv / traces.json / summary.json (and optional image
    dumps: quantized PNG pairs plus the raw float adversarial array)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model = load_model_file(model_path)
    manifest = load_manifest(manifest_path)
    m_entries, decode_failures, misclassified = classify_manifest(model, manifest)

    if m_entries:
        records, outcomes, eval_set = run_attacks(
            model, model_path, m_entries, attack_kind, cfg, region, workers, timings
        )
    else:
        records, outcomes = [], {}
        eval_set = EvalSet(records=[], pixel_domain=cfg.pixel_domain)

    report = metrics_report(eval_set)
    summary = {
        "attack": attack_kind,
        "metrics": report.as_dict(),
        "counts": {
            "manifest": len(manifest.entries),
            "decode_failures": decode_failures,
            "misclassified": misclassified,
            "attacked": len(m_entries),
        },
        "config": _config_echo(cfg),
        "version": __version__,
    }
    write_results_csv(out_dir / "results.csv", records)
    _write_traces(out_dir / "traces.json", outcomes)
    with open(out_dir / "summary.json", "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=1, sort_keys=True)

    if save_images and m_entries:
        img_dir = out_dir / "images"
        img_dir.mkdir(exist_ok=True)
        for entry in sorted(m_entries, key=lambda e: e.image_id):
            outcome = outcomes[entry.image_id]
            clean = load_png(entry.path, model.pixel_domain)
            save_png(img_dir / f"{entry.image_id}_clean.png", clean, model.pixel_domain)
            save_png(img_dir / f"{entry.image_id}_adv.png", outcome.adversarial,
                     model.pixel_domain)
            np.save(img_dir / f"{entry.image_id}_adv.npy", outcome.adversarial)
    return CampaignResult(records=records, outcomes=outcomes, summary=summary,
                          m_entries=m_entries)


def first_flip_width(outcome: AttackOutcome) -> int | None:
    """Width of the earliest flipped trace entry, if any."""
    for entry in outcome.trace:
        if entry.flipped:
            return entry.width
    return None


def width_sr_table(model_path, manifest_path, cfg: AttackConfig, widths=None, out_dir=None,
                   workers: int = 1):
    """Cumulative success rate by boundary width from one full campaign.

    Row (w, sr): fraction of M whose first flip happened at width <= w.
    Nondecreasing by construction; the last row is the campaign SR when the
    width list ends at max_width - 1.
    """
    if widths is None:
        widths = list(range(1, cfg.max_width))
    widths = list(widths)
    if widths != sorted(widths):
        raise HarnessError("widths must be sorted ascending")
    model = load_model_file(model_path)
    manifest = load_manifest(manifest_path)
    m_entries, _, _ = classify_manifest(model, manifest)
    if not m_entries:
        raise HarnessError("no correctly-classified images to attack")
    _, outcomes, _ = run_attacks(model, model_path, m_entries, "boundary", cfg,
                                 workers=workers, timings=False)
    flips = [first_flip_width(o) for o in outcomes.values()]
    table = []
    for w in widths:
        hits = sum(1 for fw in flips if fw is not None and fw <= w)
        table.append((w, hits / len(m_entries)))
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "sr_table.csv", "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["width", "sr"])
            for w, sr in table:
                writer.writerow([w, repr(sr)])
    return table


def compare_attacks(model_path, manifest_path, cfg: AttackConfig, out_dir,
                    region_inner_limit: int = 50, patch_size: int = DEFAULT_PATCH_SIZE,
                    frame_width: int = DEFAULT_FRAME_WIDTH, workers: int = 1):
    """Boundary vs patch vs frame vs whole on the identical M set.

    The boundary attack keeps cfg as given; the region attacks run the
    conventional longer budget (region_inner_limit) at the static floor step
    size. Returns rows of (attack, sr, mae, mse, psnr_db) and writes
    compare.csv plus one results.csv per attack.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model = load_model_file(model_path)
    manifest = load_manifest(manifest_path)
    m_entries, _, _ = classify_manifest(model, manifest)
    if not m_entries:
        raise HarnessError("no correctly-classified images to attack")

    region_cfg = replace(cfg, inner_limit=region_inner_limit)
    plans = [
        ("boundary", cfg, None),
        ("patch", region_cfg, scaled_patch_region(model.input_shape, patch_size)),
        ("frame", region_cfg, frame(frame_width)),
        ("whole", region_cfg, whole()),
    ]
    rows = []
    for kind, attack_cfg, region in plans:
        records, outcomes, eval_set = run_attacks(
            model, model_path, m_entries, kind, attack_cfg, region, workers, timings=False
        )
        sub = out_dir / kind
        sub.mkdir(exist_ok=True)
        write_results_csv(sub / "results.csv", records)
        _write_traces(sub / "traces.json", outcomes)
        report = metrics_report(eval_set)
        rows.append(
            {
                "attack": kind,
                "sr": report.sr,
                "mae": report.mae,
                "mse": report.mse,
                "psnr_db": report.psnr_db,
                "count_m": report.count_m,
                "count_n": report.count_n,
            }
        )
    with open(out_dir / "compare.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["attack", "sr", "mae", "mse", "psnr_db", "count_m", "count_n"])
        for row in rows:
            writer.writerow([_fmt(row[k]) for k in
                             ("attack", "sr", "mae", "mse", "psnr_db", "count_m", "count_n")])
    return rows


def gradcam_report(model_path, manifest_path, cfg: AttackConfig, sample_ids, out_dir,
                   widths=REPORT_WIDTHS, patch_size: int = DEFAULT_PATCH_SIZE,
                   frame_width: int = DEFAULT_FRAME_WIDTH, region_inner_limit: int = 50):
    """Attention grid for chosen samples: the clean map plus maps after
    fixed-width border attacks and after the patch/frame attacks.

    Every overlay goes to ``<image_id>_<attack>_<width>_cam.png``; per-attack
    rows also land in results.csv so labels can be cross-checked. Returns the
    report dict (also written to report.json).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model = load_model_file(model_path)
    manifest = load_manifest(manifest_path)
    m_entries, _, _ = classify_manifest(model, manifest)
    by_id = {e.image_id: e for e in m_entries}
    missing = [s for s in sample_ids if s not in by_id]
    if missing:
        raise HarnessError(f"sample ids not in the correctly-classified set: {missing}")

    records = []
    report = {"samples": {}, "widths": list(widths)}
    for sample_id in sample_ids:
        entry = by_id[sample_id]
        image = load_png(entry.path, model.pixel_domain)
        clean_map = gradcam_map(model, image, entry.label)
        save_png(out_dir / f"{sample_id}_clean_0_cam.png",
                 render_overlay(image, clean_map, model.pixel_domain), DOMAIN_01)
        sample_report = {"true_label": entry.label, "attacks": []}

        runs = [("boundary", w, None) for w in widths]
        runs.append(("patch", None, scaled_patch_region(model.input_shape, patch_size)))
        runs.append(("frame", frame_width, frame(frame_width)))
        for kind, width, region in runs:
            cfg_img = replace(cfg, seed=per_image_seed(cfg.seed, entry.index))
            if kind == "boundary":
                outcome = fixed_width_attack(model, image, entry.label, width, cfg_img)
            else:
                run_cfg = replace(cfg_img, inner_limit=region_inner_limit)
                outcome = region_attack(model, image, entry.label, region, run_cfg)
            label = model.predict(outcome.adversarial)
            adv_map = gradcam_map(model, outcome.adversarial, label)
            width_tag = width if width is not None else region.height
            cam_name = f"{sample_id}_{kind}_{width_tag}_cam.png"
            save_png(out_dir / cam_name,
                     render_overlay(outcome.adversarial, adv_map, model.pixel_domain),
                     DOMAIN_01)
            records.append(_record_for(entry, image, outcome, kind, cfg, None))
            sample_report["attacks"].append(
                {
                    "attack": kind,
                    "width": width_tag,
                    "predicted_label": label,
                    "success": outcome.success,
                    "cam": cam_name,
                    "attention_shift": attention_shift(clean_map, adv_map),
                }
            )
        report["samples"][sample_id] = sample_report
    write_results_csv(out_dir / "results.csv", records)
    with open(out_dir / "report.json", "w", encoding="utf-8") as f:
        json.dump(report, f, indent=1, sort_keys=True)
    return report
