"""Regenerate the committed fixtures.

    python tools/freeze_fixtures.py            # toyworld golden files only
    python tools/freeze_fixtures.py --model    # plus thresholds measured with fixtures/denoiser.dlw

Run after an intentional change; the tests compare against what this
writes. Measured values are stored next to the limits derived from them so
the margins can be reviewed by hand. Keys not produced here are kept.
"""
from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

from distill_lab import experiment, metrics, rgnv
from distill_lab._fixtures import CONFIG, FIXTURE_DIR, GOLDEN_SCENE0, THRESHOLDS
from distill_lab.config import load_config
from distill_lab.distill import rgsd_targets
from distill_lab.repfield import init_field, render
from distill_lab.toyworld import Pose, dataset_digest, degrade_view, generate_scene, make_dataset, render_view, save_png


def toyworld_entries() -> dict:
    view = render_view(generate_scene(0), Pose())
    save_png(view.image, GOLDEN_SCENE0)
    return {
        "toyworld.degrade_psnr_scene0_sev1": {
            "value": round(metrics.psnr(degrade_view(view, 1.0, 0).image, view.image), 4), "tol": 0.5},
        "toyworld.dataset_digest_64_8_0": dataset_digest(make_dataset(64, 8, 0)),
    }


def model_entries(train_loss: float | None) -> dict:
    cfg = load_config(CONFIG)
    params = experiment.load_weights(cfg)
    pair = experiment.build_pair(cfg)
    rc = cfg.rgnv.config
    out = rgnv.enhance(pair.reference, pair.reference, params, experiment.schedule(cfg, rc.T), rc,
                       pair.scene.class_id).image
    self_mse = metrics.mse(out, pair.reference.image)
    clean = experiment.build_pair(cfg, severity=0.0)
    sev0 = metrics.psnr(experiment.run_enhance(params, cfg, clean, cfg.cli.seed)["rgnv"], clean.truth.image)
    # enhancement with every depth map replaced by its mean
    def flat(v):
        return type(v)(v.image, np.full_like(v.depth, v.depth.mean()), v.pose)
    ps_true = metrics.psnr(rgnv.enhance(pair.reference, pair.coarse, params, experiment.schedule(cfg, rc.T), rc,
                                        pair.scene.class_id).image, pair.truth.image)
    ps_flat = metrics.psnr(rgnv.enhance(flat(pair.reference), flat(pair.coarse), params,
                                        experiment.schedule(cfg, rc.T), rc, pair.scene.class_id).image,
                           pair.truth.image)
    subj = experiment.subject(cfg)
    fld = init_field(cfg.repfield.grid, "from_reference", subj.reference)
    rg = cfg.distill.rgsd
    tg = rgsd_targets(fld, subj, subj.reference.pose, params, experiment.schedule(cfg, rg.T), rg)
    target_mse = metrics.mse(tg.final.data, render(fld, subj.reference.pose))
    entries = {
        "rgnv.depth_robustness_psnr": {"measured_delta": round(ps_flat - ps_true, 4), "band": 0.5},
        "distill.rgsd_self_target_mse_measured": round(target_mse, 8),
        "distill.rgsd_self_target_mse_max": math.ceil(2 * target_mse * 1e3) / 1e3,
        "rgnv.self_enhance_mse_measured": round(self_mse, 8),
        # a clean coarse view should come back nearly unchanged
        "rgnv.severity0_psnr": {"measured": round(sev0, 3), "min": math.floor(sev0) - 4.0},
        "distill.coarse_ref_psnr_min": 25.0,
    }
    # limit: twice the measured value, rounded up to 1e-4
    entries["rgnv.self_enhance_mse_max"] = math.ceil(2 * self_mse * 1e4) / 1e4
    if train_loss is not None:
        entries["nncore.final_loss_measured"] = round(train_loss, 5)
        entries["nncore.final_loss_max"] = round(math.ceil(train_loss * 1.15 * 100) / 100, 2)
    return entries


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--model", action="store_true", help="also measure model-dependent thresholds")
    ap.add_argument("--train-loss", type=float, help="final training loss of the committed weights")
    args = ap.parse_args()
    FIXTURE_DIR.mkdir(parents=True, exist_ok=True)
    data = json.loads(THRESHOLDS.read_text()) if THRESHOLDS.exists() else {}
    data.update(toyworld_entries())
    if args.model:
        data.update(model_entries(args.train_loss))
    THRESHOLDS.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    print(f"wrote {THRESHOLDS}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
