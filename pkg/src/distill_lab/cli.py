"""``distill-lab``: train the toy denoiser, run enhancement and distillation,
and run the acceptance checks.

Exit codes: 0 success, 2 config error, 3 missing artifact, 4 acceptance failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import experiment, metrics, plotting
from .config import ConfigError, ExperimentConfig, load_config
from .distill import RunLog, eval_poses
from .experiment import ENHANCE_VARIANTS, MissingArtifactError
from .nncore import WeightsFormatError, save_params
from .repfield import TextureField, render
from .toyworld import save_png, to_uint8

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_ACCEPTANCE = 0, 2, 3, 4

log = logging.getLogger("distill_lab")


def _fmt(x: float) -> str:
    return "" if isinstance(x, float) and math.isnan(x) else f"{x:.6f}"


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _prepare(out: Path) -> Path:
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc.strerror or exc}") from None
    return out


# -- commands ---------------------------------------------------------------

def train(cfg: ExperimentConfig, out: Path) -> float:
    _prepare(out)
    params, losses = experiment.run_train(
        cfg, on_epoch=lambda e, loss: log.info("epoch %d/%d loss %.5f", e, cfg.train.epochs, loss))
    save_params(params, out / "weights.dlw")
    _write_csv(out / "train_loss.csv", ("epoch", "loss"), [(k + 1, f"{v:.6f}") for k, v in enumerate(losses)])
    if losses:
        plotting.loss_curve(losses, out / "train_loss.png")
    return losses[-1] if losses else float("nan")


def _panel(images, path: Path, gap: int = 2) -> None:
    tiles = [to_uint8(im) for im in images]
    h, w = tiles[0].shape[:2]
    canvas = np.full((h, len(tiles) * (w + gap) - gap, 3), 255, dtype=np.uint8)
    for k, tile in enumerate(tiles):
        canvas[:, k * (w + gap):k * (w + gap) + w] = tile
    Image.fromarray(canvas, "RGB").save(path)


def enhance(cfg: ExperimentConfig, out: Path, seed: int, parallel: bool = False) -> dict[str, metrics.MetricReport]:
    params = experiment.load_weights(cfg)
    _prepare(out)
    pair = experiment.build_pair(cfg)
    images = experiment.run_enhance(params, cfg, pair, seed, parallel=parallel)
    gt = pair.truth.image
    reports = {}
    for k in ENHANCE_VARIANTS:
        ssim = metrics.ssim(images[k], gt) if cfg.metrics.ssim else float("nan")
        reports[k] = metrics.MetricReport(metrics.mse(images[k], gt), metrics.psnr(images[k], gt), ssim)
    _write_csv(out / "enhance_metrics.csv", ("variant", "mse", "psnr", "ssim"),
               [(k, _fmt(r.mse), f"{metrics.csv_psnr(r.psnr):.6f}", _fmt(r.ssim)) for k, r in reports.items()])
    order = ["reference", "truth", "coarse", "sdedit", "no_depth", "no_injection", "rgnv"]
    panel_images = [gt if k == "truth" else images[k] for k in order]
    _panel(panel_images, out / "panel.png")
    captions = ["" if k == "truth" else f"{metrics.csv_psnr(reports[k].psnr):.2f} dB" for k in order]
    plotting.image_row(panel_images, [k.replace("_", "-") for k in order], out / "panel_figure.png", captions)
    views = _prepare(out / "views")
    for k in order:
        save_png(gt if k == "truth" else images[k], views / f"{k}.png")
    return reports


def _save_field(fld: TextureField, path: Path) -> None:
    save_png(fld.grid, path)


def generate(cfg: ExperimentConfig, out: Path, seed: int) -> dict:
    params = experiment.load_weights(cfg)
    _prepare(out)
    fields = _prepare(out / "fields")
    dc = cfg.distill
    subj = experiment.subject(cfg)
    run_log = RunLog()

    def checkpoint(stage):
        def hook(it, fld):
            if dc.checkpoint_every and (it + 1) % dc.checkpoint_every == 0:
                _save_field(fld, fields / f"{stage}_{it + 1:04}.png")
        return hook

    _save_field(experiment.initial_field(cfg, subj), fields / "init.png")
    coarse = experiment.run_coarse(params, cfg, subj, seed, log=run_log, on_iter=checkpoint("coarse"))
    _save_field(coarse, fields / "coarse.png")
    refine_log = RunLog()
    refined = experiment.run_refine(params, cfg, subj, coarse, seed, log=refine_log, on_iter=checkpoint("refine"))
    _save_field(refined, fields / "refined.png")
    run_log.extend(refine_log)
    run_log.write_csv(out / "run.csv")

    views = _prepare(out / "novel")
    rows, psnrs = [], []
    for k, pose in enumerate(eval_poses()):
        img, gt = render(refined, pose), subj.ground_truth(pose)
        save_png(img, views / f"view_{k}.png")
        p = metrics.psnr(img, gt)
        s = metrics.ssim(img, gt) if cfg.metrics.ssim else float("nan")
        psnrs.append(p)
        rows.append((k, f"{pose.azimuth:.6f}", f"{metrics.csv_psnr(p):.6f}", _fmt(s)))
    _write_csv(out / "novel_views.csv", ("view", "azimuth", "psnr", "ssim"), rows)
    if run_log.rows:
        plotting.distill_curves(run_log.rows, out / "curves.png")
    summary = {"loss_kind": dc.loss_kind, "psnr_novel_mean": float(np.mean(psnrs)),
               "psnr_ref": metrics.psnr(render(refined, subj.reference.pose), subj.reference.image)}
    return summary


def verify(cfg: ExperimentConfig, mutation: str | None = None) -> bool:
    from . import acceptance
    try:
        params = experiment.load_weights(cfg)
    except MissingArtifactError as exc:
        # no weights at all: train a micro-denoiser so the mechanics can still be checked
        print(f"{exc}; training a micro-denoiser (orderings are unlikely to hold)")
        from dataclasses import replace
        micro = replace(cfg, train=replace(cfg.train, epochs=3),
                        toyworld=replace(cfg.toyworld, train_scenes=8, views_per_scene=4))
        params, _ = experiment.run_train(micro)
    print(f"{'id':>3}  {'check':<38} status  detail")
    results = acceptance.run_all(params, cfg, mutation=mutation,
                                 echo=lambda r: print(f"{r.id:>3}  {r.name:<38} {'PASS' if r.passed else 'FAIL':<6}  "
                                                      f"{r.detail}", flush=True))
    passed = all(r.passed for r in results)
    print(f"{sum(r.passed for r in results)}/{len(results)} checks passed")
    return passed


# -- entry point ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="distill-lab", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=("train", "enhance", "generate", "verify"))
    ap.add_argument("--config", required=True, help="experiment JSON; 'fixture' selects the packaged one")
    ap.add_argument("--out", help="output directory (overrides cli.out)")
    ap.add_argument("--seed", type=int, help="run seed (overrides cli.seed)")
    ap.add_argument("--parallel", action="store_true", help="run independent legs concurrently")
    ap.add_argument("--mutation", choices=("ddim_invert_sign",), help="verify only: inject a known bug")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        path = experiment.fixture_config_path() if args.config == "fixture" else Path(args.config)
        cfg = load_config(path)
        seed = cfg.cli.seed if args.seed is None else args.seed
        out = cfg.out_dir(args.out)
        experiment.worker_count()
        if args.command == "train":
            final = train(cfg, out)
            print(f"final loss {final:.5f}; weights written to {out / 'weights.dlw'}")
        elif args.command == "enhance":
            for k, r in enhance(cfg, out, seed, args.parallel).items():
                print(f"{k:>13}  psnr {metrics.csv_psnr(r.psnr):7.3f}  ssim {r.ssim:.4f}")
        elif args.command == "generate":
            summary = generate(cfg, out, seed)
            print(f"{summary['loss_kind']}: mean novel-view PSNR {summary['psnr_novel_mean']:.3f} dB, "
                  f"reference {metrics.csv_psnr(summary['psnr_ref']):.2f} dB; outputs in {out}")
        elif not verify(cfg, args.mutation):
            return EXIT_ACCEPTANCE
    except (MissingArtifactError, WeightsFormatError) as exc:
        print(f"distill-lab: missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except ConfigError as exc:
        print(f"distill-lab: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"distill-lab: cannot write output: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
