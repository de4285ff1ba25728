"""Command-line surface: every capability as a subcommand with file IO.

Exit codes: 0 success, 1 usage error, 2 data/validation error (including a
rejected stereo pair), 3 numerical failure.
"""

from __future__ import annotations

import sys
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from . import curriculum, figures, losses, metrics, scenes, stereo, training
from .core import CameraIntrinsics, DepthMap, unproject
from .errors import NumericalError, ValidationError
from .fileio import (
    dump_json,
    load_json,
    read_flow_channels,
    read_pfm,
    read_pfm_grid,
    write_pfm,
    write_ply,
)
from .gradcheck import LOSS_NAMES, run_loss_gradcheck
from .model import load_checkpoint, save_checkpoint


@click.group()
@click.version_option(package_name="depthlab")
def cli():
    """Affine-invariant depth toolkit."""


# ---------------------------------------------------------------------------


@cli.command("metrics")
@click.option("--pred", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--gt", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--mask", type=click.Path(exists=True, dir_okay=False),
              help="PFM submask; nonzero pixels are 'masked in' for the "
                   "split si-rms values.")
@click.option("--pairs", type=click.Path(exists=True, dir_okay=False),
              help="Ordinal pairs CSV (i_x,i_y,j_x,j_y,label,weight) for WHDR.")
@click.option("--align", type=click.Choice(["lsq", "none"]), default="lsq",
              show_default=True)
@click.option("--whdr-tau", type=float, default=metrics.DEFAULT_WHDR_TAU,
              show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--plot", type=click.Path(dir_okay=False),
              help="Also render the aligned-vs-truth scatter to this file.")
def cmd_metrics(pred, gt, mask, pairs, align, whdr_tau, out, plot):
    """Evaluate a predicted depth map against ground truth."""
    pred_map = read_pfm(pred)
    gt_map = read_pfm(gt)
    submask = None
    if mask:
        grid = read_pfm_grid(mask)
        if grid.shape != pred_map.values.shape:
            raise ValidationError("submask shape must match depth grid")
        submask = np.isfinite(grid) & (grid > 0)
    pair_list = None
    if pairs:
        pair_list = metrics.read_pairs_csv(pairs, width=pred_map.width)
    report = metrics.evaluate(
        pred_map, gt_map,
        metrics.EvalOptions(align=align, pairs=pair_list, whdr_tau=whdr_tau,
                            submask=submask))
    dump_json(report.to_json_dict(), out)
    if plot:
        figures.save_linearity_figure(pred_map, gt_map, report.alignment, plot)
    click.echo(f"abs_rel {report.abs_rel:.17g}")


# ---------------------------------------------------------------------------


@cli.command("gradcheck")
@click.option("--loss", "loss_name", required=True,
              type=click.Choice(list(LOSS_NAMES)))
@click.option("--trials", type=int, default=100, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--threshold", type=float, default=1e-4, show_default=True)
def cmd_gradcheck(loss_name, trials, seed, threshold):
    """Check a loss gradient against central finite differences."""
    results = run_loss_gradcheck(loss_name, trials, seed, threshold)
    for r in results:
        status = "pass" if r.passed else "FAIL"
        click.echo(f"trial {r.trial:3d} rel_err {r.error:.3e} {status}")
    worst = max(r.error for r in results)
    n_pass = sum(r.passed for r in results)
    click.echo(f"gradcheck {loss_name}: {n_pass}/{len(results)} passed "
               f"(worst {worst:.3e}, threshold {threshold:g})")
    if n_pass != len(results):
        raise NumericalError(f"gradient check failed for {loss_name}")


# ---------------------------------------------------------------------------


@cli.command("pointcloud")
@click.option("--depth", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--fx", required=True, type=float)
@click.option("--fy", required=True, type=float)
@click.option("--cx", required=True, type=float)
@click.option("--cy", required=True, type=float)
@click.option("--rgb", type=click.Path(exists=True, dir_okay=False),
              help="Optional color image sampled at valid pixels.")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def cmd_pointcloud(depth, fx, fy, cx, cy, rgb, out):
    """Unproject a depth map to an ASCII PLY point cloud."""
    if fx <= 0 or fy <= 0:
        raise click.UsageError("focal lengths must be positive")
    depth_map = read_pfm(depth)
    colors = None
    if rgb:
        from PIL import Image

        img = np.asarray(Image.open(rgb).convert("RGB"))
        if img.shape[:2] != depth_map.values.shape:
            raise ValidationError("color image shape must match depth grid")
        colors = img
    cloud = unproject(depth_map, CameraIntrinsics(fx, fy, cx, cy), colors)
    write_ply(cloud, out)
    click.echo(f"wrote {len(cloud)} vertices to {out}")


# ---------------------------------------------------------------------------


@cli.command("ingest")
@click.option("--flow-lr-prefix", required=True,
              help="Prefix of the left-to-right flow (<prefix>.dx.pfm/.dy.pfm).")
@click.option("--flow-rl-prefix", required=True,
              help="Prefix of the right-to-left flow.")
@click.option("--v-thresh", type=float, default=stereo.VERTICAL_THRESHOLD,
              show_default=True)
@click.option("--lr-thresh", type=float, default=stereo.LR_THRESHOLD,
              show_default=True)
@click.option("--min-valid", type=float, default=stereo.MIN_VALID_FRACTION,
              show_default=True)
@click.option("--out-depth", required=True, type=click.Path(dir_okay=False))
@click.option("--out-report", required=True, type=click.Path(dir_okay=False))
def cmd_ingest(flow_lr_prefix, flow_rl_prefix, v_thresh, lr_thresh, min_valid,
               out_depth, out_report):
    """Filter a stereo flow pair and convert disparity to depth."""
    for prefix in (flow_lr_prefix, flow_rl_prefix):
        for suffix in (".dx.pfm", ".dy.pfm"):
            if not Path(prefix + suffix).is_file():
                raise click.UsageError(f"missing flow file {prefix + suffix}")
    left = stereo.FlowField(*read_flow_channels(flow_lr_prefix))
    right = stereo.FlowField(*read_flow_channels(flow_rl_prefix))
    thresholds = stereo.IngestThresholds(vertical=v_thresh, lr=lr_thresh,
                                         min_valid=min_valid)
    depth, report = stereo.ingest_pipeline(left, right, thresholds)
    dump_json(report.to_json_dict(), out_report)
    frac = report.n_valid / report.n_total
    if not report.accepted:
        click.echo(f"rejected: {frac:.1%} valid < {min_valid:.1%}")
        return 2
    write_pfm(depth, out_depth)
    click.echo(f"accepted: {frac:.1%} valid, depth written to {out_depth}")
    return 0


# ---------------------------------------------------------------------------


@cli.command("synth")
@click.option("--config", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@click.option("--seed", type=int, default=0, show_default=True,
              help="Added to each part's configured seed.")
def cmd_synth(config, out_dir, seed):
    """Generate the synthetic multi-part dataset described by a config."""
    cfg = load_json(config)
    part_cfgs = [scenes.SceneConfig.from_json_dict(c) for c in cfg["parts"]]
    part_cfgs = [replace(c, seed=c.seed + seed) for c in part_cfgs]
    n_train = int(cfg.get("n_per_part", 24))
    n_val = int(cfg.get("n_val_per_part", 8))
    train_parts = scenes.gen_parts(part_cfgs, n_train, split="train")
    val_parts = scenes.gen_parts(part_cfgs, n_val, split="val")
    manifest = scenes.save_dataset(out_dir, part_cfgs, train_parts, val_parts)
    total = sum(len(p) for p in train_parts) + sum(len(p) for p in val_parts)
    click.echo(f"wrote {total} samples, manifest {manifest}")


# ---------------------------------------------------------------------------


def _parse_fractions(text: str, n_parts: int) -> tuple:
    values = [float(x) for x in text.split(",")]
    if len(values) == 1:
        values = values * n_parts
    if len(values) != n_parts:
        raise click.UsageError(
            f"--p needs 1 or {n_parts} comma-separated fractions")
    return tuple(values)


@cli.command("plan")
@click.option("--scores", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Difficulty scores CSV (sample_id,part_id,score).")
@click.option("--p", "fractions", required=True,
              help="Starting fraction(s), e.g. '0.2' or '0.2,0.3,0.4'.")
@click.option("--step-len", type=int, required=True)
@click.option("--batch-size", type=int, required=True)
@click.option("--iters", type=int, required=True)
@click.option("--mode", type=click.Choice(list(curriculum.MODES)), required=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def cmd_plan(scores, fractions, step_len, batch_size, iters, mode, out):
    """Build a curriculum plan from difficulty scores."""
    score_map, part_of = curriculum.read_scores_csv(scores)
    part_ids = sorted(set(part_of.values()))
    parts = [curriculum.Part(id=pid,
                             sample_ids=[s for s in score_map
                                         if part_of[s] == pid])
             for pid in part_ids]
    pacing_cfg = curriculum.PacingConfig(
        p=_parse_fractions(fractions, len(parts)), step_len=step_len,
        batch_size=batch_size, total_iters=iters)
    plan = curriculum.build_plan(parts, score_map, pacing_cfg, mode)
    dump_json(plan.to_json_dict(), out)
    click.echo(f"plan written to {out}")


# ---------------------------------------------------------------------------


def _train_config_from_json(cfg: dict) -> training.TrainConfig:
    keys = dict(
        lr0=cfg.get("lr0", 5e-4),
        decay_ratio=cfg.get("decay_ratio", 0.9),
        decay_interval=cfg.get("decay_interval", 500),
        batch_size=cfg.get("batch_size", 6),
        iterations=cfg.get("iterations", 1000),
        loss=cfg.get("loss", "combined"),
        lam=cfg.get("lambda", 1.0),
        augment=cfg.get("augment", False),
        crop=cfg.get("crop"),
        seed=cfg.get("seed", 0),
        val_interval=cfg.get("val_interval", 100),
        triplet_count=cfg.get("triplet_count", 64),
    )
    return training.TrainConfig(**keys)


@cli.command("train")
@click.option("--config", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--curriculum", "mode", required=True,
              type=click.Choice(list(curriculum.MODES)))
@click.option("--plan", "plan_path", type=click.Path(exists=True, dir_okay=False),
              help="Use a prebuilt curriculum plan instead of training teachers.")
@click.option("--out", required=True, type=click.Path(file_okay=False))
def cmd_train(config, mode, plan_path, out):
    """Train the demo model; writes checkpoint, history CSV, and figures."""
    cfg_json = load_json(config)
    if "manifest" not in cfg_json:
        raise ValidationError("train config must name a dataset 'manifest'")
    manifest = Path(config).parent / cfg_json["manifest"]
    if not manifest.is_file():
        raise ValidationError(f"dataset manifest not found: {manifest}")
    train_parts, val_parts = scenes.load_dataset(manifest)
    val_samples = [s for part in val_parts for s in part]
    cfg = _train_config_from_json(cfg_json)

    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)

    if plan_path:
        plan = curriculum.CurriculumPlan.from_json_dict(load_json(plan_path))
        if plan.mode != mode:
            raise click.UsageError(
                f"--curriculum {mode} but the plan file says {plan.mode}")
    elif mode == "uniform":
        plan = training.uniform_plan(train_parts, cfg)
    else:
        teacher_cfg = replace(cfg, iterations=cfg_json.get(
            "teacher_iterations", max(1, cfg.iterations // 4)))
        _, scores = training.train_teachers(train_parts, teacher_cfg)
        part_of = {s.sample_id: s.part_id
                   for part in train_parts for s in part}
        curriculum.write_scores_csv(scores, part_of, out_dir / "scores.csv")
        pacing_cfg = curriculum.PacingConfig(
            p=tuple(cfg_json.get("p", [0.2] * len(train_parts))),
            step_len=cfg_json.get("step_len",
                                  max(1, cfg.iterations // 10)),
            batch_size=cfg.batch_size, total_iters=cfg.iterations)
        cparts = [curriculum.Part(id=pid,
                                  sample_ids=[s.sample_id for s in part])
                  for pid, part in enumerate(train_parts)]
        plan = curriculum.build_plan(cparts, scores, pacing_cfg, mode)

    dump_json(plan.to_json_dict(), out_dir / "plan.json")
    model, history = training.train(train_parts, plan, cfg, val_samples)
    save_checkpoint(model, out_dir / "checkpoint.json", seed=cfg.seed,
                    iteration=cfg.iterations)
    training.write_history_csv(history, out_dir / "history.csv")
    figures.save_history_figure(history, out_dir / "history.png")
    final = history[-1].val_abs_rel if history else float("nan")
    click.echo(f"final val abs_rel {final:.17g}")


# ---------------------------------------------------------------------------


def entry(argv=None) -> int:
    """Console entry point mapping exceptions to documented exit codes."""
    try:
        result = cli.main(args=argv, standalone_mode=False)
        return int(result) if isinstance(result, int) else 0
    except click.exceptions.Exit as exc:  # --help and friends
        return int(exc.exit_code)
    except click.UsageError as exc:
        exc.show()
        return 1
    except click.Abort:
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except ValidationError as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    except NumericalError as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        return 3


def main() -> None:
    sys.exit(entry())


if __name__ == "__main__":
    main()
