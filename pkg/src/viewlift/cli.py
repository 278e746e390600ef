"""Command-line pipeline: calibrate -> synthesize -> plan, plus evaluate and
loss checking.

All stages are pure functions of (input files, config, seed): reruns are
byte-identical.  Paths inside manifests are resolved relative to the
manifest file's directory.  Row-level failures are logged and skipped so one
bad asset cannot sink a batch; a stage only exits nonzero when every row
fails (exit 2) or its inputs are invalid (exit 1).
"""

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

import viewlift
from viewlift import assets
from viewlift.batching import (CurriculumConfig, SyntheticPoolState,
                               build_epoch_plan, rejection_prob)
from viewlift.calibration import calibrate
from viewlift.config import apply_overrides, load_config
from viewlift.errors import PipelineError, ValidationError
from viewlift.losses import LossWeights, domain_loss, id_loss, total_loss, triplet_loss
from viewlift.metrics import evaluate, load_embeddings
from viewlift.renderer import OrbitCamera
from viewlift.streams import derive_stream
from viewlift.synthesis import color_align, composite, sample_perturbation, synthesize_view


def _resolve(base: Path, p: str) -> Path:
    path = Path(p)
    return path if path.is_absolute() else base / path


def _relpath(path: Path, start: Path) -> Path:
    return Path(os.path.relpath(path, start))


def _pose_to_obj(cam: OrbitCamera) -> dict:
    return {"azimuth": cam.azimuth_deg, "elevation": cam.elevation_deg,
            "radius": cam.radius, "target": list(cam.target),
            "fov": cam.fov_deg, "width": cam.width, "height": cam.height}


def _pose_from_obj(obj: dict) -> OrbitCamera:
    return OrbitCamera(azimuth_deg=obj["azimuth"], elevation_deg=obj["elevation"],
                       radius=obj["radius"], target=tuple(obj["target"]),
                       fov_deg=obj["fov"], width=obj["width"], height=obj["height"])


def cmd_calibrate(args) -> int:
    cfg = apply_overrides(load_config(args.config), seed=args.seed)
    manifest_path = Path(args.manifest or cfg.manifest)
    manifest = assets.DatasetManifest.load(manifest_path)
    base = manifest_path.parent
    rows = [r for r in manifest.real_records() if r.mesh and r.mask]
    if not rows:
        raise ValidationError("manifest has no real rows with mesh and mask paths")

    out_path = Path(args.out) if args.out else Path(cfg.output_dir) / "calibration.jsonl"
    out_path.parent.mkdir(parents=True, exist_ok=True)

    report_lines = []
    accepted = 0
    failed = 0
    for rec in rows:
        try:
            mesh = assets.normalize_mesh(
                assets.load_mesh(_resolve(base, rec.mesh), up_axis=cfg.up_axis))
            mask = assets.load_mask(_resolve(base, rec.mask))
            mask = assets.resize_mask(mask, cfg.render_width, cfg.render_height)
            result = calibrate(mesh, mask, cfg.calibration)
        except (PipelineError, FileNotFoundError) as exc:
            failed += 1
            category = getattr(exc, "category", type(exc).__name__)
            report_lines.append(json.dumps(
                {"record": rec.record_id, "error": category, "message": str(exc)},
                sort_keys=True, separators=(",", ":")))
            print(f"row {rec.record_id}: error: {category}: {exc}", file=sys.stderr)
            continue
        accepted += int(result.accepted)
        report_lines.append(json.dumps(
            {"record": rec.record_id, "pose": _pose_to_obj(result.pose),
             "iou": result.iou, "accepted": result.accepted},
            sort_keys=True, separators=(",", ":")))

    out_path.write_text("".join(line + "\n" for line in report_lines), encoding="utf-8")
    rate = accepted / len(rows)
    print(f"calibrated {len(rows)} rows, accepted {accepted} (rate {rate:.3f})")
    return 2 if failed == len(rows) else 0


def cmd_synthesize(args) -> int:
    cfg = apply_overrides(load_config(args.config), seed=args.seed,
                          direction=args.direction, views=args.views)
    manifest_path = Path(args.manifest or cfg.manifest)
    manifest = assets.DatasetManifest.load(manifest_path)
    base = manifest_path.parent
    out_dir = Path(args.out) if args.out else Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    calib_path = Path(args.calibration) if args.calibration else out_dir / "calibration.jsonl"
    if not calib_path.is_file():
        raise ValidationError(f"calibration report not found: {calib_path}")
    poses = {}
    for line in calib_path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        if obj.get("accepted"):
            poses[obj["record"]] = _pose_from_obj(obj["pose"])

    bg_dir = Path(cfg.background_dir) if cfg.background_dir else None
    if bg_dir is None or not bg_dir.is_dir():
        raise ValidationError(f"background pool directory not found: {bg_dir}")
    bg_files = sorted(bg_dir.glob("*.png"))
    if not bg_files:
        raise ValidationError(f"background pool is empty: {bg_dir}")

    real_rows = manifest.real_records()
    ref_paths = [_resolve(base, r.image) for r in real_rows]
    target_view = "aerial" if cfg.direction.value == "g2a" else "ground"

    img_dir = out_dir / "synth"
    img_dir.mkdir(exist_ok=True)
    synth_records = []
    failed = 0
    processed = 0
    for rec in real_rows:
        if rec.record_id not in poses:
            continue
        processed += 1
        rng = derive_stream(cfg.seed, rec.record_id)
        try:
            mesh = assets.normalize_mesh(
                assets.load_mesh(_resolve(base, rec.mesh), up_axis=cfg.up_axis))
        except (PipelineError, FileNotFoundError) as exc:
            failed += 1
            category = getattr(exc, "category", type(exc).__name__)
            print(f"row {rec.record_id}: error: {category}: {exc}", file=sys.stderr)
            continue
        pose = poses[rec.record_id]
        stem = Path(rec.image).stem
        for k in range(cfg.views_per_source):
            d_theta, d_phi = sample_perturbation(rng, cfg.direction, cfg.perturbation)
            bg_idx = int(rng.integers(len(bg_files)))
            ref_idx = int(rng.integers(len(ref_paths)))
            try:
                view = synthesize_view(mesh, pose, d_theta, d_phi,
                                       identity=rec.identity, source_record=rec.record_id)
                background = assets.resize_image(
                    assets.load_image(bg_files[bg_idx]), pose.width, pose.height)
                comp = composite(view, background, cfg.feather_radius)
                reference = assets.load_image(ref_paths[ref_idx])
                final = color_align(comp, reference)
            except (PipelineError, FileNotFoundError) as exc:
                category = getattr(exc, "category", type(exc).__name__)
                print(f"row {rec.record_id} view {k}: error: {category}: {exc}",
                      file=sys.stderr)
                continue
            img_name = f"synth/{rec.identity}_{stem}_v{k}.png"
            mask_name = f"synth/{rec.identity}_{stem}_v{k}_mask.png"
            assets.save_image(final, out_dir / img_name)
            assets.save_image(view.fg_mask, out_dir / mask_name)
            synth_records.append(assets.SampleRecord(
                identity=rec.identity, image=img_name, mask=mask_name,
                domain=assets.SYNTHETIC, view=target_view,
                delta_theta=round(d_theta, 2), delta_phi=round(d_phi, 2)))

    synth_manifest = assets.DatasetManifest(synth_records)
    synth_manifest.save(out_dir / "synthetic.jsonl")

    # Combined manifest lives in out_dir; rebase source paths onto it.
    combined = []
    for rec in manifest:
        combined.append(assets.SampleRecord(
            identity=rec.identity,
            image=str(_relpath(_resolve(base, rec.image), out_dir)),
            mask=str(_relpath(_resolve(base, rec.mask), out_dir)) if rec.mask else None,
            mesh=str(_relpath(_resolve(base, rec.mesh), out_dir)) if rec.mesh else None,
            domain=rec.domain, view=rec.view,
            delta_theta=rec.delta_theta, delta_phi=rec.delta_phi))
    combined.extend(synth_records)
    assets.DatasetManifest(combined).save(out_dir / "combined.jsonl")

    print(f"synthesized {len(synth_records)} views from {processed} accepted rows")
    return 2 if processed > 0 and failed == processed else 0


def cmd_plan(args) -> int:
    cfg = apply_overrides(load_config(args.config), seed=args.seed)
    manifest_path = Path(args.manifest or cfg.manifest)
    manifest = assets.DatasetManifest.load(
        manifest_path, delta_theta_max=cfg.curriculum.delta_theta_max)
    state = None
    if args.state_in:
        state_path = Path(args.state_in)
        if state_path.is_file():
            state = SyntheticPoolState.from_json(state_path.read_text(encoding="utf-8"))
    plan, new_state = build_epoch_plan(manifest, cfg.sampler, cfg.curriculum,
                                       args.epoch, state)
    out_path = Path(args.out) if args.out else Path(cfg.output_dir) / f"plan_epoch{args.epoch}.jsonl"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(plan.to_jsonl(), encoding="utf-8")
    if args.state_out:
        Path(args.state_out).write_text(new_state.to_json(), encoding="utf-8")
    print(f"planned epoch {args.epoch}: {len(plan.batches)} batches -> {out_path}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = apply_overrides(load_config(args.config))
    query = load_embeddings(args.query, args.query_sidecar)
    gallery = load_embeddings(args.gallery, args.gallery_sidecar)
    result = evaluate(query, gallery, max_rank=cfg.max_rank, metric=cfg.distance_metric)
    text = result.to_json()
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    return 0


def _load_matrix(path) -> np.ndarray:
    return np.loadtxt(path, ndmin=2, dtype=np.float64)


def _load_tokens(path):
    return Path(path).read_text(encoding="utf-8").split()


def cmd_losses_check(args) -> int:
    if args.kind == "id":
        labels = [int(t) for t in _load_tokens(args.labels)]
        value = id_loss(_load_matrix(args.logits), labels, smoothing=args.smoothing)
    elif args.kind == "triplet":
        value = triplet_loss(_load_matrix(args.embeddings), _load_tokens(args.labels),
                             margin=args.margin)
    elif args.kind == "domain":
        value = domain_loss(_load_matrix(args.logits), _load_tokens(args.labels))
    else:
        weights = LossWeights(*args.weights)
        value = total_loss(args.components[0], args.components[1], args.components[2],
                           weights)
    print(repr(value))
    return 0


def cmd_reject_prob(args) -> int:
    cfg = CurriculumConfig(warmup_epochs=args.warmup_epochs,
                           delta_theta_max=args.delta_theta_max)
    print(repr(rejection_prob(args.delta_theta, args.epoch, cfg)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="viewlift",
        description="Novel-view training-data synthesis and evaluation pipeline")
    parser.add_argument("--version", action="version", version=viewlift.__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, manifest=True):
        p.add_argument("--config", default=None, help="INI config file")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument("--out", default=None, help="output path")
        if manifest:
            p.add_argument("--manifest", default=None, help="dataset manifest (JSONL)")

    p = sub.add_parser("calibrate", help="recover camera poses by silhouette IoU")
    common(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("synthesize", help="render, composite, and color-align novel views")
    common(p)
    p.add_argument("--calibration", default=None, help="calibration report path")
    p.add_argument("--direction", choices=["g2a", "a2g"], default=None)
    p.add_argument("--views", type=int, default=None, help="views per source image")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("plan", help="build one training-epoch batch plan")
    common(p)
    p.add_argument("--epoch", type=int, required=True)
    p.add_argument("--state-in", default=None, help="synthetic pool state to resume")
    p.add_argument("--state-out", default=None, help="where to write updated pool state")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("evaluate", help="compute mAP / Rank-1 / CMC for query vs gallery")
    p.add_argument("query", help="query embedding container")
    p.add_argument("query_sidecar", help="query identity/camera JSONL")
    p.add_argument("gallery", help="gallery embedding container")
    p.add_argument("gallery_sidecar", help="gallery identity/camera JSONL")
    p.add_argument("--config", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("losses-check", help="evaluate reference losses on text matrices")
    loss_sub = p.add_subparsers(dest="kind", required=True)
    q = loss_sub.add_parser("id")
    q.add_argument("--logits", required=True)
    q.add_argument("--labels", required=True)
    q.add_argument("--smoothing", type=float, default=0.1)
    q = loss_sub.add_parser("triplet")
    q.add_argument("--embeddings", required=True)
    q.add_argument("--labels", required=True)
    q.add_argument("--margin", type=float, default=0.3)
    q = loss_sub.add_parser("domain")
    q.add_argument("--logits", required=True)
    q.add_argument("--labels", required=True)
    q = loss_sub.add_parser("total")
    q.add_argument("--components", type=float, nargs=3, required=True)
    q.add_argument("--weights", type=float, nargs=3, default=[1.0, 1.0, 0.5])
    p.set_defaults(func=cmd_losses_check)

    p = sub.add_parser("reject-prob", help="curriculum rejection probability for one sample")
    p.add_argument("--delta-theta", type=float, required=True)
    p.add_argument("--epoch", type=int, required=True)
    p.add_argument("--warmup-epochs", type=int, default=20)
    p.add_argument("--delta-theta-max", type=float, default=30.0)
    p.set_defaults(func=cmd_reject_prob)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, FileNotFoundError) as exc:
        category = getattr(exc, "category", type(exc).__name__)
        print(f"error: {category}: {exc}", file=sys.stderr)
        return 1
    except PipelineError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
