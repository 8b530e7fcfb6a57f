"""Command-line entry point: ``fpnormal <subcommand> [flags]``.

Failures print one line ``error: <kind>: <message>`` on stderr. Usage problems (bad
flags, missing inputs) exit with status 2, all other failures with 1.
"""
import argparse
import json
import logging
import os
import sys
from types import SimpleNamespace

import numpy as np

from . import _accel

log = logging.getLogger("fpnormal")

MODEL_FILES = {"classifier": "classifier.npz", "feature": "feature.npz", "non-feature": "non_feature.npz"}
BUILTIN_MESHES = ("cube", "wedge", "sphere")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _config(args):
    from .config import RunConfig, load_config
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        from dataclasses import replace
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _need(*paths):
    for p in paths:
        if p is not None and not os.path.exists(p):
            raise UsageError("input not found: %s" % p)


def _outdir(path):
    os.makedirs(path, exist_ok=True)
    return path


def _mesh(spec):
    from .ground_truth import cube_mesh, icosphere, wedge_mesh
    from .io import read_mesh
    if spec in BUILTIN_MESHES:
        return {"cube": cube_mesh, "wedge": wedge_mesh, "sphere": lambda: icosphere(3)}[spec]()
    _need(spec)
    return read_mesh(spec)


def _load_models(d):
    from .filtering import Models
    from .nnet import load_model
    _need(d, *(os.path.join(d, f) for f in MODEL_FILES.values()))
    return Models(*(load_model(os.path.join(d, MODEL_FILES[k])) for k in ("classifier", "feature", "non-feature")))


# -- subcommands ----------------------------------------------------------------------------

def cmd_gen_data(args, cfg):
    from .dataset import build_patch_set, concat
    from .rng import derive_seed
    out = _outdir(args.out)
    if args.manifest:
        from .io import read_manifest
        _need(args.manifest)
        entries = [e for e in read_manifest(args.manifest) if e.split == args.split]
        jobs = [(e.mesh, e.n_points, e.noise) for e in entries]
    else:
        if not args.mesh:
            raise UsageError("gen-data needs --mesh or --manifest")
        noise = cfg.noise_levels if args.noise is None else (args.noise,)
        jobs = [(args.mesh, args.n or cfg.n_points, noise)]
    if not args.patches:
        # one noisy ground-truth cloud plus its labels
        from .dataset import make_cloud
        from .geometry import SpatialIndex, average_spacing
        from .ground_truth import detect_feature_points, label_cloud
        from .io import write_labels, write_xyz
        mesh_spec, n, noise = jobs[0]
        if len(noise) != 1:
            raise UsageError("cloud output needs a single --noise level")
        mesh = _mesh(mesh_spec)
        gt, noisy, R = make_cloud(mesh, n, noise[0], cfg.seed, rotate=cfg.rotate)
        r_avg = average_spacing(noisy)
        psi = detect_feature_points(mesh, cfg.feature_angle, spacing=r_avg / 2.0) @ R.T
        labels = label_cloud(noisy, gt, psi, r_avg, cfg.patch_factor, cfg.rf_factor, cfg.sigmaf_factor,
                             cfg.feature_angle, cfg.tau_b, index=SpatialIndex(noisy))
        write_xyz(os.path.join(out, "gt.xyz"), gt.points, gt.gt_normals)
        write_xyz(os.path.join(out, "noisy.xyz"), noisy)
        write_labels(os.path.join(out, "labels.txt"), labels)
        return {"points": int(n), "features": int(labels.is_feature.sum())}
    sets = []
    for mid, (mesh_spec, n, noise) in enumerate(jobs):
        mesh = _mesh(mesh_spec)
        for k, level in enumerate(noise):
            seed = derive_seed(cfg.seed, "gen-data", mid * 1000 + k)
            sets.append(build_patch_set(
                mesh, n, level, seed, n_random=cfg.patches_random, n_feature=cfg.patches_feature, model_id=mid,
                rotate=cfg.rotate, m=cfg.m, small=cfg.class_size, patch_factor=cfg.patch_factor, tau_b=cfg.tau_b,
                angle_thresh=cfg.feature_angle, rf_factor=cfg.rf_factor, sigmaf_factor=cfg.sigmaf_factor,
                eta_div=cfg.eta_div, sigma_g_div=cfg.sigma_g_div))
    ds = concat(sets)
    if cfg.axis_swap:
        ds = ds.with_axis_swaps()
    ds.save(os.path.join(out, "patches.npz"))
    return {"patches": len(ds), "features": int(ds.is_feature.sum())}


def _history(path, history):
    with open(path, "w") as f:
        for e, v in enumerate(history):
            f.write("%d %.17g\n" % (e, v))


def cmd_train_classifier(args, cfg):
    from .classifier import train_classifier
    from .dataset import PatchSet
    from .nnet import save_model
    _need(args.data)
    out = _outdir(args.out)
    ds = PatchSet.load(args.data)
    # the feature top-up would skew the class prior; the classifier sees the uniform draw only
    ds = ds.subset(np.flatnonzero(ds.random_pool))
    model, hist = train_classifier(ds.maps_small, ds.class_label, ds.theta, cfg.train_config("classifier"),
                                   model_ids=ds.model_id, weighted=cfg.weighted_loss,
                                   sigma_theta=np.radians(cfg.sigma_theta))
    save_model(model, os.path.join(out, MODEL_FILES["classifier"]))
    _history(os.path.join(out, "classifier_history.txt"), hist)
    return {"samples": len(ds), "final_loss": hist[-1]}


def cmd_train_normals(args, cfg):
    from .dataset import PatchSet
    from .nnet import save_model
    from .normals import train_normal_net
    _need(args.data)
    out = _outdir(args.out)
    ds = PatchSet.load(args.data)
    branches = ["feature", "non-feature"] if args.branch == "both" else [args.branch]
    result = {}
    for br in branches:
        idx, lab = ds.branch(br == "feature", space=cfg.label_space)
        model, hist = train_normal_net(ds.maps[idx], lab, br, cfg.train_config("normals"), model_ids=ds.model_id[idx],
                                       net_kwargs=cfg.net_kwargs())
        save_model(model, os.path.join(out, MODEL_FILES[br]))
        _history(os.path.join(out, "%s_history.txt" % br.replace("-", "_")), hist)
        result[br] = hist[-1]
    return result


def _read_points(path):
    from .io import read_cloud
    _need(path)
    return read_cloud(path)


def cmd_classify(args, cfg):
    from .classifier import scores_from_outputs
    from .geometry import SpatialIndex, average_spacing
    from .heightmap import cloud_height_maps, resize
    from .io import write_labels
    from .nnet import load_model
    pts, _ = _read_points(args.input)
    path = os.path.join(args.models, MODEL_FILES["classifier"]) if os.path.isdir(args.models or "") else args.models
    _need(path)
    fc = cfg.filter_config()
    maps, _, _, _ = cloud_height_maps(pts, fc.params(average_spacing(pts)), SpatialIndex(pts))
    scores = scores_from_outputs(load_model(path).predict(resize(maps, cfg.class_size)))
    flag = scores > cfg.threshold
    n = len(pts)
    rows = SimpleNamespace(is_feature=flag, normals=np.full((n, 6), np.nan), priorities=np.zeros((n, 2)),
                           balance=np.zeros(n, dtype=bool))
    write_labels(args.out, rows, scores)
    return {"points": len(pts), "features": int(flag.sum())}


def cmd_estimate_normals(args, cfg):
    from .filtering import estimate_normals
    from .io import write_cloud
    pts, _ = _read_points(args.input)
    est = estimate_normals(pts, _load_models(args.models), cfg.filter_config())
    write_cloud(args.out, pts, est["normals"])
    return {"points": len(pts), "features": int(est["is_feature"].sum())}


def cmd_filter(args, cfg):
    from .filtering import run_pipeline
    from .geometry import pca_normals
    from .io import write_cloud
    pts, _ = _read_points(args.input)
    fc = cfg.filter_config()
    if args.normal_source == "pca":
        from .geometry import average_spacing
        models, fn = None, lambda it, p: pca_normals(p, fc.patch_factor * average_spacing(p))
    else:
        models, fn = _load_models(args.models), None
    snap = None
    if args.snapshots:
        stem = os.path.splitext(args.out)[0]
        def snap(it, p, d):
            write_cloud("%s.iter%d.xyz" % (stem, it + 1), p, d["normals"])
    clean, diags = run_pipeline(pts, models, fc, normal_fn=fn, callback=snap)
    write_cloud(args.out, clean)
    with open(args.out + ".diag.txt", "w") as f:
        for d in diags:
            nf = int(d["is_feature"].sum()) if "is_feature" in d else -1
            f.write("iteration = %d features = %d mean_displacement = %.17g max_displacement = %.17g\n"
                    % (d["iteration"], nf, d["mean_displacement"], d["max_displacement"]))
    return {"points": len(clean), "iterations": len(diags)}


def cmd_evaluate(args, cfg):
    from .metrics import evaluate
    gt, gtn = _read_points(args.gt)
    pred, pn = _read_points(args.pred)
    kw = {}
    if gtn is not None and pn is not None and len(gt) == len(pred) and not args.geometry_only:
        kw.update(pred_normals=pn, gt_normals=gtn)
    if args.scores or args.labels:
        from .io import read_labels
        _need(args.scores, args.labels)
        if not (args.scores and args.labels):
            raise UsageError("--scores and --labels go together")
        kw.update(predicted_features=read_labels(args.scores)["class_label"][:, 0].astype(bool),
                  true_features=read_labels(args.labels)["class_label"][:, 0].astype(bool))
    report = evaluate(gt_points=gt, points=pred, **kw)
    text = report.to_text()
    sys.stdout.write(text)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
    return None


def cmd_export_errors(args, cfg):
    from .io import write_ply
    from .metrics import angular_errors, error_colors, point_distances
    gt, gtn = _read_points(args.gt)
    pred, pn = _read_points(args.pred)
    if args.kind == "angle":
        if gtn is None or pn is None:
            raise UsageError("angle errors need normals in both clouds")
        err = angular_errors(pn, gtn)
    else:
        err = point_distances(pred, gt)
    write_ply(args.out, pred, pn, colors=error_colors(err, args.vmax))
    return {"max_error": float(err.max()), "mean_error": float(err.mean())}


# -- parser ---------------------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="fpnormal", description="Feature-preserving point cloud normal estimation and filtering.")
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key = value run configuration")
    common.add_argument("--seed", type=int, help="override the configured root seed")
    common.add_argument("--out", required=True, help="output file or directory")
    common.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("gen-data", parents=[common], help="sample a mesh into a noisy cloud or a patch set")
    s.add_argument("--mesh", help="OFF/PLY mesh or one of: %s" % ", ".join(BUILTIN_MESHES))
    s.add_argument("--manifest", help="dataset manifest (patch-set mode)")
    s.add_argument("--split", default="train", choices=("train", "test"))
    s.add_argument("--n", type=int, help="points per sample")
    s.add_argument("--noise", type=float, help="noise level as a fraction of the bounding-box diagonal")
    s.add_argument("--patches", action="store_true", help="write a training patch set instead of a cloud")
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("train-classifier", parents=[common], help="train the feature classifier")
    s.add_argument("--data", required=True, help="patches.npz from gen-data --patches")
    s.set_defaults(func=cmd_train_classifier)

    s = sub.add_parser("train-normals", parents=[common], help="train the normal regressors")
    s.add_argument("--data", required=True)
    s.add_argument("--branch", default="both", choices=("both", "feature", "non-feature"))
    s.set_defaults(func=cmd_train_normals)

    s = sub.add_parser("classify", parents=[common], help="per-point feature scores")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--models", required=True, help="model directory or classifier checkpoint")
    s.set_defaults(func=cmd_classify)

    s = sub.add_parser("estimate-normals", parents=[common], help="predict normals for a cloud")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--models", required=True)
    s.set_defaults(func=cmd_estimate_normals)

    s = sub.add_parser("filter", parents=[common], help="iterative normal-driven denoising")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--models", help="model directory (learned normals)")
    s.add_argument("--normal-source", default="learned", choices=("learned", "pca"))
    s.add_argument("--snapshots", action="store_true", help="also write <out>.iterK.xyz after every iteration")
    s.set_defaults(func=cmd_filter)

    s = sub.add_parser("evaluate", parents=[common], help="compare a result with ground truth")
    s.add_argument("--gt", required=True)
    s.add_argument("--pred", required=True)
    s.add_argument("--scores", help="classify output (label dump) for feature precision")
    s.add_argument("--labels", help="ground-truth label dump for feature precision")
    s.add_argument("--geometry-only", action="store_true")
    s.set_defaults(func=cmd_evaluate)
    # evaluate prints to stdout; --out is an optional copy
    for a in s._actions:
        if a.dest == "out":
            a.required = False

    s = sub.add_parser("export-errors", parents=[common], help="colorized PLY of per-point errors")
    s.add_argument("--gt", required=True)
    s.add_argument("--pred", required=True)
    s.add_argument("--kind", default="distance", choices=("distance", "angle"))
    s.add_argument("--vmax", type=float, help="error mapped to pure red (default: max error)")
    s.set_defaults(func=cmd_export_errors)
    return p


def _fail(kind, msg, code):
    sys.stderr.write("error: %s: %s\n" % (kind, " ".join(str(msg).split())))
    return code


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "filter" and args.normal_source == "learned" and not args.models:
            raise UsageError("filter needs --models unless --normal-source pca")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
        _accel.set_threads(args.threads)
        cfg = _config(args)
        result = args.func(args, cfg)
    except UsageError as e:
        return _fail("usage", e, 2)
    except Exception as e:  # noqa: BLE001 - every failure becomes one parsable line
        return _fail(type(e).__name__, e, 1)
    if result is not None:
        sys.stdout.write(json.dumps({"command": args.command, **result}, sort_keys=True) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
