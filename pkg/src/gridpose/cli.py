"""Command-line interface.

Subcommands mirror the toolkit stages: ``sample`` (keypoints), ``graph``
(k-NN edges), ``encode``/``decode`` (binary codes), ``selfocc``
(self-occlusion analysis), ``solve`` (robust PnP), ``eval`` (pose metrics),
``synth-bench`` (synthetic benchmark), and ``train-toy`` (two-phase toy
training).

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from .codes import (
    BinaryCodeSet,
    GridSpec,
    codes_from_json,
    codes_to_json,
    decode_codes,
    encode_projection,
)
from .geometry import (
    CameraIntrinsics,
    Pose,
    build_knn_graph,
    farthest_point_sample,
)
from .graphnet import StagePlan
from .harness import (
    NoiseModel,
    PoseSamplerConfig,
    RunConfig,
    make_toy_object,
    generate_scenes,
    run_benchmark,
    train_toy,
)
from .meshio import load_mesh
from .metrics import SymmetrySpec, evaluate_poses
from .nnops import save_checkpoint
from .solver import (
    CorrespondenceSet,
    SolverConfig,
    SolverError,
    ransac_pnp,
    spatial_coherence_solve,
)
from .visibility import filter_decision, sample_viewpoints, visibility_profile


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _load_json(path: str):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _dump_json(obj, path: str | None):
    text = json.dumps(obj, indent=2)
    if path is None:
        print(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")


def _config_from_dict(data: dict) -> RunConfig:
    kwargs = dict(data)
    if "plan" in kwargs:
        kwargs["plan"] = StagePlan(**kwargs["plan"])
    if "solver" in kwargs:
        kwargs["solver"] = SolverConfig(**kwargs["solver"])
    if "pose_sampler" in kwargs:
        kwargs["pose_sampler"] = PoseSamplerConfig(**kwargs["pose_sampler"])
    if "noise" in kwargs:
        kwargs["noise"] = NoiseModel(**kwargs["noise"])
    for key in ("encoder_channels", "decoder_widths", "image_size"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    if "z_range" in kwargs:
        kwargs["z_range"] = tuple(kwargs["z_range"])
    return RunConfig(**kwargs)


def _run_config(args) -> RunConfig:
    cfg = RunConfig() if args.config is None else _config_from_dict(_load_json(args.config))
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _intrinsics_from_json(path: str) -> CameraIntrinsics:
    d = _load_json(path)
    return CameraIntrinsics(fx=d["fx"], fy=d["fy"], cx=d["cx"], cy=d["cy"])


def _pose_to_dict(pose: Pose) -> dict:
    return {"R": [float(v) for v in pose.rotation.reshape(-1)],
            "t": [float(v) for v in pose.translation]}


def _pose_from_dict(d: dict) -> Pose:
    return Pose(np.asarray(d["R"], dtype=np.float64).reshape(3, 3),
                np.asarray(d["t"], dtype=np.float64))


def _symmetry_from_json(path: str | None) -> SymmetrySpec:
    if path is None:
        return SymmetrySpec.none()
    d = _load_json(path)
    kind = d.get("kind", "none")
    if kind == "none":
        return SymmetrySpec.none()
    if kind == "discrete":
        return SymmetrySpec.discrete([np.asarray(r, dtype=np.float64).reshape(3, 3)
                                      for r in d["rotations"]])
    if kind == "axis":
        return SymmetrySpec.continuous(d["axis"], int(d.get("steps", 360)))
    raise ValueError(f"unknown symmetry kind {kind!r}")


def _out_path(args, name: str) -> str | None:
    if args.out_dir is None:
        return None
    os.makedirs(args.out_dir, exist_ok=True)
    return os.path.join(args.out_dir, name)


def _cmd_sample(args) -> int:
    model = load_mesh(args.mesh)
    kp = farthest_point_sample(model, args.n, args.seed_index)
    _dump_json({"points": kp.points.tolist(), "indices": kp.indices.tolist()},
               _out_path(args, "keypoints.json"))
    return 0


def _cmd_graph(args) -> int:
    data = _load_json(args.keypoints)
    pts = np.asarray(data["points"], dtype=np.float64)
    graph = build_knn_graph(pts, args.k)
    _dump_json({"k": graph.k, "neighbors": graph.neighbors.tolist(),
                "edges": graph.edges().tolist()},
               _out_path(args, "graph.json"))
    return 0


def _grid_from_args(args) -> GridSpec:
    return GridSpec(roi_size=args.roi_size, depth=args.depth, base_depth=args.base_depth)


def _cmd_encode(args) -> int:
    pts = np.asarray(_load_json(args.points), dtype=np.float64)
    codes = encode_projection(pts, _grid_from_args(args))
    out = _out_path(args, "codes.json")
    text = codes_to_json(codes)
    if out is None:
        print(text)
    else:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    return 0


def _cmd_decode(args) -> int:
    with open(args.codes, "r", encoding="utf-8") as fh:
        codes = codes_from_json(fh.read())
    pts, valid = decode_codes(codes, _grid_from_args(args))
    _dump_json({"points": pts.tolist(), "valid": valid.tolist()},
               _out_path(args, "points.json"))
    return 0


def _cmd_selfocc(args) -> int:
    model = load_mesh(args.mesh)
    views = sample_viewpoints(level=args.view_level, radius_factor=args.radius_factor)
    profile = visibility_profile(model, views, max_points=args.max_points,
                                 radius_scale=args.hpr_radius_scale)
    _dump_json({
        "per_vertex_V": profile.v.tolist(),
        "r_so": profile.r_so,
        "filter": filter_decision(profile, textureless=args.textureless),
    }, _out_path(args, "selfocc.json"))
    return 0


def _cmd_solve(args) -> int:
    rows = _load_json(args.correspondences)
    corrs = CorrespondenceSet(
        p3d=np.asarray([r["p3d"] for r in rows], dtype=np.float64),
        p2d=np.asarray([r["p2d"] for r in rows], dtype=np.float64),
        valid=np.asarray([r.get("valid", True) for r in rows], dtype=bool),
    )
    intr = _intrinsics_from_json(args.intrinsics)
    cfg = SolverConfig(reproj_threshold=args.threshold,
                       ransac_iters=args.iters, progx_iters=args.iters,
                       seed=args.seed if args.seed is not None else 0)
    solve = spatial_coherence_solve if args.solver == "progx" else ransac_pnp
    est = solve(corrs, intr, cfg)
    out = _pose_to_dict(est.pose)
    out["inliers"] = est.inliers.tolist()
    out["mean_err"] = est.mean_error
    _dump_json(out, _out_path(args, "pose.json"))
    return 0


def _cmd_eval(args) -> int:
    preds = [None if d is None else _pose_from_dict(d) for d in _load_json(args.predictions)]
    gts = [_pose_from_dict(d) for d in _load_json(args.ground_truth)]
    model = load_mesh(args.mesh)
    sym = _symmetry_from_json(args.symmetry)
    report = evaluate_poses(preds, gts, model, sym)
    _dump_json(report.as_dict(), _out_path(args, "metrics.json"))
    csv_path = _out_path(args, "metrics.csv")
    if csv_path is not None:
        with open(csv_path, "w", encoding="utf-8") as fh:
            keys = list(report.as_dict().keys())
            fh.write(",".join(keys) + "\n")
            fh.write(",".join(str(report.as_dict()[k]) for k in keys) + "\n")
    return 0


def _cmd_synth_bench(args) -> int:
    cfg = _run_config(args)
    if args.scenes is not None:
        cfg = dataclasses.replace(cfg, bench_scenes=args.scenes)
    report, _ = run_benchmark(cfg, out_dir=args.out_dir, solver=args.solver,
                              use_mask_filter=args.mask_filter)
    print(json.dumps(report.as_dict(), indent=2))
    return 0


def _cmd_train_toy(args) -> int:
    cfg = _run_config(args)
    if args.steps is not None:
        cfg = dataclasses.replace(cfg, steps=args.steps)
    model = make_toy_object(cfg.object_kind, cfg.object_subdiv, cfg.object_diameter)
    kp = farthest_point_sample(model, cfg.toy_keypoints)
    graph = build_knn_graph(kp, cfg.knn_k)
    train = generate_scenes(model, kp, cfg, cfg.train_scenes)
    test = generate_scenes(model, kp, cfg, cfg.test_scenes, seed_offset=cfg.train_scenes)
    net, log = train_toy(train, cfg, kp, graph, eval_samples=test)
    out_dir = args.out_dir or "."
    os.makedirs(out_dir, exist_ok=True)
    save_checkpoint(os.path.join(out_dir, "model.ckpt"), net.params())
    with open(os.path.join(out_dir, "train_log.json"), "w", encoding="utf-8") as fh:
        json.dump({"steps": log.steps, "evals": log.evals}, fh)
    print(json.dumps({"final_total": log.steps[-1]["total"],
                      "evals": log.evals[-3:]}, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gridpose",
                     description="Dense-correspondence pose estimation toolkit")
    parser.add_argument("--config", help="run-config JSON file")
    parser.add_argument("--seed", type=int, help="master seed override")
    parser.add_argument("--out-dir", help="directory for outputs (default: stdout)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="farthest-point keypoint sampling")
    p.add_argument("--mesh", required=True)
    p.add_argument("--n", type=int, default=512)
    p.add_argument("--seed-index", type=int, default=0)
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("graph", help="k-NN graph over keypoints")
    p.add_argument("--keypoints", required=True, help="keypoints JSON from 'sample'")
    p.add_argument("--k", type=int, default=20)
    p.set_defaults(func=_cmd_graph)

    for name in ("encode", "decode"):
        p = sub.add_parser(name, help=f"{name} binary location codes")
        p.add_argument("--roi-size", type=int, default=256)
        p.add_argument("--depth", type=int, default=6)
        p.add_argument("--base-depth", type=int, default=3)
        if name == "encode":
            p.add_argument("--points", required=True, help="JSON array of [x, y] RoI points")
            p.set_defaults(func=_cmd_encode)
        else:
            p.add_argument("--codes", required=True, help="codes JSON")
            p.set_defaults(func=_cmd_decode)

    p = sub.add_parser("selfocc", help="self-occlusion ratio from HPR visibility")
    p.add_argument("--mesh", required=True)
    p.add_argument("--textureless", action="store_true")
    p.add_argument("--view-level", type=int, default=4)
    p.add_argument("--radius-factor", type=float, default=3.0)
    p.add_argument("--max-points", type=int, default=5000)
    p.add_argument("--hpr-radius-scale", type=float, default=100.0)
    p.set_defaults(func=_cmd_selfocc)

    p = sub.add_parser("solve", help="robust PnP from correspondences JSON")
    p.add_argument("--correspondences", required=True)
    p.add_argument("--intrinsics", required=True)
    p.add_argument("--solver", choices=("ransac", "progx"), default="ransac")
    p.add_argument("--threshold", type=float, default=2.0)
    p.add_argument("--iters", type=int, default=150)
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("eval", help="pose metrics from prediction/gt JSON")
    p.add_argument("--predictions", required=True)
    p.add_argument("--ground-truth", required=True)
    p.add_argument("--mesh", required=True)
    p.add_argument("--symmetry")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("synth-bench", help="synthetic oracle benchmark")
    p.add_argument("--scenes", type=int)
    p.add_argument("--solver", choices=("ransac", "progx"), default="ransac")
    p.add_argument("--mask-filter", action="store_true")
    p.set_defaults(func=_cmd_synth_bench)

    p = sub.add_parser("train-toy", help="two-phase toy training")
    p.add_argument("--steps", type=int)
    p.set_defaults(func=_cmd_train_toy)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError, SolverError, json.JSONDecodeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
