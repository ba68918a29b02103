"""Command-line surface: scene generation, single-pair matching, benchmark
sweeps, and weight-file inspection.

Exit codes are a stable scripting contract: 0 success, 1 usage/input error,
2 for a valid run that produced no pose.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .driver import PipelineConfig, run_pair
from .epipolar import relative_pose_error
from .formats import KeypointFormatError, load_keypoints
from .numerics import (WeightFormatError, init_random_weights, load_weights,
                       save_weights)
from .synthbench import (ORACLE_DUSTBIN, ORACLE_INV_TEMPERATURE, TIERS, SceneParams,
                         SyntheticScene, assemble_report, generate_scene, run_scene)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NO_RESULT = 2

# Named pipeline presets for `eval`; a "-nostop" suffix disables early stopping.
EVAL_PRESETS = {
    "imp": dict(pooling="off"),
    "eimp": dict(pooling="adaptive"),
    "r50": dict(pooling="r50"),
}


class CliError(Exception):
    pass


def _common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0, help="base random seed")
    parser.add_argument("--config", type=Path, default=None,
                        help="JSON file with pipeline config fields")
    parser.add_argument("--jobs", type=int, default=1, help="parallel workers")
    parser.add_argument("--output", type=Path, default=None,
                        help="output file or directory")


def _pipeline_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--pooling", choices=("off", "adaptive", "r50"), default=None)
    parser.add_argument("--t-max", type=int, default=None)
    parser.add_argument("--theta-match", type=float, default=None)
    parser.add_argument("--theta-pose-deg", type=float, default=None)
    parser.add_argument("--sinkhorn-iterations", type=int, default=None)
    parser.add_argument("--ransac-iterations", type=int, default=None)
    parser.add_argument("--ransac-threshold-px", type=float, default=None)
    parser.add_argument("--rescue-threshold-px", type=float, default=None)
    parser.add_argument("--dustbin", type=float, default=None,
                        help="dustbin score (default 1.0; scene inputs default "
                             f"to the planted-descriptor profile {ORACLE_DUSTBIN})")
    parser.add_argument("--temperature", type=float, default=None,
                        help="inverse temperature on distances (default 1.0; "
                             f"scene inputs default to {ORACLE_INV_TEMPERATURE})")
    parser.add_argument("--no-early-stop", action="store_true")


def _build_config(args, synthetic_input: bool) -> PipelineConfig:
    """Precedence: flags > config file > defaults. Scene inputs switch the
    transport defaults to the planted-descriptor profile."""
    fields: dict = {}
    if synthetic_input:
        fields["dustbin_score"] = ORACLE_DUSTBIN
        fields["inv_temperature"] = ORACLE_INV_TEMPERATURE
    if args.config is not None:
        try:
            fields.update(json.loads(Path(args.config).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"config file: {exc}") from None
    flag_map = {
        "pooling": args.pooling,
        "t_max": args.t_max,
        "theta_match": args.theta_match,
        "theta_pose_deg": args.theta_pose_deg,
        "sinkhorn_iterations": args.sinkhorn_iterations,
        "ransac_iterations": args.ransac_iterations,
        "ransac_threshold_px": args.ransac_threshold_px,
        "rescue_threshold_px": args.rescue_threshold_px,
        "dustbin_score": args.dustbin,
        "inv_temperature": args.temperature,
    }
    fields.update({k: v for k, v in flag_map.items() if v is not None})
    if args.no_early_stop:
        fields["early_stop"] = False
    fields["seed"] = args.seed
    try:
        return PipelineConfig.from_dict(fields)
    except (TypeError, ValueError) as exc:
        raise CliError(f"bad config: {exc}") from None


def _scene_params(args) -> SceneParams:
    params = TIERS[args.tier]
    overrides = {}
    if args.keypoints is not None:
        overrides["n_keypoints"] = args.keypoints
    if args.inlier_fraction is not None:
        overrides["inlier_fraction"] = args.inlier_fraction
    if args.pixel_noise is not None:
        overrides["pixel_noise"] = args.pixel_noise
    if args.descriptor_noise is not None:
        overrides["descriptor_noise"] = args.descriptor_noise
    if args.descriptor_dim is not None:
        overrides["descriptor_dim"] = args.descriptor_dim
    return replace(params, **overrides)


def cmd_synth(args) -> int:
    if args.output is None:
        raise CliError("synth requires --output DIR")
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    params = _scene_params(args)
    files, seeds = [], []
    for i in range(args.count):
        seed = args.seed + i
        scene = generate_scene(params, seed=seed)
        name = f"scene_{seed:06d}.json"
        (out / name).write_text(scene.to_json())
        files.append(name)
        seeds.append(seed)
    manifest = {
        "tier": args.tier,
        "count": args.count,
        "base_seed": args.seed,
        "seeds": seeds,
        "files": files,
        "params": {
            "n_keypoints": params.n_keypoints,
            "inlier_fraction": params.inlier_fraction,
            "rotation_max_deg": params.rotation_max_deg,
            "pixel_noise": params.pixel_noise,
            "descriptor_noise": params.descriptor_noise,
            "descriptor_dim": params.descriptor_dim,
        },
    }
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    print(f"wrote {args.count} scene(s) and manifest to {out}")
    return EXIT_OK


def cmd_match(args) -> int:
    scene = None
    if args.scene is not None:
        try:
            scene = SyntheticScene.from_json_dict(json.loads(Path(args.scene).read_text()))
        except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
            raise CliError(f"scene file: {exc}") from None
        kps_x, kps_y = scene.kps_x, scene.kps_y
    elif args.input_a is not None and args.input_b is not None:
        try:
            kps_x = load_keypoints(args.input_a)
            kps_y = load_keypoints(args.input_b)
        except (OSError, KeypointFormatError) as exc:
            raise CliError(str(exc)) from None
    else:
        raise CliError("match requires --scene FILE or both --input-a and --input-b")

    weights = None
    if args.weights is not None:
        try:
            weights = load_weights(args.weights)
        except (OSError, WeightFormatError) as exc:
            raise CliError(f"weights: {exc}") from None

    config = _build_config(args, synthetic_input=scene is not None)
    matches, pose, trace = run_pair(kps_x, kps_y, weights, config)

    doc = trace.to_json_dict()
    doc["n_final_matches"] = len(matches)
    if scene is not None and pose is not None and matches:
        mx = kps_x.coords[[m.i for m in matches]]
        my = kps_y.coords[[m.j for m in matches]]
        rot, trans = relative_pose_error(pose, scene.rotation, scene.translation,
                                         mx, my, scene.k1, scene.k2)
        doc["gt_rotation_error_deg"] = rot
        doc["gt_translation_error_deg"] = trans
    text = json.dumps(doc, sort_keys=True, indent=2)
    if args.output is not None:
        Path(args.output).write_text(text + "\n")
    else:
        print(text)
    return EXIT_OK if pose is not None else EXIT_NO_RESULT


def _eval_configs(names: list[str], base: PipelineConfig) -> dict[str, PipelineConfig]:
    configs = {}
    for name in names:
        stem = name.removesuffix("-nostop")
        if stem not in EVAL_PRESETS:
            raise CliError(f"unknown eval config {name!r} "
                           f"(choose from {sorted(EVAL_PRESETS)}, optionally -nostop)")
        cfg = replace(base, **EVAL_PRESETS[stem])
        if name.endswith("-nostop"):
            cfg = replace(cfg, early_stop=False)
        configs[name] = cfg
    return configs


def cmd_eval(args) -> int:
    if args.output is None:
        raise CliError("eval requires --output DIR")
    dataset = Path(args.dataset)
    manifest_path = dataset / "manifest.json"
    if not manifest_path.exists():
        raise CliError(f"no manifest.json in {dataset}")
    manifest = json.loads(manifest_path.read_text())
    scenes = []
    for name in manifest["files"]:
        try:
            scenes.append(SyntheticScene.from_json_dict(
                json.loads((dataset / name).read_text())))
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            print(f"skipping {name}: {exc}", file=sys.stderr)
    if not scenes:
        raise CliError("no readable scenes in the dataset")

    base = _build_config(args, synthetic_input=True)
    names = [n.strip() for n in args.configs.split(",") if n.strip()]
    configs = _eval_configs(names, base)

    out = Path(args.output)
    cache_dir = out / "cache"
    cache_dir.mkdir(parents=True, exist_ok=True)
    stamp = hashlib.sha256(json.dumps(
        {n: c.to_dict() for n, c in configs.items()}, sort_keys=True).encode()
    ).hexdigest()[:12]

    def cache_path(i: int) -> Path:
        return cache_dir / f"scene{i:06d}_{stamp}.json"

    def task(i: int) -> dict:
        path = cache_path(i)
        if args.resume and path.exists():
            return json.loads(path.read_text())
        payload = run_scene(scenes[i], configs, i, args.seed)
        path.write_text(json.dumps(payload, sort_keys=True))
        return payload

    if args.jobs > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            payloads = list(pool.map(task, range(len(scenes))))
    else:
        payloads = [task(i) for i in range(len(scenes))]

    report = assemble_report(payloads, configs)
    (out / "report.json").write_text(report.to_json() + "\n")
    (out / "report.csv").write_text(report.to_csv())

    print(f"{'config':<14} {'tier':<8} {'pairs':>5} {'AUC@5':>7} {'AUC@10':>7} "
          f"{'AUC@20':>7} {'M.S.':>6} {'Prec':>6} {'iters':>6}")
    for name, tiers in report.aggregates.items():
        for tier, agg in tiers.items():
            print(f"{name:<14} {tier:<8} {agg['n_pairs']:>5} "
                  f"{agg['auc']['5']:>7.3f} {agg['auc']['10']:>7.3f} "
                  f"{agg['auc']['20']:>7.3f} {agg['mean_matching_score']:>6.3f} "
                  f"{agg['mean_precision']:>6.3f} {agg['mean_iters']:>6.2f}")
    return EXIT_OK


def cmd_weights(args) -> int:
    if args.action == "init-random":
        store = init_random_weights(args.dim, args.heads, args.iterations, seed=args.seed)
        save_weights(store, args.path)
        print(f"wrote {len(store.tensors)} tensors to {args.path}")
        return EXIT_OK
    try:
        store = load_weights(args.path)
    except (OSError, WeightFormatError) as exc:
        raise CliError(f"weights: {exc}") from None
    print(f"descriptor_dim={store.descriptor_dim} heads={store.head_count} "
          f"iterations={store.iteration_count}")
    missing = store.missing_names()
    state = "untrained (attention bypass active)" if missing else "architecture-complete"
    print(f"state: {state}")
    import zlib
    for name in sorted(store.tensors):
        arr = store.tensors[name]
        checksum = zlib.crc32(np.asarray(arr, dtype="<f4").tobytes())
        print(f"  {name:<28} {str(arr.shape):<14} crc32={checksum:08x}")
    if missing and missing != ["<architecture metadata>"]:
        print(f"missing {len(missing)} required tensor(s), e.g. {missing[:3]}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="itermatch",
        description="Iterative feature matching and relative pose estimation "
                    "with adaptive keypoint pooling.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate synthetic scene files")
    p_synth.add_argument("--tier", choices=sorted(TIERS), default="medium")
    p_synth.add_argument("--count", type=int, default=10)
    p_synth.add_argument("--keypoints", type=int, default=None)
    p_synth.add_argument("--inlier-fraction", type=float, default=None)
    p_synth.add_argument("--pixel-noise", type=float, default=None)
    p_synth.add_argument("--descriptor-noise", type=float, default=None)
    p_synth.add_argument("--descriptor-dim", type=int, default=None)
    _common_flags(p_synth)
    p_synth.set_defaults(func=cmd_synth)

    p_match = sub.add_parser("match", help="run the pipeline on one pair")
    p_match.add_argument("--scene", type=Path, default=None)
    p_match.add_argument("--input-a", type=Path, default=None)
    p_match.add_argument("--input-b", type=Path, default=None)
    p_match.add_argument("--weights", type=Path, default=None)
    _pipeline_flags(p_match)
    _common_flags(p_match)
    p_match.set_defaults(func=cmd_match)

    p_eval = sub.add_parser("eval", help="benchmark configs over a scene dataset")
    p_eval.add_argument("--dataset", type=Path, required=True)
    p_eval.add_argument("--configs", type=str, default="imp,eimp")
    p_eval.add_argument("--resume", action="store_true",
                        help="reuse per-scene cache files from a previous run")
    _pipeline_flags(p_eval)
    _common_flags(p_eval)
    p_eval.set_defaults(func=cmd_eval)

    p_weights = sub.add_parser("weights", help="inspect or create weight files")
    p_weights.add_argument("action", choices=("inspect", "init-random"))
    p_weights.add_argument("path", type=Path)
    p_weights.add_argument("--dim", type=int, default=256)
    p_weights.add_argument("--heads", type=int, default=4)
    p_weights.add_argument("--iterations", type=int, default=9)
    _common_flags(p_weights)
    p_weights.set_defaults(func=cmd_weights)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
