"""Command-line front end.

Exit codes: 0 success, 2 configuration/parse problems, 3 degenerate data.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np
import yaml

from . import io
from .appearance import PatchConfig, extract_histogram, sample_patches, train_dictionary
from .errors import ConfigError, DegenerateDataError
from .flowfit import RansacConfig, ransac_fit
from .flowsim import observe_flow, render_view
from .harness import (
    KFOLD1,
    KFOLD2,
    PipelineConfig,
    benchmark_pipeline,
    build_dataset,
    make_fold_plan,
    run_kfold,
)
from .landing import (
    SafetyFrame,
    classify_safety,
    grid_select,
    heatmap_image,
    segment,
    select_scan_waypoint,
)
from .learn import fit_naive_bayes, fit_regression, label, predict


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_pipeline_config(path, seed) -> PipelineConfig:
    cfg = PipelineConfig(seed=seed)
    if path is None:
        return cfg
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = yaml.safe_load(f) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("pipeline config must be a mapping")
    known = {f.name for f in fields(PipelineConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    doc.pop("seed", None)  # the CLI seed wins
    return replace(cfg, **doc)


def _sorted_frames(directory) -> list[Path]:
    frames = sorted(Path(directory).glob("*.ppm"))
    if not frames:
        raise ConfigError(f"no .ppm frames under {directory}")
    return frames


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> int:
    scene, camera, trajectory, noise_sigma, scenario_seed = io.load_scenario(args.config)
    seed = args.seed if args.seed is not None else scenario_seed
    out = _out_dir(args)
    frames_dir = out / "frames"
    frames_dir.mkdir(exist_ok=True)
    observations = []
    for k, ego in enumerate(trajectory):
        observations.append(observe_flow(scene, camera, ego, args.corners,
                                         noise_sigma=noise_sigma,
                                         rng_seed=(seed, 1, k), frame_id=k))
        io.write_ppm(frames_dir / f"frame_{k:05d}.ppm",
                     render_view(scene, camera, ego, rng_seed=seed))
    io.write_flow_csv(out / "flow.csv", observations)
    io.write_trajectory_csv(out / "trajectory.csv", trajectory)
    print(f"wrote {len(trajectory)} frames to {out}")
    return 0


def cmd_fit(args) -> int:
    observations = io.read_flow_csv(args.flow)
    config = RansacConfig(
        iterations=args.iterations,
        inlier_threshold=args.inlier_threshold,
        fit_order=args.fit_order,
        rng_seed=args.seed or 0,
    )
    results = [(obs.frame_id, ransac_fit(obs, config)) for obs in observations]
    out = _out_dir(args)
    io.write_fit_csv(out / "fits.csv", results, coeff_sidecar=out / "fit_coeffs.csv")
    print(f"fitted {len(results)} frames -> {out / 'fits.csv'}")
    return 0


def cmd_train_textons(args) -> int:
    pcfg = PatchConfig(patch_width=args.patch_width, samples_per_image=args.samples)
    seed = args.seed or 0
    patches = np.concatenate([
        sample_patches(io.read_ppm(p), args.samples, pcfg, (seed, 2, k))
        for k, p in enumerate(_sorted_frames(args.frames))
    ])
    dictionary = train_dictionary(patches, m=args.m, epochs=args.epochs, rng_seed=seed)
    out = _out_dir(args)
    io.write_dictionary_csv(out / "dictionary.csv", dictionary)
    print(f"trained {dictionary.m} textons -> {out / 'dictionary.csv'}")
    return 0


def cmd_train_ssl(args) -> int:
    dictionary = io.read_dictionary_csv(args.dictionary)
    fits = {r["frame_id"]: r["eps_star"] for r in io.read_fit_csv(args.fits)}
    pcfg = PatchConfig(patch_width=dictionary.patch_width, samples_per_image=args.samples)
    seed = args.seed or 0
    frame_ids, histograms, targets = [], [], []
    for k, path in enumerate(_sorted_frames(args.frames)):
        if k not in fits:
            continue
        frame_ids.append(k)
        histograms.append(extract_histogram(io.read_ppm(path), dictionary, pcfg, (seed, 3, k)))
        targets.append(fits[k])
    if not frame_ids:
        raise ConfigError("no frames matched the fit results")
    model = fit_regression(histograms, targets, args.ridge)
    out = _out_dir(args)
    io.write_regression_csv(out / "regression.csv", model)
    io.write_histograms_csv(out / "histograms.csv", frame_ids, histograms)
    if args.threshold is not None:
        preds = predict(model, np.asarray(histograms))
        labels = np.array([label(e, args.threshold) for e in preds])
        nb = fit_naive_bayes(histograms, labels, threshold=args.threshold)
        io.write_naive_bayes_csv(out / "naive_bayes.csv", nb)
    print(f"trained regression on {len(frame_ids)} frames -> {out / 'regression.csv'}")
    return 0


def cmd_predict(args) -> int:
    dictionary = io.read_dictionary_csv(args.dictionary)
    model = io.read_regression_csv(args.model)
    pcfg = PatchConfig(patch_width=dictionary.patch_width, samples_per_image=args.samples)
    q = extract_histogram(io.read_ppm(args.image), dictionary, pcfg, args.seed or 0)
    print("%.9g" % predict(model, q))
    return 0


def cmd_segment(args) -> int:
    dictionary = io.read_dictionary_csv(args.dictionary)
    model = io.read_regression_csv(args.model)
    image = io.read_ppm(args.image)
    rough = segment(image, dictionary, model, window=args.window,
                    stride=args.stride, samples=args.samples, rng_seed=args.seed or 0)
    out = _out_dir(args)
    io.write_roughness_map_csv(out / "roughness_map.csv", rough)
    io.write_ppm(out / "roughness_map.ppm", heatmap_image(rough))
    print(f"segmented into {rough.values.shape[0]}x{rough.values.shape[1]} map -> {out}")
    return 0


def cmd_land_scan(args) -> int:
    fits = io.read_fit_csv(args.fits)
    trajectory = io.read_trajectory_csv(args.trajectory)
    frames = []
    for rec in fits:
        ego = trajectory[rec["frame_id"]]
        frames.append(SafetyFrame(frame_id=rec["frame_id"], x=ego.x, y=ego.y,
                                  sf=classify_safety(rec["eps_star"], args.threshold)))
    decision = select_scan_waypoint(frames)
    out = _out_dir(args)
    io.write_record(out / "scan_decision.txt", {
        "start": decision.start, "end": decision.end, "a_sf": decision.a_sf,
        "land_x": decision.land_x, "land_y": decision.land_y,
    })
    print(f"stretch [{decision.start}..{decision.end}] "
          f"-> land at ({decision.land_x:.3f}, {decision.land_y:.3f})")
    return 0


def cmd_land_grid(args) -> int:
    dictionary = io.read_dictionary_csv(args.dictionary)
    model = io.read_regression_csv(args.model)
    image = io.read_ppm(args.image)
    from .flowsim import CameraIntrinsics

    camera = CameraIntrinsics(focal_length_px=args.focal,
                              image_width=image.shape[1], image_height=image.shape[0])
    decision = grid_select(image, dictionary, model, args.threshold, camera,
                           args.height, rng_seed=args.seed or 0)
    out = _out_dir(args)
    record = {f"eps{i}": float(v) for i, v in enumerate(decision.scores)}
    record.update({
        "chosen": -1 if decision.chosen is None else decision.chosen,
        "d_c": decision.d_c, "d_p": decision.d_p,
    })
    io.write_record(out / "grid_decision.txt", record)
    if decision.chosen is None:
        print("all regions above threshold: rejected")
    else:
        print(f"region {decision.chosen}, displacement {decision.d_p:.3f} m")
    return 0


def cmd_evaluate(args) -> int:
    config = _load_pipeline_config(args.config, args.seed or 0)
    out = _out_dir(args)
    dataset = build_dataset(config)
    protocols = [args.protocol] if args.protocol else [KFOLD1, KFOLD2]
    for protocol in protocols:
        plan = make_fold_plan(protocol, config.n_scenes, config.frames_per_scene,
                              rng_seed=config.seed)
        metrics = run_kfold(plan, config, dataset=dataset)
        path = out / f"metrics_{protocol}.csv"
        with open(path, "w", newline="") as f:
            f.write("fold,auc,nrmse,err,mean_entropy,n_test\n")
            for m in metrics:
                cells = [str(m.fold)] + [
                    "" if v is None else "%.9g" % v
                    for v in (m.auc, m.nrmse, m.err, m.mean_entropy)
                ] + [str(m.n_test)]
                f.write(",".join(cells) + "\n")
        print(f"{protocol}: wrote {len(metrics)} folds -> {path}")
    return 0


def cmd_bench(args) -> int:
    config = _load_pipeline_config(args.config, args.seed or 0)
    stages = benchmark_pipeline(config, frame_count=args.frames)
    for name in ("flow_fit", "ssl_distribution", "ssl_predict", "ssl_total", "combined"):
        print(f"{name:>16}: {stages[name]:8.3f} ms")
    if args.out:
        out = _out_dir(args)
        with open(out / "bench.csv", "w", newline="") as f:
            f.write("stage,ms\n")
            for name, ms in stages.items():
                f.write(f"{name},{ms:.6f}\n")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowland",
        description="Optical-flow roughness, texton appearance learning, "
                    "and landing-spot selection on synthetic scenes.",
    )
    parser.add_argument("--seed", type=int, default=None, help="master seed")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.set_defaults(func=func)
        return p

    p = add("simulate", cmd_simulate, help="scenario -> flow CSV + PPM frames")
    p.add_argument("--config", required=True, help="scenario YAML")
    p.add_argument("--out", required=True)
    p.add_argument("--corners", type=int, default=25)

    p = add("fit", cmd_fit, help="flow CSV -> roughness CSV")
    p.add_argument("--flow", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--inlier-threshold", type=float, default=0.01)
    p.add_argument("--iterations", type=int, default=100)
    p.add_argument("--fit-order", choices=["quadratic", "linear"], default="quadratic")

    p = add("train-textons", cmd_train_textons, help="PPM frames -> texton dictionary")
    p.add_argument("--frames", required=True, help="directory of .ppm frames")
    p.add_argument("--out", required=True)
    p.add_argument("--m", type=int, default=30)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--samples", type=int, default=25)
    p.add_argument("--patch-width", type=int, default=5)

    p = add("train-ssl", cmd_train_ssl, help="dictionary + fits + frames -> models")
    p.add_argument("--dictionary", required=True)
    p.add_argument("--fits", required=True)
    p.add_argument("--frames", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int, default=25)
    p.add_argument("--ridge", type=float, default=1e-8)
    p.add_argument("--threshold", type=float, default=None,
                   help="roughness threshold; also trains the class model")

    p = add("predict", cmd_predict, help="still image -> roughness estimate")
    p.add_argument("--dictionary", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--samples", type=int, default=25)

    p = add("segment", cmd_segment, help="still image -> roughness map CSV + PPM")
    p.add_argument("--dictionary", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--window", type=int, default=50)
    p.add_argument("--stride", type=int, default=4)
    p.add_argument("--samples", type=int, default=50)

    p = add("land-scan", cmd_land_scan, help="fits + trajectory -> safest stretch")
    p.add_argument("--fits", required=True)
    p.add_argument("--trajectory", required=True)
    p.add_argument("--threshold", type=float, required=True)
    p.add_argument("--out", required=True)

    p = add("land-grid", cmd_land_grid, help="still image -> 3x3 landing region")
    p.add_argument("--dictionary", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--threshold", type=float, required=True)
    p.add_argument("--height", type=float, required=True)
    p.add_argument("--focal", type=float, required=True)
    p.add_argument("--out", required=True)

    p = add("evaluate", cmd_evaluate, help="K-fold cross-validation metrics")
    p.add_argument("--protocol", choices=[KFOLD1, KFOLD2], default=None,
                   help="default: run both")
    p.add_argument("--config", default=None, help="pipeline config YAML")
    p.add_argument("--out", required=True)

    p = add("bench", cmd_bench, help="per-stage processing time")
    p.add_argument("--config", default=None)
    p.add_argument("--frames", type=int, default=60)
    p.add_argument("--out", default=None)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DegenerateDataError as exc:
        print(f"degenerate data: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
