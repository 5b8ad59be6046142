"""File formats: scenario YAML, flow/fit/model CSVs, and binary PPM images.

Numbers are written with 9 significant digits ("%.9g"), which keeps output
trees byte-identical across reruns with the same seed.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
import yaml

from .appearance import TextonDictionary
from .errors import ConfigError
from .flowfit import FlowFitResult
from .flowsim import (
    BoxObstacle,
    CameraIntrinsics,
    EgoState,
    FlowObservation,
    Material,
    Scene,
    ScenePlane,
    scan_trajectory,
)
from .landing import RoughnessMap
from .learn import NaiveBayesModel, RegressionModel

FLOW_HEADER = ["frame_id", "x", "y", "u", "v", "depth_truth", "on_obstacle"]
FIT_HEADER = ["frame_id", "eps_u", "eps_v", "eps_star", "inlier_count", "corner_count"]


def _fmt(value: float) -> str:
    return "%.9g" % float(value)


# ---------------------------------------------------------------------------
# PPM images (P6, maxval 255)


def write_ppm(path, image: np.ndarray) -> None:
    image = np.asarray(image, dtype=float)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("expected an (H, W, 3) image")
    data = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    h, w = data.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    if fields[0] != b"P6":
        raise ConfigError("not a binary PPM (P6) file")
    w, h, maxval = (int(v) for v in fields[1:])
    if maxval != 255:
        raise ConfigError("only maxval 255 PPMs are supported")
    pixels = np.frombuffer(raw[pos + 1 :], dtype=np.uint8, count=w * h * 3)
    return pixels.reshape(h, w, 3).astype(float) / 255.0


# ---------------------------------------------------------------------------
# flow observations


def write_flow_csv(path, observations) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(FLOW_HEADER)
        for obs in observations:
            for i in range(len(obs)):
                writer.writerow([
                    obs.frame_id, _fmt(obs.x[i]), _fmt(obs.y[i]),
                    _fmt(obs.u[i]), _fmt(obs.v[i]), _fmt(obs.depth_truth[i]),
                    int(obs.on_obstacle[i]),
                ])


def read_flow_csv(path) -> list[FlowObservation]:
    """Rebuild per-frame observations; ego state is not stored in the CSV."""
    rows: dict[int, list[list[float]]] = {}
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != FLOW_HEADER:
            raise ConfigError(f"unexpected flow CSV header: {header}")
        for rec in reader:
            if not rec:
                continue
            rows.setdefault(int(rec[0]), []).append([float(v) for v in rec[1:]])
    observations = []
    for frame_id in sorted(rows):
        block = np.asarray(rows[frame_id])
        observations.append(FlowObservation(
            x=block[:, 0], y=block[:, 1], u=block[:, 2], v=block[:, 3],
            depth_truth=block[:, 4], on_obstacle=block[:, 5] > 0.5,
            frame_id=frame_id,
        ))
    return observations


# ---------------------------------------------------------------------------
# fit results


def write_fit_csv(path, results: list[tuple[int, FlowFitResult]],
                  coeff_sidecar=None) -> None:
    """Fit summary CSV plus an optional sidecar with the 10 coefficients."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(FIT_HEADER)
        for frame_id, r in results:
            writer.writerow([
                frame_id, _fmt(r.eps_u), _fmt(r.eps_v), _fmt(r.eps_star),
                int(r.inlier_mask.sum()), r.corner_count,
            ])
    if coeff_sidecar is not None:
        with open(coeff_sidecar, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["frame_id"] + [f"pu{i}" for i in range(5)] + [f"pv{i}" for i in range(5)])
            for frame_id, r in results:
                writer.writerow([frame_id] + [_fmt(c) for c in r.params.p_u]
                                + [_fmt(c) for c in r.params.p_v])


def read_fit_csv(path) -> list[dict]:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != FIT_HEADER:
            raise ConfigError(f"unexpected fit CSV header: {header}")
        out = []
        for rec in reader:
            if not rec:
                continue
            out.append({
                "frame_id": int(rec[0]), "eps_u": float(rec[1]), "eps_v": float(rec[2]),
                "eps_star": float(rec[3]), "inlier_count": int(rec[4]),
                "corner_count": int(rec[5]),
            })
    return out


# ---------------------------------------------------------------------------
# dictionaries, models, histograms


def write_dictionary_csv(path, dictionary: TextonDictionary) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["w", "m", "seed"])
        writer.writerow([dictionary.patch_width, dictionary.m, dictionary.rng_seed])
        for row in dictionary.textons:
            writer.writerow([_fmt(v) for v in row])


def read_dictionary_csv(path) -> TextonDictionary:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["w", "m", "seed"]:
            raise ConfigError(f"unexpected dictionary header: {header}")
        w, m, seed = next(reader)
        textons = np.asarray([[float(v) for v in rec] for rec in reader if rec])
    if len(textons) != int(m):
        raise ConfigError(f"dictionary promises {m} textons, file has {len(textons)}")
    return TextonDictionary(textons=textons, patch_width=int(w), rng_seed=int(seed))


def write_regression_csv(path, model: RegressionModel) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["kind", "m", "bias"])
        writer.writerow(["linear", model.m, _fmt(model.bias)])
        writer.writerow([_fmt(v) for v in model.rho])


def read_regression_csv(path) -> RegressionModel:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["kind", "m", "bias"]:
            raise ConfigError(f"unexpected regression header: {header}")
        kind, m, bias = next(reader)
        rho = np.asarray([float(v) for v in next(reader)])
    if kind != "linear" or len(rho) != int(m):
        raise ConfigError("malformed regression model file")
    return RegressionModel(rho=rho, bias=float(bias))


def write_naive_bayes_csv(path, model: NaiveBayesModel) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["m", "threshold", "prior_obstacle", "prior_clear"])
        writer.writerow([model.m, _fmt(model.threshold),
                         _fmt(model.priors[0]), _fmt(model.priors[1])])
        for row in model.likelihoods:
            writer.writerow([_fmt(v) for v in row])


def read_naive_bayes_csv(path) -> NaiveBayesModel:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["m", "threshold", "prior_obstacle", "prior_clear"]:
            raise ConfigError(f"unexpected naive bayes header: {header}")
        m, thr, p1, p2 = next(reader)
        rows = [[float(v) for v in rec] for rec in reader if rec]
    if len(rows) != 2 or any(len(r) != int(m) for r in rows):
        raise ConfigError("malformed naive bayes model file")
    return NaiveBayesModel(priors=np.array([float(p1), float(p2)]),
                           likelihoods=np.asarray(rows), threshold=float(thr))


def write_histograms_csv(path, frame_ids, histograms) -> None:
    histograms = np.atleast_2d(np.asarray(histograms))
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["frame_id"] + [f"q{i}" for i in range(histograms.shape[1])])
        for fid, q in zip(frame_ids, histograms):
            writer.writerow([fid] + [_fmt(v) for v in q])


def write_roughness_map_csv(path, rough_map: RoughnessMap) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["window", "stride", "samples", "rows", "cols"])
        writer.writerow([rough_map.window, rough_map.stride, rough_map.samples,
                         *rough_map.values.shape])
        for row in rough_map.values:
            writer.writerow([_fmt(v) for v in row])


def write_record(path, record: dict) -> None:
    """Single-line key=value serialization for decision records."""
    parts = []
    for key, value in record.items():
        if isinstance(value, float):
            parts.append(f"{key}={_fmt(value)}")
        else:
            parts.append(f"{key}={value}")
    Path(path).write_text(" ".join(parts) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# scenario files


def load_scenario(path):
    """Parse a scenario YAML into (scene, camera, trajectory, noise_sigma, seed).

    Schema (lengths in meters, angles in radians):

    .. code-block:: yaml

        camera: {focal_length_px, image_width, image_height}
        plane: {slope_a, slope_b, base_height_offset, material}
        materials:
          - {id, base_color: [r, g, b], noise_amplitude,
             stripe_frequency, stripe_orientation}
        obstacles:
          - {center_x, center_y, extent_x, extent_y, height, material}
        trajectory: {waypoints: [[x, y], ...], speed, frame_rate, height}
        noise: {sigma}
        seed: <int>
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = yaml.safe_load(f)
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse scenario file: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("scenario file must contain a mapping")

    try:
        cam = doc["camera"]
        camera = CameraIntrinsics(
            focal_length_px=float(cam["focal_length_px"]),
            image_width=int(cam["image_width"]),
            image_height=int(cam["image_height"]),
        )
        plane_doc = doc.get("plane", {})
        plane = ScenePlane(
            slope_a=float(plane_doc.get("slope_a", 0.0)),
            slope_b=float(plane_doc.get("slope_b", 0.0)),
            base_height_offset=float(plane_doc.get("base_height_offset", 0.0)),
            material_id=str(plane_doc.get("material", "ground")),
        )
        materials = {}
        for mat in doc["materials"]:
            materials[str(mat["id"])] = Material(
                base_color=tuple(float(c) for c in mat["base_color"]),
                noise_amplitude=float(mat.get("noise_amplitude", 0.0)),
                stripe_frequency=float(mat.get("stripe_frequency", 0.0)),
                stripe_orientation=float(mat.get("stripe_orientation", 0.0)),
            )
        obstacles = tuple(
            BoxObstacle(
                center_x=float(ob["center_x"]), center_y=float(ob["center_y"]),
                extent_x=float(ob["extent_x"]), extent_y=float(ob["extent_y"]),
                height=float(ob["height"]),
                material_id=str(ob.get("material", "obstacle")),
            )
            for ob in doc.get("obstacles", [])
        )
        scene = Scene(plane=plane, materials=materials, obstacles=obstacles)
        traj_doc = doc["trajectory"]
        trajectory = scan_trajectory(
            [(float(p[0]), float(p[1])) for p in traj_doc["waypoints"]],
            speed=float(traj_doc["speed"]),
            frame_rate=float(traj_doc["frame_rate"]),
            height=float(traj_doc.get("height", 2.0)),
        )
        noise_sigma = float(doc.get("noise", {}).get("sigma", 0.0))
        seed = int(doc.get("seed", 0))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad scenario file: {exc}") from exc
    return scene, camera, trajectory, noise_sigma, seed


def write_trajectory_csv(path, trajectory: list[EgoState]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["frame_id", "x", "y", "h", "vx", "vy", "vz"])
        for k, ego in enumerate(trajectory):
            writer.writerow([k, _fmt(ego.x), _fmt(ego.y), _fmt(ego.h),
                             _fmt(ego.vx), _fmt(ego.vy), _fmt(ego.vz)])


def read_trajectory_csv(path) -> list[EgoState]:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["frame_id", "x", "y", "h", "vx", "vy", "vz"]:
            raise ConfigError(f"unexpected trajectory header: {header}")
        out = []
        for rec in reader:
            if not rec:
                continue
            out.append(EgoState(x=float(rec[1]), y=float(rec[2]), h=float(rec[3]),
                                vx=float(rec[4]), vy=float(rec[5]), vz=float(rec[6])))
    return out
