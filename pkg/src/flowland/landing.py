"""Decision layer: safety bits, scan-path landing spots, grid hover
selection with physical displacement, and sliding-window segmentation."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .appearance import SEGMENT_SAMPLES, PatchConfig, TextonDictionary, extract_histogram
from .errors import NoSafeRegionError
from .flowsim import CameraIntrinsics
from .learn import RegressionModel, predict

# heat-map color ramp endpoints (low -> high roughness)
HEAT_LOW = (0.25, 0.0, 0.0)
HEAT_HIGH = (1.0, 1.0, 0.4)


@dataclass(frozen=True)
class SafetyFrame:
    frame_id: int
    x: float
    y: float
    sf: int

    def __post_init__(self):
        if self.sf not in (0, 1):
            raise ValueError("sf must be 0 or 1")


@dataclass(frozen=True)
class ScanDecision:
    start: int  # first frame index of the chosen stretch
    end: int  # last frame index, inclusive
    a_sf: int
    land_x: float
    land_y: float


@dataclass(frozen=True)
class GridDecision:
    scores: np.ndarray  # 9 region roughness estimates, row-major 3x3
    chosen: int | None  # None when every region exceeds the threshold
    d_c: float  # pixels from image center to chosen region center
    d_p: float  # the same displacement in meters


@dataclass(frozen=True)
class RoughnessMap:
    values: np.ndarray  # (rows, cols), rows follow the image y axis
    window: int
    stride: int
    samples: int


def classify_safety(eps_star: float, eps_th: float) -> int:
    """1 when the roughness stays strictly below the threshold, else 0."""
    return 1 if eps_star < eps_th else 0


def select_scan_waypoint(safety_frames) -> ScanDecision:
    """Longest run of consecutive safe frames; lands on its middle frame.

    Ties go to the earliest run; even-length runs take the lower-middle
    frame. Raises NoSafeRegionError when nothing was safe.
    """
    frames = list(safety_frames)
    if not frames:
        raise ValueError("need at least one frame")
    best_len = 0
    best_start = -1
    run_start = None
    for i, frame in enumerate(frames):
        if frame.sf == 1:
            if run_start is None:
                run_start = i
            length = i - run_start + 1
            if length > best_len:
                best_len = length
                best_start = run_start
        else:
            run_start = None
    if best_len == 0:
        raise NoSafeRegionError("no safe region along the path")
    mid = best_start + (best_len - 1) // 2
    return ScanDecision(
        start=best_start,
        end=best_start + best_len - 1,
        a_sf=best_len,
        land_x=frames[mid].x,
        land_y=frames[mid].y,
    )


def grid_cells(width: int, height: int):
    """3x3 region boxes (x0, y0, w, h), truncating the remainder symmetrically."""
    rw, rh = width // 3, height // 3
    ox, oy = (width - 3 * rw) // 2, (height - 3 * rh) // 2
    return [(ox + col * rw, oy + row * rh, rw, rh) for row in range(3) for col in range(3)]


def select_grid_region(scores, threshold: float, width: int, height: int) -> int | None:
    """Index of the minimum-score region, or None when all exceed the threshold.

    Ties on the minimum break toward the region whose center lies nearest
    the image center, then row-major order.
    """
    scores = np.asarray(scores, dtype=float)
    if scores.shape != (9,):
        raise ValueError("expected nine region scores")
    if scores.min() > threshold:
        return None
    cells = grid_cells(width, height)
    cx, cy = width / 2.0, height / 2.0
    candidates = np.flatnonzero(scores == scores.min())
    center_dist = [
        np.hypot(cells[i][0] + cells[i][2] / 2.0 - cx, cells[i][1] + cells[i][3] / 2.0 - cy)
        for i in candidates
    ]
    return int(candidates[int(np.argmin(center_dist))])


def project_distance(d_c: float, h: float, focal_px: float) -> float:
    """Pixel displacement projected to meters on the ground: d_c * h / f."""
    return d_c * h / focal_px


def grid_select(
    image: np.ndarray,
    dictionary: TextonDictionary,
    model: RegressionModel,
    eps_hat_th: float,
    camera: CameraIntrinsics,
    h: float,
    patch_config: PatchConfig | None = None,
    rng_seed: int = 0,
) -> GridDecision:
    """Score the 3x3 grid by estimated roughness and pick where to land."""
    H, W = image.shape[0], image.shape[1]
    cfg = patch_config or PatchConfig(samples_per_image=SEGMENT_SAMPLES)
    scores = np.empty(9)
    for i, (x0, y0, w, hgt) in enumerate(grid_cells(W, H)):
        q = extract_histogram(image[y0:y0 + hgt, x0:x0 + w], dictionary, cfg, (rng_seed, i))
        scores[i] = predict(model, q)
    chosen = select_grid_region(scores, eps_hat_th, W, H)
    if chosen is None:
        return GridDecision(scores=scores, chosen=None, d_c=0.0, d_p=0.0)
    x0, y0, w, hgt = grid_cells(W, H)[chosen]
    d_c = float(np.hypot(x0 + w / 2.0 - W / 2.0, y0 + hgt / 2.0 - H / 2.0))
    return GridDecision(
        scores=scores,
        chosen=chosen,
        d_c=d_c,
        d_p=project_distance(d_c, h, camera.focal_length_px),
    )


def map_shape(width: int, height: int, window: int, stride: int) -> tuple[int, int]:
    """(rows, cols) of a sliding-window map over an image."""
    return (height - window) // stride + 1, (width - window) // stride + 1


def segment(
    image: np.ndarray,
    dictionary: TextonDictionary,
    model: RegressionModel,
    window: int = 50,
    stride: int = 4,
    samples: int = SEGMENT_SAMPLES,
    rng_seed: int = 0,
) -> RoughnessMap:
    """Pixel-wise roughness map from a sliding window over the image.

    Every window gets its own histogram of ``samples`` patches; window seeds
    derive from the base seed and the window position, so maps reproduce
    regardless of evaluation order.
    """
    H, W = image.shape[0], image.shape[1]
    if H < window or W < window:
        raise ValueError(f"image {H}x{W} smaller than window {window}")
    rows, cols = map_shape(W, H, window, stride)
    cfg = PatchConfig(samples_per_image=samples)
    values = np.empty((rows, cols))
    for i in range(rows):
        y0 = i * stride
        for j in range(cols):
            x0 = j * stride
            q = extract_histogram(
                image[y0:y0 + window, x0:x0 + window], dictionary, cfg, (rng_seed, i, j)
            )
            values[i, j] = predict(model, q)
    return RoughnessMap(values=values, window=window, stride=stride, samples=samples)


def heatmap_image(rough_map: RoughnessMap, vmin: float | None = None,
                  vmax: float | None = None) -> np.ndarray:
    """Render a roughness map as an RGB image on the HEAT_LOW..HEAT_HIGH ramp."""
    v = rough_map.values
    lo = v.min() if vmin is None else vmin
    hi = v.max() if vmax is None else vmax
    t = np.clip((v - lo) / (hi - lo) if hi > lo else np.zeros_like(v), 0.0, 1.0)
    low = np.asarray(HEAT_LOW)
    high = np.asarray(HEAT_HIGH)
    return low + t[..., None] * (high - low)
