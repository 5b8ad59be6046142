"""Synthetic nadir-camera world over a textured plane with box obstacles.

Geometry conventions used throughout the toolkit:

* World frame: X/Y horizontal (meters), elevation measured so that the
  ground plane surface lies at ``base_height_offset - slope_a*X - slope_b*Y``.
  Positive ``slope_a`` therefore means the ground falls away in +X, which
  makes the depth of the surface seen through normalized image coordinate
  (x, y) equal to ``h / (1 - slope_a*x - slope_b*y)``.
* Camera frame: axes aligned with world X/Y, optical axis pointing straight
  down. Velocities (vx, vy, vz) are expressed in this frame, so vz > 0
  descends. Angular rates (p, q, r) are about the camera X/Y/Z axes.
* Image coordinates for flow math are normalized: pixel offsets from the
  principal point divided by the focal length. Flow values are rates in
  normalized units per second.

All randomness comes from explicit seeds; every operation is a pure
function of its inputs.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateDataError

# Procedural texture controls. The noise lattice pitch is in meters; stripes
# get a fixed amplitude so Material stays a small, serializable record.
NOISE_CELL_M = 0.25
STRIPE_AMPLITUDE = 0.15

MIN_CORNER_BUDGET = 10


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole camera: focal length and sensor size in pixels."""

    focal_length_px: float
    image_width: int
    image_height: int
    principal_x: float | None = None
    principal_y: float | None = None

    def __post_init__(self):
        if self.focal_length_px <= 0:
            raise ValueError("focal_length_px must be > 0")
        if self.image_width < 64 or self.image_height < 64:
            raise ValueError("image dimensions must be >= 64 px")
        if self.principal_x is None:
            object.__setattr__(self, "principal_x", self.image_width / 2.0)
        if self.principal_y is None:
            object.__setattr__(self, "principal_y", self.image_height / 2.0)

    def normalize(self, px, py):
        """Pixel coordinates -> normalized image coordinates."""
        x = (np.asarray(px, dtype=float) - self.principal_x) / self.focal_length_px
        y = (np.asarray(py, dtype=float) - self.principal_y) / self.focal_length_px
        return x, y


@dataclass(frozen=True)
class Material:
    """Procedural surface appearance: base color + value noise + stripes."""

    base_color: tuple[float, float, float]
    noise_amplitude: float = 0.0
    stripe_frequency: float = 0.0  # cycles per meter; 0 disables stripes
    stripe_orientation: float = 0.0  # radians

    def __post_init__(self):
        if not 0.0 <= self.noise_amplitude <= 1.0:
            raise ValueError("noise_amplitude must lie in [0, 1]")
        if len(self.base_color) != 3:
            raise ValueError("base_color needs 3 channels")


@dataclass(frozen=True)
class ScenePlane:
    """Ground plane with gentle slope tangents (a = tan alpha, b = tan beta)."""

    slope_a: float = 0.0
    slope_b: float = 0.0
    base_height_offset: float = 0.0
    material_id: str = "ground"

    def __post_init__(self):
        if abs(self.slope_a) >= 1.0 or abs(self.slope_b) >= 1.0:
            raise ValueError("slope tangents must satisfy |a|, |b| < 1")

    def ground_z(self, wx, wy):
        """Surface elevation at world (wx, wy)."""
        return self.base_height_offset - self.slope_a * np.asarray(wx) - self.slope_b * np.asarray(wy)


@dataclass(frozen=True)
class BoxObstacle:
    """Axis-aligned box standing on the plane; only the top face renders."""

    center_x: float
    center_y: float
    extent_x: float
    extent_y: float
    height: float
    material_id: str = "obstacle"

    def __post_init__(self):
        if self.height <= 0:
            raise ValueError("obstacle height must be > 0")
        if self.extent_x <= 0 or self.extent_y <= 0:
            raise ValueError("obstacle extents must be > 0")


@dataclass(frozen=True)
class Scene:
    plane: ScenePlane
    materials: dict[str, Material]
    obstacles: tuple[BoxObstacle, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        for ob in self.obstacles:
            if ob.material_id not in self.materials:
                raise ValueError(f"unknown material {ob.material_id!r}")
        if self.plane.material_id not in self.materials:
            raise ValueError(f"unknown material {self.plane.material_id!r}")


@dataclass(frozen=True)
class EgoState:
    """Camera pose and motion; h is height above the ground directly below."""

    x: float = 0.0
    y: float = 0.0
    h: float = 2.0
    vx: float = 0.0
    vy: float = 0.0
    vz: float = 0.0  # positive descends (camera Z axis points down)
    p: float = 0.0
    q: float = 0.0
    r: float = 0.0

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError("height must be > 0")


@dataclass
class FlowObservation:
    """Tracked features with flow vectors and simulation ground truth.

    Coordinates are normalized, flow is in normalized units per second.
    """

    x: np.ndarray
    y: np.ndarray
    u: np.ndarray
    v: np.ndarray
    depth_truth: np.ndarray
    on_obstacle: np.ndarray
    frame_id: int = 0
    ego: EgoState = field(default_factory=EgoState)

    def __post_init__(self):
        n = len(self.x)
        for name in ("y", "u", "v", "depth_truth", "on_obstacle"):
            if len(getattr(self, name)) != n:
                raise ValueError("all record arrays must share one length")

    def __len__(self):
        return len(self.x)


# ---------------------------------------------------------------------------
# hash-based value noise (pure function of world coordinates + salt)

_U = np.uint64


def _mix(z):
    """splitmix64 finalizer over uint64 arrays (wraparound intended)."""
    with np.errstate(over="ignore"):
        z = (z + _U(0x9E3779B97F4A7C15)) & _U(0xFFFFFFFFFFFFFFFF)
        z = (z ^ (z >> _U(30))) * _U(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> _U(27))) * _U(0x94D049BB133111EB)
        return z ^ (z >> _U(31))


def _lattice(ix, iy, salt):
    """Uniform [0, 1) values on an integer lattice."""
    with np.errstate(over="ignore"):
        a = _mix(np.atleast_1d(ix).astype(np.int64).astype(_U) + _U(salt))
    b = _mix(a ^ np.atleast_1d(iy).astype(np.int64).astype(_U))
    out = (b >> _U(11)).astype(np.float64) / float(1 << 53)
    return out.reshape(np.shape(ix))


def _value_noise(wx, wy, salt):
    """Smooth value noise in [0, 1] as a function of world position."""
    gx = np.asarray(wx, dtype=float) / NOISE_CELL_M
    gy = np.asarray(wy, dtype=float) / NOISE_CELL_M
    ix = np.floor(gx)
    iy = np.floor(gy)
    fx = gx - ix
    fy = gy - iy
    # smoothstep fade keeps the field C1 across cell borders
    sx = fx * fx * (3.0 - 2.0 * fx)
    sy = fy * fy * (3.0 - 2.0 * fy)
    v00 = _lattice(ix, iy, salt)
    v10 = _lattice(ix + 1, iy, salt)
    v01 = _lattice(ix, iy + 1, salt)
    v11 = _lattice(ix + 1, iy + 1, salt)
    top = v00 + sx * (v10 - v00)
    bot = v01 + sx * (v11 - v01)
    return top + sy * (bot - top)


def _material_salt(material_id: str, seed: int) -> int:
    return (zlib.crc32(material_id.encode("utf-8")) << 16) ^ (int(seed) & 0xFFFFFFFFFFFF)


def texture_at(material: Material, material_id: str, wx, wy, seed: int) -> np.ndarray:
    """Evaluate the procedural texture field at world points.

    Returns an array of shape wx.shape + (3,) with channel values in [0, 1].
    The field depends only on world position, material, and seed.
    """
    wx = np.asarray(wx, dtype=float)
    wy = np.asarray(wy, dtype=float)
    salt = _material_salt(material_id, seed)
    out = np.empty(wx.shape + (3,), dtype=float)
    stripe = 0.0
    if material.stripe_frequency > 0.0:
        phase = wx * np.cos(material.stripe_orientation) + wy * np.sin(material.stripe_orientation)
        stripe = STRIPE_AMPLITUDE * np.sin(2.0 * np.pi * material.stripe_frequency * phase)
    for c in range(3):
        n = _value_noise(wx, wy, salt ^ (0x5B5B + 0x1000003 * c))
        out[..., c] = material.base_color[c] + material.noise_amplitude * (n - 0.5) + stripe
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# ray casting against the plane + obstacle top faces


def _check_clearance(scene: Scene, ego: EgoState):
    zc = scene.plane.ground_z(ego.x, ego.y) + ego.h
    for ob in scene.obstacles:
        z_top = scene.plane.ground_z(ob.center_x, ob.center_y) + ob.height
        if zc <= z_top:
            raise ValueError("camera must stay above every obstacle top")


def surface_hits(scene: Scene, ego: EgoState, x, y):
    """First surface hit along the rays through normalized coordinates.

    Returns (depth, material_index, on_obstacle, wx, wy) where material_index
    indexes ``sorted(scene.materials)`` and wx/wy are world hit coordinates.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    plane = scene.plane
    zc = plane.ground_z(ego.x, ego.y) + ego.h

    denom = 1.0 - plane.slope_a * x - plane.slope_b * y
    with np.errstate(divide="ignore"):
        depth = np.where(denom > 1e-9, ego.h / np.where(denom > 1e-9, denom, 1.0), np.inf)

    mat_names = sorted(scene.materials)
    mat_index = np.full(x.shape, mat_names.index(plane.material_id), dtype=np.intp)
    on_obstacle = np.zeros(x.shape, dtype=bool)

    for ob in scene.obstacles:
        z_top = plane.ground_z(ob.center_x, ob.center_y) + ob.height
        d = zc - z_top
        if d <= 0:
            raise ValueError("camera must stay above every obstacle top")
        hx = ego.x + x * d
        hy = ego.y + y * d
        inside = (
            (np.abs(hx - ob.center_x) <= ob.extent_x / 2.0)
            & (np.abs(hy - ob.center_y) <= ob.extent_y / 2.0)
            & (d < depth)
        )
        depth = np.where(inside, d, depth)
        mat_index = np.where(inside, mat_names.index(ob.material_id), mat_index)
        on_obstacle = on_obstacle | inside

    if not np.all(np.isfinite(depth)):
        raise DegenerateDataError("a ray left the visible scene (slope too steep for FOV)")
    wx = ego.x + x * depth
    wy = ego.y + y * depth
    return depth, mat_index, on_obstacle, wx, wy


def render_view(scene: Scene, camera: CameraIntrinsics, ego: EgoState, rng_seed: int) -> np.ndarray:
    """Render the scene to an (H, W, 3) float image in [0, 1].

    Obstacle top faces occlude the ground; every pixel is colored by the
    procedural texture of the first surface hit, so a world patch keeps its
    appearance across frames.
    """
    _check_clearance(scene, ego)
    H, W = camera.image_height, camera.image_width
    px = np.arange(W, dtype=float) + 0.5
    py = np.arange(H, dtype=float) + 0.5
    gx, gy = np.meshgrid(px, py)
    x, y = camera.normalize(gx, gy)

    _, mat_index, _, wx, wy = surface_hits(scene, ego, x, y)

    img = np.zeros((H, W, 3), dtype=float)
    for idx, name in enumerate(sorted(scene.materials)):
        mask = mat_index == idx
        if not np.any(mask):
            continue
        img[mask] = texture_at(scene.materials[name], name, wx[mask], wy[mask], rng_seed)
    return img


def rotational_flow(x, y, p, q, r):
    """Depth-independent motion-field component from camera angular rates."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    u_rot = -q + r * y + p * x * y - q * x * x
    v_rot = p - r * x + p * y * y - q * x * y
    return u_rot, v_rot


def observe_flow(
    scene: Scene,
    camera: CameraIntrinsics,
    ego: EgoState,
    corner_budget: int,
    noise_sigma: float = 0.0,
    rng_seed: int = 0,
    frame_id: int = 0,
) -> FlowObservation:
    """Sample tracked corners and compute their exact flow plus noise.

    Corners are drawn uniformly over the image (the documented default
    sampling distribution). Flow combines the translational component from
    each feature's true depth with the rotational component from the angular
    rates, then adds zero-mean Gaussian noise of ``noise_sigma`` per axis.
    """
    if corner_budget < MIN_CORNER_BUDGET:
        raise ValueError(f"corner_budget must be >= {MIN_CORNER_BUDGET}")
    if not all(np.isfinite(v) for v in (ego.vx, ego.vy, ego.vz)):
        raise ValueError("velocities must be finite")
    _check_clearance(scene, ego)

    rng = np.random.default_rng(rng_seed)
    px = rng.uniform(0.0, camera.image_width, size=corner_budget)
    py = rng.uniform(0.0, camera.image_height, size=corner_budget)
    x, y = camera.normalize(px, py)

    depth, _, on_obstacle, _, _ = surface_hits(scene, ego, x, y)

    u = (-ego.vx + x * ego.vz) / depth
    v = (-ego.vy + y * ego.vz) / depth
    u_rot, v_rot = rotational_flow(x, y, ego.p, ego.q, ego.r)
    u = u + u_rot
    v = v + v_rot
    if noise_sigma > 0.0:
        u = u + rng.normal(0.0, noise_sigma, size=corner_budget)
        v = v + rng.normal(0.0, noise_sigma, size=corner_budget)

    return FlowObservation(
        x=x, y=y, u=u, v=v,
        depth_truth=depth, on_obstacle=on_obstacle,
        frame_id=frame_id, ego=ego,
    )


def scan_trajectory(waypoints, speed: float, frame_rate: float, height: float = 2.0) -> list[EgoState]:
    """Constant-height, constant-speed piecewise-linear sweep over waypoints.

    States are sampled at ``frame_rate``; each state carries the velocity of
    the segment it is about to traverse, so a corner state already points
    along the new segment.
    """
    pts = np.asarray([(float(wx), float(wy)) for wx, wy in waypoints], dtype=float)
    if len(pts) < 2:
        raise ValueError("need at least 2 waypoints")
    if speed <= 0 or frame_rate <= 0:
        raise ValueError("speed and frame_rate must be > 0")
    seg = np.diff(pts, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    if np.any(seg_len == 0.0):
        raise ValueError("coincident consecutive waypoints")
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = cum[-1]
    duration = total / speed

    n_frames = int(np.floor(duration * frame_rate + 1e-9)) + 1
    t = np.arange(n_frames) / frame_rate
    s = np.minimum(t * speed, total)
    # side='right' puts an exact corner arclength into the following segment
    idx = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg_len) - 1)
    frac = (s - cum[idx]) / seg_len[idx]
    pos = pts[idx] + seg[idx] * frac[:, None]
    vel = seg[idx] / seg_len[idx][:, None] * speed

    return [
        EgoState(x=pos[k, 0], y=pos[k, 1], h=height, vx=vel[k, 0], vy=vel[k, 1])
        for k in range(n_frames)
    ]


def with_rates(ego: EgoState, p: float = 0.0, q: float = 0.0, r: float = 0.0) -> EgoState:
    """Copy of an ego state with different angular rates."""
    return replace(ego, p=p, q=q, r=r)
