"""Parametric flow-field fitting, RANSAC roughness, and detection thresholds.

The flow over a planar surface is affine-plus-quadratic in the normalized
image coordinates; obstacle features violate the model and inflate the mean
absolute residual, which is what the roughness score measures.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateGeometryError, NoConsensusError
from .flowsim import FlowObservation, rotational_flow

QUADRATIC = "quadratic"
LINEAR = "linear"

# columns of the quadratic design matrices
_U_BASIS = ("1", "x", "y", "x^2", "xy")
_V_BASIS = ("1", "x", "y", "y^2", "xy")


@dataclass(frozen=True)
class PlanarFlowParams:
    """Fitted coefficients for u over [1, x, y, x^2, xy] and v over [1, x, y, y^2, xy].

    A linear fit keeps the 5-vectors but zeroes the second-order entries.
    """

    p_u: np.ndarray
    p_v: np.ndarray
    fit_order: str = QUADRATIC

    def __post_init__(self):
        object.__setattr__(self, "p_u", np.asarray(self.p_u, dtype=float))
        object.__setattr__(self, "p_v", np.asarray(self.p_v, dtype=float))
        if self.p_u.shape != (5,) or self.p_v.shape != (5,):
            raise ValueError("parameter vectors must have 5 coefficients")
        if not (np.all(np.isfinite(self.p_u)) and np.all(np.isfinite(self.p_v))):
            raise ValueError("coefficients must be finite")
        if self.fit_order not in (QUADRATIC, LINEAR):
            raise ValueError(f"unknown fit order {self.fit_order!r}")


@dataclass(frozen=True)
class RansacConfig:
    iterations: int = 100
    sample_size: int | None = None  # None -> basis size for the fit order
    inlier_threshold: float = 0.01
    min_inliers: int | None = None  # None -> 40% of the records
    rng_seed: int = 0
    fit_order: str = QUADRATIC

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.inlier_threshold < 0:
            raise ValueError("inlier_threshold must be >= 0")


@dataclass(frozen=True)
class FlowFitResult:
    params: PlanarFlowParams
    inlier_mask: np.ndarray
    eps_u: float
    eps_v: float
    eps_star: float
    corner_count: int

    def __post_init__(self):
        if self.eps_u < 0 or self.eps_v < 0:
            raise ValueError("residual errors must be non-negative")


@dataclass(frozen=True)
class ThresholdQuery:
    """Inputs for the height/velocity-dependent obstacle-flow threshold."""

    v_x: float
    h: float
    dh: float = 0.03
    focal: float = 1.0  # 1.0 for normalized flow units, pixels otherwise

    def __post_init__(self):
        if self.v_x < 0:
            raise ValueError("v_x must be >= 0")
        if self.dh < 0:
            raise ValueError("dh must be >= 0")
        if self.h <= self.dh:
            raise ValueError("h must exceed dh")


def _basis_size(fit_order: str) -> int:
    return 5 if fit_order == QUADRATIC else 3


def _design_u(x, y, fit_order):
    if fit_order == QUADRATIC:
        return np.column_stack([np.ones_like(x), x, y, x * x, x * y])
    return np.column_stack([np.ones_like(x), x, y])


def _design_v(x, y, fit_order):
    if fit_order == QUADRATIC:
        return np.column_stack([np.ones_like(x), x, y, y * y, x * y])
    return np.column_stack([np.ones_like(x), x, y])


def _pad_linear(coeffs):
    out = np.zeros(5)
    out[:3] = coeffs
    return out


def _pad5(coeffs, fit_order):
    return _pad_linear(coeffs) if fit_order == LINEAR else np.asarray(coeffs, dtype=float)


def evaluate_params(params: PlanarFlowParams, x, y):
    """Model flow at the given normalized coordinates."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    u = params.p_u[0] + params.p_u[1] * x + params.p_u[2] * y + params.p_u[3] * x * x + params.p_u[4] * x * y
    v = params.p_v[0] + params.p_v[1] * x + params.p_v[2] * y + params.p_v[3] * y * y + params.p_v[4] * x * y
    return u, v


def _solve_ls(design, target):
    coeffs, _, rank, _ = np.linalg.lstsq(design, target, rcond=None)
    if rank < design.shape[1]:
        raise DegenerateGeometryError(
            f"rank-deficient flow design matrix (rank {rank} < {design.shape[1]})"
        )
    return coeffs


def ls_fit(observation: FlowObservation, fit_order: str = QUADRATIC) -> PlanarFlowParams:
    """Least-squares flow-field fit over all records of an observation.

    Raises DegenerateGeometryError when the feature geometry cannot support
    the basis (for instance all features collinear).
    """
    if fit_order not in (QUADRATIC, LINEAR):
        raise ValueError(f"unknown fit order {fit_order!r}")
    n = len(observation)
    k = _basis_size(fit_order)
    if n < k:
        raise DegenerateGeometryError(f"need at least {k} records, got {n}")
    cu = _solve_ls(_design_u(observation.x, observation.y, fit_order), observation.u)
    cv = _solve_ls(_design_v(observation.x, observation.y, fit_order), observation.v)
    if fit_order == LINEAR:
        cu, cv = _pad_linear(cu), _pad_linear(cv)
    return PlanarFlowParams(p_u=cu, p_v=cv, fit_order=fit_order)


# Candidate refinement: how wide the inlier capture starts relative to the
# target threshold, and how many distinct captures get refined per fit.
_ANNEAL_FACTORS = (2.0, 1.0, 1.0)
_CAPTURE_FACTOR = 4.0
_LO_CANDIDATES = 12


def ransac_fit(observation: FlowObservation, config: RansacConfig) -> FlowFitResult:
    """RANSAC flow-field fit: consensus-maximal model, refit on its inliers.

    A record is an inlier when its combined residual |u_hat-u| + |v_hat-v|
    is within the threshold. Each random sample seeds a locally optimized
    candidate (a stiff first fit whose inlier capture is re-estimated while
    the capture threshold anneals down to the target); the candidate with
    the largest final consensus wins, ties breaking toward the lower total
    residual. The reported errors average each component's absolute residual
    of the final model over all records, inliers and outliers alike.
    """
    n = len(observation)
    k = config.sample_size if config.sample_size is not None else _basis_size(config.fit_order)
    if k < _basis_size(config.fit_order):
        raise ValueError("sample_size below the basis size")
    if n < k:
        raise ValueError(f"observation has {n} records, needs >= {k}")
    min_inliers = config.min_inliers if config.min_inliers is not None else int(np.ceil(0.4 * n))
    basis = _basis_size(config.fit_order)
    thr = config.inlier_threshold

    x, y, u, v = observation.x, observation.y, observation.u, observation.v
    rng = np.random.default_rng(config.rng_seed)
    samples = np.argsort(rng.random((config.iterations, n)), axis=1)[:, :k]

    # Seed models are linear least-squares fits of each sample: overdetermined
    # on a quadratic-size sample, so they cannot interpolate mixed-surface
    # noise the way an exactly determined quadratic would.
    seed_resid = _seed_residuals(x, y, u, v, samples)
    capture = seed_resid <= (_CAPTURE_FACTOR * thr if np.isfinite(thr) else thr)
    counts = capture.sum(axis=0)
    totals = np.where(np.isfinite(seed_resid).all(axis=0), seed_resid.sum(axis=0), np.inf)
    order = np.lexsort((totals, -counts))

    Au = _design_u(x, y, config.fit_order)
    Av = _design_v(x, y, config.fit_order)
    best = None  # (count, total_residual, coeffs_u, coeffs_v, res_u, res_v)
    seen: set[bytes] = set()
    for c in order:
        if counts[c] < basis or len(seen) >= _LO_CANDIDATES:
            break
        key = np.packbits(capture[:, c]).tobytes()
        if key in seen:
            continue
        seen.add(key)
        refined = _local_optimize(Au, Av, u, v, capture[:, c], basis, thr)
        if refined is None:
            continue
        cu, cv, res_u, res_v = refined
        combined = res_u + res_v
        cnt = int((combined <= thr).sum())
        total = float(combined.sum())
        if best is None or (cnt, -total) > (best[0], -best[1]):
            best = (cnt, total, cu, cv, res_u, res_v)

    if best is None or best[0] < min_inliers:
        found = 0 if best is None else best[0]
        raise NoConsensusError(f"no planar consensus: {found} inliers < required {min_inliers}")

    _, _, cu, cv, res_u, res_v = best
    params = PlanarFlowParams(p_u=_pad5(cu, config.fit_order), p_v=_pad5(cv, config.fit_order),
                              fit_order=config.fit_order)
    eps_u = float(res_u.sum() / n)
    eps_v = float(res_v.sum() / n)
    return FlowFitResult(
        params=params,
        inlier_mask=(res_u + res_v) <= thr,
        eps_u=eps_u,
        eps_v=eps_v,
        eps_star=eps_u + eps_v,
        corner_count=n,
    )


def _seed_residuals(x, y, u, v, samples) -> np.ndarray:
    """Combined residuals of the per-sample linear seed fits: (n, iterations).

    Each seed uses only the first three records of its sample: a minimal
    linear fit stays on one surface far more often than the full sample,
    which is what the annealed capture needs to latch onto.
    """
    seeds = samples[:, :3]
    X = _design_u(x, y, LINEAR)  # linear bases for u and v coincide
    sx = X[seeds]
    ata = np.einsum("iks,ikt->ist", sx, sx)
    try:
        cu = np.linalg.solve(ata, np.einsum("iks,ik->is", sx, u[seeds])[..., None])[..., 0]
        cv = np.linalg.solve(ata, np.einsum("iks,ik->is", sx, v[seeds])[..., None])[..., 0]
    except np.linalg.LinAlgError:
        iters = len(seeds)
        cu = np.full((iters, 3), np.inf)
        cv = np.full((iters, 3), np.inf)
        for i in range(iters):
            try:
                cu[i] = _solve_ls(sx[i], u[seeds[i]])
                cv[i] = _solve_ls(sx[i], v[seeds[i]])
            except DegenerateGeometryError:
                continue
    with np.errstate(invalid="ignore"):  # inf coefficients mark degenerate seeds
        resid = np.abs(X @ cu.T - u[:, None]) + np.abs(X @ cv.T - v[:, None])
    return np.where(np.isfinite(resid), resid, np.inf)


def _local_optimize(Au, Av, u, v, support, basis, thr):
    """Refit on the support while the capture threshold anneals to ``thr``.

    Solves the normal equations on precomputed design rows; the coordinates
    are order-one so conditioning is not a concern here.
    """
    cu = cv = res_u = res_v = None
    for factor in _ANNEAL_FACTORS:
        if support.sum() < basis:
            return None
        a_u, a_v = Au[support], Av[support]
        try:
            cu = np.linalg.solve(a_u.T @ a_u, a_u.T @ u[support])
            cv = np.linalg.solve(a_v.T @ a_v, a_v.T @ v[support])
        except np.linalg.LinAlgError:
            return None
        res_u = np.abs(Au @ cu - u)
        res_v = np.abs(Av @ cv - v)
        support = (res_u + res_v) <= factor * thr
    return cu, cv, res_u, res_v


def roughness(fit_result: FlowFitResult) -> float:
    """Surface-roughness score: the sum of the two mean absolute residuals."""
    return fit_result.eps_star


def derotate(observation: FlowObservation, angular_rates) -> FlowObservation:
    """Remove the rotational motion-field component for the given rates.

    The subtracted field depends only on image position and the rates, never
    on depth, so derotating with the generating rates leaves purely
    translational flow. The returned ego snapshot carries the reduced rates.
    """
    p, q, r = (float(w) for w in angular_rates)
    u_rot, v_rot = rotational_flow(observation.x, observation.y, p, q, r)
    ego = replace(observation.ego, p=observation.ego.p - p, q=observation.ego.q - q,
                  r=observation.ego.r - r)
    return FlowObservation(
        x=observation.x.copy(),
        y=observation.y.copy(),
        u=observation.u - u_rot,
        v=observation.v - v_rot,
        depth_truth=observation.depth_truth.copy(),
        on_obstacle=observation.on_obstacle.copy(),
        frame_id=observation.frame_id,
        ego=ego,
    )


def roughness_threshold(query: ThresholdQuery) -> float:
    """Excess flow of a feature dh above the plane: V_x * f * dh / (h * (h - dh)).

    Used as the obstacle-detection threshold for roughness scores.
    """
    if query.h <= query.dh:
        raise ValueError("h must exceed dh")
    return query.v_x * query.focal * query.dh / (query.h * (query.h - query.dh))


def default_ransac_config(
    noise_sigma: float,
    v_x: float,
    h: float,
    dh: float = 0.03,
    fit_order: str = QUADRATIC,
    rng_seed: int = 0,
) -> RansacConfig:
    """RANSAC defaults tying the inlier threshold to the detection threshold."""
    thr = max(2.0 * noise_sigma, roughness_threshold(ThresholdQuery(v_x=v_x, h=h, dh=dh)))
    return RansacConfig(inlier_threshold=thr, fit_order=fit_order, rng_seed=rng_seed)
