"""Experiment driver: metrics, dataset generation, K-fold protocols, timing.

Every stochastic stage derives its seed from (master seed, stage name,
indices), so partial reruns and full reruns reproduce bit for bit.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .appearance import (
    PatchConfig,
    TextonDictionary,
    assign_textons,
    sample_patches,
    train_dictionary,
)
from .errors import UndefinedMetricError
from .flowfit import (
    ThresholdQuery,
    default_ransac_config,
    derotate,
    ransac_fit,
    roughness_threshold,
)
from .flowsim import (
    BoxObstacle,
    CameraIntrinsics,
    EgoState,
    Material,
    Scene,
    ScenePlane,
    observe_flow,
    render_view,
    scan_trajectory,
)
from .learn import (
    C_CLEAR,
    C_OBSTACLE,
    entropy,
    fit_naive_bayes,
    fit_regression,
    label,
    nrmse,
    posterior,
    predict,
)

KFOLD1 = "kfold1"
KFOLD2 = "kfold2"


def derive_seed(master: int, stage: str, *indices) -> int:
    """Process-stable seed for one stage of the pipeline."""
    key = f"{master}/{stage}/" + "/".join(str(i) for i in indices)
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


# ---------------------------------------------------------------------------
# classification metrics


def tp_fp_rates(scores, truths, threshold: float) -> tuple[float, float]:
    """Detection rates at a threshold; detection means score > threshold."""
    scores = np.asarray(scores, dtype=float)
    truths = np.asarray(truths, dtype=bool)
    if scores.size == 0:
        raise UndefinedMetricError("no scores")
    detected = scores > threshold
    n_pos = int(truths.sum())
    n_neg = int((~truths).sum())
    if n_pos == 0:
        raise UndefinedMetricError("TP rate undefined without obstacle frames")
    if n_neg == 0:
        raise UndefinedMetricError("FP rate undefined without clear frames")
    tp = float((detected & truths).sum() / n_pos)
    fp = float((detected & ~truths).sum() / n_neg)
    return tp, fp


def classification_error(predictions, truths) -> float:
    """Fraction of mismatched labels: (FP + FN) / n."""
    p = np.asarray(predictions)
    t = np.asarray(truths)
    if p.shape != t.shape or p.size == 0:
        raise ValueError("predictions and truths must share a nonzero length")
    return float(np.mean(p != t))


@dataclass(frozen=True)
class RocCurve:
    fp: np.ndarray  # monotone non-decreasing, starts 0, ends 1
    tp: np.ndarray
    auc: float


def roc(scores, truths) -> RocCurve:
    """Empirical ROC staircase over the unique score thresholds.

    Tied scores share one threshold step; AUC integrates the staircase with
    the trapezoid rule.
    """
    scores = np.asarray(scores, dtype=float)
    truths = np.asarray(truths, dtype=bool)
    n_pos = int(truths.sum())
    n_neg = int((~truths).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC needs both classes")

    order = np.argsort(-scores, kind="stable")
    sorted_truth = truths[order]
    sorted_scores = scores[order]
    # last index of each tied block of scores
    steps = np.flatnonzero(np.diff(sorted_scores))
    steps = np.concatenate([steps, [len(sorted_scores) - 1]])
    tp_cum = np.cumsum(sorted_truth)[steps]
    fp_cum = steps + 1 - tp_cum
    tp_rate = np.concatenate([[0.0], tp_cum / n_pos])
    fp_rate = np.concatenate([[0.0], fp_cum / n_neg])
    auc = float(np.trapezoid(tp_rate, fp_rate))
    return RocCurve(fp=fp_rate, tp=tp_rate, auc=auc)


# ---------------------------------------------------------------------------
# dataset generation


@dataclass(frozen=True)
class PipelineConfig:
    image_width: int = 96
    image_height: int = 96
    focal_px: float = 96.0
    n_scenes: int = 9
    frames_per_scene: int = 500
    path_length: float = 12.0
    speed: float = 0.6
    height: float = 2.0
    corner_budget: int = 25
    noise_sigma: float | None = None  # None -> excess flow of a 1 cm feature
    dh_detect: float = 0.03
    dh_noise: float = 0.01
    patch_width: int = 5
    samples_per_image: int = 25
    m: int = 30
    epochs: int = 10
    eta_start: float = 0.1
    eta_end: float = 0.01
    dict_patch_cap: int = 1500
    ridge_lambda: float = 1e-8
    nb_alpha: float = 1.0
    nb_evidence: float = 8.0  # patches per image are correlated, not independent
    seed: int = 0

    def camera(self) -> CameraIntrinsics:
        return CameraIntrinsics(
            focal_length_px=self.focal_px,
            image_width=self.image_width,
            image_height=self.image_height,
        )

    def patch_config(self) -> PatchConfig:
        return PatchConfig(patch_width=self.patch_width,
                           samples_per_image=self.samples_per_image)

    def flow_noise(self) -> float:
        if self.noise_sigma is not None:
            return self.noise_sigma
        return roughness_threshold(
            ThresholdQuery(v_x=self.speed, h=self.height, dh=self.dh_noise)
        )

    def detection_threshold(self) -> float:
        return roughness_threshold(
            ThresholdQuery(v_x=self.speed, h=self.height, dh=self.dh_detect)
        )


def _scene_materials(rng: np.random.Generator, swap_roles: bool = False) -> dict[str, Material]:
    """Ground/obstacle material pair with colors that differ per scene.

    The two color bands overlap across scenes, and in swap-role scenes the
    ground takes the warm band and the obstacle the cool one. One scene's
    ground can therefore resemble another's obstacle, which is what makes
    whole-scene hold-out genuinely harder than mixed folds; within a scene
    the pair stays separated by a minimum color distance.
    """
    def draw_pair():
        cool = np.array([rng.uniform(0.10, 0.55), rng.uniform(0.35, 0.75),
                         rng.uniform(0.10, 0.55)])
        warm = np.array([rng.uniform(0.45, 0.90), rng.uniform(0.10, 0.55),
                         rng.uniform(0.10, 0.70)])
        return (warm, cool) if swap_roles else (cool, warm)

    g, o = draw_pair()
    while np.linalg.norm(g - o) < 0.35:
        g, o = draw_pair()
    ground = Material(
        base_color=tuple(float(c) for c in g),
        noise_amplitude=float(rng.uniform(0.12, 0.32)),
        stripe_frequency=float(rng.choice([0.0, 1.5])),
        stripe_orientation=float(rng.uniform(0.0, np.pi)),
    )
    obstacle = Material(
        base_color=tuple(float(c) for c in o),
        noise_amplitude=float(rng.uniform(0.12, 0.32)),
        stripe_frequency=float(rng.choice([0.0, 3.0])),
        stripe_orientation=float(rng.uniform(0.0, np.pi)),
    )
    return {"ground": ground, "obstacle": obstacle}


def build_scene(config: PipelineConfig, scene_seed: int,
                swap_roles: bool = False) -> tuple[Scene, list[EgoState]]:
    """One straight overflight passing two boxes, materials varied by seed."""
    rng = np.random.default_rng(scene_seed)
    materials = _scene_materials(rng, swap_roles=swap_roles)
    L = config.path_length
    boxes = tuple(
        BoxObstacle(
            center_x=float(cx + rng.uniform(-0.4, 0.4)),
            center_y=float(rng.uniform(-0.25, 0.25)),
            extent_x=0.8,
            extent_y=0.8,
            height=0.9,
            material_id="obstacle",
        )
        for cx in (0.30 * L, 0.70 * L)
    )
    scene = Scene(plane=ScenePlane(), materials=materials, obstacles=boxes)
    duration = L / config.speed
    frame_rate = (config.frames_per_scene - 1) / duration
    traj = scan_trajectory([(0.0, 0.0), (L, 0.0)], config.speed, frame_rate,
                           height=config.height)
    return scene, traj[: config.frames_per_scene]


@dataclass
class FrameDataset:
    """Per-frame products of the simulation + flow-fitting front end."""

    scene_ids: np.ndarray  # (n,)
    frame_ids: np.ndarray  # (n,)
    eps_star: np.ndarray  # (n,)
    truth: np.ndarray  # (n,) bool, obstacle feature seen in frame
    patches: np.ndarray  # (n, samples_per_image, patch_dim)
    positions: np.ndarray  # (n, 2) camera X, Y
    config: PipelineConfig

    def __len__(self):
        return len(self.eps_star)


def build_dataset(config: PipelineConfig, n_scenes: int | None = None) -> FrameDataset:
    """Render, observe, and fit every frame of the scene suite once.

    Stores the sampled appearance patches instead of whole images so the
    K-fold stage can rebuild histograms against any fold dictionary.
    """
    n_scenes = config.n_scenes if n_scenes is None else n_scenes
    camera = config.camera()
    pcfg = config.patch_config()
    sigma = config.flow_noise()
    rcfg = default_ransac_config(sigma, config.speed, config.height, config.dh_detect)

    scene_ids, frame_ids, eps, truth, patches, positions = [], [], [], [], [], []
    for s in range(n_scenes):
        scene_seed = derive_seed(config.seed, "scene", s)
        # every fourth scene swaps the material roles: mixed folds absorb the
        # conflict, whole-scene hold-out has to face it
        scene, traj = build_scene(config, scene_seed, swap_roles=(s % 4 == 3))
        for k, ego in enumerate(traj):
            obs = observe_flow(
                scene, camera, ego, config.corner_budget,
                noise_sigma=sigma, rng_seed=derive_seed(config.seed, "flow", s, k),
                frame_id=k,
            )
            obs = derotate(obs, (ego.p, ego.q, ego.r))
            fit = ransac_fit(obs, replace(rcfg, rng_seed=derive_seed(config.seed, "ransac", s, k)))
            img = render_view(scene, camera, ego, rng_seed=scene_seed)
            patches.append(sample_patches(img, pcfg.samples_per_image, pcfg,
                                          derive_seed(config.seed, "patch", s, k)))
            scene_ids.append(s)
            frame_ids.append(k)
            eps.append(fit.eps_star)
            truth.append(bool(obs.on_obstacle.any()))
            positions.append((ego.x, ego.y))

    return FrameDataset(
        scene_ids=np.array(scene_ids),
        frame_ids=np.array(frame_ids),
        eps_star=np.array(eps),
        truth=np.array(truth, dtype=bool),
        patches=np.stack(patches),
        positions=np.array(positions),
        config=config,
    )


# ---------------------------------------------------------------------------
# K-fold protocols


@dataclass(frozen=True)
class FoldPlan:
    protocol: str
    folds: tuple  # tuple of (train_idx, test_idx) index arrays
    n_scenes: int
    frames_per_scene: int


def make_fold_plan(protocol: str, n_scenes: int, frames_per_scene: int,
                   rng_seed: int = 0) -> FoldPlan:
    """Either 9 mixed folds drawing 1/9 of every scene, or leave-one-scene-out."""
    if protocol == KFOLD1:
        rng = np.random.default_rng(rng_seed)
        chunks: list[list[np.ndarray]] = []
        for s in range(n_scenes):
            perm = rng.permutation(frames_per_scene) + s * frames_per_scene
            chunks.append(np.array_split(perm, 9))
        folds = []
        everything = np.arange(n_scenes * frames_per_scene)
        for k in range(9):
            test = np.sort(np.concatenate([chunks[s][k] for s in range(n_scenes)]))
            train = np.setdiff1d(everything, test)
            folds.append((train, test))
    elif protocol == KFOLD2:
        if n_scenes < 2:
            raise ValueError("leave-one-scene-out needs at least 2 scenes")
        folds = []
        everything = np.arange(n_scenes * frames_per_scene)
        for s in range(n_scenes):
            test = np.arange(s * frames_per_scene, (s + 1) * frames_per_scene)
            train = np.setdiff1d(everything, test)
            folds.append((train, test))
    else:
        raise ValueError(f"unknown protocol {protocol!r}")
    return FoldPlan(protocol=protocol, folds=tuple(folds), n_scenes=n_scenes,
                    frames_per_scene=frames_per_scene)


@dataclass(frozen=True)
class FoldMetrics:
    fold: int
    auc: float | None
    nrmse: float | None
    err: float | None
    mean_entropy: float | None
    n_test: int


def _frame_histograms(patches: np.ndarray, dictionary: TextonDictionary) -> np.ndarray:
    """Histogram per frame from its pre-sampled patches."""
    n, samples, dim = patches.shape
    idx = assign_textons(patches.reshape(-1, dim), dictionary)
    offsets = np.repeat(np.arange(n), samples) * dictionary.m
    counts = np.bincount(idx + offsets, minlength=n * dictionary.m)
    return counts.reshape(n, dictionary.m) / samples


def train_fold_models(dataset: FrameDataset, train_idx: np.ndarray, fold: int):
    """Dictionary + regression (+ labels threshold) trained on one fold."""
    config = dataset.config
    pool = dataset.patches[train_idx].reshape(-1, dataset.patches.shape[2])
    if len(pool) > config.dict_patch_cap:
        rng = np.random.default_rng(derive_seed(config.seed, "dictsub", fold))
        pool = pool[np.sort(rng.choice(len(pool), config.dict_patch_cap, replace=False))]
    dictionary = train_dictionary(
        pool, m=config.m, epochs=config.epochs,
        learning_rate_schedule=(config.eta_start, config.eta_end),
        rng_seed=derive_seed(config.seed, "dict", fold),
    )
    q_train = _frame_histograms(dataset.patches[train_idx], dictionary)
    model = fit_regression(q_train, dataset.eps_star[train_idx], config.ridge_lambda)
    return dictionary, model, q_train


def run_kfold(plan: FoldPlan, config: PipelineConfig,
              dataset: FrameDataset | None = None) -> list[FoldMetrics]:
    """Train the SSL stack per fold and score it on the held-out frames.

    Emits AUC (estimated roughness vs simulator truth), NRMSE (vs the flow
    roughness), Naive Bayes classification error, and mean posterior entropy.
    Any metric undefined on a fold (single-class data, constant targets)
    reports None instead of a fabricated number.
    """
    if dataset is None:
        dataset = build_dataset(config, n_scenes=plan.n_scenes)
    eps_th = config.detection_threshold()
    # the flow-based roughness is the validation ground truth: the SSL stack
    # is judged on how well appearance reproduces what the flow saw
    flow_labels = np.where(dataset.eps_star > eps_th, C_OBSTACLE, C_CLEAR)
    results = []
    for fold, (train_idx, test_idx) in enumerate(plan.folds):
        dictionary, model, q_train = train_fold_models(dataset, train_idx, fold)
        q_test = _frame_histograms(dataset.patches[test_idx], dictionary)
        pred_train = predict(model, q_train)
        pred_test = predict(model, q_test)
        truth_test = flow_labels[test_idx] == C_OBSTACLE

        try:
            auc = roc(pred_test, truth_test).auc
        except UndefinedMetricError:
            auc = None
        try:
            fold_nrmse = nrmse(pred_test, dataset.eps_star[test_idx])
        except UndefinedMetricError:
            fold_nrmse = None

        # the class-model labeling threshold is calibrated on the training
        # split: a raw detection threshold sits inside the regression's
        # residual noise and would skew the label balance badly
        clear_rate = float(np.mean(flow_labels[train_idx] == C_CLEAR))
        eps_hat_th = float(np.quantile(pred_train, clear_rate))
        train_labels = np.array([label(e, eps_hat_th) for e in pred_train])
        err = mean_h = None
        if len(set(train_labels)) == 2:
            nb = fit_naive_bayes(q_train, train_labels, config.nb_alpha, threshold=eps_hat_th)
            posts = np.array([posterior(nb, q, config.nb_evidence) for q in q_test])
            nb_pred = np.where(posts[:, 0] >= posts[:, 1], C_OBSTACLE, C_CLEAR)
            err = classification_error(nb_pred, flow_labels[test_idx])
            mean_h = float(np.mean([entropy(p) for p in posts]))

        results.append(FoldMetrics(
            fold=fold, auc=auc, nrmse=fold_nrmse, err=err,
            mean_entropy=mean_h, n_test=len(test_idx),
        ))
    return results


# ---------------------------------------------------------------------------
# environment-shift detection


def build_shift_scene(config: PipelineConfig) -> Scene:
    """A sweep through unseen ground appearance: warm strips over cool ground
    whose area fraction grows from 0 to 1 along the path.

    The strips sit far below the detectable obstacle height, so the flow stays
    flat while the mixture of warm and cool patch evidence sweeps smoothly
    from all-cool to all-warm; somewhere along the sweep the class evidence
    of any trained model must balance, which is what the uncertainty measure
    is supposed to flag.
    """
    cool = (0.30, 0.55, 0.35)
    warm = (0.70, 0.35, 0.40)
    materials = {
        "cool": Material(base_color=cool, noise_amplitude=0.25),
        "warm": Material(base_color=warm, noise_amplitude=0.25, stripe_frequency=2.0),
    }
    span = config.path_length + 4.0
    cells = int(span)
    strips = []
    for i in range(cells):
        frac = (i + 0.5) / cells
        width = 0.98 * frac
        if width < 0.02:
            continue
        x_left = -2.0 + i * (span / cells)
        strips.append(BoxObstacle(
            center_x=x_left + width / 2.0, center_y=0.0,
            extent_x=width, extent_y=8.0, height=0.02, material_id="warm",
        ))
    return Scene(plane=ScenePlane(material_id="cool"), materials=materials,
                 obstacles=tuple(strips))


@dataclass(frozen=True)
class ShiftReport:
    mean_entropy_in: float
    mean_entropy_shift: float
    err_in: float
    err_shift: float


def shift_experiment(config: PipelineConfig, dataset: FrameDataset | None = None) -> ShiftReport:
    """Train the SSL + class stack in-distribution, then probe an unseen scene.

    Returns mean posterior entropies and classification errors for held-out
    in-distribution frames versus the unseen-appearance sweep; the flow-based
    labels are the reference on both sides.
    """
    if dataset is None:
        dataset = build_dataset(config)
    camera = config.camera()
    pcfg = config.patch_config()
    eps_th = config.detection_threshold()
    flow_labels = np.where(dataset.eps_star > eps_th, C_OBSTACLE, C_CLEAR)

    rng = np.random.default_rng(derive_seed(config.seed, "shift-split"))
    perm = rng.permutation(len(dataset))
    n_train = int(0.8 * len(dataset))
    train_idx, test_idx = perm[:n_train], perm[n_train:]

    dictionary, model, q_train = train_fold_models(dataset, train_idx, fold=0)
    pred_train = predict(model, q_train)
    clear_rate = float(np.mean(flow_labels[train_idx] == C_CLEAR))
    eps_hat_th = float(np.quantile(pred_train, clear_rate))
    nb = fit_naive_bayes(q_train, np.array([label(e, eps_hat_th) for e in pred_train]),
                         config.nb_alpha, threshold=eps_hat_th)

    q_in = _frame_histograms(dataset.patches[test_idx], dictionary)
    posts_in = [posterior(nb, q, config.nb_evidence) for q in q_in]
    pred_in = np.array([C_OBSTACLE if p[0] >= p[1] else C_CLEAR for p in posts_in])
    err_in = classification_error(pred_in, flow_labels[test_idx])

    scene = build_shift_scene(config)
    sigma = config.flow_noise()
    rcfg = default_ransac_config(sigma, config.speed, config.height, config.dh_detect)
    _, trajectory = build_scene(config, derive_seed(config.seed, "shift-traj"))
    posts_shift, truth_shift = [], []
    for k, ego in enumerate(trajectory):
        obs = observe_flow(scene, camera, ego, config.corner_budget, sigma,
                           rng_seed=derive_seed(config.seed, "shift-flow", k), frame_id=k)
        fit = ransac_fit(obs, replace(rcfg, rng_seed=derive_seed(config.seed, "shift-fit", k)))
        truth_shift.append(label(fit.eps_star, eps_th))
        img = render_view(scene, camera, ego,
                          rng_seed=derive_seed(config.seed, "shift-scene-tex"))
        patches = sample_patches(img, pcfg.samples_per_image, pcfg,
                                 derive_seed(config.seed, "shift-patch", k))
        q = _frame_histograms(patches[None, ...], dictionary)[0]
        posts_shift.append(posterior(nb, q, config.nb_evidence))
    pred_shift = np.array([C_OBSTACLE if p[0] >= p[1] else C_CLEAR for p in posts_shift])
    err_shift = classification_error(pred_shift, np.array(truth_shift))

    return ShiftReport(
        mean_entropy_in=float(np.mean([entropy(p) for p in posts_in])),
        mean_entropy_shift=float(np.mean([entropy(p) for p in posts_shift])),
        err_in=float(err_in),
        err_shift=float(err_shift),
    )


# ---------------------------------------------------------------------------
# timing


def benchmark_pipeline(config: PipelineConfig, frame_count: int = 60,
                       warmup: int = 5) -> dict[str, float]:
    """Mean wall-clock per stage (ms) at the configured corner/sample budget."""
    camera = config.camera()
    pcfg = config.patch_config()
    sigma = config.flow_noise()
    rcfg = default_ransac_config(sigma, config.speed, config.height, config.dh_detect)
    scene, traj = build_scene(config, derive_seed(config.seed, "bench-scene", 0))

    frames = []
    for k in range(frame_count + warmup):
        ego = traj[k % len(traj)]
        obs = observe_flow(scene, camera, ego, config.corner_budget, sigma,
                           rng_seed=derive_seed(config.seed, "bench-flow", k), frame_id=k)
        img = render_view(scene, camera, ego, rng_seed=derive_seed(config.seed, "bench-img", 0))
        frames.append((obs, img))

    patches = np.concatenate([
        sample_patches(img, pcfg.samples_per_image, pcfg, derive_seed(config.seed, "bench-patch", k))
        for k, (_, img) in enumerate(frames[: max(10, config.m)])
    ])
    dictionary = train_dictionary(patches, m=config.m, epochs=3,
                                  rng_seed=derive_seed(config.seed, "bench-dict", 0))
    q0 = _frame_histograms(dataset_patches_for(frames[:10], pcfg, config), dictionary)
    model = fit_regression(q0, np.linspace(0.0, 0.1, len(q0)))

    fit_ms, dist_ms, pred_ms = [], [], []
    from .appearance import extract_histogram  # local import avoids a cycle at module load

    for k, (obs, img) in enumerate(frames):
        t0 = time.perf_counter()
        obs_d = derotate(obs, (obs.ego.p, obs.ego.q, obs.ego.r))
        ransac_fit(obs_d, replace(rcfg, rng_seed=derive_seed(config.seed, "bench-ransac", k)))
        t1 = time.perf_counter()
        q = extract_histogram(img, dictionary, pcfg, derive_seed(config.seed, "bench-hist", k))
        t2 = time.perf_counter()
        predict(model, q)
        t3 = time.perf_counter()
        if k >= warmup:
            fit_ms.append((t1 - t0) * 1e3)
            dist_ms.append((t2 - t1) * 1e3)
            pred_ms.append((t3 - t2) * 1e3)

    stages = {
        "flow_fit": float(np.mean(fit_ms)),
        "ssl_distribution": float(np.mean(dist_ms)),
        "ssl_predict": float(np.mean(pred_ms)),
    }
    stages["ssl_total"] = stages["ssl_distribution"] + stages["ssl_predict"]
    stages["combined"] = stages["flow_fit"] + stages["ssl_total"]
    return stages


def dataset_patches_for(frames, pcfg: PatchConfig, config: PipelineConfig) -> np.ndarray:
    """Patch stacks for a list of (observation, image) pairs."""
    return np.stack([
        sample_patches(img, pcfg.samples_per_image, pcfg, derive_seed(config.seed, "bench-q", k))
        for k, (_, img) in enumerate(frames)
    ])
