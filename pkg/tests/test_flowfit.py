import numpy as np
import pytest

from flowland import (
    EgoState,
    FlowObservation,
    RansacConfig,
    Scene,
    ScenePlane,
    ThresholdQuery,
    default_ransac_config,
    derotate,
    evaluate_params,
    ls_fit,
    observe_flow,
    ransac_fit,
    roughness,
    roughness_threshold,
)
from flowland.errors import DegenerateGeometryError, NoConsensusError
from flowland.flowsim import with_rates


def synthetic_observation(x, y, u, v, on_obstacle=None):
    x = np.asarray(x, dtype=float)
    if on_obstacle is None:
        on_obstacle = np.zeros(len(x), dtype=bool)
    return FlowObservation(x=x, y=np.asarray(y, dtype=float),
                           u=np.asarray(u, dtype=float), v=np.asarray(v, dtype=float),
                           depth_truth=np.full(len(x), 2.0), on_obstacle=on_obstacle)


class TestLsFit:
    def test_flat_plane_recovers_constant_terms(self, flat_scene, camera):
        obs = observe_flow(flat_scene, camera, EgoState(h=3.0, vx=0.6), 25, 0.0, 1)
        params = ls_fit(obs)
        np.testing.assert_allclose(params.p_u, [-0.2, 0, 0, 0, 0], atol=1e-9)
        np.testing.assert_allclose(params.p_v, np.zeros(5), atol=1e-9)

    def test_sloped_descent_residuals_vanish(self, ground_material, camera):
        scene = Scene(plane=ScenePlane(slope_a=0.1), materials={"ground": ground_material})
        obs = observe_flow(scene, camera, EgoState(h=2.0, vz=0.3), 40, 0.0, 2)
        params = ls_fit(obs)
        uh, vh = evaluate_params(params, obs.x, obs.y)
        np.testing.assert_allclose(uh, obs.u, atol=1e-9)
        np.testing.assert_allclose(vh, obs.v, atol=1e-9)

    def test_five_points_interpolate_exactly(self):
        rng = np.random.default_rng(7)
        x, y = rng.uniform(-0.5, 0.5, 5), rng.uniform(-0.5, 0.5, 5)
        u, v = rng.normal(size=5), rng.normal(size=5)
        params = ls_fit(synthetic_observation(x, y, u, v))
        uh, vh = evaluate_params(params, x, y)
        np.testing.assert_allclose(uh, u, atol=1e-9)
        np.testing.assert_allclose(vh, v, atol=1e-9)

    def test_collinear_features_raise(self):
        x = np.linspace(-0.4, 0.4, 12)
        obs = synthetic_observation(x, 0.3 * x + 0.1, np.ones(12), np.ones(12))
        with pytest.raises(DegenerateGeometryError):
            ls_fit(obs)

    def test_linear_order_zeroes_second_order_terms(self, flat_scene, camera):
        obs = observe_flow(flat_scene, camera, EgoState(h=2.0, vx=0.4), 25, 0.0, 3)
        params = ls_fit(obs, fit_order="linear")
        assert params.p_u[3] == params.p_u[4] == 0.0
        np.testing.assert_allclose(params.p_u[0], -0.2, atol=1e-9)


class TestRansacFit:
    def test_clean_observation_all_inliers(self, flat_scene, camera):
        obs = observe_flow(flat_scene, camera, EgoState(h=3.0, vx=0.6), 30, 0.0, 4)
        result = ransac_fit(obs, default_ransac_config(0.0, 0.6, 3.0))
        assert result.inlier_mask.all()
        assert result.eps_star < 1e-9
        np.testing.assert_allclose(result.params.p_u, ls_fit(obs).p_u, atol=1e-9)

    def test_obstacle_outliers_match_brute_force_oracle(self, box_scene, camera, lateral_ego):
        obs = observe_flow(box_scene, camera, lateral_ego, 40, 0.0, 11)
        result = ransac_fit(obs, default_ransac_config(0.0, 0.6, 2.0))
        assert np.array_equal(result.inlier_mask, ~obs.on_obstacle)
        # oracle: fit the plane features alone, average residuals over all
        plane_only = FlowObservation(
            x=obs.x[~obs.on_obstacle], y=obs.y[~obs.on_obstacle],
            u=obs.u[~obs.on_obstacle], v=obs.v[~obs.on_obstacle],
            depth_truth=obs.depth_truth[~obs.on_obstacle],
            on_obstacle=obs.on_obstacle[~obs.on_obstacle],
        )
        oracle = ls_fit(plane_only)
        uh, vh = evaluate_params(oracle, obs.x, obs.y)
        expected = (np.abs(uh - obs.u).mean() + np.abs(vh - obs.v).mean())
        np.testing.assert_allclose(result.eps_star, expected, atol=1e-9)
        # hand value: obstacle fraction times the excess flow of the box top
        frac = obs.on_obstacle.mean()
        np.testing.assert_allclose(result.eps_star, frac * (0.6 / 1.1 - 0.3), atol=1e-9)

    def test_detection_rates_across_a_flight(self, box_scene, camera):
        # distributional check at the published operating point
        from flowland import scan_trajectory, tp_fp_rates

        sigma = roughness_threshold(ThresholdQuery(v_x=0.6, h=2.0, dh=0.01))
        eps_th = roughness_threshold(ThresholdQuery(v_x=0.6, h=2.0, dh=0.03))
        config = default_ransac_config(sigma, 0.6, 2.0)
        scores, truths = [], []
        for k, ego in enumerate(scan_trajectory([(-1.5, 0.0), (2.5, 0.0)], 0.6, 25.0, height=2.0)):
            obs = observe_flow(box_scene, camera, ego, 25, sigma, rng_seed=(5, k), frame_id=k)
            fit = ransac_fit(obs, RansacConfig(inlier_threshold=config.inlier_threshold,
                                               rng_seed=(6, k)))
            scores.append(fit.eps_star)
            truths.append(bool(obs.on_obstacle.any()))
        tp, fp = tp_fp_rates(scores, truths, eps_th)
        assert tp >= 0.9
        assert fp <= 0.25

    def test_no_consensus_raises(self):
        rng = np.random.default_rng(3)
        x, y = rng.uniform(-0.5, 0.5, 20), rng.uniform(-0.5, 0.5, 20)
        u = np.where(np.arange(20) < 10, 0.0, 1.0)  # two equal-size populations
        obs = synthetic_observation(x, y, u, np.zeros(20))
        with pytest.raises(NoConsensusError):
            ransac_fit(obs, RansacConfig(inlier_threshold=1e-6, min_inliers=15, rng_seed=1))

    def test_infinite_threshold_degenerates_to_ls_fit(self, box_scene, camera, lateral_ego):
        obs = observe_flow(box_scene, camera, lateral_ego, 30, 0.0, 6)
        result = ransac_fit(obs, RansacConfig(inlier_threshold=np.inf, rng_seed=2))
        reference = ls_fit(obs)
        np.testing.assert_allclose(result.params.p_u, reference.p_u, atol=1e-9)
        np.testing.assert_allclose(result.params.p_v, reference.p_v, atol=1e-9)
        assert result.inlier_mask.all()

    def test_residuals_scale_with_velocity(self, box_scene, camera):
        cfg = RansacConfig(inlier_threshold=np.inf, rng_seed=9)
        obs1 = observe_flow(box_scene, camera, EgoState(h=2.0, vx=0.3), 30, 0.0, 7)
        obs3 = observe_flow(box_scene, camera, EgoState(h=2.0, vx=0.9), 30, 0.0, 7)
        r1, r3 = ransac_fit(obs1, cfg), ransac_fit(obs3, cfg)
        np.testing.assert_allclose(r3.eps_u, 3.0 * r1.eps_u, rtol=1e-9)
        np.testing.assert_allclose(r3.eps_star, 3.0 * r1.eps_star, rtol=1e-9)

    def test_roughness_permutation_invariant(self, box_scene, camera, lateral_ego):
        obs = observe_flow(box_scene, camera, lateral_ego, 40, 0.0, 8)
        perm = np.random.default_rng(0).permutation(40)
        shuffled = FlowObservation(x=obs.x[perm], y=obs.y[perm], u=obs.u[perm],
                                   v=obs.v[perm], depth_truth=obs.depth_truth[perm],
                                   on_obstacle=obs.on_obstacle[perm])
        cfg = default_ransac_config(0.0, 0.6, 2.0)
        np.testing.assert_allclose(ransac_fit(obs, cfg).eps_star,
                                   ransac_fit(shuffled, cfg).eps_star, atol=1e-12)

    def test_obstacle_roughness_decreases_with_height(self, box_scene, camera):
        means = []
        for h in (2.0, 3.0, 4.0):
            sigma = roughness_threshold(ThresholdQuery(v_x=0.6, h=h, dh=0.01))
            cfg = default_ransac_config(sigma, 0.6, h)
            values = []
            for k in range(25):
                obs = observe_flow(box_scene, camera, EgoState(x=0.4, h=h, vx=0.6),
                                   25, sigma, rng_seed=(13, int(h * 10), k))
                if not obs.on_obstacle.any():
                    continue
                values.append(ransac_fit(obs, RansacConfig(
                    inlier_threshold=cfg.inlier_threshold, rng_seed=(14, k))).eps_star)
            means.append(np.mean(values))
        assert means[0] > means[1] > means[2]


class TestRoughnessAccessor:
    def test_definition(self):
        obs = synthetic_observation(np.r_[np.random.default_rng(1).uniform(-0.5, 0.5, 20)],
                                    np.random.default_rng(2).uniform(-0.5, 0.5, 20),
                                    np.zeros(20), np.zeros(20))
        result = ransac_fit(obs, RansacConfig(inlier_threshold=0.01, rng_seed=0))
        assert roughness(result) == result.eps_star == result.eps_u + result.eps_v

    def test_zero_for_exact_fit(self, flat_scene, camera):
        obs = observe_flow(flat_scene, camera, EgoState(h=2.0, vx=0.5), 25, 0.0, 5)
        assert roughness(ransac_fit(obs, RansacConfig(inlier_threshold=0.01))) < 1e-12


class TestDerotate:
    def test_round_trip_through_simulator(self, box_scene, camera):
        with_rot = observe_flow(box_scene, camera,
                                with_rates(EgoState(h=2.0, vx=0.6), r=0.2), 30, 0.0, 9)
        without = observe_flow(box_scene, camera, EgoState(h=2.0, vx=0.6), 30, 0.0, 9)
        restored = derotate(with_rot, (0.0, 0.0, 0.2))
        np.testing.assert_allclose(restored.u, without.u, atol=1e-9)
        np.testing.assert_allclose(restored.v, without.v, atol=1e-9)
        assert restored.ego.r == 0.0

    def test_zero_rates_is_identity(self, box_scene, camera, lateral_ego):
        obs = observe_flow(box_scene, camera, lateral_ego, 25, 0.0, 10)
        out = derotate(obs, (0.0, 0.0, 0.0))
        np.testing.assert_array_equal(out.u, obs.u)
        np.testing.assert_array_equal(out.v, obs.v)

    def test_additive_in_rates(self, box_scene, camera, lateral_ego):
        obs = observe_flow(box_scene, camera, with_rates(lateral_ego, p=0.1, q=-0.05, r=0.3),
                           25, 0.0, 12)
        two_step = derotate(derotate(obs, (0.1, 0.0, 0.1)), (0.0, -0.05, 0.2))
        one_step = derotate(obs, (0.1, -0.05, 0.3))
        np.testing.assert_allclose(two_step.u, one_step.u, atol=1e-12)
        np.testing.assert_allclose(two_step.v, one_step.v, atol=1e-12)


class TestRoughnessThreshold:
    def test_zero_obstacle_height(self):
        assert roughness_threshold(ThresholdQuery(v_x=0.6, h=2.0, dh=0.0)) == 0.0

    def test_hand_evaluated_values(self):
        q2 = ThresholdQuery(v_x=0.6, h=2.0, dh=0.03, focal=1.0)
        np.testing.assert_allclose(roughness_threshold(q2), 0.6 * 0.03 / (2.0 * 1.97),
                                   rtol=1e-12)
        np.testing.assert_allclose(roughness_threshold(q2), 4.5685e-3, atol=1e-7)
        q4 = ThresholdQuery(v_x=0.6, h=4.0, dh=0.03)
        np.testing.assert_allclose(roughness_threshold(q4), 1.1335e-3, atol=1e-7)
        assert roughness_threshold(q4) < roughness_threshold(q2)

    def test_domain_error(self):
        with pytest.raises(ValueError):
            ThresholdQuery(v_x=0.6, h=0.02, dh=0.03)

    def test_monotonicity_by_sampling(self):
        vals_h = [roughness_threshold(ThresholdQuery(v_x=0.6, h=h)) for h in np.linspace(0.5, 15, 40)]
        assert all(a > b for a, b in zip(vals_h, vals_h[1:]))
        vals_v = [roughness_threshold(ThresholdQuery(v_x=v, h=2.0)) for v in np.linspace(0.1, 2.0, 30)]
        assert all(a < b for a, b in zip(vals_v, vals_v[1:]))
        vals_dh = [roughness_threshold(ThresholdQuery(v_x=0.6, h=2.0, dh=d))
                   for d in np.linspace(0.0, 0.5, 30)]
        assert all(a < b for a, b in zip(vals_dh, vals_dh[1:]))
