import numpy as np
import pytest

from flowland import (
    EgoState,
    NaiveBayesModel,
    RegressionModel,
    TextonDictionary,
    observe_flow,
    ransac_fit,
    RansacConfig,
)
from flowland import io as fio
from flowland.cli import main
from flowland.errors import ConfigError
from flowland.landing import RoughnessMap

from conftest import constant_patch

SCENARIO = """\
camera: {focal_length_px: 96.0, image_width: 96, image_height: 96}
plane: {slope_a: 0.0, slope_b: 0.0, material: ground}
materials:
  - {id: ground, base_color: [0.2, 0.5, 0.2], noise_amplitude: 0.25}
  - {id: obstacle, base_color: [0.7, 0.2, 0.2], noise_amplitude: 0.25}
obstacles:
  - {center_x: 1.2, center_y: 0.0, extent_x: 0.8, extent_y: 0.8, height: 0.9,
     material: obstacle}
trajectory: {waypoints: [[0.0, 0.0], [2.4, 0.0]], speed: 0.6, frame_rate: 5.0,
             height: 2.0}
noise: {sigma: 0.0015}
seed: 11
"""


class TestPpm:
    def test_round_trip(self, tmp_path):
        image = np.random.default_rng(1).random((20, 30, 3))
        path = tmp_path / "img.ppm"
        fio.write_ppm(path, image)
        back = fio.read_ppm(path)
        assert back.shape == (20, 30, 3)
        assert np.abs(back - image).max() <= 0.5 / 255.0 + 1e-9

    def test_rejects_non_p6(self, tmp_path):
        path = tmp_path / "bad.ppm"
        path.write_bytes(b"P3\n1 1\n255\n0 0 0\n")
        with pytest.raises(ConfigError):
            fio.read_ppm(path)


class TestCsvRoundTrips:
    def test_flow_csv(self, tmp_path, box_scene, camera, lateral_ego):
        observations = [
            observe_flow(box_scene, camera, lateral_ego, 15, 0.001, seed, frame_id=seed)
            for seed in range(3)
        ]
        path = tmp_path / "flow.csv"
        fio.write_flow_csv(path, observations)
        back = fio.read_flow_csv(path)
        assert len(back) == 3
        for orig, loaded in zip(observations, back):
            assert loaded.frame_id == orig.frame_id
            np.testing.assert_allclose(loaded.u, orig.u, rtol=1e-8)
            np.testing.assert_array_equal(loaded.on_obstacle, orig.on_obstacle)

    def test_fit_csv(self, tmp_path, box_scene, camera, lateral_ego):
        obs = observe_flow(box_scene, camera, lateral_ego, 20, 0.0, 1, frame_id=4)
        result = ransac_fit(obs, RansacConfig(inlier_threshold=0.01))
        path = tmp_path / "fits.csv"
        fio.write_fit_csv(path, [(4, result)], coeff_sidecar=tmp_path / "coeffs.csv")
        rows = fio.read_fit_csv(path)
        assert rows[0]["frame_id"] == 4
        assert np.isclose(rows[0]["eps_star"], result.eps_star, rtol=1e-8)
        header = (tmp_path / "coeffs.csv").read_text().splitlines()[0]
        assert header.split(",")[1:] == [f"pu{i}" for i in range(5)] + [f"pv{i}" for i in range(5)]

    def test_dictionary_csv(self, tmp_path):
        dictionary = TextonDictionary(
            textons=np.random.default_rng(2).random((4, 75)), patch_width=5, rng_seed=9)
        path = tmp_path / "dict.csv"
        fio.write_dictionary_csv(path, dictionary)
        back = fio.read_dictionary_csv(path)
        assert back.m == 4 and back.patch_width == 5 and back.rng_seed == 9
        np.testing.assert_allclose(back.textons, dictionary.textons, rtol=1e-8)

    def test_regression_csv(self, tmp_path):
        model = RegressionModel(rho=np.random.default_rng(3).random(6), bias=-0.25)
        path = tmp_path / "reg.csv"
        fio.write_regression_csv(path, model)
        back = fio.read_regression_csv(path)
        np.testing.assert_allclose(back.rho, model.rho, rtol=1e-8)
        assert np.isclose(back.bias, model.bias, rtol=1e-8)

    def test_naive_bayes_csv(self, tmp_path):
        model = NaiveBayesModel(
            priors=np.array([0.3, 0.7]),
            likelihoods=np.array([[0.2, 0.3, 0.5], [0.6, 0.2, 0.2]]),
            threshold=0.0046,
        )
        path = tmp_path / "nb.csv"
        fio.write_naive_bayes_csv(path, model)
        back = fio.read_naive_bayes_csv(path)
        np.testing.assert_allclose(back.priors, model.priors, rtol=1e-8)
        np.testing.assert_allclose(back.likelihoods, model.likelihoods, rtol=1e-8)

    def test_roughness_map_csv(self, tmp_path):
        rough = RoughnessMap(values=np.random.default_rng(4).random((3, 5)),
                             window=50, stride=4, samples=50)
        path = tmp_path / "map.csv"
        fio.write_roughness_map_csv(path, rough)
        lines = path.read_text().splitlines()
        assert lines[0] == "window,stride,samples,rows,cols"
        assert lines[1] == "50,4,50,3,5"
        assert len(lines) == 2 + 3

    def test_record_writer(self, tmp_path):
        path = tmp_path / "decision.txt"
        fio.write_record(path, {"chosen": 7, "d_p": 1.0})
        assert path.read_text() == "chosen=7 d_p=1\n"


class TestScenario:
    def test_load_valid_scenario(self, tmp_path):
        path = tmp_path / "scene.yaml"
        path.write_text(SCENARIO)
        scene, camera, trajectory, sigma, seed = fio.load_scenario(path)
        assert camera.image_width == 96
        assert len(scene.obstacles) == 1
        assert len(trajectory) == 21  # 2.4 m at 0.6 m/s and 5 fps
        assert sigma == 0.0015 and seed == 11

    def test_malformed_scenario(self, tmp_path):
        path = tmp_path / "broken.yaml"
        path.write_text("camera: {focal_length_px: -1}\nmaterials: []\n")
        with pytest.raises(ConfigError):
            fio.load_scenario(path)


class TestCli:
    @pytest.fixture
    def sim_dir(self, tmp_path):
        scenario = tmp_path / "scenario.yaml"
        scenario.write_text(SCENARIO)
        out = tmp_path / "sim"
        assert main(["--seed", "11", "simulate", "--config", str(scenario),
                     "--out", str(out)]) == 0
        return tmp_path, out

    def test_simulate_outputs(self, sim_dir):
        _, out = sim_dir
        assert (out / "flow.csv").exists()
        assert (out / "trajectory.csv").exists()
        frames = sorted((out / "frames").glob("*.ppm"))
        assert len(frames) == 21

    def test_fit_and_land_scan(self, sim_dir):
        tmp, out = sim_dir
        fit_out = tmp / "fit"
        assert main(["fit", "--flow", str(out / "flow.csv"), "--out", str(fit_out),
                     "--inlier-threshold", "0.0046"]) == 0
        rows = fio.read_fit_csv(fit_out / "fits.csv")
        assert len(rows) == 21
        scan_out = tmp / "scan"
        assert main(["land-scan", "--fits", str(fit_out / "fits.csv"),
                     "--trajectory", str(out / "trajectory.csv"),
                     "--threshold", "0.0046", "--out", str(scan_out)]) == 0
        record = (scan_out / "scan_decision.txt").read_text()
        assert "a_sf=" in record and "land_x=" in record

    def test_texton_ssl_predict_segment_grid(self, sim_dir):
        tmp, out = sim_dir
        fit_out = tmp / "fit"
        main(["fit", "--flow", str(out / "flow.csv"), "--out", str(fit_out),
              "--inlier-threshold", "0.0046"])
        dict_out = tmp / "dict"
        assert main(["--seed", "1", "train-textons", "--frames", str(out / "frames"),
                     "--out", str(dict_out), "--m", "8", "--epochs", "3"]) == 0
        ssl_out = tmp / "ssl"
        # a threshold the roughness estimates actually straddle
        eps = np.median([r["eps_star"] for r in fio.read_fit_csv(fit_out / "fits.csv")])
        assert main(["--seed", "2", "train-ssl",
                     "--dictionary", str(dict_out / "dictionary.csv"),
                     "--fits", str(fit_out / "fits.csv"),
                     "--frames", str(out / "frames"),
                     "--out", str(ssl_out), "--threshold", repr(float(eps))]) == 0
        assert (ssl_out / "regression.csv").exists()
        assert (ssl_out / "naive_bayes.csv").exists()
        image = next(iter(sorted((out / "frames").glob("*.ppm"))))
        assert main(["predict", "--dictionary", str(dict_out / "dictionary.csv"),
                     "--model", str(ssl_out / "regression.csv"),
                     "--image", str(image)]) == 0
        seg_out = tmp / "seg"
        assert main(["segment", "--dictionary", str(dict_out / "dictionary.csv"),
                     "--model", str(ssl_out / "regression.csv"),
                     "--image", str(image), "--out", str(seg_out),
                     "--window", "40", "--stride", "8", "--samples", "10"]) == 0
        assert (seg_out / "roughness_map.csv").exists()
        assert (seg_out / "roughness_map.ppm").exists()
        grid_out = tmp / "grid"
        assert main(["land-grid", "--dictionary", str(dict_out / "dictionary.csv"),
                     "--model", str(ssl_out / "regression.csv"),
                     "--image", str(image), "--threshold", "10.0",
                     "--height", "2.0", "--focal", "96.0",
                     "--out", str(grid_out)]) == 0
        assert "chosen=" in (grid_out / "grid_decision.txt").read_text()

    def test_bad_config_exits_2(self, tmp_path):
        bad = tmp_path / "bad.yaml"
        bad.write_text("camera: {focal_length_px: -5}\n")
        assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2

    def test_degenerate_data_exits_3(self, tmp_path):
        flow = tmp_path / "flow.csv"
        lines = ["frame_id,x,y,u,v,depth_truth,on_obstacle"]
        for i in range(12):  # collinear features: rank-deficient design
            x = -0.4 + 0.07 * i
            lines.append(f"0,{x},{0.5 * x},1.0,0.5,2.0,0")
        flow.write_text("\n".join(lines) + "\n")
        assert main(["fit", "--flow", str(flow), "--out", str(tmp_path / "fit")]) == 3

    def test_evaluate_writes_metrics(self, tmp_path):
        cfg = tmp_path / "pipeline.yaml"
        cfg.write_text("n_scenes: 2\nframes_per_scene: 12\ndict_patch_cap: 300\nepochs: 3\n")
        out = tmp_path / "eval"
        assert main(["--seed", "5", "evaluate", "--protocol", "kfold2",
                     "--config", str(cfg), "--out", str(out)]) == 0
        lines = (out / "metrics_kfold2.csv").read_text().splitlines()
        assert lines[0] == "fold,auc,nrmse,err,mean_entropy,n_test"
        assert len(lines) == 3

    def test_bench_runs(self, tmp_path):
        cfg = tmp_path / "pipeline.yaml"
        cfg.write_text("n_scenes: 1\nframes_per_scene: 20\n")
        assert main(["bench", "--config", str(cfg), "--frames", "6"]) == 0
