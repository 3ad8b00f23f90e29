import json
import os

import numpy as np
import pytest

from convfisher.cli import main
from convfisher.config import load_config
from convfisher.pipeline import (
    build_dataset,
    compute_features,
    experiment_activation_stats,
    experiment_occlusion,
    experiment_pairs,
    load_artifacts,
    load_codebook,
    occlusion_report,
    read_results_csv,
    read_run_json,
    read_table_csv,
    run_pipeline,
)


def mini_overrides(out, **extra):
    base = {
        "data.classes": 3,
        "data.per_class": 20,
        "net.epochs": 2,
        "net.lr": 0.05,
        "pca.dims": 8,
        "gmm.k": 4,
        "gmm.iters": 10,
        "bow.words": 8,
        "svm.epochs": 10,
        "exp.occlude.images": 5,
        "run.out": str(out),
    }
    base.update(extra)
    return [f"{k}={v}" for k, v in base.items()]


@pytest.fixture(scope="module")
def mini_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("mini")
    cfg = load_config(overrides=mini_overrides(out))
    record = run_pipeline(cfg, keep_objects=True)
    return cfg, record


class TestRunPipeline:
    def test_single_class_dataset_is_perfectly_classified(self, tmp_path):
        cfg = load_config(
            overrides=mini_overrides(tmp_path / "one", **{"data.classes": 1})
        )
        record = run_pipeline(cfg)
        for name, acc in record["metrics"]["accuracy"].items():
            assert acc == 1.0, name

    def test_weightless_head_and_headless_runs_agree(self, tmp_path):
        zero = run_pipeline(
            load_config(
                overrides=mini_overrides(tmp_path / "z", **{"net.aux_weight": 0.0})
            )
        )
        headless = run_pipeline(
            load_config(
                overrides=mini_overrides(tmp_path / "h", **{"net.aux_attach": -1})
            )
        )
        assert zero["metrics"]["accuracy"] == headless["metrics"]["accuracy"]
        assert (
            zero["metrics"]["per_class_accuracy"] == headless["metrics"]["per_class_accuracy"]
        )

    def test_identical_configs_reproduce_metrics(self, tmp_path, mini_run):
        cfg0, record0 = mini_run
        cfg = load_config(overrides=mini_overrides(tmp_path / "again"))
        record = run_pipeline(cfg)
        assert record["metrics"] == record0["metrics"]

    def test_run_record_contents(self, mini_run):
        cfg, record = mini_run
        on_disk = read_run_json(cfg["run.out"])
        assert on_disk["metrics"] == record["metrics"]
        assert on_disk["config"]["gmm.k"] == 4
        assert on_disk["seeds"]["net.seed"] == cfg["net.seed"]
        for stage in ("dataset", "train-net", "fit-pca", "fit-gmm", "encode", "train-svm"):
            assert on_disk["stage_seconds"][stage] >= 0.0
        for name in ("net.fvm", "pca.fvm", "gmm.fvm", "results.csv"):
            assert name in on_disk["artifacts"]

    def test_results_csv_round_trip(self, mini_run):
        cfg, record = mini_run
        rows = read_results_csv(os.path.join(cfg["run.out"], "results.csv"))
        overall = {
            r["feature_set"]: r["accuracy_pct"] for r in rows if r["class"] == "overall"
        }
        for name, acc in record["metrics"]["accuracy"].items():
            assert overall[name] == round(100.0 * acc, 2)

    def test_reloaded_models_reproduce_vectors(self, mini_run):
        cfg, record = mini_run
        loaded = load_artifacts(cfg)
        bow = load_codebook(cfg, loaded["pca"])
        data = record["objects"]["data"]
        feats = compute_features(
            cfg, loaded["net"], loaded["pca"], loaded["gmm"], bow, data.test.images
        )
        for name, matrix in record["objects"]["test_features"].items():
            assert np.allclose(feats[name], matrix, atol=1e-12), name

    def test_saved_encoding_dirs_match_features(self, mini_run):
        from convfisher.pipeline import load_encoding_dir

        cfg, record = mini_run
        vectors, labels = load_encoding_dir(
            os.path.join(cfg["run.out"], "encodings", "test_fcv")
        )
        expected = record["objects"]["test_features"]["fcv"]
        assert np.array_equal(vectors, expected.astype(np.float32).astype(np.float64))
        assert np.array_equal(labels, record["objects"]["data"].test.labels)


class TestExperiments:
    def test_occlusion_empty_rect_zero_difference(self, mini_run):
        cfg, record = mini_run
        net = record["objects"]["net"]
        image = record["objects"]["data"].test.images[0]
        rows = occlusion_report(net, cfg["net.extract_layer"], image, [(3, 3, 3, 9)])
        assert rows[0]["total_l2"] == 0.0

    def test_occlusion_full_image_reported(self, mini_run):
        cfg, record = mini_run
        net = record["objects"]["net"]
        image = record["objects"]["data"].test.images[0]
        rows = occlusion_report(net, cfg["net.extract_layer"], image, [(0, 0, 32, 32)])
        assert rows[0]["total_l2"] >= 0.0
        assert rows[0]["mean_map_l2"] >= 0.0

    def test_occlusion_experiment_rows(self, mini_run):
        cfg, record = mini_run
        rows = experiment_occlusion(
            cfg, net=record["objects"]["net"], data=record["objects"]["data"]
        )
        kinds = {r["kind"] for r in rows}
        assert kinds == {"glyph", "background"}
        assert len(rows) == 2 * 5
        again = experiment_occlusion(
            cfg, net=record["objects"]["net"], data=record["objects"]["data"]
        )
        assert rows == again

    def test_pairs_experiment_shapes_and_determinism(self, mini_run):
        cfg, record = mini_run
        rows = experiment_pairs(cfg, objects=record["objects"])
        assert [(r["class_a"], r["class_b"]) for r in rows] == [(0, 1)]
        for key in ("err_fc", "err_conv", "err_both"):
            assert 0.0 <= rows[0][key] <= 100.0
        assert rows == experiment_pairs(cfg, objects=record["objects"])

    def test_indistinguishable_pair_sits_near_chance(self, tmp_path):
        from convfisher.pipeline import PipelineData, fit_classifier
        from convfisher.scenes import default_scene_spec, generate_dataset

        spec = default_scene_spec(num_classes=2, seed=5)
        spec.class_glyphs[1] = list(spec.class_glyphs[0])
        spec.class_templates[1] = spec.class_templates[0]
        gen = generate_dataset(spec, 60)
        cfg = load_config(overrides=mini_overrides(tmp_path / "twin"))
        rng = np.random.default_rng(0)
        errors = []
        for _ in range(3):
            # identical classes: no feature carries signal; random projections
            # of the raw images stand in for either feature kind
            proj = rng.standard_normal((32 * 32 * 3, 8))
            feats_tr = gen.train.images.reshape(len(gen.train), -1) @ proj
            feats_te = gen.test.images.reshape(len(gen.test), -1) @ proj
            model = fit_classifier(cfg, feats_tr, gen.train.labels)
            errors.append(100.0 * (model.predict(feats_te) != gen.test.labels).mean())
        assert 40.0 <= np.mean(errors) <= 60.0

    def test_activation_stats_histograms(self, mini_run):
        cfg, record = mini_run
        stats = experiment_activation_stats(
            cfg, net=record["objects"]["net"], data=record["objects"]["data"]
        )
        n_total = len(record["objects"]["data"].train) + len(record["objects"]["data"].test)
        assert stats["q"] == round(0.1 * n_total)
        assert sum(stats["fc_hist"]) == stats["q"]
        assert sum(stats["conv_hist"]) == stats["q"]
        assert 0.0 <= stats["tv_distance"] <= 1.0

    def test_uniform_activations_tie_break_stably(self, mini_run):
        cfg, record = mini_run
        net = record["objects"]["net"]
        for _, p in net.parameters():
            p[...] = 0.0  # all activations identical -> stable index order wins
        data = record["objects"]["data"]
        stats = experiment_activation_stats(cfg, net=net, data=data)
        labels = np.concatenate([data.train.labels, data.test.labels])
        expected = np.bincount(labels[: stats["q"]], minlength=3).tolist()
        assert stats["fc_hist"] == expected
        assert stats["conv_hist"] == expected


class TestCliPipeline:
    def test_run_all_then_experiments(self, tmp_path):
        out = tmp_path / "cli"
        args = []
        for item in mini_overrides(out):
            args += ["--set", item]
        assert main(["run-all"] + args) == 0
        assert main(["exp-pairs"] + args) == 0
        assert main(["exp-occlude"] + args) == 0
        assert main(["exp-stats"] + args) == 0
        pairs = read_table_csv(out / "pairs.csv")
        assert len(pairs) == 1 and pairs[0]["class_a"] == "0"
        occl = read_table_csv(out / "occlusion.csv")
        assert {row["kind"] for row in occl} == {"glyph", "background"}
        stats = read_table_csv(out / "activation_stats.csv")
        assert len(stats) == 3
        run = read_run_json(out)
        assert run["command"] == "exp-stats"

    def test_stagewise_commands_match_run_all(self, tmp_path):
        out_a = tmp_path / "stagewise"
        out_b = tmp_path / "allatonce"
        args_a = []
        for item in mini_overrides(out_a):
            args_a += ["--set", item]
        for cmd in ("train-net", "fit-pca", "fit-gmm", "encode", "train-svm"):
            assert main([cmd] + args_a) == 0, cmd
        args_b = []
        for item in mini_overrides(out_b):
            args_b += ["--set", item]
        assert main(["run-all"] + args_b) == 0
        acc_a = read_run_json(out_a)["metrics"]["accuracy"]
        acc_b = read_run_json(out_b)["metrics"]["accuracy"]
        assert acc_a == acc_b
