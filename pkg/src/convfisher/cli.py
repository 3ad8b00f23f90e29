"""Command-line front end.

Every subcommand takes `--config FILE` (key=value lines) plus repeatable
`--set key=value` overrides; `--out` and `--threads` are shorthands for
run.out and run.threads. Exit codes: 0 success, 1 configuration error,
2 data error, 3 numeric failure.
"""

import argparse
import os
import sys
import time

from .config import load_config
from .errors import ConfigurationError, DataError, NumericError, StageError
from .formats import write_model, write_tensor
from .pipeline import (
    FEATURE_SETS,
    build_dataset,
    compute_features,
    evaluate,
    experiment_activation_stats,
    experiment_occlusion,
    experiment_pairs,
    finish_run,
    fit_classifier,
    fit_dictionary,
    fit_reduction,
    load_artifacts,
    load_codebook,
    make_network,
    run_pipeline,
    sample_descriptor_pool,
    save_encoding_dir,
    write_results_csv,
    write_table_csv,
    write_train_log,
)
from .scenes import default_scene_spec, generate_dataset, save_generated
from .svm import LinearHingeSVM


def _resolve_config(args):
    overrides = list(args.set or [])
    if args.out is not None:
        overrides.append(f"run.out={args.out}")
    if args.threads is not None:
        overrides.append(f"run.threads={args.threads}")
    return load_config(args.config, overrides)


def cmd_gen_data(args):
    cfg = _resolve_config(args)
    spec = default_scene_spec(
        num_classes=cfg["data.classes"],
        image_size=cfg["data.size"],
        noise=cfg["data.noise"],
        glyphs_min=cfg["data.glyphs_min"],
        glyphs_max=cfg["data.glyphs_max"],
        layout_jitter=cfg["data.layout_jitter"],
        seed=cfg["data.seed"],
    )
    timings = {}
    start = time.perf_counter()
    generated = generate_dataset(spec, cfg["data.per_class"])
    os.makedirs(cfg["run.out"], exist_ok=True)
    written = save_generated(cfg["run.out"], generated)
    timings["gen-data"] = time.perf_counter() - start
    finish_run(
        cfg,
        "gen-data",
        timings,
        written,
        metrics={"n_train": len(generated.train), "n_test": len(generated.test)},
    )
    print(f"wrote {len(generated.train)}+{len(generated.test)} images under {cfg['run.out']}")
    return 0


def cmd_train_net(args):
    cfg = _resolve_config(args)
    out = cfg["run.out"]
    os.makedirs(out, exist_ok=True)
    timings = {}
    start = time.perf_counter()
    data = build_dataset(cfg)
    net = make_network(cfg, data.train.num_classes)
    net.fit(data.train.images, data.train.labels)
    net_path = os.path.join(out, "net.fvm")
    write_model(net_path, net)
    log_path = os.path.join(out, "train_log.csv")
    write_train_log(log_path, net.training_log_)
    timings["train-net"] = time.perf_counter() - start
    acc = float((net.predict(data.test.images) == data.test.labels).mean())
    finish_run(cfg, "train-net", timings, [net_path, log_path], {"net_test_accuracy": acc})
    print(f"trained network: test accuracy {100 * acc:.2f}% -> {net_path}")
    return 0


def cmd_fit_pca(args):
    cfg = _resolve_config(args)
    out = cfg["run.out"]
    timings = {}
    start = time.perf_counter()
    net = load_artifacts(cfg, ("net",))["net"]
    data = build_dataset(cfg)
    pool = sample_descriptor_pool(cfg, net, data.train)
    pca = fit_reduction(cfg, pool)
    path = os.path.join(out, "pca.fvm")
    write_model(path, pca)
    timings["fit-pca"] = time.perf_counter() - start
    finish_run(cfg, "fit-pca", timings, [path], {"pool_size": int(pool.shape[0])})
    print(f"fit projection {pca.input_dim_} -> {pca.components_.shape[0]} dims -> {path}")
    return 0


def cmd_fit_gmm(args):
    cfg = _resolve_config(args)
    out = cfg["run.out"]
    timings = {}
    start = time.perf_counter()
    loaded = load_artifacts(cfg, ("net", "pca"))
    data = build_dataset(cfg)
    pool = sample_descriptor_pool(cfg, loaded["net"], data.train)
    gmm, bow = fit_dictionary(cfg, loaded["pca"], pool)
    gmm_path = os.path.join(out, "gmm.fvm")
    write_model(gmm_path, gmm)
    bow_path = os.path.join(out, "codebook.fvt")
    write_tensor(bow_path, bow.codebook_[:, None, :])
    timings["fit-gmm"] = time.perf_counter() - start
    finish_run(
        cfg,
        "fit-gmm",
        timings,
        [gmm_path, bow_path],
        {"final_log_likelihood": float(gmm.log_likelihood_trace_[-1])},
    )
    print(f"fit {cfg['gmm.k']}-mixture dictionary -> {gmm_path}")
    return 0


def cmd_encode(args):
    cfg = _resolve_config(args)
    out = cfg["run.out"]
    sets = [s.strip() for s in cfg["encode.sets"].split(",") if s.strip()]
    timings = {}
    start = time.perf_counter()
    loaded = load_artifacts(cfg)
    bow = load_codebook(cfg, loaded["pca"]) if "bow" in sets else None
    data = build_dataset(cfg)
    written = []
    for split, ds in (("train", data.train), ("test", data.test)):
        feats = compute_features(
            cfg, loaded["net"], loaded["pca"], loaded["gmm"], bow, ds.images, sets=sets
        )
        for name in sets:
            written += save_encoding_dir(
                os.path.join(out, "encodings", f"{split}_{name}"), feats[name], ds.labels
            )
    timings["encode"] = time.perf_counter() - start
    finish_run(cfg, "encode", timings, written, {"sets": sets})
    print(f"encoded {sets} for {len(data.train)}+{len(data.test)} images under {out}/encodings")
    return 0


def cmd_train_svm(args):
    cfg = _resolve_config(args)
    out = cfg["run.out"]
    timings = {}
    start = time.perf_counter()
    loaded = load_artifacts(cfg)
    bow = load_codebook(cfg, loaded["pca"])
    data = build_dataset(cfg)
    train_feats = compute_features(
        cfg, loaded["net"], loaded["pca"], loaded["gmm"], bow, data.train.images
    )
    test_feats = compute_features(
        cfg, loaded["net"], loaded["pca"], loaded["gmm"], bow, data.test.images
    )
    accuracy, per_class = {}, {}
    written = []
    for name in FEATURE_SETS:
        model = fit_classifier(cfg, train_feats[name], data.train.labels)
        acc, by_class = evaluate(model, test_feats[name], data.test.labels, data.test.num_classes)
        accuracy[name], per_class[name] = acc, by_class
        if isinstance(model, LinearHingeSVM):
            path = os.path.join(out, f"svm_{name}.fvm")
            write_model(path, model)
            written.append(path)
    results_path = os.path.join(out, "results.csv")
    write_results_csv(results_path, accuracy, per_class)
    written.append(results_path)
    timings["train-svm"] = time.perf_counter() - start
    finish_run(cfg, "train-svm", timings, written, {"accuracy": accuracy})
    for name in FEATURE_SETS:
        print(f"{name:>7}: {100 * accuracy[name]:.2f}%")
    return 0


def cmd_run_all(args):
    cfg = _resolve_config(args)
    record = run_pipeline(cfg)
    for name in FEATURE_SETS:
        print(f"{name:>7}: {100 * record['metrics']['accuracy'][name]:.2f}%")
    print(f"artifacts in {cfg['run.out']}")
    return 0


def cmd_exp_pairs(args):
    cfg = _resolve_config(args)
    timings = {}
    start = time.perf_counter()
    rows = experiment_pairs(cfg)
    timings["exp-pairs"] = time.perf_counter() - start
    path = os.path.join(cfg["run.out"], "pairs.csv")
    write_table_csv(path, rows, ["class_a", "class_b", "err_fc", "err_conv", "err_both"])
    finish_run(cfg, "exp-pairs", timings, [path], {"pairs": rows})
    for row in rows:
        print(
            f"pair {row['class_a']}/{row['class_b']}: fc {row['err_fc']:.2f}% "
            f"conv {row['err_conv']:.2f}% both {row['err_both']:.2f}%"
        )
    return 0


def cmd_exp_occlude(args):
    cfg = _resolve_config(args)
    timings = {}
    start = time.perf_counter()
    rows = experiment_occlusion(cfg)
    timings["exp-occlude"] = time.perf_counter() - start
    path = os.path.join(cfg["run.out"], "occlusion.csv")
    write_table_csv(
        path, rows, ["image", "kind", "h0", "w0", "h1", "w1", "fill", "mean_map_l2", "total_l2"]
    )
    glyph = [r["mean_map_l2"] for r in rows if r["kind"] == "glyph"]
    background = [r["mean_map_l2"] for r in rows if r["kind"] == "background"]
    metrics = {
        "glyph_mean": sum(glyph) / len(glyph),
        "background_mean": sum(background) / len(background),
    }
    finish_run(cfg, "exp-occlude", timings, [path], metrics)
    print(
        f"mean map change: glyph occlusion {metrics['glyph_mean']:.4f}, "
        f"background occlusion {metrics['background_mean']:.4f} -> {path}"
    )
    return 0


def cmd_exp_stats(args):
    cfg = _resolve_config(args)
    timings = {}
    start = time.perf_counter()
    record = experiment_activation_stats(cfg)
    timings["exp-stats"] = time.perf_counter() - start
    path = os.path.join(cfg["run.out"], "activation_stats.csv")
    rows = [
        {"class": c, "count_fc": fc, "count_conv": conv}
        for c, (fc, conv) in enumerate(zip(record["fc_hist"], record["conv_hist"]))
    ]
    write_table_csv(path, rows, ["class", "count_fc", "count_conv"])
    finish_run(cfg, "exp-stats", timings, [path], record)
    print(
        f"top-{record['q']} class histograms written to {path}; "
        f"tv distance {record['tv_distance']:.3f}"
    )
    return 0


_COMMANDS = {
    "gen-data": (cmd_gen_data, "generate the synthetic dataset to PPM files"),
    "train-net": (cmd_train_net, "train the conv net and save it"),
    "fit-pca": (cmd_fit_pca, "fit the descriptor projection from the saved net"),
    "fit-gmm": (cmd_fit_gmm, "fit the mixture dictionary and BoW codebook"),
    "encode": (cmd_encode, "encode feature sets to FVT1 files using saved models"),
    "train-svm": (cmd_train_svm, "train and evaluate per-set linear SVMs"),
    "run-all": (cmd_run_all, "run the full pipeline end to end"),
    "exp-pairs": (cmd_exp_pairs, "ambiguous-pair error table"),
    "exp-occlude": (cmd_exp_occlude, "occlusion sensitivity of the conv maps"),
    "exp-stats": (cmd_exp_stats, "top-activation class distribution report"),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="convfisher", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (fn, help_text) in _COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="key=value config file")
        p.add_argument(
            "--set",
            action="append",
            metavar="KEY=VALUE",
            help="override one config key (repeatable)",
        )
        p.add_argument("--out", default=None, help="run directory (run.out)")
        p.add_argument("--threads", type=int, default=None, help="worker threads (run.threads)")
        p.set_defaults(func=fn)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args) or 0
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc.cause)
    except (ConfigurationError, DataError, NumericError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)


def _exit_code(exc):
    if isinstance(exc, ConfigurationError):
        return 1
    if isinstance(exc, DataError):
        return 2
    return 3


if __name__ == "__main__":
    sys.exit(main())
