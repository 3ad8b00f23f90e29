"""End-to-end orchestration and the diagnostic experiments.

Stage order: dataset -> train net -> sample descriptors -> PCA -> GMM (+ BoW
codebook) -> encode feature sets -> per-set linear SVMs -> metrics. Artifacts
land in the run directory as FVM1/FVT1 files; every command finishes by
writing run.json (full config, seeds, artifact hashes, stage wall-clock) and
run-all additionally writes results.csv with per-class accuracies.

Feature sets evaluated: fc (dense activations), fcv (Fisher encoding of the
extraction-layer maps), direct (flattened normalized fibers), bow (codebook
histogram), fused (block-normalized fcv + fc).
"""

import csv
import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from .config import parse_pairs
from .errors import ConfigurationError, DataError, StageError
from .fisher import BagOfWordsEncoder, FisherVectorEncoder
from .fisher import encode_direct as _encode_direct
from .formats import read_model, read_tensor, write_model, write_tensor
from .fusion import fuse_batches
from .gmm import DiagonalGaussianMixture
from .network import AuxHead, LocallySupervisedConvNet, desk_layers
from .pca import PrincipalComponents
from .scenes import (
    GeneratedScenes,
    LabeledDataset,
    default_scene_spec,
    generate_dataset,
    ingest_images,
)
from .svm import LinearHingeSVM
from .tensors import maps_to_descriptors, occlude

FEATURE_SETS = ("fc", "fcv", "direct", "bow", "fused")


@dataclass
class PipelineData:
    train: LabeledDataset
    test: LabeledDataset
    train_boxes: list  # glyph rectangles; None when ingested from disk
    test_boxes: list
    pairs: list


@contextmanager
def _stage(name, timings):
    start = time.perf_counter()
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc
    timings[name] = time.perf_counter() - start


def build_dataset(cfg):
    """Generate the synthetic dataset, or ingest PPM manifests when data.dir is set."""
    if cfg["data.dir"]:
        root = cfg["data.dir"]
        train = ingest_images(root, os.path.join(root, cfg["data.train_manifest"]))
        test = ingest_images(root, os.path.join(root, cfg["data.test_manifest"]))
        num_classes = max(train.num_classes, test.num_classes)
        train.num_classes = test.num_classes = num_classes
        return PipelineData(train, test, None, None, parse_pairs(cfg["exp.pairs"]))
    spec = default_scene_spec(
        num_classes=cfg["data.classes"],
        image_size=cfg["data.size"],
        noise=cfg["data.noise"],
        glyphs_min=cfg["data.glyphs_min"],
        glyphs_max=cfg["data.glyphs_max"],
        layout_jitter=cfg["data.layout_jitter"],
        seed=cfg["data.seed"],
    )
    gen = generate_dataset(spec, cfg["data.per_class"])
    pairs = parse_pairs(cfg["exp.pairs"]) or list(spec.pairs)
    return PipelineData(gen.train, gen.test, gen.train_boxes, gen.test_boxes, pairs)


def make_network(cfg, num_classes):
    heads = []
    if cfg["net.aux_attach"] >= 0:
        heads = [AuxHead(cfg["net.aux_attach"], cfg["net.aux_channels"], cfg["net.aux_weight"])]
    return LocallySupervisedConvNet(
        layers=desk_layers(),
        heads=heads,
        num_classes=num_classes,
        learning_rate=cfg["net.lr"],
        lr_decay=cfg["net.lr_decay"],
        momentum=cfg["net.momentum"],
        weight_decay=cfg["net.weight_decay"],
        batch_size=cfg["net.batch"],
        epochs=cfg["net.epochs"],
        input_shift=cfg["net.input_shift"],
        input_scale=cfg["net.input_scale"],
        bias_init=cfg["net.bias_init"],
        random_state=cfg["net.seed"],
    )


def _batched(fn, images, chunk=128):
    parts = [fn(images[i : i + chunk]) for i in range(0, images.shape[0], chunk)]
    return np.concatenate(parts, axis=0)


def extract_layer_maps(cfg, net, images):
    return _batched(lambda x: net.conv_maps(x, cfg["net.extract_layer"]), images)


def sample_descriptor_pool(cfg, net, train):
    """Normalized fibers from the training images, capped by seeded sampling."""
    maps = extract_layer_maps(cfg, net, train.images)
    n, h, w, d = maps.shape
    pool = maps.reshape(n * h * w, d)
    cap = int(cfg["gmm.sample_cap"])
    if pool.shape[0] > cap:
        rng = np.random.default_rng(cfg["gmm.sample_seed"])
        pool = pool[rng.choice(pool.shape[0], size=cap, replace=False)]
    from .tensors import max_abs_normalize

    return max_abs_normalize(pool)


def fit_reduction(cfg, pool):
    pca = PrincipalComponents(n_components=cfg["pca.dims"]).fit(pool)
    return pca


def fit_dictionary(cfg, pca, pool):
    projected = pca.transform(pool)
    gmm = DiagonalGaussianMixture(
        n_components=cfg["gmm.k"],
        max_iter=cfg["gmm.iters"],
        tol=cfg["gmm.tol"],
        random_state=cfg["gmm.seed"],
        weight_floor=cfg["gmm.weight_floor"],
        variance_floor_frac=cfg["gmm.variance_floor_frac"],
    ).fit(projected)

    bow_pool = projected
    cap = int(cfg["bow.sample_cap"])
    if bow_pool.shape[0] > cap:
        rng = np.random.default_rng(cfg["bow.seed"])
        bow_pool = bow_pool[rng.choice(bow_pool.shape[0], size=cap, replace=False)]
    bow = BagOfWordsEncoder(
        pca,
        n_words=cfg["bow.words"],
        n_iter=cfg["bow.iters"],
        random_state=cfg["bow.seed"],
    ).fit(bow_pool)
    return gmm, bow


def _map_images(fn, items, threads):
    if threads <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _unit_rows(matrix):
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    return matrix / np.where(norms > 0.0, norms, 1.0)


def compute_features(cfg, net, pca, gmm, bow, images, sets=FEATURE_SETS):
    """Feature matrices for the requested sets, keyed by set name.

    Every set reaches the classifier at unit scale: the encoders l2-normalize
    by construction and the raw fc activations are l2-normalized here.
    """
    threads = int(cfg["run.threads"])
    want = set(sets)
    unknown = want - set(FEATURE_SETS)
    if unknown:
        raise ConfigurationError(f"unknown feature sets {sorted(unknown)}")
    feats = {}
    if want & {"fcv", "direct", "bow", "fused"}:
        maps = extract_layer_maps(cfg, net, images)
    if "fc" in want or "fused" in want:
        feats["fc"] = _unit_rows(_batched(net.fc_features, images))
    if "fcv" in want or "fused" in want:
        encoder = FisherVectorEncoder(
            pca, gmm, alpha=cfg["fv.alpha"], posterior_floor=cfg["fv.posterior_floor"]
        ).fit()
        feats["fcv"] = np.stack(_map_images(encoder.encode, list(maps), threads))
    if "direct" in want:
        feats["direct"] = np.stack(_map_images(_encode_direct, list(maps), threads))
    if "bow" in want:
        feats["bow"] = np.stack(_map_images(bow.encode, list(maps), threads))
    if "fused" in want:
        feats["fused"] = fuse_batches(feats["fcv"], feats["fc"])
    return {name: feats[name] for name in sets if name in feats}


class _ConstantPredictor:
    """Stand-in classifier for the degenerate single-class dataset."""

    def __init__(self, label):
        self.label = label

    def predict(self, X):
        return np.full(np.asarray(X).shape[0], self.label, dtype=np.int64)


def fit_classifier(cfg, features, labels):
    if np.unique(labels).shape[0] < 2:
        return _ConstantPredictor(int(labels[0]))
    return LinearHingeSVM(
        C=cfg["svm.c"],
        epochs=cfg["svm.epochs"],
        learning_rate=cfg["svm.lr"],
        random_state=cfg["svm.seed"],
    ).fit(features, labels)


def evaluate(model, features, labels, num_classes):
    pred = model.predict(features)
    overall = float(np.mean(pred == labels))
    per_class = []
    for c in range(num_classes):
        mask = labels == c
        per_class.append(float(np.mean(pred[mask] == labels[mask])) if mask.any() else float("nan"))
    return overall, per_class


def run_pipeline(cfg, keep_objects=False):
    """Execute every stage; returns the run record (and live objects if asked)."""
    out = cfg["run.out"]
    os.makedirs(out, exist_ok=True)
    timings = {}
    artifact_paths = []

    with _stage("dataset", timings):
        data = build_dataset(cfg)

    with _stage("train-net", timings):
        net = make_network(cfg, data.train.num_classes)
        net.fit(data.train.images, data.train.labels)
        net_path = os.path.join(out, "net.fvm")
        write_model(net_path, net)
        log_path = os.path.join(out, "train_log.csv")
        write_train_log(log_path, net.training_log_)
        artifact_paths += [net_path, log_path]

    with _stage("fit-pca", timings):
        pool = sample_descriptor_pool(cfg, net, data.train)
        pca = fit_reduction(cfg, pool)
        pca_path = os.path.join(out, "pca.fvm")
        write_model(pca_path, pca)
        artifact_paths.append(pca_path)

    with _stage("fit-gmm", timings):
        gmm, bow = fit_dictionary(cfg, pca, pool)
        gmm_path = os.path.join(out, "gmm.fvm")
        write_model(gmm_path, gmm)
        bow_path = os.path.join(out, "codebook.fvt")
        write_tensor(bow_path, bow.codebook_[:, None, :])
        artifact_paths += [gmm_path, bow_path]

    with _stage("encode", timings):
        train_feats = compute_features(cfg, net, pca, gmm, bow, data.train.images)
        test_feats = compute_features(cfg, net, pca, gmm, bow, data.test.images)
        saved_sets = [s.strip() for s in cfg["run.save_encodings"].split(",") if s.strip()]
        if saved_sets == ["all"]:
            saved_sets = list(FEATURE_SETS)
        if saved_sets != ["none"]:
            bad = [s for s in saved_sets if s not in FEATURE_SETS]
            if bad:
                raise ConfigurationError(f"run.save_encodings names unknown sets {bad}")
            for name in saved_sets:
                for split, feats, ds in (
                    ("train", train_feats, data.train),
                    ("test", test_feats, data.test),
                ):
                    artifact_paths += save_encoding_dir(
                        os.path.join(out, "encodings", f"{split}_{name}"),
                        feats[name],
                        ds.labels,
                    )

    with _stage("train-svm", timings):
        accuracy, per_class, classifiers = {}, {}, {}
        for name in FEATURE_SETS:
            model = fit_classifier(cfg, train_feats[name], data.train.labels)
            acc, by_class = evaluate(
                model, test_feats[name], data.test.labels, data.test.num_classes
            )
            accuracy[name] = acc
            per_class[name] = by_class
            classifiers[name] = model
            if isinstance(model, LinearHingeSVM):
                svm_path = os.path.join(out, f"svm_{name}.fvm")
                write_model(svm_path, model)
                artifact_paths.append(svm_path)

    results_path = os.path.join(out, "results.csv")
    write_results_csv(results_path, accuracy, per_class)
    artifact_paths.append(results_path)

    record = finish_run(
        cfg,
        command="run-all",
        timings=timings,
        artifact_paths=artifact_paths,
        metrics={"accuracy": accuracy, "per_class_accuracy": per_class},
        extra={"n_train": len(data.train), "n_test": len(data.test)},
    )
    if keep_objects:
        record["objects"] = {
            "net": net,
            "pca": pca,
            "gmm": gmm,
            "bow": bow,
            "data": data,
            "train_features": train_feats,
            "test_features": test_feats,
            "classifiers": classifiers,
        }
    return record


def load_artifacts(cfg, need=("net", "pca", "gmm")):
    """Reload saved stage models from the run directory."""
    out = cfg["run.out"]
    loaded = {}
    for name in need:
        path = os.path.join(out, f"{name}.fvm")
        if not os.path.exists(path):
            raise DataError(f"missing artifact {path}; run the earlier stages first")
        loaded[name] = read_model(path, expected=name)
    return loaded


def load_codebook(cfg, pca):
    path = os.path.join(cfg["run.out"], "codebook.fvt")
    if not os.path.exists(path):
        raise DataError(f"missing artifact {path}; run fit-gmm first")
    centers = read_tensor(path)[:, 0, :]
    bow = BagOfWordsEncoder(pca, n_words=centers.shape[0])
    bow.codebook_ = centers
    return bow


def save_encoding_dir(directory, features, labels):
    """One FVT1 vector file per image plus a filename<TAB>label manifest."""
    os.makedirs(directory, exist_ok=True)
    written = []
    entries = []
    for i in range(features.shape[0]):
        name = f"vec_{i:05d}.fvt"
        path = os.path.join(directory, name)
        write_tensor(path, features[i])
        entries.append((name, int(labels[i])))
        written.append(path)
    manifest = os.path.join(directory, "manifest.tsv")
    with open(manifest, "w", encoding="utf-8") as fh:
        for name, label in entries:
            fh.write(f"{name}\t{label}\n")
    written.append(manifest)
    return written


def load_encoding_dir(directory):
    manifest = os.path.join(directory, "manifest.tsv")
    vectors, labels = [], []
    with open(manifest, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            name, label = line.rstrip("\n").split("\t")
            vectors.append(read_tensor(os.path.join(directory, name)).ravel())
            labels.append(int(label))
    return np.stack(vectors), np.asarray(labels, dtype=np.int64)


# -- experiments ---------------------------------------------------------------


def occlusion_report(net, layer, image, rects, fill=None):
    """Per-rectangle change of the extracted maps when the rect is occluded.

    fill=None uses the mean value of the covered region. Returns one row per
    rectangle with the per-channel l2 difference summarized as mean and total.
    """
    base = net.conv_maps(image, layer)[0]
    rows = []
    for rect in rects:
        h0, w0, h1, w1 = rect
        region = image[h0:h1, w0:w1, :]
        if fill is None:
            value = float(region.mean()) if region.size else 0.0
        else:
            value = float(fill)
        changed = net.conv_maps(occlude(image, rect, value), layer)[0]
        delta = changed - base
        per_map = np.sqrt((delta**2).sum(axis=(0, 1)))
        rows.append(
            {
                "h0": h0,
                "w0": w0,
                "h1": h1,
                "w1": w1,
                "fill": value,
                "mean_map_l2": float(per_map.mean()),
                "total_l2": float(np.linalg.norm(delta)),
            }
        )
    return rows


def _sample_clear_rect(size, boxes, shape, rng, tries=200):
    gh, gw = shape
    for _ in range(tries):
        h0 = int(rng.integers(0, size[0] - gh + 1))
        w0 = int(rng.integers(0, size[1] - gw + 1))
        rect = (h0, w0, h0 + gh, w0 + gw)
        if all(
            rect[2] <= b[0] or rect[0] >= b[2] or rect[3] <= b[1] or rect[1] >= b[3]
            for b in boxes
        ):
            return rect
    raise DataError("could not place a glyph-free background rectangle")


def experiment_occlusion(cfg, net=None, data=None):
    """Glyph-vs-background occlusion sensitivity of the extraction-layer maps."""
    if net is None:
        net = load_artifacts(cfg, ("net",))["net"]
    if data is None:
        data = build_dataset(cfg)
    if data.test_boxes is None:
        raise DataError("occlusion experiment needs a generated dataset with glyph boxes")
    layer = cfg["net.extract_layer"]
    rng = np.random.default_rng(cfg["exp.occlude.seed"])
    budget = min(int(cfg["exp.occlude.images"]), len(data.test))
    rows = []
    size = data.test.images.shape[1:3]
    for i in range(budget):
        boxes = data.test_boxes[i]
        if not boxes:
            continue
        glyph_rect = boxes[int(rng.integers(len(boxes)))]
        shape = (glyph_rect[2] - glyph_rect[0], glyph_rect[3] - glyph_rect[1])
        bg_rect = _sample_clear_rect(size, boxes, shape, rng)
        image = data.test.images[i]
        for kind, rect in (("glyph", glyph_rect), ("background", bg_rect)):
            row = occlusion_report(net, layer, image, [rect])[0]
            rows.append({"image": i, "kind": kind, **row})
    return rows


def experiment_pairs(cfg, objects=None):
    """Binary fc / conv-encoding / both classification errors per ambiguous pair."""
    if objects is None:
        loaded = load_artifacts(cfg)
        data = build_dataset(cfg)
        train_feats = compute_features(
            cfg, loaded["net"], loaded["pca"], loaded["gmm"], None,
            data.train.images, sets=("fc", "fcv"),
        )
        test_feats = compute_features(
            cfg, loaded["net"], loaded["pca"], loaded["gmm"], None,
            data.test.images, sets=("fc", "fcv"),
        )
    else:
        data = objects["data"]
        train_feats = objects["train_features"]
        test_feats = objects["test_features"]
    if not data.pairs:
        raise ConfigurationError("no ambiguous pairs configured for this dataset")

    rows = []
    for a, b in data.pairs:
        tr = np.isin(data.train.labels, (a, b))
        te = np.isin(data.test.labels, (a, b))
        columns = {
            "fc": (train_feats["fc"], test_feats["fc"]),
            "conv": (train_feats["fcv"], test_feats["fcv"]),
            "both": (
                fuse_batches(train_feats["fcv"][tr], train_feats["fc"][tr]),
                fuse_batches(test_feats["fcv"][te], test_feats["fc"][te]),
            ),
        }
        row = {"class_a": a, "class_b": b}
        for name, (ftr, fte) in columns.items():
            ftr = ftr if name == "both" else ftr[tr]
            fte = fte if name == "both" else fte[te]
            model = fit_classifier(cfg, ftr, data.train.labels[tr])
            acc = float(np.mean(model.predict(fte) == data.test.labels[te]))
            row[f"err_{name}"] = 100.0 * (1.0 - acc)
        rows.append(row)
    return rows


def experiment_activation_stats(cfg, net=None, data=None):
    """Class mix of the images with the strongest mean fc / conv activations."""
    if net is None:
        net = load_artifacts(cfg, ("net",))["net"]
    if data is None:
        data = build_dataset(cfg)
    images = np.concatenate([data.train.images, data.test.images])
    labels = np.concatenate([data.train.labels, data.test.labels])
    layer = cfg["net.extract_layer"]

    fc_strength = _batched(net.fc_features, images).mean(axis=1)
    conv_strength = _batched(lambda x: net.conv_maps(x, layer), images).mean(axis=(1, 2, 3))
    q = max(1, int(round(cfg["exp.stats.top_frac"] * images.shape[0])))
    num_classes = data.train.num_classes

    hists = {}
    for name, strength in (("fc", fc_strength), ("conv", conv_strength)):
        # stable sort: equal activations keep ascending image-index order
        top = np.argsort(-strength, kind="stable")[:q]
        hists[name] = np.bincount(labels[top], minlength=num_classes)

    p = hists["fc"] / q
    r = hists["conv"] / q
    return {
        "q": q,
        "fc_hist": hists["fc"].tolist(),
        "conv_hist": hists["conv"].tolist(),
        "tv_distance": float(0.5 * np.abs(p - r).sum()),
    }


# -- emitted files --------------------------------------------------------------


def write_train_log(path, log_rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        n_aux = len(log_rows[0][2]) if log_rows else 0
        writer.writerow(
            ["iteration", "main_loss"]
            + [f"aux_loss_{i}" for i in range(n_aux)]
            + ["learning_rate"]
        )
        for step, main, aux, lr in log_rows:
            writer.writerow([step, repr(main)] + [repr(a) for a in aux] + [repr(lr)])


def write_results_csv(path, accuracy, per_class):
    """Accuracies as percentages with 2 decimals; one row per class plus overall."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature_set", "class", "accuracy_pct"])
        for name in accuracy:
            writer.writerow([name, "overall", f"{100.0 * accuracy[name]:.2f}"])
            for c, value in enumerate(per_class[name]):
                writer.writerow([name, c, f"{100.0 * value:.2f}"])


def read_results_csv(path):
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append(
                {
                    "feature_set": row["feature_set"],
                    "class": row["class"],
                    "accuracy_pct": float(row["accuracy_pct"]),
                }
            )
    return rows


def write_table_csv(path, rows, columns):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow(
                [f"{row[c]:.2f}" if isinstance(row[c], float) else row[c] for c in columns]
            )


def read_table_csv(path):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def sha256_file(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def finish_run(cfg, command, timings, artifact_paths, metrics, extra=None):
    """Assemble the run record and write run.json into the run directory."""
    out = cfg["run.out"]
    record = {
        "command": command,
        "config": dict(cfg),
        "seeds": {k: v for k, v in cfg.items() if k.endswith("seed")},
        "stage_seconds": timings,
        "artifacts": {
            os.path.relpath(p, out): sha256_file(p) for p in sorted(set(artifact_paths))
        },
        "metrics": metrics,
    }
    if extra:
        record.update(extra)
    path = os.path.join(out, "run.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
    return record


def read_run_json(out_dir):
    with open(os.path.join(out_dir, "run.json"), "r", encoding="utf-8") as fh:
        return json.load(fh)
