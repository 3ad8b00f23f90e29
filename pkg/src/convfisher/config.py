"""Run configuration: namespaced key=value text files over fixed defaults.

Lines look like `gmm.k=16`; `#` starts a comment. Unknown keys are rejected
so typos fail loudly, and values are coerced to the type of the default.
Every stochastic stage has its own seed key, and the full resolved mapping
is recorded in run.json.
"""

from .errors import ConfigurationError

DEFAULTS = {
    # synthetic dataset (or ingestion when data.dir is set)
    "data.classes": 10,
    "data.per_class": 200,
    "data.size": 32,
    "data.noise": 0.06,
    "data.glyphs_min": 2,
    "data.glyphs_max": 4,
    "data.layout_jitter": 2,
    "data.seed": 7,
    "data.dir": "",
    "data.train_manifest": "train.tsv",
    "data.test_manifest": "test.tsv",
    # network training; aux_attach -1 drops the auxiliary head entirely
    "net.epochs": 10,
    "net.batch": 32,
    "net.lr": 0.05,
    "net.lr_decay": 0.7,
    "net.input_shift": -0.5,
    "net.input_scale": 2.0,
    "net.bias_init": 0.02,
    "net.momentum": 0.9,
    "net.weight_decay": 1e-4,
    "net.seed": 11,
    "net.aux_weight": 0.3,
    "net.aux_channels": 16,
    "net.aux_attach": 2,
    "net.extract_layer": 2,
    # descriptor reduction and dictionary (desk-scale presets)
    "pca.dims": 16,
    "gmm.k": 16,
    "gmm.iters": 50,
    "gmm.tol": 1e-4,
    "gmm.seed": 13,
    "gmm.weight_floor": 1e-6,
    "gmm.variance_floor_frac": 1e-4,
    "gmm.sample_cap": 200000,
    "gmm.sample_seed": 29,
    # encoders
    "fv.alpha": 0.5,
    "fv.posterior_floor": 0.0,
    "bow.words": 64,
    "bow.iters": 15,
    "bow.sample_cap": 50000,
    "bow.seed": 17,
    # classifier
    "svm.c": 1.0,
    "svm.epochs": 30,
    "svm.lr": 0.5,
    "svm.seed": 19,
    # orchestration
    "run.out": "runs/default",
    "run.threads": 1,
    "run.save_encodings": "fcv,fc",
    "encode.sets": "fcv,fc",
    # experiments
    "exp.pairs": "",
    "exp.occlude.images": 20,
    "exp.occlude.seed": 23,
    "exp.stats.top_frac": 0.1,
}


def default_config():
    return dict(DEFAULTS)


def _coerce(key, raw):
    default = DEFAULTS[key]
    text = raw.strip()
    try:
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigurationError(f"config key {key}: cannot parse {text!r}") from exc


def apply_override(cfg, assignment):
    """Apply one 'key=value' assignment string in place."""
    if "=" not in assignment:
        raise ConfigurationError(f"override {assignment!r} is not key=value")
    key, raw = assignment.split("=", 1)
    key = key.strip()
    if key not in DEFAULTS:
        raise ConfigurationError(f"unknown config key {key!r}")
    cfg[key] = _coerce(key, raw)
    return cfg


def load_config(path=None, overrides=()):
    """Resolve defaults, then the optional file, then explicit overrides."""
    cfg = default_config()
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                lines = fh.readlines()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        for lineno, line in enumerate(lines, start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            if "=" not in body:
                raise ConfigurationError(f"{path}:{lineno}: expected key=value, got {body!r}")
            apply_override(cfg, body)
    for assignment in overrides:
        apply_override(cfg, assignment)
    return cfg


def parse_pairs(text):
    """Parse an explicit ambiguous-pair list like '0:1,2:3'."""
    pairs = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        try:
            a, b = chunk.split(":")
            pairs.append((int(a), int(b)))
        except ValueError as exc:
            raise ConfigurationError(f"bad pair spec {chunk!r}; want 'a:b'") from exc
    return pairs
