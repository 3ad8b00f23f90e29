"""Synthetic micro-scene dataset: global layouts plus small iconic glyphs.

Each class owns a global layout template (background gradient direction and a
coarse region overlay) and a small set of 5x7-pixel colored glyph shapes
stamped at random positions. Ambiguous class pairs share a layout template
exactly and differ only in their glyph sets, so they can only be told apart
by local evidence. Generation is driven by a single seeded generator in a
fixed order, making datasets bit-reproducible.

Also home to the portable image interchange: binary PPM (P6, 8-bit) plus a
tab-separated "filename<TAB>label" manifest.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DataError

GLYPH_H, GLYPH_W = 7, 5

_GLYPH_ART = {
    "box": ["#####", "#...#", "#...#", "#...#", "#...#", "#...#", "#####"],
    "solid": ["#####", "#####", "#####", "#####", "#####", "#####", "#####"],
    "cross": ["..#..", "..#..", "..#..", "#####", "..#..", "..#..", "..#.."],
    "ex": ["#...#", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "#...#"],
    "tee": ["#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."],
    "ell": ["#....", "#....", "#....", "#....", "#....", "#....", "#####"],
    "bars": ["#####", ".....", "#####", ".....", "#####", ".....", "#####"],
    "pipes": ["#.#.#", "#.#.#", "#.#.#", "#.#.#", "#.#.#", "#.#.#", "#.#.#"],
    "vee": ["#...#", "#...#", "#...#", "#...#", ".#.#.", ".#.#.", "..#.."],
    "zig": ["#####", "....#", "...#.", "..#..", ".#...", "#....", "#####"],
    "zag": ["#####", "#....", ".#...", "..#..", "...#.", "....#", "#####"],
    "hat": ["..#..", ".#.#.", "#...#", "#...#", "#...#", "#...#", "#...#"],
    "fork": ["#...#", "#...#", "#####", "..#..", "..#..", "..#..", "..#.."],
    "dots": ["##...", "##...", ".....", "..##.", "..##.", ".....", "...##"],
    "spots": ["...##", "...##", ".....", "##...", "##...", ".....", "##..."],
}

GLYPH_MASKS = {
    name: np.array([[ch == "#" for ch in row] for row in rows])
    for name, rows in _GLYPH_ART.items()
}

_PALETTE = {
    "red": (0.90, 0.10, 0.10),
    "green": (0.10, 0.80, 0.15),
    "blue": (0.15, 0.20, 0.95),
    "yellow": (0.95, 0.90, 0.10),
    "cyan": (0.10, 0.85, 0.90),
    "magenta": (0.90, 0.15, 0.85),
    "orange": (0.95, 0.55, 0.05),
    "azure": (0.15, 0.55, 1.00),
    "violet": (0.93, 0.18, 0.98),
    "white": (0.98, 0.98, 0.98),
}


@dataclass(frozen=True)
class LayoutTemplate:
    """Background recipe: gradient between two colors plus a coarse region."""

    angle: float
    color_a: tuple
    color_b: tuple
    pattern: str  # hband | vband | center | corner | plain
    region_color: tuple
    region_pos: float = 0.45
    region_extent: float = 0.3


_TEMPLATES = [
    LayoutTemplate(0.0, (0.15, 0.25, 0.45), (0.75, 0.65, 0.50), "hband", (0.50, 0.20, 0.15)),
    LayoutTemplate(1.57, (0.70, 0.50, 0.25), (0.15, 0.20, 0.40), "vband", (0.15, 0.50, 0.20)),
    LayoutTemplate(0.78, (0.40, 0.15, 0.45), (0.70, 0.75, 0.45), "center", (0.20, 0.30, 0.60)),
    LayoutTemplate(2.35, (0.20, 0.45, 0.20), (0.60, 0.55, 0.80), "corner", (0.60, 0.55, 0.15)),
    LayoutTemplate(3.14, (0.75, 0.65, 0.40), (0.15, 0.30, 0.50), "plain", (0.0, 0.0, 0.0)),
    LayoutTemplate(4.71, (0.10, 0.40, 0.25), (0.60, 0.50, 0.75), "hband", (0.55, 0.45, 0.10), 0.65),
    LayoutTemplate(5.50, (0.50, 0.25, 0.65), (0.25, 0.65, 0.35), "vband", (0.10, 0.25, 0.55), 0.6),
]


@dataclass
class MicroSceneSpec:
    """Full recipe for a generated dataset.

    class_templates[c] picks the layout for class c; class_glyphs[c] is a list
    of (shape_name, color_name) iconic objects; classes listed in `pairs`
    must share a template exactly.
    """

    num_classes: int
    image_size: int
    class_templates: list
    class_glyphs: list
    pairs: list
    noise: float = 0.06
    glyphs_min: int = 2
    glyphs_max: int = 4
    layout_jitter: int = 2
    seed: int = 7

    def validate(self):
        if self.num_classes < 1 or self.image_size < max(GLYPH_H, GLYPH_W):
            raise ConfigurationError("scene spec needs >= 1 class and images that fit a glyph")
        if len(self.class_templates) != self.num_classes or len(self.class_glyphs) != self.num_classes:
            raise ConfigurationError("per-class template/glyph lists must match num_classes")
        for a, b in self.pairs:
            if not (0 <= a < self.num_classes and 0 <= b < self.num_classes):
                raise ConfigurationError(f"pair ({a}, {b}) references an unknown class")
            if self.class_templates[a] != self.class_templates[b]:
                raise ConfigurationError(f"paired classes {a},{b} must share a layout template")
        for glyphs in self.class_glyphs:
            for shape, color in glyphs:
                if shape not in GLYPH_MASKS or color not in _PALETTE:
                    raise ConfigurationError(f"unknown glyph {shape!r}/{color!r}")
        if not 0 <= self.glyphs_min <= self.glyphs_max:
            raise ConfigurationError("glyph count range is invalid")
        return self


# Paired classes (0,1), (2,3), (4,5) share shapes, colors, and counts; only
# the shape-color binding differs. Global statistics (mean image, color or
# shape marginals) then match between the two, so a pair can only be told
# apart by local conjunctions -- exactly what fiber pooling preserves and a
# small global bottleneck loses.
_DEFAULT_GLYPHS = [
    [("box", "red"), ("hat", "cyan")],
    [("box", "cyan"), ("hat", "red")],
    [("cross", "blue"), ("vee", "yellow")],
    [("cross", "yellow"), ("vee", "blue")],
    [("zig", "white"), ("dots", "magenta")],
    [("zig", "magenta"), ("dots", "white")],
    [("solid", "green"), ("pipes", "red")],
    [("bars", "blue"), ("ex", "orange")],
    [("tee", "orange"), ("fork", "azure")],
    [("zag", "yellow"), ("spots", "violet")],
]


def default_scene_spec(
    num_classes=10,
    image_size=32,
    noise=0.06,
    glyphs_min=2,
    glyphs_max=4,
    layout_jitter=2,
    seed=7,
):
    """Standard recipe: 3 ambiguous pairs (classes 0-5) plus singleton classes."""
    if num_classes > 10:
        raise ConfigurationError("default recipe defines at most 10 classes")
    pairs = [(a, a + 1) for a in (0, 2, 4) if a + 1 < num_classes]
    templates = []
    for c in range(num_classes):
        templates.append(c // 2 if c < 6 else c - 3)
    spec = MicroSceneSpec(
        num_classes=num_classes,
        image_size=image_size,
        class_templates=templates,
        class_glyphs=[list(_DEFAULT_GLYPHS[c]) for c in range(num_classes)],
        pairs=pairs,
        noise=noise,
        glyphs_min=glyphs_min,
        glyphs_max=glyphs_max,
        layout_jitter=layout_jitter,
        seed=seed,
    )
    return spec.validate()


@dataclass
class LabeledDataset:
    images: np.ndarray  # (N, H, W, D) float64 in [0, 1]
    labels: np.ndarray  # (N,) int64
    num_classes: int

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or self.images.shape[0] != self.labels.shape[0]:
            raise DataError("dataset images and labels disagree")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataError("dataset labels out of range")

    def __len__(self):
        return self.images.shape[0]

    def subset(self, mask):
        return LabeledDataset(self.images[mask], self.labels[mask], self.num_classes)


@dataclass
class GeneratedScenes:
    train: LabeledDataset
    test: LabeledDataset
    train_boxes: list  # per image: list of (h0, w0, h1, w1) glyph rectangles
    test_boxes: list
    spec: MicroSceneSpec = field(repr=False)


def _render_background(template, size, jitter, rng):
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    direction = np.cos(template.angle) * xx + np.sin(template.angle) * yy
    span = direction.max() - direction.min()
    ramp = (direction - direction.min()) / (span if span > 0 else 1.0)
    a = np.asarray(template.color_a)
    b = np.asarray(template.color_b)
    img = a[None, None, :] + ramp[:, :, None] * (b - a)[None, None, :]

    shift = int(rng.integers(-jitter, jitter + 1)) if jitter > 0 else 0
    pos = int(template.region_pos * size) + shift
    extent = max(1, int(template.region_extent * size))
    color = np.asarray(template.region_color)
    if template.pattern == "hband":
        lo, hi = np.clip([pos, pos + extent], 0, size)
        img[lo:hi, :, :] = 0.5 * img[lo:hi, :, :] + 0.5 * color
    elif template.pattern == "vband":
        lo, hi = np.clip([pos, pos + extent], 0, size)
        img[:, lo:hi, :] = 0.5 * img[:, lo:hi, :] + 0.5 * color
    elif template.pattern == "center":
        lo, hi = np.clip([pos - extent // 2, pos + extent], 0, size)
        img[lo:hi, lo:hi, :] = 0.5 * img[lo:hi, lo:hi, :] + 0.5 * color
    elif template.pattern == "corner":
        hi = np.clip(pos + extent, 0, size)
        img[:hi, :hi, :] = 0.5 * img[:hi, :hi, :] + 0.5 * color
    # "plain": gradient only
    return img


def _render_image(spec, cls, rng):
    size = spec.image_size
    template = _TEMPLATES[spec.class_templates[cls]]
    img = _render_background(template, size, spec.layout_jitter, rng)
    glyphs = spec.class_glyphs[cls]
    count = int(rng.integers(spec.glyphs_min, spec.glyphs_max + 1))
    boxes = []
    for _ in range(count):
        shape, color = glyphs[int(rng.integers(len(glyphs)))]
        h0 = int(rng.integers(0, size - GLYPH_H + 1))
        w0 = int(rng.integers(0, size - GLYPH_W + 1))
        mask = GLYPH_MASKS[shape]
        img[h0 : h0 + GLYPH_H, w0 : w0 + GLYPH_W][mask] = _PALETTE[color]
        boxes.append((h0, w0, h0 + GLYPH_H, w0 + GLYPH_W))
    if spec.noise > 0:
        img = img + rng.normal(0.0, spec.noise, img.shape)
    return np.clip(img, 0.0, 1.0), boxes


def generate_dataset(spec, n_per_class, train_frac=0.8):
    """Render the dataset and split it 80/20 stratified (per-class, in order)."""
    spec.validate()
    if n_per_class < 2:
        raise ConfigurationError("need at least 2 images per class to split")
    rng = np.random.default_rng(spec.seed)
    train_imgs, train_labels, train_boxes = [], [], []
    test_imgs, test_labels, test_boxes = [], [], []
    n_train = int(round(train_frac * n_per_class))
    for cls in range(spec.num_classes):
        for i in range(n_per_class):
            img, boxes = _render_image(spec, cls, rng)
            if i < n_train:
                train_imgs.append(img)
                train_labels.append(cls)
                train_boxes.append(boxes)
            else:
                test_imgs.append(img)
                test_labels.append(cls)
                test_boxes.append(boxes)
    return GeneratedScenes(
        train=LabeledDataset(np.stack(train_imgs), train_labels, spec.num_classes),
        test=LabeledDataset(np.stack(test_imgs), test_labels, spec.num_classes),
        train_boxes=train_boxes,
        test_boxes=test_boxes,
        spec=spec,
    )


# -- PPM + manifest interchange ------------------------------------------------


def write_ppm(path, image):
    """Write a float [0,1] (H, W, 3) image as binary 8-bit P6."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DataError(f"PPM needs an (H, W, 3) image, got {arr.shape}")
    h, w, _ = arr.shape
    data = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes(order="C"))


def _read_ppm_token(fh):
    token = b""
    while True:
        ch = fh.read(1)
        if not ch:
            raise DataError("truncated PPM header")
        if ch == b"#":
            while ch not in (b"\n", b""):
                ch = fh.read(1)
            continue
        if ch.isspace():
            if token:
                return token
            continue
        token += ch


def read_ppm(path):
    """Read a binary 8-bit P6 file into a float64 (H, W, 3) array scaled to [0,1]."""
    with open(path, "rb") as fh:
        if fh.read(2) != b"P6":
            raise DataError(f"{path}: not a binary P6 PPM file")
        w = int(_read_ppm_token(fh))
        h = int(_read_ppm_token(fh))
        maxval = int(_read_ppm_token(fh))
        if maxval != 255:
            raise DataError(f"{path}: only 8-bit PPM supported, maxval={maxval}")
        payload = fh.read(h * w * 3)
        if len(payload) != h * w * 3:
            raise DataError(f"{path}: truncated PPM payload")
    return np.frombuffer(payload, dtype=np.uint8).astype(np.float64).reshape(h, w, 3) / 255.0


def write_manifest(path, entries):
    """entries: iterable of (relative filename, integer label)."""
    with open(path, "w", encoding="utf-8") as fh:
        for name, label in entries:
            fh.write(f"{name}\t{int(label)}\n")


def ingest_images(directory, manifest_path):
    """Load a PPM dataset named by a tab-separated manifest.

    Labels must be non-negative integers; every image must share dimensions.
    """
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    except OSError as exc:
        raise DataError(f"cannot read manifest {manifest_path}: {exc}") from exc
    if not lines:
        raise DataError(f"manifest {manifest_path} is empty")

    images, labels = [], []
    for line in lines:
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataError(f"manifest line {line!r} is not 'filename<TAB>label'")
        name, label_text = parts
        try:
            label = int(label_text)
        except ValueError as exc:
            raise DataError(f"unknown label {label_text!r} for file {name}") from exc
        if label < 0:
            raise DataError(f"unknown label {label} for file {name}")
        full = os.path.join(directory, name)
        if not os.path.exists(full):
            raise DataError(f"manifest references missing file {name}")
        img = read_ppm(full)
        if images and img.shape != images[0].shape:
            raise DataError(
                f"{name}: dimensions {img.shape} differ from {images[0].shape}"
            )
        images.append(img)
        labels.append(label)
    return LabeledDataset(np.stack(images), labels, int(max(labels)) + 1)


def save_generated(out_dir, generated):
    """Write PPM images, manifests, glyph boxes, and the recipe under out_dir."""
    img_dir = os.path.join(out_dir, "images")
    os.makedirs(img_dir, exist_ok=True)
    written = []
    for split, ds, boxes in (
        ("train", generated.train, generated.train_boxes),
        ("test", generated.test, generated.test_boxes),
    ):
        entries = []
        for i in range(len(ds)):
            name = f"images/{split}_{i:05d}.ppm"
            write_ppm(os.path.join(out_dir, name), ds.images[i])
            entries.append((name, int(ds.labels[i])))
        manifest = os.path.join(out_dir, f"{split}.tsv")
        write_manifest(manifest, entries)
        written.append(manifest)

    boxes_path = os.path.join(out_dir, "glyph_boxes.csv")
    with open(boxes_path, "w", encoding="utf-8") as fh:
        fh.write("split,image,h0,w0,h1,w1\n")
        for split, box_list in (("train", generated.train_boxes), ("test", generated.test_boxes)):
            for i, boxes in enumerate(box_list):
                for h0, w0, h1, w1 in boxes:
                    fh.write(f"{split},{i},{h0},{w0},{h1},{w1}\n")
    written.append(boxes_path)

    spec = generated.spec
    spec_path = os.path.join(out_dir, "dataset.json")
    with open(spec_path, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "num_classes": spec.num_classes,
                "image_size": spec.image_size,
                "pairs": [list(p) for p in spec.pairs],
                "noise": spec.noise,
                "glyphs_min": spec.glyphs_min,
                "glyphs_max": spec.glyphs_max,
                "layout_jitter": spec.layout_jitter,
                "seed": spec.seed,
            },
            fh,
            indent=2,
        )
    written.append(spec_path)
    return written
