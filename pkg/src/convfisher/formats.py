"""Binary artifact formats. All integers and floats are little-endian.

Tensor format "FVT1" (feature maps, encoded vectors):
    magic  4 bytes  b"FVT1"
    H, W, D  3 x u32
    data   H*W*D x f32, row-major (h, w, d)
Vectors are stored as H=1, W=1, D=len. Loading returns float64 (the internal
arithmetic precision); a save/load round trip is idempotent because the f32
conversion is.

Model container "FVM1":
    magic  4 bytes  b"FVM1"
    version  u32 (currently 1)
    record_count  u32
    records: tag (4 bytes), payload_length (u64), payload
Record payloads (f64 keeps reloaded models bit-identical to the fitted ones):
    b"pca "  u32 D, u32 M, u8 whitened (0: plain projection),
             f64 mean[D], f64 basis[M*D] row-major, f64 variance[M]
    b"gmm "  u32 K, u32 M, u64 seed, f64 weight_floor, f64 variance_floor,
             f64 weights[K], f64 means[K*M], f64 stddevs[K*M]
    b"svm "  u32 num_classes, u32 dim, f64 C,
             i64 classes[num_classes], f64 weights[num_classes*dim],
             f64 biases[num_classes]
    b"net "  u32 spec_length, spec (UTF-8 JSON: input shape, layer list,
             head list, num_classes, seed), u64 tensor_count, then per tensor
             u32 ndim, u32 shape[ndim], f64 data (order of
             LocallySupervisedConvNet.parameters())
"""

import json
import struct

import numpy as np

from .errors import DataError
from .gmm import DiagonalGaussianMixture
from .network import AuxHead, Conv, Dense, LocallySupervisedConvNet, Pool
from .pca import PrincipalComponents
from .svm import LinearHingeSVM

TENSOR_MAGIC = b"FVT1"
MODEL_MAGIC = b"FVM1"
MODEL_VERSION = 1


# -- FVT1 tensors ------------------------------------------------------------


def write_tensor(path, array):
    """Write an (H, W, D) stack or a 1-D vector (stored as 1x1xD)."""
    arr = np.asarray(array, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, 1, -1)
    if arr.ndim != 3:
        raise DataError(f"FVT1 stores 3-D tensors, got shape {arr.shape}")
    h, w, d = arr.shape
    with open(path, "wb") as fh:
        fh.write(TENSOR_MAGIC)
        fh.write(struct.pack("<III", h, w, d))
        fh.write(arr.astype("<f4").tobytes(order="C"))


def read_tensor(path):
    """Read an FVT1 file into a float64 (H, W, D) array."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != TENSOR_MAGIC:
            raise DataError(f"{path}: bad FVT1 magic {magic!r}")
        header = fh.read(12)
        if len(header) != 12:
            raise DataError(f"{path}: truncated FVT1 header")
        h, w, d = struct.unpack("<III", header)
        payload = fh.read(4 * h * w * d)
        if len(payload) != 4 * h * w * d:
            raise DataError(f"{path}: truncated FVT1 payload")
        if fh.read(1):
            raise DataError(f"{path}: trailing bytes after FVT1 payload")
    data = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    return data.reshape(h, w, d)


# -- FVM1 container -----------------------------------------------------------


def _pack_pca(model):
    d, m = model.input_dim_, model.components_.shape[0]
    return b"".join(
        [
            struct.pack("<IIB", d, m, 0),
            model.mean_.astype("<f8").tobytes(),
            model.components_.astype("<f8").tobytes(order="C"),
            model.explained_variance_.astype("<f8").tobytes(),
        ]
    )


def _unpack_pca(payload):
    d, m, _whitened = struct.unpack_from("<IIB", payload, 0)
    off = 9
    mean, off = _take_f64(payload, off, d)
    basis, off = _take_f64(payload, off, m * d)
    var, off = _take_f64(payload, off, m)
    _expect_end(payload, off, "pca")
    model = PrincipalComponents(n_components=m)
    model.input_dim_ = d
    model.mean_ = mean
    model.components_ = basis.reshape(m, d)
    model.explained_variance_ = var
    return model


def _pack_gmm(model):
    k, m = model.means_.shape
    return b"".join(
        [
            struct.pack(
                "<IIQdd",
                k,
                m,
                int(model.random_state),
                float(model.weight_floor),
                float(model.variance_floor_),
            ),
            model.weights_.astype("<f8").tobytes(),
            model.means_.astype("<f8").tobytes(order="C"),
            model.stddevs_.astype("<f8").tobytes(order="C"),
        ]
    )


def _unpack_gmm(payload):
    k, m, seed, weight_floor, variance_floor = struct.unpack_from("<IIQdd", payload, 0)
    off = struct.calcsize("<IIQdd")
    weights, off = _take_f64(payload, off, k)
    means, off = _take_f64(payload, off, k * m)
    stddevs, off = _take_f64(payload, off, k * m)
    _expect_end(payload, off, "gmm")
    model = DiagonalGaussianMixture(
        n_components=k, random_state=seed, weight_floor=weight_floor
    )
    model.weights_ = weights
    model.means_ = means.reshape(k, m)
    model.stddevs_ = stddevs.reshape(k, m)
    model.variance_floor_ = variance_floor
    model.log_likelihood_trace_ = np.empty(0)
    return model


def _pack_svm(model):
    k, dim = model.coef_.shape
    return b"".join(
        [
            struct.pack("<IId", k, dim, float(model.C)),
            model.classes_.astype("<i8").tobytes(),
            model.coef_.astype("<f8").tobytes(order="C"),
            model.intercept_.astype("<f8").tobytes(),
        ]
    )


def _unpack_svm(payload):
    k, dim, c = struct.unpack_from("<IId", payload, 0)
    off = struct.calcsize("<IId")
    classes = np.frombuffer(payload, dtype="<i8", count=k, offset=off).copy()
    off += 8 * k
    coef, off = _take_f64(payload, off, k * dim)
    intercept, off = _take_f64(payload, off, k)
    _expect_end(payload, off, "svm")
    model = LinearHingeSVM(C=c)
    model.classes_ = classes
    model.coef_ = coef.reshape(k, dim)
    model.intercept_ = intercept
    return model


_LAYER_CODECS = {
    Conv: ("conv", lambda s: {"kernel": s.kernel, "stride": s.stride, "channels": s.channels}),
    Pool: ("pool", lambda s: {"kernel": s.kernel, "stride": s.stride}),
    Dense: ("dense", lambda s: {"units": s.units}),
}


def _layer_to_json(spec):
    kind, enc = _LAYER_CODECS[type(spec)]
    return {"type": kind, **enc(spec)}


def _layer_from_json(obj):
    kind = obj["type"]
    if kind == "conv":
        return Conv(obj["kernel"], obj["stride"], obj["channels"])
    if kind == "pool":
        return Pool(obj["kernel"], obj["stride"])
    if kind == "dense":
        return Dense(obj["units"])
    raise DataError(f"unknown layer type {kind!r} in net record")


def _pack_net(net):
    spec = {
        "input_shape": list(net.input_shape_),
        "num_classes": net.num_classes_,
        "layers": [_layer_to_json(s) for s in net.layer_specs_],
        "heads": [
            {"attach": h.attach, "channels": h.channels, "weight": h.weight}
            for h in net.head_specs_
        ],
        "input_shift": float(net.input_shift),
        "input_scale": float(net.input_scale),
        "seed": int(net.random_state),
    }
    blob = json.dumps(spec, sort_keys=True).encode("utf-8")
    tensors = [p for _, p in net.parameters()]
    chunks = [struct.pack("<I", len(blob)), blob, struct.pack("<Q", len(tensors))]
    for t in tensors:
        chunks.append(struct.pack("<I", t.ndim))
        chunks.append(struct.pack(f"<{t.ndim}I", *t.shape))
        chunks.append(t.astype("<f8").tobytes(order="C"))
    return b"".join(chunks)


def _unpack_net(payload):
    (spec_len,) = struct.unpack_from("<I", payload, 0)
    off = 4
    spec = json.loads(payload[off : off + spec_len].decode("utf-8"))
    off += spec_len
    (count,) = struct.unpack_from("<Q", payload, off)
    off += 8

    layers = [_layer_from_json(o) for o in spec["layers"]]
    heads = [AuxHead(o["attach"], o["channels"], o["weight"]) for o in spec["heads"]]
    net = LocallySupervisedConvNet(
        layers=layers,
        heads=heads,
        num_classes=spec["num_classes"],
        input_shift=spec["input_shift"],
        input_scale=spec["input_scale"],
        random_state=spec["seed"],
    )
    net.build(tuple(spec["input_shape"]), spec["num_classes"])

    params = net.parameters()
    if len(params) != count:
        raise DataError(f"net record holds {count} tensors, architecture needs {len(params)}")
    for _, p in params:
        (ndim,) = struct.unpack_from("<I", payload, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", payload, off)
        off += 4 * ndim
        if shape != p.shape:
            raise DataError(f"net record tensor shape {shape} != expected {p.shape}")
        data, off = _take_f64(payload, off, int(np.prod(shape)))
        p[...] = data.reshape(shape)
    _expect_end(payload, off, "net")
    return net


_PACKERS = {
    b"pca ": (PrincipalComponents, _pack_pca, _unpack_pca),
    b"gmm ": (DiagonalGaussianMixture, _pack_gmm, _unpack_gmm),
    b"svm ": (LinearHingeSVM, _pack_svm, _unpack_svm),
    b"net ": (LocallySupervisedConvNet, _pack_net, _unpack_net),
}


def _tag_for(model):
    for tag, (cls, _, _) in _PACKERS.items():
        if isinstance(model, cls):
            return tag
    raise DataError(f"no FVM1 record type for {type(model).__name__}")


def write_models(path, models):
    """Write fitted models as one FVM1 container, in the given order."""
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<II", MODEL_VERSION, len(models)))
        for model in models:
            tag = _tag_for(model)
            payload = _PACKERS[tag][1](model)
            fh.write(tag)
            fh.write(struct.pack("<Q", len(payload)))
            fh.write(payload)


def read_models(path):
    """Read every record of an FVM1 container as (tag, model) pairs."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MODEL_MAGIC:
        raise DataError(f"{path}: bad FVM1 magic {blob[:4]!r}")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != MODEL_VERSION:
        raise DataError(f"{path}: unsupported FVM1 version {version}")
    off = 12
    records = []
    for _ in range(count):
        tag = blob[off : off + 4]
        if tag not in _PACKERS:
            raise DataError(f"{path}: unknown record tag {tag!r}")
        (length,) = struct.unpack_from("<Q", blob, off + 4)
        off += 12
        payload = blob[off : off + length]
        if len(payload) != length:
            raise DataError(f"{path}: truncated record {tag!r}")
        records.append((tag.decode().strip(), _PACKERS[tag][2](payload)))
        off += length
    if off != len(blob):
        raise DataError(f"{path}: trailing bytes after last record")
    return records


def write_model(path, model):
    write_models(path, [model])


def read_model(path, expected=None):
    records = read_models(path)
    if len(records) != 1:
        raise DataError(f"{path}: expected a single record, found {len(records)}")
    tag, model = records[0]
    if expected is not None and tag != expected:
        raise DataError(f"{path}: expected record type {expected!r}, found {tag!r}")
    return model


def _take_f64(payload, offset, count):
    end = offset + 8 * count
    if end > len(payload):
        raise DataError("truncated FVM1 payload")
    return np.frombuffer(payload, dtype="<f8", count=count, offset=offset).copy(), end


def _expect_end(payload, offset, tag):
    if offset != len(payload):
        raise DataError(f"{tag} record has {len(payload) - offset} unread bytes")
