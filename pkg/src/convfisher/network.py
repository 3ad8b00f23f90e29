"""Small convolutional network with optional locally supervised auxiliary heads.

Trained from scratch by minibatch SGD (momentum + weight decay) on a
one-vs-rest hinge loss. Each auxiliary head attaches to a conv layer and maps
its activations through one 3x3 conv and a 3x3/stride-2 max pool straight to
class scores, with no fully-connected layer in between; the head loss (same
hinge form) is added to the main loss scaled by the head's importance weight.
The layers up to and including the attach point are shared; head parameters
are independent.

Conventions fixed here because they decide all shape arithmetic: conv layers
use zero same-padding (output H = ceil(H/stride)), pools use no padding with
floor division, activations flatten in row-major (h, w, c) order, conv and
hidden dense layers are ReLU-activated, score layers are linear, biases start
at zero and are exempt from weight decay.
"""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .errors import ConfigurationError, NumericError
from .validation import as_maps


@dataclass(frozen=True)
class Conv:
    kernel: int
    stride: int
    channels: int


@dataclass(frozen=True)
class Pool:
    kernel: int
    stride: int


@dataclass(frozen=True)
class Dense:
    units: int


@dataclass(frozen=True)
class AuxHead:
    """Locally supervised head: attach index of a conv layer, conv width, loss weight."""

    attach: int
    channels: int
    weight: float


def desk_layers():
    """Default trunk for 32x32x3 inputs."""
    return [Conv(5, 1, 16), Pool(2, 2), Conv(3, 1, 32), Pool(2, 2), Dense(64)]


def desk_heads(weight=0.3):
    return [AuxHead(attach=2, channels=16, weight=weight)]


def hinge_scores_loss(scores, labels):
    """One-vs-rest hinge: sum_c max(0, 1 - s_c * t_c), t = +1 at the label else -1.

    Batched: scores (N, C), labels (N,). Returns per-example losses (N,) and
    d(loss)/d(scores) (N, C).
    """
    n, c = scores.shape
    t = np.full((n, c), -1.0)
    t[np.arange(n), labels] = 1.0
    margins = 1.0 - scores * t
    active = margins > 0.0
    losses = np.where(active, margins, 0.0).sum(axis=1)
    dscores = np.where(active, -t, 0.0)
    return losses, dscores


def joint_loss(main_scores, aux_scores, label, aux_weights):
    """Main hinge plus weighted auxiliary hinges for a single example."""
    main_scores = np.asarray(main_scores, dtype=np.float64)
    label = int(label)
    if not 0 <= label < main_scores.shape[0]:
        raise ConfigurationError(f"label {label} out of range for {main_scores.shape[0]} classes")
    lab = np.asarray([label])
    total, _ = hinge_scores_loss(main_scores[None, :], lab)
    total = total[0]
    for scores, weight in zip(aux_scores, aux_weights):
        part, _ = hinge_scores_loss(np.asarray(scores, dtype=np.float64)[None, :], lab)
        total += weight * part[0]
    return float(total)


class _ConvLayer:
    def __init__(self, kernel, stride, in_channels, out_channels, rng, bias_init=0.0):
        self.kernel = kernel
        self.stride = stride
        fan_in = kernel * kernel * in_channels
        fan_out = kernel * kernel * out_channels
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        self.W = rng.uniform(-limit, limit, size=(kernel, kernel, in_channels, out_channels))
        self.b = np.full(out_channels, float(bias_init))

    def out_shape(self, h, w):
        return ((h - 1) // self.stride + 1, (w - 1) // self.stride + 1, self.W.shape[3])

    def _pad(self, x):
        k = self.kernel
        pt, pl = (k - 1) // 2, (k - 1) // 2
        pb, pr = k - 1 - pt, k - 1 - pl
        return np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0))), pt, pl

    def _im2col(self, xp, oh, ow):
        # patch rows (kj, cin) are contiguous in memory, so gather whole rows:
        # k block copies instead of k*k scattered ones
        n, hp, wp, cin = xp.shape
        k, s = self.kernel, self.stride
        sn, sh, sw, sc = xp.strides
        rows = np.lib.stride_tricks.as_strided(
            xp, shape=(n, hp, ow, k * cin), strides=(sn, sh, sw * s, sc), writeable=False
        )
        cols = np.empty((n, oh, ow, k, k * cin))
        for i in range(k):
            cols[:, :, :, i, :] = rows[:, i : i + (oh - 1) * s + 1 : s]
        return cols.reshape(n * oh * ow, k * k * cin)

    def forward(self, x):
        n, h, w, _ = x.shape
        oh, ow, cout = self.out_shape(h, w)
        xp, _, _ = self._pad(x)
        mat = self._im2col(xp, oh, ow)
        pre = mat @ self.W.reshape(-1, cout) + self.b
        pre = pre.reshape(n, oh, ow, cout)
        out = np.maximum(pre, 0.0)
        return out, (x.shape, mat, pre)

    def forward_only(self, x):
        n, h, w, _ = x.shape
        oh, ow, cout = self.out_shape(h, w)
        xp, _, _ = self._pad(x)
        mat = self._im2col(xp, oh, ow)
        pre = mat @ self.W.reshape(-1, cout) + self.b
        return np.maximum(pre.reshape(n, oh, ow, cout), 0.0)

    def backward(self, dout, cache):
        x_shape, mat, pre = cache
        n, h, w, cin = x_shape
        k, s = self.kernel, self.stride
        oh, ow, cout = self.out_shape(h, w)

        dpre = (dout * (pre > 0.0)).reshape(n * oh * ow, cout)
        dW = (mat.T @ dpre).reshape(self.W.shape)
        db = dpre.sum(axis=0)
        dcols = (dpre @ self.W.reshape(-1, cout).T).reshape(n, oh, ow, k, k * cin)

        pt, pl = (k - 1) // 2, (k - 1) // 2
        dxp = np.zeros((n, h + k - 1, w + k - 1, cin))
        flat = dxp.reshape(n, h + k - 1, -1)
        row_len = k * cin
        for i in range(k):
            rows = dcols[:, :, :, i, :]
            for j in range(ow):
                start = j * s * cin
                flat[:, i : i + (oh - 1) * s + 1 : s, start : start + row_len] += rows[:, :, j, :]
        dx = dxp[:, pt : pt + h, pl : pl + w, :]
        return dx, dW, db

    def params(self):
        return [self.W, self.b]


class _PoolLayer:
    def __init__(self, kernel, stride):
        self.kernel = kernel
        self.stride = stride

    def out_shape(self, h, w, c):
        k, s = self.kernel, self.stride
        if h < k or w < k:
            raise ConfigurationError(f"pool kernel {k} larger than {h}x{w} input")
        return ((h - k) // s + 1, (w - k) // s + 1, c)

    def forward(self, x):
        n, h, w, c = x.shape
        k, s = self.kernel, self.stride
        oh, ow, _ = self.out_shape(h, w, c)
        win = np.empty((n, oh, ow, k * k, c))
        for i in range(k):
            for j in range(k):
                win[:, :, :, i * k + j, :] = x[
                    :, i : i + (oh - 1) * s + 1 : s, j : j + (ow - 1) * s + 1 : s, :
                ]
        idx = win.argmax(axis=3)
        out = np.take_along_axis(win, idx[:, :, :, None, :], axis=3)[:, :, :, 0, :]
        return out, (x.shape, idx)

    def forward_only(self, x):
        return self.forward(x)[0]

    def backward(self, dout, cache):
        x_shape, idx = cache
        n, h, w, c = x_shape
        k, s = self.kernel, self.stride
        oh, ow = idx.shape[1], idx.shape[2]
        rows = idx // k + (np.arange(oh) * s)[None, :, None, None]
        cols = idx % k + (np.arange(ow) * s)[None, None, :, None]
        n_idx = np.arange(n)[:, None, None, None]
        c_idx = np.arange(c)[None, None, None, :]
        flat = ((n_idx * h + rows) * w + cols) * c + c_idx
        dx = np.zeros(n * h * w * c)
        np.add.at(dx, flat.ravel(), dout.ravel())
        return dx.reshape(x_shape), None, None

    def params(self):
        return []


class _DenseLayer:
    def __init__(self, in_dim, units, relu, rng, bias_init=0.0):
        limit = np.sqrt(6.0 / (in_dim + units))
        self.W = rng.uniform(-limit, limit, size=(in_dim, units))
        # score layers (relu=False) keep zero bias; a small positive bias on
        # hidden units prevents channels from starting dead
        self.b = np.full(units, float(bias_init) if relu else 0.0)
        self.relu = relu

    def forward(self, x):
        flat = x.reshape(x.shape[0], -1)
        pre = flat @ self.W + self.b
        out = np.maximum(pre, 0.0) if self.relu else pre
        return out, (x.shape, flat, pre)

    def forward_only(self, x):
        flat = x.reshape(x.shape[0], -1)
        pre = flat @ self.W + self.b
        return np.maximum(pre, 0.0) if self.relu else pre

    def backward(self, dout, cache):
        x_shape, flat, pre = cache
        dpre = dout * (pre > 0.0) if self.relu else dout
        dW = flat.T @ dpre
        db = dpre.sum(axis=0)
        dx = (dpre @ self.W.T).reshape(x_shape)
        return dx, dW, db

    def params(self):
        return [self.W, self.b]


class _AuxPath:
    """Conv -> pool -> linear scores, built on the maps of one trunk layer."""

    def __init__(self, spec, in_shape, num_classes, rng, bias_init=0.0):
        h, w, c = in_shape
        self.spec = spec
        self.conv = _ConvLayer(3, 1, c, spec.channels, rng, bias_init)
        self.pool = _PoolLayer(3, 2)
        ch, cw, cc = self.conv.out_shape(h, w)
        ph, pw, pc = self.pool.out_shape(ch, cw, cc)
        self.score = _DenseLayer(ph * pw * pc, num_classes, relu=False, rng=rng)

    def forward(self, maps):
        a, c1 = self.conv.forward(maps)
        p, c2 = self.pool.forward(a)
        s, c3 = self.score.forward(p)
        return s, (c1, c2, c3)

    def forward_only(self, maps):
        return self.score.forward_only(self.pool.forward_only(self.conv.forward_only(maps)))

    def backward(self, dscores, caches):
        c1, c2, c3 = caches
        dp, dWs, dbs = self.score.backward(dscores, c3)
        da, _, _ = self.pool.backward(dp, c2)
        dmaps, dWc, dbc = self.conv.backward(da, c1)
        return dmaps, [dWc, dbc, dWs, dbs]

    def params(self):
        return self.conv.params() + self.score.params()


class LocallySupervisedConvNet(BaseEstimator, ClassifierMixin):
    """Conv net classifier with auxiliary locally supervised heads.

    Parameters
    ----------
    layers : list of Conv/Pool/Dense specs; None means the 32x32x3 default.
    heads : list of AuxHead; attach indices must point at conv layers.
    num_classes : int or None (inferred from labels at fit time).
    learning_rate, lr_decay : per-epoch schedule lr * lr_decay**epoch.
    momentum, weight_decay, batch_size, epochs : SGD settings.
    input_shift, input_scale : affine input standardization
        (x + shift) * scale before the first layer; [0, 1] images train far
        better centered and spread (shift -0.5, scale ~2).
    random_state : master seed; trunk init, head init, and batch shuffling
        use independent child streams, so a head-free net and a net whose
        heads all have weight 0 follow bitwise identical trajectories.
    """

    def __init__(
        self,
        layers=None,
        heads=None,
        num_classes=None,
        learning_rate=0.05,
        lr_decay=1.0,
        momentum=0.9,
        weight_decay=1e-4,
        batch_size=32,
        epochs=10,
        input_shift=0.0,
        input_scale=1.0,
        bias_init=0.0,
        random_state=0,
    ):
        self.layers = layers
        self.heads = heads
        self.num_classes = num_classes
        self.learning_rate = learning_rate
        self.lr_decay = lr_decay
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.epochs = epochs
        self.input_shift = input_shift
        self.input_scale = input_scale
        self.bias_init = bias_init
        self.random_state = random_state

    def prepare_input(self, x):
        if self.input_shift == 0.0 and self.input_scale == 1.0:
            return x
        return (x + self.input_shift) * self.input_scale

    # -- construction ------------------------------------------------------

    def build(self, input_shape, num_classes):
        """Instantiate parameters for the given (H, W, D) input; validates shapes."""
        specs = self.layers if self.layers is not None else desk_layers()
        head_specs = list(self.heads) if self.heads else []
        seq = np.random.SeedSequence(self.random_state)
        trunk_ss, shuffle_ss, heads_ss = seq.spawn(3)
        rng = np.random.default_rng(trunk_ss)
        self._shuffle_ss = shuffle_ss

        shape = tuple(input_shape)
        trunk = []
        shapes = []
        for spec in specs:
            if isinstance(spec, Conv):
                if len(shape) != 3:
                    raise ConfigurationError("conv layer after flat features")
                layer = _ConvLayer(spec.kernel, spec.stride, shape[2], spec.channels, rng, self.bias_init)
                shape = layer.out_shape(shape[0], shape[1])
            elif isinstance(spec, Pool):
                if len(shape) != 3:
                    raise ConfigurationError("pool layer after flat features")
                layer = _PoolLayer(spec.kernel, spec.stride)
                shape = layer.out_shape(*shape)
            elif isinstance(spec, Dense):
                layer = _DenseLayer(int(np.prod(shape)), spec.units, relu=True, rng=rng, bias_init=self.bias_init)
                shape = (spec.units,)
            else:
                raise ConfigurationError(f"unknown layer spec {spec!r}")
            if len(shape) == 3 and (shape[0] < 1 or shape[1] < 1):
                raise ConfigurationError(f"layer {spec} collapses spatial size to {shape}")
            trunk.append(layer)
            shapes.append(shape)

        self.trunk_ = trunk
        self.layer_shapes_ = shapes
        self.input_shape_ = tuple(input_shape)
        self.num_classes_ = int(num_classes)
        self.main_head_ = _DenseLayer(int(np.prod(shape)), self.num_classes_, relu=False, rng=rng)

        self.aux_paths_ = []
        head_streams = heads_ss.spawn(len(head_specs)) if head_specs else []
        for spec, stream in zip(head_specs, head_streams):
            if not (0 <= spec.attach < len(specs)) or not isinstance(specs[spec.attach], Conv):
                raise ConfigurationError(f"aux head attach index {spec.attach} is not a conv layer")
            self.aux_paths_.append(
                _AuxPath(
                    spec,
                    shapes[spec.attach],
                    self.num_classes_,
                    np.random.default_rng(stream),
                    self.bias_init,
                )
            )
        self.layer_specs_ = list(specs)
        self.head_specs_ = head_specs
        return self

    def parameters(self):
        """(name, array) pairs in the serialization order."""
        out = []
        for i, layer in enumerate(self.trunk_):
            for j, p in enumerate(layer.params()):
                out.append((f"trunk{i}.{'Wb'[j]}", p))
        out.append(("main.W", self.main_head_.W))
        out.append(("main.b", self.main_head_.b))
        for i, path in enumerate(self.aux_paths_):
            out.append((f"aux{i}.conv.W", path.conv.W))
            out.append((f"aux{i}.conv.b", path.conv.b))
            out.append((f"aux{i}.score.W", path.score.W))
            out.append((f"aux{i}.score.b", path.score.b))
        return out

    # -- forward / extraction ----------------------------------------------

    def _forward(self, x, with_caches):
        acts = [self.prepare_input(x)]
        caches = []
        for layer in self.trunk_:
            if with_caches:
                a, cache = layer.forward(acts[-1])
                caches.append(cache)
            else:
                a = layer.forward_only(acts[-1])
            acts.append(a)
        if with_caches:
            main, main_cache = self.main_head_.forward(acts[-1])
        else:
            main, main_cache = self.main_head_.forward_only(acts[-1]), None
        aux = []
        aux_caches = []
        for path in self.aux_paths_:
            if with_caches:
                s, c = path.forward(acts[path.spec.attach + 1])
                aux_caches.append(c)
            else:
                s = path.forward_only(acts[path.spec.attach + 1])
            aux.append(s)
        return acts, caches, main, main_cache, aux, aux_caches

    def forward_image(self, image):
        """All per-layer maps and scores for one (H, W, D) image."""
        self._require_built()
        x = as_maps(image, "image")[None, ...]
        acts, _, main, _, aux, _ = self._forward(x, with_caches=False)
        fc = None
        for layer, a in zip(self.trunk_, acts[1:]):
            if isinstance(layer, _DenseLayer):
                fc = a[0]
        return {
            "layer_maps": [a[0] for a in acts[1:]],
            "fc_features": fc,
            "main_scores": main[0],
            "aux_scores": [s[0] for s in aux],
        }

    def conv_maps(self, X, layer_index):
        """Post-activation maps of trunk layer `layer_index` for a batch."""
        self._require_built()
        if not 0 <= layer_index < len(self.trunk_):
            raise ConfigurationError(f"no trunk layer {layer_index}")
        if not isinstance(self.trunk_[layer_index], (_ConvLayer, _PoolLayer)):
            raise ConfigurationError(f"layer {layer_index} is not a conv or pool layer")
        a = self.prepare_input(self._as_batch(X))
        for layer in self.trunk_[: layer_index + 1]:
            a = layer.forward_only(a)
        return a

    def fc_features(self, X):
        """Activations of the last hidden dense layer for a batch."""
        self._require_built()
        last = None
        for i, layer in enumerate(self.trunk_):
            if isinstance(layer, _DenseLayer):
                last = i
        if last is None:
            raise ConfigurationError("network has no fully-connected layer")
        a = self.prepare_input(self._as_batch(X))
        for layer in self.trunk_[: last + 1]:
            a = layer.forward_only(a)
        return a

    def decision_function(self, X):
        self._require_built()
        a = self.prepare_input(self._as_batch(X))
        for layer in self.trunk_:
            a = layer.forward_only(a)
        return self.main_head_.forward_only(a)

    def predict(self, X):
        return np.argmax(self.decision_function(X), axis=1)

    def _as_batch(self, X):
        arr = np.asarray(X, dtype=np.float64)
        if arr.ndim == 3:
            arr = arr[None, ...]
        if arr.ndim != 4 or arr.shape[1:] != self.input_shape_:
            raise ConfigurationError(
                f"batch shape {arr.shape} does not match input {self.input_shape_}"
            )
        return arr

    def _require_built(self):
        if not hasattr(self, "trunk_"):
            raise ConfigurationError("network not built; call fit() or build()")

    # -- training ------------------------------------------------------------

    def _batch_loss_and_grads(self, x, y):
        """Mean joint loss over the batch and data-loss gradients per parameter."""
        n = x.shape[0]
        acts, caches, main, main_cache, aux, aux_caches = self._forward(x, with_caches=True)
        main_losses, dmain = hinge_scores_loss(main, y)
        loss_parts = [float(main_losses.mean())]
        grads = {name: None for name, _ in self.parameters()}

        dacts = [None] * (len(self.trunk_) + 1)
        dlast, gW, gb = self.main_head_.backward(dmain / n, main_cache)
        grads["main.W"], grads["main.b"] = gW, gb
        dacts[len(self.trunk_)] = dlast

        for i, path in enumerate(self.aux_paths_):
            aux_losses, daux = hinge_scores_loss(aux[i], y)
            loss_parts.append(float(aux_losses.mean()))
            if path.spec.weight == 0.0:
                # no path to the loss: head params stay frozen and the trunk
                # sees exactly the gradients of a head-free net
                continue
            dmaps, (gWc, gbc, gWs, gbs) = path.backward(
                daux * (path.spec.weight / n), aux_caches[i]
            )
            grads[f"aux{i}.conv.W"], grads[f"aux{i}.conv.b"] = gWc, gbc
            grads[f"aux{i}.score.W"], grads[f"aux{i}.score.b"] = gWs, gbs
            at = path.spec.attach + 1
            dacts[at] = dmaps if dacts[at] is None else dacts[at] + dmaps

        for i in range(len(self.trunk_) - 1, -1, -1):
            dout = dacts[i + 1]
            dx, gW, gb = self.trunk_[i].backward(dout, caches[i])
            if gW is not None:
                grads[f"trunk{i}.W"], grads[f"trunk{i}.b"] = gW, gb
            dacts[i] = dx if dacts[i] is None else dacts[i] + dx

        total = loss_parts[0] + sum(
            p.spec.weight * l for p, l in zip(self.aux_paths_, loss_parts[1:])
        )
        return total, loss_parts, grads

    def batch_gradients(self, X, y):
        """Data-loss gradients per named parameter (zeros for weight-0 heads)."""
        self._require_built()
        x = self._as_batch(X)
        _, _, grads = self._batch_loss_and_grads(x, np.asarray(y, dtype=np.int64))
        return {
            name: grads[name] if grads[name] is not None else np.zeros_like(p)
            for name, p in self.parameters()
        }

    def fit(self, X, y):
        return self._train(X, y, max_steps=None)

    def train_steps(self, X, y, n_steps):
        """Train for exactly n_steps minibatch updates (same loop as fit)."""
        return self._train(X, y, max_steps=int(n_steps))

    def _train(self, X, y, max_steps):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        if X.ndim != 4:
            raise ConfigurationError(f"fit expects (N, H, W, D) images, got shape {X.shape}")
        ncls = self.num_classes if self.num_classes is not None else int(y.max()) + 1
        if y.min() < 0 or y.max() >= ncls:
            raise ConfigurationError("labels out of range")
        self.build(X.shape[1:], ncls)

        momenta = {name: np.zeros_like(p) for name, p in self.parameters()}
        shuffle_rng = np.random.default_rng(self._shuffle_ss)
        log = []
        step = 0
        epoch = 0
        while (max_steps is None and epoch < int(self.epochs)) or (
            max_steps is not None and step < max_steps
        ):
            lr = self.learning_rate * self.lr_decay**epoch
            order = shuffle_rng.permutation(X.shape[0])
            for start in range(0, X.shape[0], int(self.batch_size)):
                if max_steps is not None and step >= max_steps:
                    break
                batch = order[start : start + int(self.batch_size)]
                loss, parts, grads = self._batch_loss_and_grads(X[batch], y[batch])
                if not np.isfinite(loss):
                    raise NumericError(f"non-finite training loss at step {step}")
                self._sgd_step(grads, momenta, lr)
                log.append((step, parts[0], tuple(parts[1:]), lr))
                step += 1
            epoch += 1
        self.training_log_ = log
        self.classes_ = np.arange(ncls)
        return self

    def _sgd_step(self, grads, momenta, lr):
        for name, p in self.parameters():
            g = grads[name]
            if g is None:
                continue
            if name.endswith(".W"):
                g = g + self.weight_decay * p
            v = momenta[name]
            v *= self.momentum
            v -= lr * g
            p += v
