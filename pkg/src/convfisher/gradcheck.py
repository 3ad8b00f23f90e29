"""Finite-difference verification of the network's analytic gradients.

Central differences on the batch-mean joint data loss, one parameter at a
time. A perturbed parameter cannot change activations upstream of its layer,
so the evaluator caches the unperturbed prefix activations and recomputes
only from the perturbed layer onward; the resulting loss is bit-identical to
a full forward pass (asserted by the test suite on sampled parameters).

The relative error denominator is floored: dead ReLU paths give exact 0/0,
and gradients near the float64 rounding floor of the difference quotient
(~1e-9 at these loss magnitudes) would otherwise drown in noise. Any real
gradient bug shows up at the scale of the gradient itself, far above the
floor.
"""

import numpy as np

from .network import _ConvLayer, _DenseLayer, _PoolLayer, hinge_scores_loss


class _StagedLoss:
    """Joint-loss evaluator that recomputes only downstream of a perturbed layer."""

    def __init__(self, net, X, y):
        self.net = net
        self.y = np.asarray(y, dtype=np.int64)
        self.acts = [net.prepare_input(np.asarray(X, dtype=np.float64))]
        for layer in net.trunk_:
            self.acts.append(layer.forward_only(self.acts[-1]))
        self.main_losses = self._main_part(self.acts[-1])
        self.aux_losses = [
            self._aux_part(i, self.acts[path.spec.attach + 1])
            for i, path in enumerate(net.aux_paths_)
        ]

    def _main_part(self, last_act):
        scores = self.net.main_head_.forward_only(last_act)
        return hinge_scores_loss(scores, self.y)[0]

    def _aux_part(self, i, attach_act):
        scores = self.net.aux_paths_[i].forward_only(attach_act)
        return hinge_scores_loss(scores, self.y)[0]

    def _total(self, main_losses, aux_losses):
        per_example = main_losses.copy()
        for path, losses in zip(self.net.aux_paths_, aux_losses):
            per_example = per_example + path.spec.weight * losses
        return float(per_example.mean())

    def full(self):
        return self._total(self.main_losses, self.aux_losses)

    def after_trunk_change(self, layer_index):
        """Loss with trunk layer `layer_index` parameters currently perturbed."""
        a = self.acts[layer_index]
        fresh = {}
        for i in range(layer_index, len(self.net.trunk_)):
            a = self.net.trunk_[i].forward_only(a)
            fresh[i + 1] = a
        main_losses = self._main_part(a)
        aux_losses = [
            self._aux_part(i, fresh[path.spec.attach + 1])
            if path.spec.attach + 1 in fresh
            else self.aux_losses[i]
            for i, path in enumerate(self.net.aux_paths_)
        ]
        return self._total(main_losses, aux_losses)

    def after_main_change(self):
        return self._total(self._main_part(self.acts[-1]), self.aux_losses)

    def after_aux_change(self, head_index):
        attach_act = self.acts[self.net.aux_paths_[head_index].spec.attach + 1]
        aux_losses = list(self.aux_losses)
        aux_losses[head_index] = self._aux_part(head_index, attach_act)
        return self._total(self.main_losses, aux_losses)


def _owner(name):
    """(kind, index) for a parameter name from LocallySupervisedConvNet.parameters()."""
    if name.startswith("trunk"):
        return "trunk", int(name[5:].split(".")[0])
    if name.startswith("main"):
        return "main", None
    return "aux", int(name[3:].split(".")[0])


def gradient_check(net, X, y, eps=1e-5, denom_floor=1e-4, param_filter=None):
    """Max relative error between analytic and central-difference gradients.

    Returns (max_rel_error, dict name -> max rel error per parameter tensor).
    The net must be built and X a batch matching its input shape.
    """
    X = np.asarray(X, dtype=np.float64)
    grads = net.batch_gradients(X, y)
    staged = _StagedLoss(net, X, y)

    per_param = {}
    for name, p in net.parameters():
        if param_filter is not None and not param_filter(name):
            continue
        kind, idx = _owner(name)
        if kind == "trunk":
            evaluate = lambda i=idx: staged.after_trunk_change(i)  # noqa: E731
        elif kind == "main":
            evaluate = staged.after_main_change
        else:
            evaluate = lambda i=idx: staged.after_aux_change(i)  # noqa: E731

        flat = p.ravel()
        flat_grad = grads[name].ravel()
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = evaluate()
            flat[i] = orig - eps
            down = evaluate()
            flat[i] = orig
            numeric = (up - down) / (2.0 * eps)
            a = flat_grad[i]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), denom_floor)
            if rel > worst:
                worst = rel
        per_param[name] = worst
    return max(per_param.values()), per_param


def kink_clearance(net, X, y):
    """Smallest distance to a ReLU, pool-tie, or hinge kink over the batch.

    Minimum over: |pre-activation| at every ReLU (trunk and head convs, hidden
    dense), the top-two gap in every pool window whose max is active, and
    |1 - s*t| at every hinge margin. Inputs for a gradient check should be
    jittered until this clears ~1e-3 so an eps=1e-5 probe cannot cross a kink.
    """
    y = np.asarray(y, dtype=np.int64)
    clear = np.inf
    a = net.prepare_input(np.asarray(X, dtype=np.float64))
    for layer in net.trunk_:
        clear = min(clear, _layer_kink(layer, a))
        a = layer.forward_only(a)
    clear = min(clear, _margin_clearance(net.main_head_.forward_only(a), y))

    staged = _StagedLoss(net, X, y)
    for path in net.aux_paths_:
        attach_act = staged.acts[path.spec.attach + 1]
        clear = min(clear, _layer_kink(path.conv, attach_act))
        conv_out = path.conv.forward_only(attach_act)
        clear = min(clear, _pool_top2_gap(conv_out, path.pool))
        pooled = path.pool.forward_only(conv_out)
        clear = min(clear, _margin_clearance(path.score.forward_only(pooled), y))
    return clear


def _layer_kink(layer, x):
    if isinstance(layer, _ConvLayer):
        _, (_, _, pre) = layer.forward(x)
        return float(np.abs(pre).min())
    if isinstance(layer, _PoolLayer):
        return _pool_top2_gap(x, layer)
    if isinstance(layer, _DenseLayer) and layer.relu:
        _, (_, _, pre) = layer.forward(x)
        return float(np.abs(pre).min())
    return np.inf


def _pool_top2_gap(x, pool):
    """Gap between best and runner-up in each pool window with an active max.

    All-zero windows (every unit off) are ignored: the output is pinned at 0
    and small perturbations cannot move it, so there is no kink to avoid.
    """
    n, h, w, c = x.shape
    k, s = pool.kernel, pool.stride
    oh, ow, _ = pool.out_shape(h, w, c)
    win = np.empty((n, oh, ow, k * k, c))
    for i in range(k):
        for j in range(k):
            win[:, :, :, i * k + j, :] = x[
                :, i : i + (oh - 1) * s + 1 : s, j : j + (ow - 1) * s + 1 : s, :
            ]
    ordered = np.sort(win, axis=3)
    gap = ordered[:, :, :, -1, :] - ordered[:, :, :, -2, :]
    active = ordered[:, :, :, -1, :] > 0.0
    if not active.any():
        return np.inf
    return float(gap[active].min())


def _margin_clearance(scores, y):
    t = np.full_like(scores, -1.0)
    t[np.arange(len(y)), y] = 1.0
    return float(np.abs(1.0 - scores * t).min())
