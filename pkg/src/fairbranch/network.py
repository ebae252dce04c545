"""Branched multi-head feed-forward network with per-task analytic backprop.

Layout
------
Depths ``1..d`` are hidden ReLU layers, depth ``d+1`` holds one sigmoid head
per task.  At every hidden depth the layers' task sets partition the tasks:
depths ``1..d_c`` hold a single shared layer, deeper depths hold branch
layers owned by task groups.  A layer is identified by its key
``(depth, sorted task tuple)``, which is unique within a topology.

Weights are stored ``in_dim x out_dim`` so that ``W @ W.T`` is an
``in_dim x in_dim`` Gram matrix, comparable across all layers at one depth.
"""
from __future__ import annotations

import copy
import warnings
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigurationError, NumericError, ShapeError, TopologyError
from .objectives import (
    EPS,
    BatchLosses,
    clamp,
    fairness_backprop_selector,
    fairness_sample_weights,
    nll_loss,
    robust_fairness_loss,
)

LayerKey = tuple[int, tuple[int, ...]]


@dataclass(eq=False)
class Layer:
    weights: np.ndarray
    bias: np.ndarray
    depth: int
    tasks: tuple[int, ...]

    @property
    def key(self) -> LayerKey:
        return (self.depth, self.tasks)

    @property
    def in_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def size(self) -> int:
        return self.weights.size + self.bias.size

    def replica(self, tasks) -> "Layer":
        return Layer(self.weights.copy(), self.bias.copy(), self.depth, tuple(sorted(tasks)))


@dataclass(eq=False)
class Topology:
    n_features: int
    hidden_widths: tuple[int, ...]
    task_names: tuple[str, ...]
    hidden: list[list[Layer]]
    heads: list[Layer]
    d_c: int
    events: list = field(default_factory=list)
    input_shift: np.ndarray | None = None
    input_scale: np.ndarray | None = None

    @property
    def d(self) -> int:
        return len(self.hidden_widths)

    @property
    def n_tasks(self) -> int:
        return len(self.heads)

    def layers_at(self, depth: int) -> list[Layer]:
        if depth == self.d + 1:
            return self.heads
        return self.hidden[depth - 1]

    def layer_for(self, t: int, depth: int) -> Layer:
        for layer in self.layers_at(depth):
            if t in layer.tasks:
                return layer
        raise TopologyError(f"task {t} has no layer at depth {depth}")

    def path(self, t: int) -> list[Layer]:
        return [self.layer_for(t, b) for b in range(1, self.d + 2)]

    def parent(self, layer: Layer) -> Layer | None:
        if layer.depth == 1:
            return None
        return self.layer_for(layer.tasks[0], layer.depth - 1)

    def iter_layers(self) -> Iterator[Layer]:
        """All layers in manifest order: by depth, then by task tuple."""
        for b in range(1, self.d + 2):
            yield from sorted(self.layers_at(b), key=lambda l: l.tasks)

    def get(self, key: LayerKey) -> Layer:
        for layer in self.layers_at(key[0]):
            if layer.tasks == key[1]:
                return layer
        raise KeyError(key)

    def is_branch(self, layer: Layer) -> bool:
        return self.d_c < layer.depth <= self.d

    def copy(self) -> "Topology":
        return copy.deepcopy(self)

    def validate(self) -> None:
        """Raise TopologyError unless every structural invariant holds."""
        T, d = self.n_tasks, self.d
        everyone = set(range(T))
        if not 0 <= self.d_c <= d:
            raise TopologyError(f"d_c={self.d_c} outside [0, {d}]")
        if len(self.hidden) != d:
            raise TopologyError("hidden layer list does not match hidden_widths")
        for b in range(1, d + 2):
            layers = self.layers_at(b)
            seen: set[int] = set()
            for layer in layers:
                if layer.depth != b:
                    raise TopologyError(f"layer {layer.key} filed under depth {b}")
                if not layer.tasks or seen & set(layer.tasks):
                    raise TopologyError(f"task sets at depth {b} overlap or are empty")
                seen |= set(layer.tasks)
                want_in = self.n_features if b == 1 else self.hidden_widths[b - 2]
                want_out = 1 if b == d + 1 else self.hidden_widths[b - 1]
                if layer.weights.shape != (want_in, want_out) or layer.bias.shape != (want_out,):
                    raise TopologyError(f"layer {layer.key} has shape {layer.weights.shape}")
                if not (np.isfinite(layer.weights).all() and np.isfinite(layer.bias).all()):
                    raise TopologyError(f"layer {layer.key} holds non-finite parameters")
                if b > 1:
                    parents = [p for p in self.layers_at(b - 1) if set(layer.tasks) & set(p.tasks)]
                    if len(parents) != 1 or not set(layer.tasks) <= set(parents[0].tasks):
                        raise TopologyError(f"layer {layer.key} is not nested in one parent")
            if seen != everyone:
                raise TopologyError(f"task sets at depth {b} do not cover all tasks")
            if b <= self.d_c and len(layers) != 1:
                raise TopologyError(f"depth {b} <= d_c must hold a single shared layer")
        for t, head in enumerate(self.heads):
            if head.tasks != (t,):
                raise TopologyError(f"head {t} is tagged {head.tasks}")


def init_model(
    n_features: int,
    hidden_widths: Sequence[int],
    n_tasks: int,
    seed: int,
    task_names: Sequence[str] | None = None,
    shared_head_init: bool = True,
) -> Topology:
    """Fully shared trunk of ``len(hidden_widths)`` ReLU layers plus sigmoid heads.

    Weights are He-uniform, ``U(-sqrt(6/in), sqrt(6/in))``; biases start at 0.
    With ``shared_head_init`` every head starts from the same draw, so head
    similarity later reflects what training did to each task rather than the
    initial noise.
    """
    widths = tuple(int(w) for w in hidden_widths)
    if len(widths) < 2:
        raise ConfigurationError("need at least 2 hidden layers for branching to be possible")
    if len(widths) == 2:
        warnings.warn("with 2 hidden layers at most one branching event can occur", stacklevel=2)
    if n_features < 1 or n_tasks < 1 or min(widths) < 1:
        raise ConfigurationError("feature count, task count and widths must be >= 1")
    names = tuple(task_names) if task_names is not None else tuple(f"t{t}" for t in range(n_tasks))
    if len(names) != n_tasks:
        raise ConfigurationError("task_names length differs from n_tasks")

    rng = np.random.default_rng(seed)
    everyone = tuple(range(n_tasks))

    def he(n_in, n_out):
        lim = np.sqrt(6.0 / n_in)
        return rng.uniform(-lim, lim, size=(n_in, n_out))

    dims = (n_features, *widths)
    hidden = [
        [Layer(he(dims[b], dims[b + 1]), np.zeros(dims[b + 1]), b + 1, everyone)]
        for b in range(len(widths))
    ]
    if shared_head_init:
        w0 = he(widths[-1], 1)
        head_w = [w0.copy() for _ in range(n_tasks)]
    else:
        head_w = [he(widths[-1], 1) for _ in range(n_tasks)]
    heads = [Layer(w, np.zeros(1), len(widths) + 1, (t,)) for t, w in enumerate(head_w)]
    return Topology(n_features, widths, names, hidden, heads, d_c=len(widths))


# ---------------------------------------------------------------------------
# forward


def _sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


@dataclass
class Forward:
    inputs: np.ndarray
    pre: dict
    post: dict
    logits: np.ndarray
    raw: np.ndarray

    @property
    def probs(self) -> np.ndarray:
        return clamp(self.raw)

    @property
    def clamped(self) -> np.ndarray:
        return (self.raw < EPS) | (self.raw > 1.0 - EPS)


def forward(top: Topology, X) -> Forward:
    """Run the batch through every layer once; activations are kept for backprop."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != top.n_features:
        raise ShapeError(f"expected a (n, {top.n_features}) batch, got {X.shape}")
    pre, post = {}, {}
    for b in range(1, top.d + 1):
        for layer in top.layers_at(b):
            inp = X if b == 1 else post[top.parent(layer).key]
            z = inp @ layer.weights + layer.bias
            if not np.isfinite(z).all():
                raise NumericError(f"non-finite activation at depth {b} (layer {layer.tasks})")
            pre[layer.key] = z
            post[layer.key] = np.maximum(z, 0.0)
    logits = np.empty((X.shape[0], top.n_tasks))
    for head in top.heads:
        logits[:, head.tasks[0]] = post[top.parent(head).key] @ head.weights[:, 0] + head.bias[0]
    if not np.isfinite(logits).all():
        raise NumericError(f"non-finite activation at depth {top.d + 1} (heads)")
    return Forward(X, pre, post, logits, _sigmoid(logits))


def predict_proba(top: Topology, X) -> np.ndarray:
    """Probabilities on raw features, applying the stored input standardization."""
    X = np.asarray(X, dtype=np.float64)
    if top.input_shift is not None:
        X = (X - top.input_shift) / top.input_scale
    return forward(top, X).probs


# ---------------------------------------------------------------------------
# gradients


@dataclass
class GradientSet:
    """Per-task accuracy and (unscaled) fairness gradients on each task's path.

    ``acc[t]`` and ``fair[t]`` map layer keys to ``(dW, db)`` pairs.
    """

    depth: int
    acc: list[dict]
    fair: list[dict]
    losses: BatchLosses | None = None

    @property
    def n_tasks(self) -> int:
        return len(self.acc)

    def head_key(self, t: int) -> LayerKey:
        return (self.depth + 1, (t,))

    def flat(self, t: int, key: LayerKey, kind: str = "acc") -> np.ndarray:
        dW, db = (self.acc if kind == "acc" else self.fair)[t][key]
        return np.concatenate([dW.ravel(), db])

    def with_fair(self, fair: list[dict]) -> "GradientSet":
        return GradientSet(self.depth, self.acc, fair, self.losses)


def per_task_gradients(top: Topology, X, Y, s, fwd: Forward | None = None) -> GradientSet:
    """Backpropagate each task's mean NLL and robust fairness loss along its path.

    Both losses share the path, so they are pushed through together as a
    stacked pair of upstream gradients.  Where the output probability is
    clamped the loss is flat in the logit and the gradient is zero.
    """
    Y = np.asarray(Y)
    s = np.asarray(s)
    if Y.ndim == 1:
        Y = Y[:, None]
    n = Y.shape[0]
    if n == 0:
        raise ShapeError("empty batch")
    fwd = fwd if fwd is not None else forward(top, X)
    probs, clamped = fwd.probs, fwd.clamped
    T = top.n_tasks
    acc_loss, fair_loss, tables = np.empty(T), np.empty(T), []
    acc, fair = [], []
    for t in range(T):
        y = Y[:, t].astype(np.float64)
        acc_loss[t] = nll_loss(probs[:, t], y)
        fair_loss[t], table = robust_fairness_loss(probs[:, t], Y[:, t], s)
        tables.append(table)
        resid = np.where(clamped[:, t], 0.0, fwd.raw[:, t] - y)
        w_fair = fairness_sample_weights(Y[:, t], s, fairness_backprop_selector(table))
        delta = np.stack([resid / n, resid * w_fair])[:, :, None]  # (2, n, 1)

        g_acc, g_fair = {}, {}
        for layer in reversed(top.path(t)):
            parent = top.parent(layer)
            inp = fwd.inputs if parent is None else fwd.post[parent.key]
            gW = np.matmul(inp.T, delta)
            gb = delta.sum(axis=1)
            g_acc[layer.key] = (gW[0], gb[0])
            g_fair[layer.key] = (gW[1], gb[1])
            if parent is not None:
                delta = np.matmul(delta, layer.weights.T) * (fwd.pre[parent.key] > 0)
        acc.append(g_acc)
        fair.append(g_fair)
    return GradientSet(top.d, acc, fair, BatchLosses(acc_loss, fair_loss, tables))


def apply_update(top: Topology, grads: GradientSet, lambdas: Sequence[float], eta: float) -> None:
    """``theta <- theta - eta * sum_t (acc_t + lambda_t * fair_t)`` over each layer's tasks."""
    for layer in top.iter_layers():
        gW = np.zeros_like(layer.weights)
        gb = np.zeros_like(layer.bias)
        for t in layer.tasks:
            try:
                aW, ab = grads.acc[t][layer.key]
                fW, fb = grads.fair[t][layer.key]
            except KeyError:
                raise ShapeError(f"no gradient for task {t} at layer {layer.key}") from None
            if aW.shape != gW.shape or fW.shape != gW.shape:
                raise ShapeError(f"gradient shape mismatch at layer {layer.key}")
            gW += aW + lambdas[t] * fW
            gb += ab + lambdas[t] * fb
        layer.weights -= eta * gW
        layer.bias -= eta * gb


# ---------------------------------------------------------------------------
# parameter accounting


def parameter_count(top: Topology) -> int:
    return sum(layer.size for layer in top.iter_layers())


def stl_parameter_count(n_features: int, hidden_widths: Sequence[int]) -> int:
    dims = (n_features, *hidden_widths, 1)
    return sum(dims[i] * dims[i + 1] + dims[i + 1] for i in range(len(dims) - 1))


def relative_parameters(
    top: Topology,
    n_features: int | None = None,
    hidden_widths: Sequence[int] | None = None,
    n_tasks: int | None = None,
) -> float:
    """Parameter count relative to training one single-task network per task."""
    m = top.n_features if n_features is None else n_features
    widths = top.hidden_widths if hidden_widths is None else hidden_widths
    T = top.n_tasks if n_tasks is None else n_tasks
    return parameter_count(top) / (T * stl_parameter_count(m, widths))
