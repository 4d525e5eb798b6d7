"""Hierarchical two-branch MLP in plain numpy.

The container branch maps features to container logits. The content branch
sees the features concatenated with the container branch's softmax output,
so the content loss back-propagates into the container weights. In naive
mode the content branch sees the features alone and the two branches are
independent.

All layer weights are stored as (fan_in, fan_out) so ``a @ W + b`` is the
dense map; batches are rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .labels import N_CONTAINER, N_CONTENT

DEFAULT_HIDDEN = (200, 100, 25)
DEFAULT_DROPOUT = 0.25
INIT_SCHEME = "glorot_uniform(sqrt(6/(fan_in+fan_out))), zero_bias"


class Mode(str, Enum):
    HIERARCHICAL = "hier"
    NAIVE = "naive"


class Link(str, Enum):
    """What the container branch hands to the content branch."""

    PROBS = "probs"
    LOGITS = "logits"


class CacheError(RuntimeError):
    pass


def log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=-1, keepdims=True)
    shifted = z - m
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def flush_subnormal(a: np.ndarray) -> np.ndarray:
    """Zero subnormal entries in place.

    Confident float32 predictions produce them, and they carry nothing but
    slow every matmul they reach several-fold.
    """
    a[np.abs(a) < np.finfo(a.dtype).tiny] = 0
    return a


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return flush_subnormal(e / e.sum(axis=-1, keepdims=True))


def argmax_lowest(p: np.ndarray) -> np.ndarray:
    # np.argmax already returns the first maximal index
    return np.argmax(p, axis=-1)


@dataclass
class Dense:
    W: np.ndarray
    b: np.ndarray

    @property
    def rows(self) -> int:
        return self.W.shape[0]

    @property
    def cols(self) -> int:
        return self.W.shape[1]


@dataclass
class _BranchCache:
    inputs: list[np.ndarray]
    pre: list[np.ndarray]
    masks: list[np.ndarray | None]


class MlpBranch:
    """Dense stack: input -> hidden... -> classes, ReLU + dropout after each hidden layer."""

    def __init__(self, layers: Sequence[Dense], dropout_rate: float = DEFAULT_DROPOUT):
        if not 0.0 <= dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        layers = list(layers)
        for a, b in zip(layers, layers[1:]):
            if a.cols != b.rows:
                raise ValueError(f"layer dims do not chain: {a.cols} -> {b.rows}")
        for layer in layers:
            if layer.b.shape != (layer.cols,):
                raise ValueError("bias shape does not match layer width")
            if not (np.all(np.isfinite(layer.W)) and np.all(np.isfinite(layer.b))):
                raise ValueError("weights must be finite")
        self.layers = layers
        self.dropout_rate = float(dropout_rate)

    @classmethod
    def init(
        cls,
        dims: Sequence[int],
        rng: np.random.Generator,
        dropout_rate: float = DEFAULT_DROPOUT,
        dtype=np.float64,
    ) -> "MlpBranch":
        layers = []
        for fan_in, fan_out in zip(dims, dims[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            W = rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)
            layers.append(Dense(W, np.zeros(fan_out, dtype=dtype)))
        return cls(layers, dropout_rate)

    @property
    def dims(self) -> list[int]:
        return [self.layers[0].rows] + [layer.cols for layer in self.layers]

    @property
    def input_dim(self) -> int:
        return self.layers[0].rows

    @property
    def n_classes(self) -> int:
        return self.layers[-1].cols

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend((layer.W, layer.b))
        return out

    def forward(
        self, x: np.ndarray, rng: np.random.Generator | None = None
    ) -> tuple[np.ndarray, _BranchCache]:
        """Logits for a batch. Dropout (inverted) is active iff ``rng`` is given."""
        cache = _BranchCache([], [], [])
        a = x
        last = len(self.layers) - 1
        keep = 1.0 - self.dropout_rate
        for i, layer in enumerate(self.layers):
            cache.inputs.append(a)
            z = a @ layer.W + layer.b
            cache.pre.append(z)
            if i == last:
                cache.masks.append(None)
                return z, cache
            a = np.maximum(z, 0)
            mask = None
            if rng is not None and self.dropout_rate > 0:
                mask = (rng.random(a.shape) < keep).astype(a.dtype) / a.dtype.type(keep)
                a = a * mask
            cache.masks.append(mask)
        raise AssertionError("branch has no layers")

    def backward(
        self, dlogits: np.ndarray, cache: _BranchCache, need_input_grad: bool = False
    ) -> tuple[list[np.ndarray], np.ndarray | None]:
        grads: list[np.ndarray] = [None] * (2 * len(self.layers))  # type: ignore[list-item]
        d = dlogits
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            if i < len(self.layers) - 1:
                mask = cache.masks[i]
                if mask is not None:
                    d = d * mask
                d = d * (cache.pre[i] > 0)
            d = flush_subnormal(d.copy() if d is dlogits else d)
            grads[2 * i] = cache.inputs[i].T @ d
            grads[2 * i + 1] = d.sum(axis=0)
            if i > 0 or need_input_grad:
                d = d @ layer.W.T
        return grads, (d if need_input_grad else None)


@dataclass
class Prediction:
    """Batched outputs of both heads; rows are samples."""

    container_logits: np.ndarray
    content_logits: np.ndarray
    container_probs: np.ndarray = field(init=False)
    content_probs: np.ndarray = field(init=False)
    container_argmax: np.ndarray = field(init=False)
    content_argmax: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.container_probs = softmax(self.container_logits)
        self.content_probs = softmax(self.content_logits)
        self.container_argmax = argmax_lowest(self.container_probs)
        self.content_argmax = argmax_lowest(self.content_probs)

    def __len__(self) -> int:
        return self.container_logits.shape[0]


@dataclass
class ForwardCache:
    features: np.ndarray
    container: _BranchCache
    content: _BranchCache
    prediction: Prediction
    train: bool


class HierarchicalModel:
    """Container branch plus content branch conditioned on the container output."""

    FORMAT_VERSION = 1

    def __init__(
        self,
        container_branch: MlpBranch,
        content_branch: MlpBranch,
        mode: Mode | str = Mode.HIERARCHICAL,
        link: Link | str = Link.PROBS,
        feature_config: str | None = None,
        init_scheme: str = INIT_SCHEME,
        input_shift: np.ndarray | None = None,
        input_scale: np.ndarray | None = None,
    ):
        self.container_branch = container_branch
        self.content_branch = content_branch
        self.mode = Mode(mode)
        self.link = Link(link)
        self.feature_config = feature_config
        self.init_scheme = init_scheme
        dim = container_branch.input_dim
        dtype = container_branch.layers[0].W.dtype
        self.input_shift = np.zeros(dim, dtype) if input_shift is None else np.asarray(input_shift, dtype)
        self.input_scale = np.ones(dim, dtype) if input_scale is None else np.asarray(input_scale, dtype)
        if self.input_shift.shape != (dim,) or self.input_scale.shape != (dim,):
            raise ValueError(f"input standardization vectors must have length {dim}")
        if np.any(self.input_scale <= 0) or not np.all(np.isfinite(self.input_shift)):
            raise ValueError("input_scale must be positive and input_shift finite")
        expected = self.feature_dim
        if self.mode is Mode.HIERARCHICAL:
            expected += container_branch.n_classes
        if content_branch.input_dim != expected:
            raise ValueError(
                f"content branch input dim is {content_branch.input_dim}, expected {expected} "
                f"for {self.mode.value} mode"
            )

    @classmethod
    def init(
        cls,
        feature_dim: int,
        seed: int | np.random.Generator = 0,
        *,
        hidden: Sequence[int] = DEFAULT_HIDDEN,
        n_container: int = N_CONTAINER,
        n_content: int = N_CONTENT,
        mode: Mode | str = Mode.HIERARCHICAL,
        link: Link | str = Link.PROBS,
        dropout_rate: float = DEFAULT_DROPOUT,
        feature_config: str | None = None,
        dtype=np.float64,
    ) -> "HierarchicalModel":
        rng = np.random.default_rng(seed)
        mode = Mode(mode)
        hidden = list(hidden)
        content_in = feature_dim + (n_container if mode is Mode.HIERARCHICAL else 0)
        container = MlpBranch.init([feature_dim, *hidden, n_container], rng, dropout_rate, dtype)
        content = MlpBranch.init([content_in, *hidden, n_content], rng, dropout_rate, dtype)
        return cls(container, content, mode, link, feature_config)

    def fit_standardization(self, X: np.ndarray) -> None:
        """Centre and scale each input feature using statistics of ``X``.

        The transform is fixed (not trained) and stored with the model.
        Constant features keep unit scale.
        """
        X = np.asarray(X, dtype=np.float64)
        std = X.std(axis=0)
        std[~(std > 1e-12)] = 1.0
        self.input_shift = X.mean(axis=0).astype(self.dtype)
        self.input_scale = std.astype(self.dtype)

    def standardize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.input_shift) / self.input_scale

    @property
    def feature_dim(self) -> int:
        return self.container_branch.input_dim

    @property
    def dtype(self):
        return self.container_branch.layers[0].W.dtype

    def parameters(self) -> list[np.ndarray]:
        return self.container_branch.parameters() + self.content_branch.parameters()

    def parameter_names(self) -> list[str]:
        names = []
        for branch_name, branch in (("container", self.container_branch), ("content", self.content_branch)):
            for i in range(len(branch.layers)):
                names += [f"{branch_name}.{i}.W", f"{branch_name}.{i}.b"]
        return names

    def copy(self) -> "HierarchicalModel":
        def clone(branch: MlpBranch) -> MlpBranch:
            return MlpBranch([Dense(l.W.copy(), l.b.copy()) for l in branch.layers], branch.dropout_rate)

        return HierarchicalModel(
            clone(self.container_branch),
            clone(self.content_branch),
            self.mode,
            self.link,
            self.feature_config,
            self.init_scheme,
            self.input_shift.copy(),
            self.input_scale.copy(),
        )

    def _link_features(self, container_logits: np.ndarray) -> np.ndarray:
        if self.link is Link.PROBS:
            return softmax(container_logits)
        return container_logits

    def forward(
        self, features: np.ndarray, rng: np.random.Generator | None = None
    ) -> ForwardCache:
        """Run both branches. Passing ``rng`` selects train mode (dropout on)."""
        x = np.asarray(features)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.shape[1] != self.feature_dim:
            raise ValueError(f"expected {self.feature_dim} features, got {x.shape[1]}")
        x = self.standardize(x)
        container_logits, c_cache = self.container_branch.forward(x, rng)
        if self.mode is Mode.HIERARCHICAL:
            content_in = np.concatenate([x, self._link_features(container_logits)], axis=1)
        else:
            content_in = x
        content_logits, b_cache = self.content_branch.forward(content_in, rng)
        pred = Prediction(container_logits, content_logits)
        return ForwardCache(x, c_cache, b_cache, pred, train=rng is not None)

    def predict(self, features: np.ndarray) -> Prediction:
        return self.forward(features).prediction

    def backward(
        self, cache: ForwardCache | None, container_labels, content_labels
    ) -> list[np.ndarray]:
        """Gradient of the batch-mean composite loss w.r.t. every parameter.

        Order matches :meth:`parameters`.
        """
        if cache is None or cache.prediction is None:
            raise CacheError("backward needs the cache from a forward pass")
        pred = cache.prediction
        yc = np.asarray(container_labels).reshape(-1)
        yb = np.asarray(content_labels).reshape(-1)
        n = len(pred)
        if yc.shape[0] != n or yb.shape[0] != n:
            raise CacheError("label count does not match the cached batch")
        rows = np.arange(n)

        d_content = pred.content_probs.copy()
        d_content[rows, yb] -= 1
        d_content /= n
        hier = self.mode is Mode.HIERARCHICAL
        content_grads, d_in = self.content_branch.backward(d_content, cache.content, need_input_grad=hier)

        d_container = pred.container_probs.copy()
        d_container[rows, yc] -= 1
        d_container /= n
        if hier:
            d_link = d_in[:, self.feature_dim :]
            if self.link is Link.PROBS:
                p = pred.container_probs
                d_container = d_container + p * (d_link - (d_link * p).sum(axis=1, keepdims=True))
            else:
                d_container = d_container + d_link
        container_grads, _ = self.container_branch.backward(d_container, cache.container)
        return container_grads + content_grads


def loss(prediction: Prediction, container_labels, content_labels) -> tuple[float, float, float]:
    """Batch-mean cross entropy of both heads: (total, container_term, content_term).

    Computed from logits with log-sum-exp, never from clipped probabilities.
    """
    yc = np.atleast_1d(np.asarray(container_labels))
    yb = np.atleast_1d(np.asarray(content_labels))
    rows = np.arange(len(prediction))
    container_term = float(-log_softmax(prediction.container_logits)[rows, yc].mean())
    content_term = float(-log_softmax(prediction.content_logits)[rows, yb].mean())
    return container_term + content_term, container_term, content_term


class Adam:
    """Adam with bias correction, updating the given arrays in place."""

    def __init__(
        self,
        params: list[np.ndarray],
        lr: float = 0.01,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        step_size = float(self.lr * np.sqrt(c2) / c1)
        eps_hat = float(self.eps * np.sqrt(c2))
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * (g * g)
            if self.lr == 0:
                continue
            p -= step_size * m / (np.sqrt(v) + eps_hat)
