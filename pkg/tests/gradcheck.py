"""Central finite-difference checks shared by the model and acceptance tests."""

import numpy as np

from vnirliquid.model import HierarchicalModel, log_softmax

EPS = 1e-5
# only guards exact zeros (e.g. units switched off by a ReLU)
DENOM_FLOOR = 1e-12


def toy_model(seed: int, mode: str = "hier", link: str = "probs") -> HierarchicalModel:
    """Feature dim 10, hidden 8/6/4 per branch, float64, parameters randomised.

    Biases are randomised too so no ReLU sits exactly on its kink.
    """
    rng = np.random.default_rng(seed)
    model = HierarchicalModel.init(10, rng, hidden=(8, 6, 4), mode=mode, link=link, dtype=np.float64)
    for p in model.parameters():
        p[...] = rng.normal(0.0, 0.6, p.shape)
    return model


def loss_terms(model, x, yc, yb):
    """(total, container, content) batch-mean cross entropy, kept in the model's dtype."""
    pred = model.predict(x)
    rows = np.arange(len(pred))
    container = -log_softmax(pred.container_logits)[rows, yc].mean()
    content = -log_softmax(pred.content_logits)[rows, yb].mean()
    return container + content, container, content


def extended_copy(model: HierarchicalModel) -> HierarchicalModel:
    """The same model with every array in extended precision (np.longdouble)."""
    out = model.copy()
    for branch in (out.container_branch, out.content_branch):
        for layer in branch.layers:
            layer.W = layer.W.astype(np.longdouble)
            layer.b = layer.b.astype(np.longdouble)
    out.input_shift = out.input_shift.astype(np.longdouble)
    out.input_scale = out.input_scale.astype(np.longdouble)
    return out


def numeric_gradient(model, x, yc, yb, term: int = 0, extended: bool = True) -> list[np.ndarray]:
    """d(loss term)/d(param) by central differences; term 0 total, 1 container, 2 content.

    With ``extended`` the differences are taken in long double so round-off
    in the loss (about 1e-16 / EPS in float64) does not swamp tiny gradients.
    """
    if extended and np.finfo(np.longdouble).eps < np.finfo(np.float64).eps:
        model = extended_copy(model)
        x = np.asarray(x, dtype=np.longdouble)
    grads = []
    for p in model.parameters():
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + EPS
            up = loss_terms(model, x, yc, yb)[term]
            flat[i] = old - EPS
            down = loss_terms(model, x, yc, yb)[term]
            flat[i] = old
            gflat[i] = (up - down) / (2 * EPS)
        grads.append(g.astype(np.float64))
    return grads


def analytic_gradient(model, x, yc, yb) -> list[np.ndarray]:
    cache = model.forward(x)  # no rng: dropout off
    return model.backward(cache, yc, yb)


def max_relative_error(analytic, numeric) -> float:
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), DENOM_FLOOR)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst
