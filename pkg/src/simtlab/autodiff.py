"""Minimal reverse-mode automatic differentiation over numpy arrays.

Just enough machinery for the translation scorer and the decision agent:
dense/batched matmul, the usual pointwise nonlinearities, layer norm,
softmax, embedding lookup and a fused masked cross-entropy.  Everything is
float64 and deterministic.  Gradients are accumulated by walking the tape
in reverse topological order; `no_grad()` suppresses tape construction for
pure inference.
"""

from __future__ import annotations

import contextlib

import numpy as np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape construction inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """An ndarray plus an optional backward closure on the tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar loss")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        for node in topo:
            node.grad = None
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accum(t: Tensor, g: np.ndarray):
    if t.grad is None:
        t.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward pass."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out_data = a.data + b.data

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _make(out_data, (a, b), backward)


def sub(a, b) -> Tensor:
    return add(a, scale(b, -1.0))


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out_data = a.data * b.data

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(out_data, (a, b), backward)


def scale(a, s: float) -> Tensor:
    a = _wrap(a)

    def backward(g):
        _accum(a, g * s)

    return _make(a.data * s, (a,), backward)


def mul_const(a, c: np.ndarray) -> Tensor:
    """Multiply by a constant array (no gradient into `c`); used for masks."""
    a = _wrap(a)

    def backward(g):
        _accum(a, g * c)

    return _make(a.data * c, (a,), backward)


def add_const(a, c: np.ndarray) -> Tensor:
    a = _wrap(a)

    def backward(g):
        _accum(a, g)

    return _make(a.data + c, (a,), backward)


def linear(x, w) -> Tensor:
    """x @ w where x is (..., m) and w is (m, k)."""
    x, w = _wrap(x), _wrap(w)
    out_data = x.data @ w.data

    def backward(g):
        m = x.data.shape[-1]
        k = g.shape[-1]
        _accum(x, g @ w.data.T)
        _accum(w, x.data.reshape(-1, m).T @ g.reshape(-1, k))

    return _make(out_data, (x, w), backward)


def bmm(a, b) -> Tensor:
    """Batched matmul with identical leading dims: (..., n, m) @ (..., m, k)."""
    a, b = _wrap(a), _wrap(b)
    out_data = a.data @ b.data

    def backward(g):
        _accum(a, g @ np.swapaxes(b.data, -1, -2))
        _accum(b, np.swapaxes(a.data, -1, -2) @ g)

    return _make(out_data, (a, b), backward)


def relu(x) -> Tensor:
    x = _wrap(x)
    mask = x.data > 0

    def backward(g):
        _accum(x, g * mask)

    return _make(x.data * mask, (x,), backward)


def tanh(x) -> Tensor:
    x = _wrap(x)
    y = np.tanh(x.data)

    def backward(g):
        _accum(x, g * (1.0 - y * y))

    return _make(y, (x,), backward)


def sigmoid(x) -> Tensor:
    x = _wrap(x)
    y = np.where(x.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(x.data))),
                 np.exp(-np.abs(x.data)) / (1.0 + np.exp(-np.abs(x.data))))

    def backward(g):
        _accum(x, g * y * (1.0 - y))

    return _make(y, (x,), backward)


def softmax(x, axis=-1) -> Tensor:
    x = _wrap(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        _accum(x, y * (g - dot))

    return _make(y, (x,), backward)


def layer_norm(x, gain, bias, eps=1e-5) -> Tensor:
    """Normalize over the last axis, then apply elementwise gain and bias."""
    x, gain, bias = _wrap(x), _wrap(gain), _wrap(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out_data = xhat * gain.data + bias.data

    def backward(g):
        n = x.data.shape[-1]
        gxhat = g * gain.data
        s1 = gxhat.sum(axis=-1, keepdims=True)
        s2 = (gxhat * xhat).sum(axis=-1, keepdims=True)
        _accum(x, inv * (gxhat - s1 / n - xhat * s2 / n))
        red = tuple(range(g.ndim - 1))
        _accum(gain, (g * xhat).sum(axis=red))
        _accum(bias, g.sum(axis=red))

    return _make(out_data, (x, gain, bias), backward)


def embedding(table, ids: np.ndarray) -> Tensor:
    """Gather rows of `table` (V, d) by an integer id array of any shape."""
    table = _wrap(table)
    ids = np.asarray(ids)
    out_data = table.data[ids]

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.data.shape[-1]))
        _accum(table, gt)

    return _make(out_data, (table,), backward)


def reshape(x, shape) -> Tensor:
    x = _wrap(x)
    old = x.data.shape

    def backward(g):
        _accum(x, g.reshape(old))

    return _make(x.data.reshape(shape), (x,), backward)


def transpose(x, axes) -> Tensor:
    x = _wrap(x)
    inv = np.argsort(axes)

    def backward(g):
        _accum(x, g.transpose(inv))

    return _make(x.data.transpose(axes), (x,), backward)


def concat(parts, axis=-1) -> Tensor:
    parts = [_wrap(p) for p in parts]
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for p, piece in zip(parts, np.split(g, splits, axis=axis)):
            _accum(p, piece)

    return _make(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), backward)


def sum_all(x) -> Tensor:
    x = _wrap(x)

    def backward(g):
        _accum(x, np.broadcast_to(g, x.data.shape).copy())

    return _make(x.data.sum(), (x,), backward)


def dropout(x, p: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when p == 0 or no generator is supplied."""
    x = _wrap(x)
    if p <= 0.0 or rng is None:
        return x
    keep = rng.random(x.data.shape) >= p
    return mul_const(x, keep / (1.0 - p))


def log_softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Plain-forward log softmax over the last axis (no tape)."""
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(logits, targets: np.ndarray, weight: np.ndarray,
                  label_smoothing: float = 0.0) -> Tensor:
    """Mean token-level cross-entropy of `targets` under `logits`.

    logits: (..., V); targets: integer array (...); weight: same shape as
    targets, 0 for padding rows.  With label smoothing eps the per-token
    loss is (1-eps) * nll(target) + eps * mean_v nll(v).
    """
    logits = _wrap(logits)
    v = logits.data.shape[-1]
    flat = logits.data.reshape(-1, v)
    tflat = targets.reshape(-1)
    wflat = weight.reshape(-1).astype(np.float64)
    wsum = wflat.sum()
    if wsum <= 0:
        raise ValueError("cross_entropy: no unmasked target tokens")
    lsm = log_softmax_rows(flat)
    nll = -lsm[np.arange(flat.shape[0]), tflat]
    smooth = -lsm.mean(axis=-1)
    eps = label_smoothing
    loss = (wflat * ((1.0 - eps) * nll + eps * smooth)).sum() / wsum

    def backward(g):
        # d loss_tok / d z_j = p_j - (1-eps)*[j == target] - eps/V
        grad = np.exp(lsm)
        grad[np.arange(flat.shape[0]), tflat] -= (1.0 - eps)
        grad -= eps / v
        grad *= (g * wflat / wsum)[:, None]
        _accum(logits, grad.reshape(logits.data.shape))

    return _make(np.asarray(loss), (logits,), backward)


def bce_logits(logits, labels: np.ndarray, weight: np.ndarray) -> Tensor:
    """Mean binary cross-entropy of {0,1} `labels` under Bernoulli logits."""
    logits = _wrap(logits)
    z = logits.data
    y = labels.astype(np.float64)
    w = weight.astype(np.float64)
    wsum = w.sum()
    if wsum <= 0:
        raise ValueError("bce_logits: no unmasked steps")
    # log(1 + exp(-|z|)) formulation avoids overflow on both tails
    per = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    loss = (w * per).sum() / wsum

    def backward(g):
        p = np.where(z >= 0, 1.0 / (1.0 + np.exp(-z)), np.exp(z) / (1.0 + np.exp(z)))
        _accum(logits, g * w * (p - y) / wsum)

    return _make(np.asarray(loss), (logits,), backward)


def gradient_check(loss_fn, params: dict, rel_tol: float = 1e-3,
                   h: float = 1e-5, max_entries: int = 6,
                   rng: np.random.Generator | None = None) -> float:
    """Compare analytic gradients of `loss_fn(params)` with central differences.

    Probes up to `max_entries` coordinates per parameter and returns the
    worst relative error.  `loss_fn` must rebuild the graph on every call.
    """
    rng = rng or np.random.default_rng(0)
    loss = loss_fn(params)
    loss.backward()
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for k, p in params.items()}
    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n = flat.shape[0]
        idxs = rng.choice(n, size=min(max_entries, n), replace=False)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            up = float(loss_fn(params).data)
            flat[i] = orig - h
            dn = float(loss_fn(params).data)
            flat[i] = orig
            numeric = (up - dn) / (2 * h)
            ana = analytic[name].reshape(-1)[i]
            denom = max(abs(numeric), abs(ana), 1e-8)
            worst = max(worst, abs(numeric - ana) / denom)
    if worst > rel_tol:
        raise AssertionError(f"gradient check failed: rel error {worst:.3e} > {rel_tol}")
    return worst
