"""Small reverse-mode automatic differentiation engine over numpy arrays.

Exactly the operations the reading-comprehension network needs: broadcast
aware arithmetic, matmul, slicing/concatenation, the usual nonlinearities,
masked softmax and gather/scatter lookups. Every operation returns a new
Tensor whose closure knows how to push gradients to its parents; backward()
walks the recorded graph in reverse topological order.

Graph recording is skipped when no input requires gradients (or inside
no_grad()), so evaluation passes carry no tape overhead.
"""

from __future__ import annotations

import numpy as np

_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables graph recording."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None):
        if not isinstance(data, np.ndarray):
            data = np.asarray(data, dtype=np.float64)
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward_fn = backward_fn

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def _accumulate(self, grad):
        # Gradients are never mutated in place, so sharing arrays is safe.
        self.grad = grad if self.grad is None else self.grad + grad

    def backward(self):
        """Backpropagate from this tensor; seeds with ones."""
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    # Operator sugar; scalars and arrays are wrapped as constants.
    def __add__(self, other):
        return add(self, _wrap(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other, self))

    def __rsub__(self, other):
        return sub(_wrap(other, self), self)

    def __mul__(self, other):
        return mul(self, _wrap(other, self))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _wrap(other, self))

    def __neg__(self):
        return mul(self, _wrap(-1.0, self))


def _wrap(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.data.dtype))


def _make(data, parents, backward_fn) -> Tensor:
    parents = tuple(p for p in parents if isinstance(p, Tensor))
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, backward_fn)
    return Tensor(data)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(out_data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _make(out_data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(out_data, (a, b), backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data / b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(out_data, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out_data = np.matmul(a.data, b.data)

    def backward(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a._accumulate(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b._accumulate(_unbroadcast(gb, b.shape))

    return _make(out_data, (a, b), backward)


def relu(x: Tensor) -> Tensor:
    out_data = np.maximum(x.data, 0.0)

    def backward(g):
        x._accumulate(g * (x.data > 0))

    return _make(out_data, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    out_data = 1.0 / (1.0 + np.exp(-x.data))

    def backward(g):
        x._accumulate(g * out_data * (1.0 - out_data))

    return _make(out_data, (x,), backward)


def tanh(x: Tensor) -> Tensor:
    out_data = np.tanh(x.data)

    def backward(g):
        x._accumulate(g * (1.0 - out_data * out_data))

    return _make(out_data, (x,), backward)


def exp(x: Tensor) -> Tensor:
    out_data = np.exp(x.data)

    def backward(g):
        x._accumulate(g * out_data)

    return _make(out_data, (x,), backward)


def log(x: Tensor) -> Tensor:
    out_data = np.log(x.data)

    def backward(g):
        x._accumulate(g / x.data)

    return _make(out_data, (x,), backward)


def clip_min(x: Tensor, lo: float) -> Tensor:
    """Elementwise max(x, lo); gradients vanish where the floor is active."""
    out_data = np.maximum(x.data, lo)

    def backward(g):
        x._accumulate(g * (x.data > lo))

    return _make(out_data, (x,), backward)


def tsum(x: Tensor, axis=None, keepdims=False) -> Tensor:
    out_data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            g = np.expand_dims(g, axes)
        x._accumulate(np.broadcast_to(g, x.shape).copy())

    return _make(out_data, (x,), backward)


def concat(tensors, axis=-1) -> Tensor:
    tensors = list(tensors)
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def backward(g):
        offsets = np.cumsum([0] + sizes)
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(start, stop)
                t._accumulate(g[tuple(index)])

    return _make(out_data, tensors, backward)


def narrow(x: Tensor, axis: int, start: int, size: int) -> Tensor:
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, start + size)
    index = tuple(index)
    out_data = x.data[index]

    def backward(g):
        full = np.zeros_like(x.data)
        full[index] = g
        x._accumulate(full)

    return _make(out_data, (x,), backward)


def reshape(x: Tensor, shape) -> Tensor:
    out_data = x.data.reshape(shape)

    def backward(g):
        x._accumulate(g.reshape(x.shape))

    return _make(out_data, (x,), backward)


def transpose_last(x: Tensor) -> Tensor:
    out_data = np.swapaxes(x.data, -1, -2)

    def backward(g):
        x._accumulate(np.swapaxes(g, -1, -2))

    return _make(out_data, (x,), backward)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup: out[..., :] = table[ids[...], :]."""
    out_data = table.data[ids]

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.data.shape[-1]))
        table._accumulate(full)

    return _make(out_data, (table,), backward)


def gather_pairs(x: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """out[i] = x[rows[i], cols[i]] for a 2-D tensor."""
    out_data = x.data[rows, cols]

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, (rows, cols), g)
        x._accumulate(full)

    return _make(out_data, (x,), backward)


def gather1d(x: Tensor, idx: np.ndarray) -> Tensor:
    out_data = x.data[idx]

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        x._accumulate(full)

    return _make(out_data, (x,), backward)


def gru_sequence(
    x_seq: Tensor,
    wx: Tensor,
    wh: Tensor,
    b: Tensor,
    mask: np.ndarray,
    reverse: bool = False,
) -> Tensor:
    """Run a GRU over a padded sequence as one fused operation.

    Gates: r = sigmoid(gx_r + gh_r), z = sigmoid(gx_z + gh_z),
    n = tanh(gx_n + r * gh_n), candidate = (1-z)*n + z*h; masked positions
    carry the previous state through unchanged. Backpropagation through time
    is hand-derived here; the per-step composition of primitive ops gives the
    same gradients but a far larger tape.
    """
    xd, wxd, whd, bd = x_seq.data, wx.data, wh.data, b.data
    batch, length, _ = xd.shape
    hidden = whd.shape[0]
    fmask = mask.astype(xd.dtype)
    gx_all = np.matmul(xd, wxd) + bd  # (B, L, 3H)
    h = np.zeros((batch, hidden), dtype=xd.dtype)
    out = np.empty((batch, length, hidden), dtype=xd.dtype)
    order = list(range(length - 1, -1, -1)) if reverse else list(range(length))
    saved = [None] * length
    for t in order:
        gx = gx_all[:, t]
        gh = np.matmul(h, whd)
        r = 1.0 / (1.0 + np.exp(-(gx[:, :hidden] + gh[:, :hidden])))
        z = 1.0 / (1.0 + np.exp(-(gx[:, hidden : 2 * hidden] + gh[:, hidden : 2 * hidden])))
        gh_n = gh[:, 2 * hidden :]
        n = np.tanh(gx[:, 2 * hidden :] + r * gh_n)
        candidate = (1.0 - z) * n + z * h
        m = fmask[:, t : t + 1]
        h_new = m * candidate + (1.0 - m) * h
        saved[t] = (r, z, n, gh_n, h)
        out[:, t] = h_new
        h = h_new

    def backward(g):
        dgx_all = np.zeros_like(gx_all)
        dwh = np.zeros_like(whd)
        dh = np.zeros((batch, hidden), dtype=xd.dtype)
        for t in reversed(order):
            r, z, n, gh_n, h_prev = saved[t]
            m = fmask[:, t : t + 1]
            dht = dh + g[:, t]
            dcand = dht * m
            dh_prev = dht * (1.0 - m)
            dn = dcand * (1.0 - z)
            dz = dcand * (h_prev - n)
            dh_prev = dh_prev + dcand * z
            da_n = dn * (1.0 - n * n)
            dr = da_n * gh_n
            da_z = dz * z * (1.0 - z)
            da_r = dr * r * (1.0 - r)
            dgx_all[:, t, :hidden] = da_r
            dgx_all[:, t, hidden : 2 * hidden] = da_z
            dgx_all[:, t, 2 * hidden :] = da_n
            dgh = np.concatenate([da_r, da_z, da_n * r], axis=1)
            dwh += np.matmul(h_prev.T, dgh)
            dh = dh_prev + np.matmul(dgh, whd.T)
        if x_seq.requires_grad:
            x_seq._accumulate(np.matmul(dgx_all, wxd.T))
        if wx.requires_grad:
            wx._accumulate(
                np.matmul(xd.reshape(-1, xd.shape[-1]).T, dgx_all.reshape(-1, 3 * hidden))
            )
        if wh.requires_grad:
            wh._accumulate(dwh)
        if b.requires_grad:
            b._accumulate(dgx_all.sum(axis=(0, 1)))

    return _make(out, (x_seq, wx, wh, b), backward)


def masked_softmax(x: Tensor, mask: np.ndarray) -> Tensor:
    """Softmax over the last axis restricted to mask==True positions.

    Rows with no valid position come out as all zeros (used by diagonal-
    dropped self attention on length-1 sequences).
    """
    mask_b = np.broadcast_to(mask, x.data.shape)
    neg_inf = np.full_like(x.data, -np.inf)
    shifted = np.where(mask_b, x.data, neg_inf)
    high = shifted.max(axis=-1, keepdims=True)
    high = np.where(np.isfinite(high), high, 0.0)
    weights = np.exp(shifted - high)
    denom = weights.sum(axis=-1, keepdims=True)
    out_data = weights / np.where(denom > 0, denom, 1.0)

    def backward(g):
        dot = (g * out_data).sum(axis=-1, keepdims=True)
        x._accumulate(out_data * (g - dot))

    return _make(out_data, (x,), backward)
