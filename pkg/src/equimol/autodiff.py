"""Reverse-mode automatic differentiation on dense numpy buffers.

A ``Tape`` records primitive operations during a forward pass; replaying it
in reverse accumulates gradients for every tensor that requires them.  The
engine is strictly first order: a tape is good for exactly one backward pass
and VJP closures run plain numpy.  Everything defaults to float64.
"""

from __future__ import annotations

import numpy as np


class AutodiffError(Exception):
    pass


class StaleTapeError(AutodiffError):
    """Raised when backward is called twice on the same tape."""


_TAPE_STACK: list["Tape"] = []


def _active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tensor:
    """A dense row-major array plus a requires_grad flag.

    Tensors are treated as immutable values once created; the training loop
    is the only place that rebinds ``.data`` (between tapes, never during a
    forward pass).
    """

    __slots__ = ("data", "requires_grad", "_tape")

    def __init__(self, data, requires_grad=False, dtype=np.float64):
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self._tape = None  # set when an op records this tensor as an output

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(()))

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return mul(self, reciprocal(as_tensor(other)))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x, dtype=np.float64):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def constant(x):
    return as_tensor(x)


def zeros(shape):
    return Tensor(np.zeros(shape))


class Tape:
    """Append-only record of one forward pass.

    Use as a context manager::

        with Tape() as tape:
            loss = f(params)
        grads = tape.backward(loss)

    ``backward`` may be called once; the tape is spent afterwards.
    """

    def __init__(self):
        self._nodes = []  # (out, parents, vjp) in creation order
        self._spent = False

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        if _TAPE_STACK and _TAPE_STACK[-1] is self:
            _TAPE_STACK.pop()
        return False

    def _append(self, out, parents, vjp):
        if self._spent:
            raise StaleTapeError("tape already consumed by backward")
        out._tape = self
        self._nodes.append((out, parents, vjp))

    def __len__(self):
        return len(self._nodes)

    def backward(self, root):
        """Accumulate gradients of a scalar root for every requires_grad leaf.

        Returns a dict mapping leaf Tensor -> gradient ndarray.  Gradients of
        intermediate nodes are freed as soon as they are consumed.
        """
        if self._spent:
            raise StaleTapeError("tape already consumed by backward")
        if not isinstance(root, Tensor) or root.data.size != 1:
            raise AutodiffError("backward root must be a scalar Tensor")
        if root._tape is not self:
            raise AutodiffError("root was not recorded on this tape")
        self._spent = True

        grads = {id(root): np.ones_like(root.data)}
        owners = {id(root): root}
        for out, parents, vjp in reversed(self._nodes):
            g = grads.pop(id(out), None)
            owners.pop(id(out), None)
            if g is None:
                continue
            pgrads = vjp(g)
            for p, pg in zip(parents, pgrads):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
                    owners[key] = p
        return {owners[k]: grads[k] for k in grads}


def _record(out_data, parents, vjp):
    out = Tensor(out_data)
    tape = _active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape._append(out, parents, vjp)
    return out


def _unbroadcast(g, shape):
    """Sum gradient g down to the given broadcast-source shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise primitives


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _record(a.data + b.data, (a, b), vjp)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _record(a.data - b.data, (a, b), vjp)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def vjp(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _record(ad * bd, (a, b), vjp)


def neg(a):
    a = as_tensor(a)

    def vjp(g):
        return (-g,)

    return _record(-a.data, (a,), vjp)


def reciprocal(a):
    """1/x.  Callers guarantee x != 0 (distances are strictly positive)."""
    a = as_tensor(a)
    out = 1.0 / a.data

    def vjp(g):
        return (-g * out * out,)

    return _record(out, (a,), vjp)


def _sigmoid(x):
    # numerically stable in both tails
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    a = as_tensor(a)
    s = _sigmoid(a.data)

    def vjp(g):
        return (g * s * (1.0 - s),)

    return _record(s, (a,), vjp)


def silu(a):
    """s(x) = x * sigmoid(x)."""
    a = as_tensor(a)
    ad = a.data
    s = _sigmoid(ad)

    def vjp(g):
        return (g * (s + ad * s * (1.0 - s)),)

    return _record(ad * s, (a,), vjp)


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)

    def vjp(g):
        return (g * out,)

    return _record(out, (a,), vjp)


def cos(a):
    a = as_tensor(a)
    ad = a.data

    def vjp(g):
        return (-g * np.sin(ad),)

    return _record(np.cos(ad), (a,), vjp)


def where(mask, a, b):
    """Select a where mask else b.  mask is a plain boolean array (no grad)."""
    mask = np.asarray(mask, dtype=bool)
    a, b = as_tensor(a), as_tensor(b)

    def vjp(g):
        return (
            _unbroadcast(np.where(mask, g, 0.0), a.data.shape),
            _unbroadcast(np.where(mask, 0.0, g), b.data.shape),
        )

    return _record(np.where(mask, a.data, b.data), (a, b), vjp)


# ---------------------------------------------------------------------------
# reductions


def reduce_sum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    shape = a.data.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, shape).copy(),)

    return _record(out, (a,), vjp)


def reduce_mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    shape = a.data.shape
    if axis is None:
        count = a.data.size
    else:
        count = shape[axis]
    out = a.data.mean(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g / count, shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg / count, shape).copy(),)

    return _record(out, (a,), vjp)


# ---------------------------------------------------------------------------
# structural ops


def reshape(a, shape):
    a = as_tensor(a)
    old = a.data.shape

    def vjp(g):
        return (g.reshape(old),)

    return _record(a.data.reshape(shape), (a,), vjp)


def expand_last(a):
    """Append a trailing axis of extent 1 (for broadcasting channel gates)."""
    return reshape(a, a.data.shape + (1,))


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), vjp)


def gather(a, index):
    """Row lookup a[index] along axis 0; index is a plain integer array."""
    a = as_tensor(a)
    index = np.asarray(index)
    shape = a.data.shape

    def vjp(g):
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, index, g)
        return (out,)

    return _record(a.data[index], (a,), vjp)


def scatter_add(messages, targets, n):
    """out[t] = sum of messages routed to t, accumulated in message order."""
    messages = as_tensor(messages)
    targets = np.asarray(targets)
    if targets.size and (targets.min() < 0 or targets.max() >= n):
        raise IndexError("scatter_add target index out of range")
    md = messages.data
    out = np.zeros((n,) + md.shape[1:], dtype=md.dtype)
    np.add.at(out, targets, md)

    def vjp(g):
        return (g[targets],)

    return _record(out, (messages,), vjp)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim != 2 or bd.ndim != 2:
        raise AutodiffError("matmul expects 2-D operands")
    if ad.shape[1] != bd.shape[0]:
        raise AutodiffError(f"matmul inner dims disagree: {ad.shape} @ {bd.shape}")

    def vjp(g):
        return g @ bd.T, ad.T @ g

    return _record(ad @ bd, (a, b), vjp)


def channel_linear(v, w):
    """Apply a channel-mixing matrix to vector features.

    v: (N, c_in, 3), w: (c_in, c_out) -> (N, c_out, 3).  Acts on the channel
    axis only, never the spatial one, so equivariance is preserved.
    """
    v, w = as_tensor(v), as_tensor(w)
    vd, wd = v.data, w.data
    if vd.ndim != 3 or wd.ndim != 2 or vd.shape[1] != wd.shape[0]:
        raise AutodiffError(f"channel_linear shape mismatch: {vd.shape} x {wd.shape}")
    out = np.einsum("nic,io->noc", vd, wd, optimize=True)

    def vjp(g):
        dv = np.einsum("noc,io->nic", g, wd, optimize=True)
        dw = np.einsum("nic,noc->io", vd, g, optimize=True)
        return dv, dw

    return _record(out, (v, w), vjp)


# ---------------------------------------------------------------------------
# spatial-axis ops


def channel_norm(v):
    """Per-channel Euclidean norm over the trailing spatial axis.

    The zero-vector subgradient is defined as 0, so vector features that are
    initialized to zero do not poison gradients with NaN.
    """
    v = as_tensor(v)
    vd = v.data
    n = np.sqrt(np.einsum("...c,...c->...", vd, vd))

    def vjp(g):
        inv = np.where(n > 0.0, 1.0 / np.where(n > 0.0, n, 1.0), 0.0)
        return ((g * inv)[..., None] * vd,)

    return _record(n, (v,), vjp)


def channel_inner(a, b):
    """Per-channel dot product over the trailing spatial axis."""
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.shape != bd.shape:
        raise AutodiffError(f"channel_inner shape mismatch: {ad.shape} vs {bd.shape}")

    def vjp(g):
        return g[..., None] * bd, g[..., None] * ad

    return _record(np.einsum("...c,...c->...", ad, bd), (a, b), vjp)


# ---------------------------------------------------------------------------
# finite-difference gradient checking


class GradcheckReport:
    def __init__(self, max_abs_err, max_rel_err, passed, detail=""):
        self.max_abs_err = max_abs_err
        self.max_rel_err = max_rel_err
        self.passed = passed
        self.detail = detail

    def __bool__(self):
        return self.passed

    def __repr__(self):
        return (f"GradcheckReport(passed={self.passed}, max_rel_err={self.max_rel_err:.3e}, "
                f"max_abs_err={self.max_abs_err:.3e})")


def gradcheck(f, inputs, step=1e-5, rtol=1e-6, atol=1e-9):
    """Compare tape gradients of scalar f(*inputs) against central differences.

    Each element passes when |analytic - numeric| <= max(atol, rtol * scale)
    with scale the larger magnitude of the two.
    """
    inputs = list(inputs)
    for x in inputs:
        if not x.requires_grad:
            raise AutodiffError("gradcheck inputs must require grad")
    with Tape() as tape:
        out = f(*inputs)
    grads = tape.backward(out)

    max_abs = 0.0
    max_rel = 0.0
    passed = True
    detail = ""
    for x in inputs:
        analytic = grads.get(x)
        if analytic is None:
            analytic = np.zeros_like(x.data)
        flat = x.data.flat
        for i in range(x.data.size):
            orig = flat[i]
            flat[i] = orig + step
            up = f(*inputs).item()
            flat[i] = orig - step
            dn = f(*inputs).item()
            flat[i] = orig
            numeric = (up - dn) / (2.0 * step)
            a = analytic.reshape(-1)[i]
            err = abs(a - numeric)
            scale = max(abs(a), abs(numeric))
            rel = err / scale if scale > 0 else 0.0
            max_abs = max(max_abs, err)
            max_rel = max(max_rel, rel)
            if err > max(atol, rtol * scale):
                passed = False
                detail = f"element {i}: analytic={a:.12g} numeric={numeric:.12g}"
    return GradcheckReport(max_abs, max_rel, passed, detail)
