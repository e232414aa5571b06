"""Reverse-mode automatic differentiation over numpy float64 arrays.

The engine records a tape of primitive operations as the forward pass runs;
``backward``/``grad`` replay it in reverse to accumulate vector-Jacobian
products. Only the primitives the model needs are implemented: dense affine
maps, ReLU, concatenation, sparse gather/scatter (for graph message
passing), layer normalization and the reductions used by the loss.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp


class NonFiniteError(ArithmeticError):
    """Raised when an operation produces NaN or infinity."""

    def __init__(self, op_name):
        super().__init__(f"non-finite value produced by operation '{op_name}'")
        self.op_name = op_name


def _check(op_name, data):
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(op_name)
    return data


class Tensor:
    """A float64 array plus the tape record that produced it.

    Leaf tensors (parameters, inputs) have no parents. Plain numpy arrays
    passed to the ops below are treated as constants and receive no
    gradient.
    """

    __slots__ = ("data", "op", "parents", "vjp")

    def __init__(self, data, op="leaf", parents=(), vjp=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.op = op
        self.parents = parents
        self.vjp = vjp

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.data.shape})"

    # Small conveniences; heavy lifting stays in the module-level ops.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def value(x):
    """Raw numpy array behind ``x`` (Tensor or array-like)."""
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _unbroadcast(g, shape):
    # Reduce gradient g back to `shape` after numpy broadcasting.
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def matmul(a, b):
    av, bv = value(a), value(b)
    out = _check("matmul", av @ bv)

    def vjp(g):
        return g @ bv.T, av.T @ g

    return Tensor(out, "matmul", (a, b), vjp)


def add(a, b):
    av, bv = value(a), value(b)
    out = _check("add", av + bv)

    def vjp(g):
        return _unbroadcast(g, av.shape), _unbroadcast(g, bv.shape)

    return Tensor(out, "add", (a, b), vjp)


def sub(a, b):
    av, bv = value(a), value(b)
    out = _check("sub", av - bv)

    def vjp(g):
        return _unbroadcast(g, av.shape), _unbroadcast(-g, bv.shape)

    return Tensor(out, "sub", (a, b), vjp)


def mul(a, b):
    av, bv = value(a), value(b)
    out = _check("mul", av * bv)

    def vjp(g):
        return _unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)

    return Tensor(out, "mul", (a, b), vjp)


def relu(a):
    av = value(a)
    out = np.maximum(av, 0.0)
    mask = av > 0.0

    def vjp(g):
        return (g * mask,)

    return Tensor(out, "relu", (a,), vjp)


def concat(parts):
    """Concatenate along the last axis."""
    vals = [value(p) for p in parts]
    out = _check("concat", np.concatenate(vals, axis=-1))
    widths = [v.shape[-1] for v in vals]
    splits = np.cumsum(widths)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=-1))

    return Tensor(out, "concat", tuple(parts), vjp)


class SparseOp:
    """Constant sparse matrix with its transpose, for gather/scatter ops.

    Rows of ``mat`` select (gather) or sum (scatter-add) rows of the dense
    operand. CSR matmul applies terms in index order, which keeps the
    aggregation bit-deterministic regardless of edge storage order.
    """

    def __init__(self, mat):
        self.mat = sp.csr_matrix(mat)
        self.mat.sort_indices()
        self.mat_t = self.mat.T.tocsr()
        self.mat_t.sort_indices()

    @staticmethod
    def gather(indices, n_rows):
        """Operator taking an (n_rows, d) array to a (len(indices), d) array."""
        indices = np.asarray(indices, dtype=np.int64)
        m = len(indices)
        mat = sp.csr_matrix(
            (np.ones(m), indices, np.arange(m + 1)), shape=(m, n_rows)
        )
        return SparseOp(mat)

    @staticmethod
    def segment_sum(indices, n_rows):
        """Operator summing rows of an (len(indices), d) array into n_rows bins."""
        return SparseOp(SparseOp.gather(indices, n_rows).mat.T)


def spmm(op, a):
    """Multiply a constant :class:`SparseOp` with a dense tensor."""
    av = value(a)
    out = _check("spmm", op.mat @ av)

    def vjp(g):
        return (op.mat_t @ g,)

    return Tensor(out, "spmm", (a,), vjp)


_LN_EPS = 1e-8


def layer_norm(x, gain, bias):
    """Per-row layer normalization with learned gain and bias."""
    xv = value(x)
    gv, bv = value(gain), value(bias)
    mu = xv.mean(axis=-1, keepdims=True)
    var = xv.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = (xv - mu) * inv
    out = _check("layer_norm", xhat * gv + bv)
    d = xv.shape[-1]

    def vjp(g):
        gx_hat = g * gv
        m1 = gx_hat.mean(axis=-1, keepdims=True)
        m2 = (gx_hat * xhat).mean(axis=-1, keepdims=True)
        gx = inv * (gx_hat - m1 - xhat * m2)
        gg = _unbroadcast(g * xhat, gv.shape)
        gb = _unbroadcast(g, bv.shape)
        return gx, gg, gb

    return Tensor(out, "layer_norm", (x, gain, bias), vjp)


def sum_all(a):
    av = value(a)
    out = _check("sum", np.asarray(av.sum()))
    shape = av.shape

    def vjp(g):
        return (np.broadcast_to(g, shape),)

    return Tensor(out, "sum", (a,), vjp)


def mean_sq(a):
    """Mean of squared entries; the training loss reduction."""
    av = value(a)
    n = av.size
    out = _check("mean_sq", np.asarray((av * av).sum() / n))

    def vjp(g):
        return (g * (2.0 / n) * av,)

    return Tensor(out, "mean_sq", (a,), vjp)


def take_rows(a, indices):
    """Select rows by index array (differentiable gather via scatter-add)."""
    indices = np.asarray(indices, dtype=np.int64)
    av = value(a)
    out = av[indices]
    n = av.shape[0]

    def vjp(g):
        ga = np.zeros_like(av)
        np.add.at(ga, indices, g)
        return (ga,)

    return Tensor(out, "take_rows", (a,), vjp)


def _topo_order(root):
    """Tensors reachable from ``root`` in reverse-replay order (iterative)."""
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if not isinstance(node, Tensor) or node.vjp is None:
            continue
        nid = id(node)
        if expanded:
            order.append(node)
            continue
        if nid in seen:
            continue
        seen.add(nid)
        stack.append((node, True))
        for p in node.parents:
            stack.append((p, False))
    order.reverse()
    return order


def backward(root, seed=None, wrt=None):
    """Accumulate d(root)/d(tensor) for every tensor the root depends on.

    Parameters
    ----------
    root : Tensor
        Output of the taped computation; any shape (seed must match).
    seed : ndarray, optional
        Initial adjoint; defaults to ones of root's shape (i.e. gradient of
        root.sum()).
    wrt : sequence of Tensor, optional
        If given, return a list of gradients aligned with ``wrt`` (zeros for
        unused leaves); otherwise return the full id->gradient dict.
    """
    grads = {}
    if seed is None:
        seed = np.ones_like(root.data)
    grads[id(root)] = np.asarray(seed, dtype=np.float64)
    for node in _topo_order(root):
        g = grads.get(id(node))
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(node.op)
        parent_grads = node.vjp(g)
        for parent, pg in zip(node.parents, parent_grads):
            if not isinstance(parent, Tensor):
                continue
            pid = id(parent)
            if pid in grads:
                grads[pid] = grads[pid] + pg
            else:
                grads[pid] = pg
    if wrt is None:
        return grads
    return [grads.get(id(p), np.zeros_like(p.data)) for p in wrt]


def kink_margin(root):
    """Smallest |preactivation| over every relu in the recorded graph.

    Central finite differences are only trustworthy when no relu input sits
    within the probe step of its kink; tests use this to certify the
    evaluation point.
    """
    margin = np.inf
    for node in _topo_order(root):
        if node.op == "relu":
            margin = min(margin, float(np.min(np.abs(node.parents[0].data))))
    return margin


def layer_norm_margin(root):
    """Smallest per-row std entering any layer_norm in the recorded graph."""
    margin = np.inf
    for node in _topo_order(root):
        if node.op == "layer_norm":
            x = node.parents[0].data
            margin = min(margin, float(np.sqrt(x.var(axis=-1).min())))
    return margin


def grad(loss_fn, params):
    """Gradient of a scalar-valued ``loss_fn(params)`` for each parameter.

    ``loss_fn`` receives the parameter list and must return a scalar Tensor
    built from the ops in this module.
    """
    loss = loss_fn(params)
    if not isinstance(loss, Tensor):
        raise TypeError("loss_fn must return a Tensor")
    if loss.data.size != 1:
        raise ValueError("loss must be scalar")
    if not np.isfinite(loss.data):
        raise NonFiniteError(loss.op)
    return backward(loss, seed=np.ones_like(loss.data), wrt=params)
