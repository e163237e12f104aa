"""Tape-based reverse-mode automatic differentiation over NumPy arrays.

Evaluating a function on a :class:`Var` bound to an active :class:`Tape`
records every primitive operation as a node of an acyclic graph.  Walking the
node list backwards with vector-Jacobian-product (VJP) rules yields gradients
and adjoints; walking it forwards with tangent rules yields Jacobian-vector
products (JVP).  The same model code therefore runs in three modes:

* plain numpy (no tape active, or no ``Var`` among the inputs),
* traced (tape active and at least one ``Var`` input),
* replayed (tangent/cotangent sweeps over a previously recorded tape, used
  for repeated TLM/adjoint applications inside iterative solvers).

Complex arrays are supported for R-linear operations (FFTs, multiplication by
fixed complex factors, real-part extraction), which is all a pseudo-spectral
model needs: its nonlinearities act on real fields.  The adjoint convention
throughout is the real inner product ``<a, b> = Re(sum(conj(a) * b))``, so
every VJP rule conjugates where required and the dot-product test holds for
real and complex values alike.

Hessians are computed reverse-over-reverse: the backward sweep itself runs
with the tape still active, so the cotangent arithmetic is recorded and can
be differentiated again.
"""

from __future__ import annotations

import itertools
import threading

import numpy as np

from .errors import ContractError, NonFiniteError, ResourceLimitError

__all__ = [
    "Var", "Tape", "Linearization",
    "grad", "value_and_grad", "vjp", "jvp", "jacobian", "hessian",
    "trace", "linearize", "replay_max_error", "linear_primitive",
    "add", "sub", "mul", "div", "neg", "power", "conj",
    "tanh", "exp", "log", "sin", "cos", "sqrt",
    "vsum", "dot", "matmul", "take", "scatter", "roll", "reshape",
    "concat", "real", "to_complex", "fft2", "ifft2",
    "LINEAR_PRIMITIVES",
]

_ids = itertools.count()


class _TapeStack(threading.local):
    def __init__(self):
        self.tapes = []


_active = _TapeStack()


class Var:
    """A value tracked on a tape.  Holds the concrete array and a global id.

    Ids increase monotonically with creation order, so the node list of any
    tape (or concatenation of tapes) is always in topological order.
    """

    __slots__ = ("value", "id")
    __array_ufunc__ = None  # keep numpy from broadcasting over Var objects

    def __init__(self, value):
        self.value = value
        self.id = next(_ids)

    @property
    def shape(self):
        return np.shape(self.value)

    @property
    def size(self):
        return np.size(self.value)

    def item(self):
        return np.asarray(self.value).item()

    def __repr__(self):
        return f"Var(id={self.id}, value={self.value!r})"

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
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)


class _Node:
    __slots__ = ("prim", "inputs", "kwargs", "out")

    def __init__(self, prim, inputs, kwargs, out):
        self.prim = prim
        self.inputs = inputs
        self.kwargs = kwargs
        self.out = out


class Tape:
    """Recording context.  Tapes nest; nodes go to the innermost active tape.

    A tape is confined to the thread that created it; independent tapes may
    run concurrently in separate threads.
    """

    def __init__(self, check_finite=True):
        self.nodes = []
        self.check_finite = check_finite

    def __enter__(self):
        _active.tapes.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _active.tapes.pop()
        assert popped is self
        return False

    def __len__(self):
        return len(self.nodes)

    def input(self, value):
        """Create a leaf variable from a concrete array."""
        arr = np.asarray(value)
        if np.iscomplexobj(arr):
            arr = arr.astype(np.complex128)
        else:
            arr = arr.astype(np.float64)
        return Var(arr)


def _val(x):
    return x.value if type(x) is Var else x


def _finite(v):
    return bool(np.all(np.isfinite(v)))


def _run(prim, inputs, kwargs=None):
    kwargs = kwargs or {}
    out_val = prim.fn(*[_val(x) for x in inputs], **kwargs)
    stack = _active.tapes
    if stack and any(type(x) is Var for x in inputs):
        tape = stack[-1]
        if tape.check_finite and not _finite(out_val):
            raise NonFiniteError(
                f"non-finite value produced by '{prim.name}' "
                f"(tape node {len(tape.nodes)})"
            )
        out = Var(out_val)
        tape.nodes.append(_Node(prim, tuple(inputs), kwargs, out))
        return out
    return out_val


class _Primitive:
    __slots__ = ("name", "fn", "vjp", "jvp")

    def __init__(self, name, fn, vjp=None, jvp=None):
        self.name = name
        self.fn = fn
        self.vjp = vjp
        self.jvp = jvp


def _sum_to(g, shape):
    """Reduce a broadcast cotangent back to the shape of its input."""
    gshape = np.shape(_val(g))
    shape = tuple(shape)
    if gshape == shape:
        return g
    return _run(_p_sum_to, (g,), {"shape": shape})


def _np_sum_to(g, shape):
    extra = np.ndim(g) - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


_p_sum_to = _Primitive("sum_to", _np_sum_to)
_p_sum_to.vjp = lambda ct, node: (
    _run(_p_broadcast, (ct,), {"shape": np.shape(_val(node.inputs[0]))}),
)
_p_sum_to.jvp = lambda node, ts: _np_sum_to(ts[0], node.kwargs["shape"])

_p_broadcast = _Primitive(
    "broadcast", lambda x, shape: np.broadcast_to(x, shape).copy()
)
_p_broadcast.vjp = lambda ct, node: (
    _sum_to(ct, np.shape(_val(node.inputs[0]))),
)
_p_broadcast.jvp = lambda node, ts: np.broadcast_to(ts[0], node.kwargs["shape"]).copy()


# --- elementwise arithmetic -------------------------------------------------

def _shape_of(x):
    return np.shape(_val(x))


_p_add = _Primitive("add", np.add)
_p_add.vjp = lambda ct, node: (
    _sum_to(ct, _shape_of(node.inputs[0])),
    _sum_to(ct, _shape_of(node.inputs[1])),
)
_p_add.jvp = lambda node, ts: (
    (0 if ts[0] is None else ts[0]) + (0 if ts[1] is None else ts[1])
)

_p_sub = _Primitive("sub", np.subtract)
_p_sub.vjp = lambda ct, node: (
    _sum_to(ct, _shape_of(node.inputs[0])),
    _sum_to(neg(ct), _shape_of(node.inputs[1])),
)
_p_sub.jvp = lambda node, ts: (
    (0 if ts[0] is None else ts[0]) - (0 if ts[1] is None else ts[1])
)

_p_neg = _Primitive("neg", np.negative)
_p_neg.vjp = lambda ct, node: (neg(ct),)
_p_neg.jvp = lambda node, ts: -ts[0]

_p_mul = _Primitive("mul", np.multiply)
_p_mul.vjp = lambda ct, node: (
    _sum_to(mul(ct, conj(node.inputs[1])), _shape_of(node.inputs[0])),
    _sum_to(mul(ct, conj(node.inputs[0])), _shape_of(node.inputs[1])),
)
_p_mul.jvp = lambda node, ts: (
    (0 if ts[0] is None else ts[0] * _val(node.inputs[1]))
    + (0 if ts[1] is None else _val(node.inputs[0]) * ts[1])
)

_p_div = _Primitive("div", np.divide)
_p_div.vjp = lambda ct, node: (
    _sum_to(div(ct, conj(node.inputs[1])), _shape_of(node.inputs[0])),
    _sum_to(
        neg(mul(ct, conj(div(node.out, node.inputs[1])))),
        _shape_of(node.inputs[1]),
    ),
)
_p_div.jvp = lambda node, ts: (
    (0 if ts[0] is None else ts[0] / _val(node.inputs[1]))
    - (
        0
        if ts[1] is None
        else _val(node.out) / _val(node.inputs[1]) * ts[1]
    )
)

_p_pow = _Primitive("power", lambda x, p: np.power(x, p))
_p_pow.vjp = lambda ct, node: (
    mul(ct, conj(mul(node.kwargs["p"],
                     power(node.inputs[0], node.kwargs["p"] - 1)))),
)
_p_pow.jvp = lambda node, ts: (
    node.kwargs["p"] * np.power(_val(node.inputs[0]), node.kwargs["p"] - 1) * ts[0]
)

_p_conj = _Primitive("conj", np.conjugate)
_p_conj.vjp = lambda ct, node: (conj(ct),)
_p_conj.jvp = lambda node, ts: np.conjugate(ts[0])


def add(a, b):
    return _run(_p_add, (a, b))


def sub(a, b):
    return _run(_p_sub, (a, b))


def mul(a, b):
    return _run(_p_mul, (a, b))


def div(a, b):
    return _run(_p_div, (a, b))


def neg(a):
    return _run(_p_neg, (a,))


def power(a, p):
    return _run(_p_pow, (a,), {"p": p})


def conj(a):
    return _run(_p_conj, (a,))


# --- nonlinear elementwise functions ----------------------------------------

_p_tanh = _Primitive("tanh", np.tanh)
_p_tanh.vjp = lambda ct, node: (
    mul(ct, conj(sub(1.0, mul(node.out, node.out)))),
)
_p_tanh.jvp = lambda node, ts: (1.0 - _val(node.out) ** 2) * ts[0]

_p_exp = _Primitive("exp", np.exp)
_p_exp.vjp = lambda ct, node: (mul(ct, conj(node.out)),)
_p_exp.jvp = lambda node, ts: _val(node.out) * ts[0]

_p_log = _Primitive("log", np.log)
_p_log.vjp = lambda ct, node: (div(ct, conj(node.inputs[0])),)
_p_log.jvp = lambda node, ts: ts[0] / _val(node.inputs[0])

_p_sin = _Primitive("sin", np.sin)
_p_sin.vjp = lambda ct, node: (mul(ct, conj(cos(node.inputs[0]))),)
_p_sin.jvp = lambda node, ts: np.cos(_val(node.inputs[0])) * ts[0]

_p_cos = _Primitive("cos", np.cos)
_p_cos.vjp = lambda ct, node: (neg(mul(ct, conj(sin(node.inputs[0])))),)
_p_cos.jvp = lambda node, ts: -np.sin(_val(node.inputs[0])) * ts[0]

_p_sqrt = _Primitive("sqrt", np.sqrt)
_p_sqrt.vjp = lambda ct, node: (mul(ct, conj(div(0.5, node.out))),)
_p_sqrt.jvp = lambda node, ts: 0.5 / _val(node.out) * ts[0]


def tanh(a):
    return _run(_p_tanh, (a,))


def exp(a):
    return _run(_p_exp, (a,))


def log(a):
    return _run(_p_log, (a,))


def sin(a):
    return _run(_p_sin, (a,))


def cos(a):
    return _run(_p_cos, (a,))


def sqrt(a):
    return _run(_p_sqrt, (a,))


# --- reductions and contractions ---------------------------------------------

_p_vsum = _Primitive("vsum", np.sum)
_p_vsum.vjp = lambda ct, node: (
    _run(_p_broadcast, (ct,), {"shape": _shape_of(node.inputs[0])}),
)
_p_vsum.jvp = lambda node, ts: np.sum(ts[0])

_p_dot = _Primitive("dot", np.dot)
_p_dot.vjp = lambda ct, node: (
    mul(ct, conj(node.inputs[1])),
    mul(ct, conj(node.inputs[0])),
)
_p_dot.jvp = lambda node, ts: (
    (0 if ts[0] is None else np.dot(ts[0], _val(node.inputs[1])))
    + (0 if ts[1] is None else np.dot(_val(node.inputs[0]), ts[1]))
)


def vsum(a):
    """Sum of all elements (scalar output)."""
    return _run(_p_vsum, (a,))


def dot(a, b):
    """Bilinear 1-D dot product (no conjugation of either factor)."""
    return _run(_p_dot, (a, b))


def _matmul_vjp(ct, node):
    a, b = node.inputs
    an, bn = np.ndim(_val(a)), np.ndim(_val(b))
    if an == 2 and bn == 1:
        ga = mul(reshape(ct, (-1, 1)), reshape(conj(b), (1, -1)))
        gb = matmul(_transpose(conj(a)), ct)
    elif an == 2 and bn == 2:
        ga = matmul(ct, _transpose(conj(b)))
        gb = matmul(_transpose(conj(a)), ct)
    elif an == 1 and bn == 2:
        ga = matmul(conj(b), ct)
        gb = mul(reshape(conj(a), (-1, 1)), reshape(ct, (1, -1)))
    else:
        raise ContractError("matmul supports 2Dx1D, 2Dx2D and 1Dx2D operands")
    return (ga, gb)


_p_matmul = _Primitive("matmul", np.matmul)
_p_matmul.vjp = _matmul_vjp
_p_matmul.jvp = lambda node, ts: (
    (0 if ts[0] is None else np.matmul(ts[0], _val(node.inputs[1])))
    + (0 if ts[1] is None else np.matmul(_val(node.inputs[0]), ts[1]))
)


def matmul(a, b):
    return _run(_p_matmul, (a, b))


def _transpose(a):
    return _run(_p_transpose, (a,))


_p_transpose = _Primitive("transpose", np.transpose)
_p_transpose.vjp = lambda ct, node: (_transpose(ct),)
_p_transpose.jvp = lambda node, ts: np.transpose(ts[0])


# --- structural / linear operators -------------------------------------------

_p_take = _Primitive("take", lambda x, idx: np.take(x, idx, axis=0))
_p_take.vjp = lambda ct, node: (
    scatter(ct, node.kwargs["idx"], _shape_of(node.inputs[0])[0]),
)
_p_take.jvp = lambda node, ts: np.take(ts[0], node.kwargs["idx"], axis=0)


def _np_scatter(v, idx, n):
    out = np.zeros((n,) + np.shape(v)[1:], dtype=np.asarray(v).dtype)
    np.add.at(out, idx, v)
    return out


_p_scatter = _Primitive("scatter", _np_scatter)
_p_scatter.vjp = lambda ct, node: (take(ct, node.kwargs["idx"]),)
_p_scatter.jvp = lambda node, ts: _np_scatter(
    ts[0], node.kwargs["idx"], node.kwargs["n"]
)


def take(x, idx):
    """Gather components along the leading axis (observation selection)."""
    idx = np.asarray(idx, dtype=np.intp)
    return _run(_p_take, (x,), {"idx": idx})


def scatter(v, idx, n):
    """Adjoint of :func:`take`: embed values at ``idx`` in a length-``n`` zero vector."""
    idx = np.asarray(idx, dtype=np.intp)
    return _run(_p_scatter, (v,), {"idx": idx, "n": int(n)})


_p_roll = _Primitive("roll", lambda x, shift: np.roll(x, shift))
_p_roll.vjp = lambda ct, node: (roll(ct, -node.kwargs["shift"]),)
_p_roll.jvp = lambda node, ts: np.roll(ts[0], node.kwargs["shift"])


def roll(x, shift):
    return _run(_p_roll, (x,), {"shift": int(shift)})


_p_reshape = _Primitive("reshape", lambda x, shape: np.reshape(x, shape))
_p_reshape.vjp = lambda ct, node: (
    reshape(ct, _shape_of(node.inputs[0])),
)
_p_reshape.jvp = lambda node, ts: np.reshape(ts[0], node.kwargs["shape"])


def reshape(x, shape):
    return _run(_p_reshape, (x,), {"shape": tuple(shape)})


def _np_concat(*parts):
    return np.concatenate([np.atleast_1d(p) for p in parts])


def _concat_vjp(ct, node):
    grads = []
    off = 0
    for x in node.inputs:
        n = max(1, np.size(_val(x)))
        grads.append(take(ct, np.arange(off, off + n)))
        off += n
    return tuple(grads)


_p_concat = _Primitive("concat", _np_concat)
_p_concat.vjp = _concat_vjp
_p_concat.jvp = lambda node, ts: np.concatenate(
    [
        np.atleast_1d(t if t is not None else np.zeros(max(1, np.size(_val(x)))))
        for x, t in zip(node.inputs, ts)
    ]
)


def concat(parts):
    """Concatenate 1-D pieces (used for stacked residual vectors)."""
    return _run(_p_concat, tuple(parts))


# real <-> complex embedding: mutually adjoint R-linear maps
_p_real = _Primitive("real", lambda z: np.real(z).copy())
_p_real.vjp = lambda ct, node: (to_complex(ct),)
_p_real.jvp = lambda node, ts: np.real(ts[0]).copy()

_p_to_complex = _Primitive(
    "to_complex", lambda x: np.asarray(x, dtype=np.complex128)
)
_p_to_complex.vjp = lambda ct, node: (real(ct),)
_p_to_complex.jvp = lambda node, ts: np.asarray(ts[0], dtype=np.complex128)


def real(z):
    return _run(_p_real, (z,))


def to_complex(x):
    return _run(_p_to_complex, (x,))


# 2-D FFT over the trailing two axes.  As R-linear maps the adjoint of fft2 is
# N*ifft2 and the adjoint of ifft2 is fft2/N, with N the transform size.
def _fft_size(x):
    s = np.shape(_val(x))
    return s[-1] * s[-2]


_p_fft2 = _Primitive("fft2", lambda z: np.fft.fft2(z, axes=(-2, -1)))
_p_fft2.vjp = lambda ct, node: (
    mul(ifft2(ct), float(_fft_size(node.inputs[0]))),
)
_p_fft2.jvp = lambda node, ts: np.fft.fft2(ts[0], axes=(-2, -1))

_p_ifft2 = _Primitive("ifft2", lambda z: np.fft.ifft2(z, axes=(-2, -1)))
_p_ifft2.vjp = lambda ct, node: (
    div(fft2(ct), float(_fft_size(node.inputs[0]))),
)
_p_ifft2.jvp = lambda node, ts: np.fft.ifft2(ts[0], axes=(-2, -1))


def fft2(z):
    return _run(_p_fft2, (z,))


def ifft2(z):
    return _run(_p_ifft2, (z,))


#: Pairs registered through :func:`linear_primitive`, as
#: (name, forward op, adjoint op).  Tests run the dot-product check over this
#: registry; the built-in pairs (take/scatter, roll, fft2/ifft2,
#: real/to_complex) are checked directly.
LINEAR_PRIMITIVES = []


def linear_primitive(name, forward, adjoint):
    """Register a pair of mutually adjoint linear maps as traced operations.

    ``forward`` and ``adjoint`` are plain-numpy callables of one array.  They
    must satisfy ``<forward(x), v> == <x, adjoint(v)>`` in the real inner
    product; the returned ops use each other as VJP rule, so gradients through
    them are exact by construction.

    Returns the pair ``(op, op_adjoint)`` of traced callables.
    """
    pf = _Primitive(name, lambda x: forward(x))
    pa = _Primitive(name + "_adj", lambda x: adjoint(x))

    def op(x):
        return _run(pf, (x,))

    def op_adj(x):
        return _run(pa, (x,))

    pf.vjp = lambda ct, node: (op_adj(ct),)
    pf.jvp = lambda node, ts: forward(ts[0])
    pa.vjp = lambda ct, node: (op(ct),)
    pa.jvp = lambda node, ts: adjoint(ts[0])
    LINEAR_PRIMITIVES.append((name, op, op_adj))
    return op, op_adj


# --- tape walks ---------------------------------------------------------------

def _run_backward(nodes, seeds, want_ids):
    """Reverse sweep.  ``seeds`` maps var id -> cotangent; returns cotangents
    for ``want_ids`` (None where nothing flowed).  Cotangent arithmetic goes
    through the dispatching ops, so it is itself traced when a tape is active.
    """
    ct = dict(seeds)
    with np.errstate(over="ignore", invalid="ignore"):
        for node in reversed(nodes):
            c = ct.pop(node.out.id, None)
            if c is None:
                continue
            grads = node.prim.vjp(c, node)
            for x, g in zip(node.inputs, grads):
                if g is None or type(x) is not Var:
                    continue
                prev = ct.get(x.id)
                ct[x.id] = g if prev is None else add(prev, g)
    return [ct.get(i) for i in want_ids]


def _run_tangent(nodes, seeds):
    """Forward (tangent) sweep over a recorded tape.  Plain numpy only."""
    tg = dict(seeds)
    with np.errstate(over="ignore", invalid="ignore"):
        for node in nodes:
            ts = [tg.get(x.id) if type(x) is Var else None
                  for x in node.inputs]
            if all(t is None for t in ts):
                continue
            tg[node.out.id] = node.prim.jvp(node, ts)
    return tg


def trace(f, x, check_finite=True):
    """Record ``f`` at ``x``.  Returns ``(tape, input Var, output)``."""
    with Tape(check_finite=check_finite) as tape, \
            np.errstate(over="ignore", invalid="ignore"):
        xv = tape.input(x)
        out = f(xv)
    return tape, xv, out


def replay_max_error(tape):
    """Recompute every node from its recorded inputs; return the max absolute
    deviation from the recorded outputs (0.0 for a faithful tape)."""
    worst = 0.0
    for node in tape.nodes:
        redo = node.prim.fn(*[_val(x) for x in node.inputs], **node.kwargs)
        worst = max(worst, float(np.max(np.abs(redo - node.out.value), initial=0.0)))
    return worst


# --- public derivative API ----------------------------------------------------

def _as_float_array(x):
    return np.asarray(x, dtype=np.float64)


def grad(f, x, check_finite=True):
    """Gradient of a scalar-valued ``f`` at ``x`` by reverse-mode sweep."""
    val, g = value_and_grad(f, x, check_finite=check_finite)
    return g


def value_and_grad(f, x, check_finite=True):
    x = _as_float_array(x)
    tape, xv, out = trace(f, x, check_finite)
    if type(out) is not Var:
        if np.shape(np.asarray(out)) != ():
            raise ContractError("f must be scalar-valued")
        return float(out), np.zeros_like(x)
    if np.shape(out.value) != ():
        raise ContractError("f must be scalar-valued")
    (g,) = _run_backward(tape.nodes, {out.id: np.asarray(1.0)}, [xv.id])
    if g is None:
        return float(out.value), np.zeros_like(x)
    return float(out.value), np.asarray(_val(g))


def vjp(f, x, v, check_finite=True):
    """Vector-Jacobian product v^T df(x) (reverse mode, the adjoint action)."""
    x = _as_float_array(x)
    tape, xv, out = trace(f, x, check_finite)
    if type(out) is not Var:
        if np.shape(v) != np.shape(np.asarray(out)):
            raise ContractError("v must match the shape of f(x)")
        return np.zeros_like(x)
    v = np.asarray(v)
    if v.shape != np.shape(out.value):
        raise ContractError(
            f"v has shape {v.shape}, f(x) has shape {np.shape(out.value)}"
        )
    (g,) = _run_backward(tape.nodes, {out.id: v}, [xv.id])
    if g is None:
        return np.zeros_like(x)
    return np.asarray(_val(g))


def jvp(f, x, v, check_finite=True):
    """Jacobian-vector product df(x) v (tangent-linear action)."""
    x = _as_float_array(x)
    v = np.asarray(v, dtype=np.float64)
    if v.shape != x.shape:
        raise ContractError(f"v has shape {v.shape}, x has shape {x.shape}")
    tape, xv, out = trace(f, x, check_finite)
    if type(out) is not Var:
        return np.zeros_like(np.asarray(out, dtype=np.float64))
    tg = _run_tangent(tape.nodes, {xv.id: v})
    t = tg.get(out.id)
    if t is None:
        return np.zeros_like(out.value)
    return np.asarray(t)


def jacobian(f, x, max_dim=4096, check_finite=True):
    """Dense Jacobian, assembled one row per VJP with unit seeds."""
    x = _as_float_array(x)
    tape, xv, out = trace(f, x, check_finite)
    if type(out) is not Var:
        out_val = np.asarray(out, dtype=np.float64)
        return np.zeros((out_val.size, x.size))
    m, n = np.size(out.value), x.size
    if max(m, n) > max_dim:
        raise ResourceLimitError(
            f"jacobian is {m}x{n}; dense cap is {max_dim} (raise max_dim to override)"
        )
    jac = np.zeros((m, n))
    for i in range(m):
        seed = np.zeros(np.shape(out.value))
        seed.flat[i] = 1.0
        (g,) = _run_backward(tape.nodes, {out.id: seed}, [xv.id])
        if g is not None:
            jac[i, :] = np.asarray(_val(g)).ravel()
    return jac


def hessian(f, x, max_dim=4096, check_finite=True):
    """Dense Hessian of scalar ``f``: Jacobian of the gradient, computed
    reverse-over-reverse (the backward sweep is itself recorded and swept)."""
    x = _as_float_array(x)
    n = x.size
    if n > max_dim:
        raise ResourceLimitError(
            f"hessian is {n}x{n}; dense cap is {max_dim} (raise max_dim to override)"
        )
    with Tape(check_finite=check_finite) as tape:
        xv = tape.input(x)
        out = f(xv)
        if type(out) is Var:
            if np.shape(out.value) != ():
                raise ContractError("f must be scalar-valued")
            forward_nodes = tuple(tape.nodes)
            (gvar,) = _run_backward(
                forward_nodes, {out.id: np.asarray(1.0)}, [xv.id]
            )
        else:
            gvar = None
    if gvar is None or type(gvar) is not Var:
        return np.zeros((n, n))  # f constant or linear in x
    hess = np.zeros((n, n))
    nodes = tape.nodes
    for i in range(n):
        seed = np.zeros(n)
        seed[i] = 1.0
        (row,) = _run_backward(nodes, {gvar.id: seed}, [xv.id])
        if row is not None:
            hess[i, :] = np.asarray(_val(row)).ravel()
    return hess


class Linearization:
    """Matrix-free TLM/adjoint pair from a recorded tape of a trajectory map.

    ``tlm(v)`` propagates one tangent through the window and returns the
    tangent at every recorded state; ``adjoint(seeds)`` back-propagates
    cotangents seeded at any subset of states down to the initial state in a
    single reverse sweep.
    """

    def __init__(self, tape, x_var, state_vars):
        self.nodes = tuple(tape.nodes)
        self.x_var = x_var
        self.state_vars = list(state_vars)

    def tlm(self, v):
        v = np.asarray(v, dtype=np.float64)
        tg = _run_tangent(self.nodes, {self.x_var.id: v})
        out = np.zeros((len(self.state_vars), v.size))
        for i, sv in enumerate(self.state_vars):
            t = tg.get(sv.id) if type(sv) is Var else None
            if t is None and sv is self.x_var:
                t = v
            if t is not None:
                out[i, :] = np.asarray(t).ravel()
        return out

    def adjoint(self, seeds):
        """``seeds``: dict step->cotangent or full (n_states, dim) array."""
        if not isinstance(seeds, dict):
            seeds = {i: seeds[i] for i in range(len(seeds))}
        seed_map = {}
        for step, w in seeds.items():
            sv = self.state_vars[step]
            w = np.asarray(w, dtype=np.float64)
            prev = seed_map.get(sv.id)
            seed_map[sv.id] = w if prev is None else prev + w
        (g,) = _run_backward(list(self.nodes), seed_map, [self.x_var.id])
        if g is None:
            g = seed_map.get(self.x_var.id)
        if g is None:
            return np.zeros(np.size(self.x_var.value))
        return np.asarray(_val(g)).ravel()


def linearize(rollout_fn, x, check_finite=True):
    """Record ``rollout_fn`` (x -> list of states) once and wrap the tape as a
    :class:`Linearization` for repeated TLM/adjoint replays."""
    with Tape(check_finite=check_finite) as tape:
        xv = tape.input(np.asarray(x, dtype=np.float64))
        states = rollout_fn(xv)
    values = np.stack([np.asarray(_val(s)) for s in states])
    return Linearization(tape, xv, states), values
