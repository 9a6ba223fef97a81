"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Operations execute eagerly with numpy. When a :class:`Tape` is active and an
input participates in gradients, the op appends a backward rule to the tape.
``Tape.backward`` replays the rules in reverse execution order, which is a
valid topological order for a define-by-run graph. A tape is consumed by a
single backward call; forward passes rebuild it from scratch.

Everything is float64. Feature maps are channel-major ``(C, T)``.
"""

from __future__ import annotations

import threading

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "add",
    "sub",
    "mul",
    "scale",
    "leaky_relu",
    "sigmoid",
    "tanh",
    "conv1d",
    "maxpool1d",
    "global_avg_pool",
    "channel_scale",
    "linear",
    "time_slice",
    "row",
    "transpose2d",
    "sum_all",
    "batchnorm_train",
    "batchnorm_eval",
    "softmax_cross_entropy",
    "grad_check",
]

_TLS = threading.local()


class Tensor:
    """A contiguous float64 array with an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 0:  # ascontiguousarray would promote 0-d scalars to 1-d
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None  # np.ndarray of self.data.shape once populated

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        grad = "grad" if self.grad is not None else "no-grad"
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad}, {grad})"


class Tape:
    """Ordered record of operations for one forward pass.

    Use as a context manager around the forward computation; nested tapes are
    rejected. ``backward`` may be called exactly once.
    """

    def __init__(self):
        self._records = []  # (output, inputs, backward_fn), execution order
        self._spent = False

    def __enter__(self):
        if getattr(_TLS, "tape", None) is not None:
            raise RuntimeError("a tape is already active on this thread")
        _TLS.tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        _TLS.tape = None
        return False

    def record(self, output: Tensor, inputs: tuple, backward_fn):
        self._records.append((output, inputs, backward_fn))

    def __len__(self):
        return len(self._records)

    def backward(self, loss: Tensor):
        """Populate ``grad`` for every requires-grad tensor reachable from ``loss``.

        Tensors that were recorded on the tape but do not influence the loss
        end up with explicit zero gradients.
        """
        if self._spent:
            raise RuntimeError("tape already consumed by a previous backward call")
        if loss.data.ndim != 0:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        self._spent = True
        loss.grad = np.ones((), dtype=np.float64)
        for output, _inputs, backward_fn in reversed(self._records):
            if output.grad is None:
                continue  # not reachable from the loss
            backward_fn(output.grad)
        for _output, inputs, _fn in self._records:
            for t in inputs:
                if t.requires_grad and t.grad is None:
                    t.grad = np.zeros_like(t.data)


def _tape():
    return getattr(_TLS, "tape", None)


def _accum(t: Tensor, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _make(data, inputs, backward_fn):
    """Wrap an op result; record the backward rule if grads are being tracked."""
    out = Tensor(data, requires_grad=any(t.requires_grad for t in inputs))
    tape = _tape()
    if tape is not None and out.requires_grad:
        tape.record(out, inputs, backward_fn(out))
    return out


# ---------------------------------------------------------------------------
# elementwise ops
# ---------------------------------------------------------------------------


def _check_same_shape(a: Tensor, b: Tensor, op: str):
    if a.data.shape != b.data.shape:
        raise ValueError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")

    def bwd(out):
        def fn(g):
            _accum(a, g)
            _accum(b, g)

        return fn

    return _make(a.data + b.data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")

    def bwd(out):
        def fn(g):
            _accum(a, g)
            _accum(b, -g)

        return fn

    return _make(a.data - b.data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")

    def bwd(out):
        def fn(g):
            _accum(a, g * b.data)
            _accum(b, g * a.data)

        return fn

    return _make(a.data * b.data, (a, b), bwd)


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar constant."""
    c = float(c)

    def bwd(out):
        def fn(g):
            _accum(x, c * g)

        return fn

    return _make(c * x.data, (x,), bwd)


def leaky_relu(x: Tensor, slope: float = 0.3) -> Tensor:
    mask = x.data >= 0.0  # derivative at the kink is taken from the right

    def bwd(out):
        def fn(g):
            _accum(x, g * np.where(mask, 1.0, slope))

        return fn

    return _make(np.where(mask, x.data, slope * x.data), (x,), bwd)


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)

    def bwd(out):
        def fn(g):
            _accum(x, g * s * (1.0 - s))

        return fn

    return _make(s, (x,), bwd)


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)

    def bwd(out):
        def fn(g):
            _accum(x, g * (1.0 - t * t))

        return fn

    return _make(t, (x,), bwd)


# ---------------------------------------------------------------------------
# structural ops
# ---------------------------------------------------------------------------


def time_slice(x: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous slice ``x[:, start:stop]`` of a (C, T) map."""
    if x.data.ndim != 2:
        raise ValueError(f"time_slice expects a 2-D map, got shape {x.data.shape}")
    T = x.data.shape[1]
    if not (0 <= start < stop <= T):
        raise ValueError(f"time_slice range [{start}, {stop}) invalid for T={T}")

    def bwd(out):
        def fn(g):
            if x.requires_grad:
                full = np.zeros_like(x.data)
                full[:, start:stop] = g
                _accum(x, full)

        return fn

    return _make(x.data[:, start:stop].copy(), (x,), bwd)


def row(x: Tensor, i: int) -> Tensor:
    """Extract row i of a 2-D tensor as a 1-D vector."""
    if x.data.ndim != 2:
        raise ValueError("row expects a 2-D tensor")

    def bwd(out):
        def fn(g):
            if x.requires_grad:
                full = np.zeros_like(x.data)
                full[i] = g
                _accum(x, full)

        return fn

    return _make(x.data[i].copy(), (x,), bwd)


def transpose2d(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ValueError("transpose2d expects a 2-D tensor")

    def bwd(out):
        def fn(g):
            _accum(x, g.T)

        return fn

    return _make(x.data.T.copy(), (x,), bwd)


def sum_all(x: Tensor) -> Tensor:
    def bwd(out):
        def fn(g):
            _accum(x, np.full_like(x.data, float(g)))

        return fn

    return _make(x.data.sum(), (x,), bwd)


# ---------------------------------------------------------------------------
# convolution / pooling
# ---------------------------------------------------------------------------


def conv1d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """1-D convolution of a (C_in, T) map with a (C_out, C_in, k) kernel.

    ``out[c, t] = bias[c] + sum_{ci,j} weight[c, ci, j] * padded[ci, t*stride + j]``
    """
    X, W, B = x.data, weight.data, bias.data
    if X.ndim != 2 or W.ndim != 3:
        raise ValueError(f"conv1d expects (C_in,T) input and (C_out,C_in,k) weight, got {X.shape}, {W.shape}")
    c_out, c_in, k = W.shape
    if X.shape[0] != c_in:
        raise ValueError(f"conv1d: channel mismatch, input has {X.shape[0]} channels, weight expects {c_in}")
    if B.shape != (c_out,):
        raise ValueError(f"conv1d: bias shape {B.shape} does not match {c_out} output channels")
    if stride < 1:
        raise ValueError("conv1d: stride must be >= 1")
    if padding < 0:
        raise ValueError("conv1d: padding must be >= 0")
    T = X.shape[1]
    t_out = (T + 2 * padding - k) // stride + 1
    if T + 2 * padding < k or t_out < 1:
        raise ValueError(f"conv1d: input too short (T={T}, padding={padding}, k={k})")

    if padding:
        xp = np.zeros((c_in, T + 2 * padding))
        xp[:, padding:padding + T] = X
    else:
        xp = X
    idx = (np.arange(t_out) * stride)[None, :] + np.arange(k)[:, None]  # (k, t_out)
    cols = xp[:, idx].reshape(c_in * k, t_out)
    out_data = W.reshape(c_out, c_in * k) @ cols + B[:, None]

    def bwd(out):
        def fn(g):
            if bias.requires_grad:
                _accum(bias, g.sum(axis=1))
            if weight.requires_grad:
                _accum(weight, (g @ cols.T).reshape(c_out, c_in, k))
            if x.requires_grad:
                dcols = (W.reshape(c_out, c_in * k).T @ g).reshape(c_in, k, t_out)
                dxp = np.zeros((c_in, T + 2 * padding))
                for j in range(k):
                    dxp[:, j:j + stride * t_out:stride] += dcols[:, j, :]
                _accum(x, dxp[:, padding:padding + T])

        return fn

    return _make(out_data, (x, weight, bias), bwd)


def maxpool1d(x: Tensor, window: int) -> Tensor:
    """Non-overlapping max pooling along time; trailing remainder is dropped.

    Backward routes the gradient to the first maximal position in each window.
    """
    if window < 1:
        raise ValueError("maxpool1d: window must be >= 1")
    if x.data.ndim != 2:
        raise ValueError("maxpool1d expects a (C, T) map")
    C, T = x.data.shape
    if T < window:
        raise ValueError(f"maxpool1d: input too short (T={T}, window={window})")
    t_out = T // window
    blocks = x.data[:, :t_out * window].reshape(C, t_out, window)
    arg = blocks.argmax(axis=2)  # first occurrence on ties
    out_data = np.take_along_axis(blocks, arg[:, :, None], axis=2)[:, :, 0]

    def bwd(out):
        def fn(g):
            if x.requires_grad:
                db = np.zeros((C, t_out, window))
                np.put_along_axis(db, arg[:, :, None], g[:, :, None], axis=2)
                full = np.zeros_like(x.data)
                full[:, :t_out * window] = db.reshape(C, t_out * window)
                _accum(x, full)

        return fn

    return _make(out_data, (x,), bwd)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the time axis: (C, T) -> (C, 1)."""
    if x.data.ndim != 2 or x.data.shape[1] < 1:
        raise ValueError("global_avg_pool expects a non-empty (C, T) map")
    T = x.data.shape[1]

    def bwd(out):
        def fn(g):
            _accum(x, np.broadcast_to(g / T, x.data.shape))

        return fn

    return _make(x.data.mean(axis=1, keepdims=True), (x,), bwd)


def channel_scale(f: Tensor, w: Tensor) -> Tensor:
    """Per-channel rescaling: (C, T) * (C, 1) -> (C, T)."""
    if f.data.ndim != 2 or w.data.shape != (f.data.shape[0], 1):
        raise ValueError(
            f"channel_scale: weights {w.data.shape} are not broadcastable over map {f.data.shape}"
        )

    def bwd(out):
        def fn(g):
            _accum(f, g * w.data)
            if w.requires_grad:
                _accum(w, (g * f.data).sum(axis=1, keepdims=True))

        return fn

    return _make(f.data * w.data, (f, w), bwd)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map of a vector: (out, in) @ (in,) + (out,)."""
    X, W, B = x.data, weight.data, bias.data
    if X.ndim != 1 or W.ndim != 2 or W.shape[1] != X.shape[0] or B.shape != (W.shape[0],):
        raise ValueError(f"linear: incompatible shapes x{X.shape}, w{W.shape}, b{B.shape}")

    def bwd(out):
        def fn(g):
            if weight.requires_grad:
                _accum(weight, np.outer(g, X))
            if bias.requires_grad:
                _accum(bias, g)
            if x.requires_grad:
                _accum(x, W.T @ g)

        return fn

    return _make(W @ X + B, (x, weight, bias), bwd)


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------


def _bn_axes(x_data):
    if x_data.ndim == 2:  # (C, T), implicit batch of one
        return (1,), (x_data.shape[0], 1)
    if x_data.ndim == 3:  # (N, C, T)
        return (0, 2), (1, x_data.shape[1], 1)
    raise ValueError(f"batchnorm expects (C,T) or (N,C,T), got shape {x_data.shape}")


def batchnorm_train(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5):
    """Normalize with batch statistics; returns (out, batch_mean, batch_var).

    The backward rule differentiates through the batch mean and variance, so
    finite differences agree with it without freezing the statistics. The
    returned mean/var are plain arrays (biased variance) for running-stat
    updates and are not part of the graph.
    """
    axes, bshape = _bn_axes(x.data)
    channels = x.data.shape[0] if x.data.ndim == 2 else x.data.shape[1]
    m = x.data.size // channels
    if m < 2:
        raise ValueError("batchnorm_train: degenerate batch (need at least 2 values per channel)")
    mean = x.data.mean(axis=axes)
    var = x.data.var(axis=axes)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean.reshape(bshape)) * inv.reshape(bshape)
    out_data = gamma.data.reshape(bshape) * xhat + beta.data.reshape(bshape)

    def bwd(out):
        def fn(g):
            if gamma.requires_grad:
                _accum(gamma, (g * xhat).sum(axis=axes))
            if beta.requires_grad:
                _accum(beta, g.sum(axis=axes))
            if x.requires_grad:
                dxhat = g * gamma.data.reshape(bshape)
                s1 = dxhat.sum(axis=axes).reshape(bshape)
                s2 = (dxhat * xhat).sum(axis=axes).reshape(bshape)
                _accum(x, inv.reshape(bshape) / m * (m * dxhat - s1 - xhat * s2))

        return fn

    return _make(out_data, (x, gamma, beta), bwd), mean, var


def batchnorm_eval(x: Tensor, gamma: Tensor, beta: Tensor, running_mean, running_var,
                   eps: float = 1e-5) -> Tensor:
    """Normalize with running statistics (treated as constants)."""
    axes, bshape = _bn_axes(x.data)
    inv = 1.0 / np.sqrt(np.asarray(running_var) + eps)
    xhat = (x.data - np.asarray(running_mean).reshape(bshape)) * inv.reshape(bshape)
    out_data = gamma.data.reshape(bshape) * xhat + beta.data.reshape(bshape)

    def bwd(out):
        def fn(g):
            if gamma.requires_grad:
                _accum(gamma, (g * xhat).sum(axis=axes))
            if beta.requires_grad:
                _accum(beta, g.sum(axis=axes))
            if x.requires_grad:
                _accum(x, g * (gamma.data * inv).reshape(bshape))

        return fn

    return _make(out_data, (x, gamma, beta), bwd)


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log softmax probability of the true classes.

    ``logits`` is (N, K) with integer ``labels`` of length N; a 1-D logits
    vector with a single integer label is treated as a batch of one. Uses the
    usual max-subtraction stabilization.
    """
    L = logits.data
    if L.ndim == 1:
        L = L[None, :]
        labels = [int(labels)] if np.isscalar(labels) else labels
    elif L.ndim != 2:
        raise ValueError(f"softmax_cross_entropy expects (N,K) logits, got shape {logits.data.shape}")
    y = np.asarray(labels, dtype=np.int64)
    n, k = L.shape
    if y.shape != (n,):
        raise ValueError(f"softmax_cross_entropy: {n} rows but {y.shape} labels")
    if y.min() < 0 or y.max() >= k:
        raise ValueError(f"softmax_cross_entropy: label out of range [0, {k})")

    shifted = L - L.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    loss = -logp[np.arange(n), y].mean()

    def bwd(out):
        def fn(g):
            d = np.exp(logp)
            d[np.arange(n), y] -= 1.0
            d *= float(g) / n
            _accum(logits, d.reshape(logits.data.shape))

        return fn

    return _make(loss, (logits,), bwd)


# ---------------------------------------------------------------------------
# finite-difference checking
# ---------------------------------------------------------------------------


def grad_check(fn, point: Tensor, step: float = 1e-5, max_coords=None, rng=None) -> float:
    """Compare analytic and central-difference gradients of a scalar function.

    ``fn`` maps ``point`` to a scalar Tensor and must be deterministic; it is
    re-evaluated with ``point.data`` perturbed in place. Returns the maximum
    over checked coordinates of ``|analytic - numeric| / max(1, |analytic|,
    |numeric|)``. ``max_coords`` limits the check to a random sample of
    coordinates (all by default).

    Kink points of piecewise-linear ops (leaky_relu at 0, maxpool ties) are
    genuinely non-differentiable; the analytic side returns a subgradient
    there and the bound does not apply.
    """
    point.requires_grad = True
    point.grad = None
    with Tape() as tape:
        loss = fn(point)
        tape.backward(loss)
    analytic = (point.grad if point.grad is not None else np.zeros_like(point.data)).ravel().copy()
    point.grad = None

    flat = point.data.reshape(-1)
    coords = np.arange(flat.size)
    if max_coords is not None and max_coords < flat.size:
        gen = np.random.default_rng(rng if rng is not None else 0)
        coords = gen.choice(flat.size, size=max_coords, replace=False)

    worst = 0.0
    for i in coords:
        orig = flat[i]
        flat[i] = orig + step
        f_plus = float(fn(point).data)
        flat[i] = orig - step
        f_minus = float(fn(point).data)
        flat[i] = orig
        numeric = (f_plus - f_minus) / (2.0 * step)
        rel = abs(analytic[i] - numeric) / max(1.0, abs(analytic[i]), abs(numeric))
        worst = max(worst, rel)
    return worst
