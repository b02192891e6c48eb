"""Minimal define-by-run reverse-mode autodiff over float64 numpy arrays.

Covers exactly the ops the rate predictor needs: dense matmul with
broadcasting over batch axes, elementwise arithmetic, concat/reshape/
transpose, a same-length 1-D convolution over a time axis, relu, softplus,
layer norm, softmax, axis means, inverted dropout, and an elementwise
minimum against a constant cap. The tape is rebuilt on every forward pass;
``backward`` walks it once and accumulates gradients into parameter leaves.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class Tensor:
    """A dense float64 array plus the tape bookkeeping for backward()."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        # maps upstream grad -> list of (parent, grad contribution)
        self._vjp: Callable[[np.ndarray], list] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], vjp) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to the shape of a broadcast operand."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcastable(kind: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(
            f"{kind}: incompatible shapes {a.shape} and {b.shape}"
        ) from None


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcastable("add", a, b)

    def vjp(g):
        return [(a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape))]

    return _make(a.data + b.data, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcastable("sub", a, b)

    def vjp(g):
        return [(a, _unbroadcast(g, a.shape)), (b, _unbroadcast(-g, b.shape))]

    return _make(a.data - b.data, (a, b), vjp)


def multiply(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcastable("multiply", a, b)

    def vjp(g):
        return [
            (a, _unbroadcast(g * b.data, a.shape)),
            (b, _unbroadcast(g * a.data, b.shape)),
        ]

    return _make(a.data * b.data, (a, b), vjp)


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)

    def vjp(g):
        return [(a, g * c)]

    return _make(a.data * c, (a,), vjp)


def matmul(a, b) -> Tensor:
    """Matrix product with numpy broadcasting over leading batch axes."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError(f"matmul: operands must be >= 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: inner dims differ for {a.shape} @ {b.shape}")

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return [(a, _unbroadcast(ga, a.shape)), (b, _unbroadcast(gb, b.shape))]

    return _make(np.matmul(a.data, b.data), (a, b), vjp)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]

    def vjp(g):
        pieces = np.split(g, np.cumsum(sizes)[:-1], axis=axis)
        return list(zip(ts, pieces))

    return _make(np.concatenate([t.data for t in ts], axis=axis), ts, vjp)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)

    def vjp(g):
        return [(a, g.reshape(a.shape))]

    return _make(a.data.reshape(shape), (a,), vjp)


def transpose(a, axes) -> Tensor:
    a = _as_tensor(a)
    inv = np.argsort(axes)

    def vjp(g):
        return [(a, g.transpose(inv))]

    return _make(a.data.transpose(axes), (a,), vjp)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0

    def vjp(g):
        return [(a, g * mask)]

    return _make(a.data * mask, (a,), vjp)


def softplus(a) -> Tensor:
    """log(1 + exp(x)), computed stably; strictly positive for finite x."""
    a = _as_tensor(a)
    out = np.maximum(a.data, 0.0) + np.log1p(np.exp(-np.abs(a.data)))

    def vjp(g):
        sig = 1.0 / (1.0 + np.exp(-a.data))
        return [(a, g * sig)]

    return _make(out, (a,), vjp)


def layer_norm(a, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis to zero mean, unit variance (no affine)."""
    a = _as_tensor(a)
    mu = a.data.mean(axis=-1, keepdims=True)
    var = a.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a.data - mu) * inv

    def vjp(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        return [(a, (g - gm - xhat * gx) * inv)]

    return _make(xhat, (a,), vjp)


def softmax_lastdim(a) -> Tensor:
    a = _as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return [(a, y * (g - dot))]

    return _make(y, (a,), vjp)


def mean_over_axis(a, axis: int) -> Tensor:
    a = _as_tensor(a)
    n = a.shape[axis]

    def vjp(g):
        return [(a, np.repeat(np.expand_dims(g / n, axis), n, axis=axis))]

    return _make(a.data.mean(axis=axis), (a,), vjp)


def dropout(a, p: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    """Inverted dropout: scales kept units by 1/(1-p) at train time."""
    a = _as_tensor(a)
    if not train or p == 0.0:
        return a
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout: p must be in [0, 1), got {p}")
    if rng is None:
        raise ValueError("dropout: rng required in train mode with p > 0")
    keep = (rng.random(a.shape) >= p) / (1.0 - p)

    def vjp(g):
        return [(a, g * keep)]

    return _make(a.data * keep, (a,), vjp)


def elementwise_min_const(a, cap) -> Tensor:
    """min(x, cap): gradient passes through strictly below the cap, zero above."""
    a = _as_tensor(a)
    cap = np.asarray(cap, dtype=np.float64)
    below = a.data < cap

    def vjp(g):
        return [(a, g * below)]

    return _make(np.minimum(a.data, cap), (a,), vjp)


def affine_per_feature(a, scale_t, shift_t) -> Tensor:
    """x * scale + shift with scale/shift broadcast over the last axis."""
    a, scale_t, shift_t = _as_tensor(a), _as_tensor(scale_t), _as_tensor(shift_t)
    if scale_t.shape != (a.shape[-1],) or shift_t.shape != (a.shape[-1],):
        raise ValueError(
            "affine_per_feature: scale/shift must have shape "
            f"({a.shape[-1]},), got {scale_t.shape} and {shift_t.shape}"
        )
    return add(multiply(a, scale_t), shift_t)


def conv1d_time(x, kernel, bias=None) -> Tensor:
    """Same-length 1-D convolution over the second-to-last axis.

    x: (..., W, C_in), kernel: (K, C_in, C_out) with K odd, zero padding so
    the output keeps length W.
    """
    x, kernel = _as_tensor(x), _as_tensor(kernel)
    if kernel.data.ndim != 3 or kernel.shape[0] % 2 != 1:
        raise ValueError(f"conv1d_time: kernel must be (K odd, C_in, C_out), got {kernel.shape}")
    if x.data.ndim < 2 or x.shape[-1] != kernel.shape[1]:
        raise ValueError(
            f"conv1d_time: input {x.shape} incompatible with kernel {kernel.shape}"
        )
    k, c_in, c_out = kernel.shape
    w = x.shape[-2]
    half = k // 2
    pad = [(0, 0)] * (x.data.ndim - 2) + [(half, half), (0, 0)]
    xp = np.pad(x.data, pad)
    # im2col: (..., W, K*C_in) so the whole conv is one matmul
    win = np.stack([xp[..., i : i + w, :] for i in range(k)], axis=-2)
    win = np.ascontiguousarray(win).reshape(x.shape[:-1] + (k * c_in,))
    kflat = kernel.data.reshape(k * c_in, c_out)
    out = win @ kflat

    def vjp(g):
        batch_axes = tuple(range(g.ndim - 1))
        gk = np.tensordot(win, g, axes=(batch_axes, batch_axes)).reshape(k, c_in, c_out)
        gwin = (g @ kflat.T).reshape(x.shape[:-1] + (k, c_in))
        gxp = np.zeros_like(xp)
        for i in range(k):
            gxp[..., i : i + w, :] += gwin[..., i, :]
        gx = gxp[..., half : half + w, :] if half else gxp
        return [(x, gx), (kernel, gk)]

    out_t = _make(out, (x, kernel), vjp)
    if bias is not None:
        out_t = add(out_t, bias)
    return out_t


def backward(loss: Tensor) -> None:
    """Accumulate dLoss/dθ into every requires_grad leaf reachable from loss.

    Calling twice without zeroing gradients sums the contributions.
    """
    if loss.data.shape != ():
        raise ValueError(f"backward: loss must be scalar, got shape {loss.data.shape}")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones(())}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._vjp is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in node._vjp(g):
            if not parent.requires_grad:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = np.asarray(pg, dtype=np.float64)


class ParamStore:
    """Named map from parameter path to a requires_grad Tensor."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter path: {name}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def values_copy(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self._params.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for k, v in values.items():
            t = self._params[k]
            v = np.asarray(v, dtype=np.float64)
            if v.shape != t.data.shape:
                raise ValueError(f"shape mismatch loading {k}: {v.shape} vs {t.data.shape}")
            t.data = v.copy()


class Adam:
    """Adam with bias correction; the caller zeroes gradients between steps."""

    def __init__(self, params: ParamStore, lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.items()}

    def step(self) -> None:
        missing = [k for k, p in self.params.items() if p.grad is None]
        if missing:
            raise ValueError(f"adam step: missing gradients for {missing}")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            m_hat = self.m[k] / bc1
            v_hat = self.v[k] / bc2
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        self.params.zero_grad()


def gradient_check(closure: Callable[[], Tensor], params: ParamStore,
                   tolerance: float = 1e-4, fd_step: float = 1e-5) -> dict[str, float]:
    """Compare reverse-mode gradients against central finite differences.

    The closure must be deterministic (dropout disabled); it is evaluated
    twice up front and rejected if the two losses differ. Returns the max
    relative error per parameter; raises AssertionError if any exceeds the
    tolerance. Relative error uses max(|a|, |b|, 1e-6) as denominator.
    """
    l1 = float(closure().data)
    l2 = float(closure().data)
    if l1 != l2:
        raise ValueError(f"gradient_check: closure is non-deterministic ({l1} != {l2})")

    params.zero_grad()
    backward(closure())
    analytic = {k: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
                for k, p in params.items()}

    errors: dict[str, float] = {}
    for name, p in params.items():
        worst = 0.0
        flat = p.data.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + fd_step
            f_plus = float(closure().data)
            flat[i] = orig - fd_step
            f_minus = float(closure().data)
            flat[i] = orig
            fd = (f_plus - f_minus) / (2.0 * fd_step)
            a = analytic[name].ravel()[i]
            rel = abs(a - fd) / max(abs(a), abs(fd), 1e-6)
            worst = max(worst, rel)
        errors[name] = worst

    bad = {k: v for k, v in errors.items() if v > tolerance}
    if bad:
        raise AssertionError(f"gradient check failed (tolerance {tolerance}): {bad}")
    return errors
