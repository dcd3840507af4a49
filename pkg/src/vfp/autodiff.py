"""Dense float64 tensors with tape-based reverse-mode differentiation.

Everything trainable in this package (MLPs, losses, the optimizer) sits on
this module. Tensors wrap numpy float64 arrays and record the op graph as
they are combined; ``backward`` replays the tape in reverse. Non-finite
values are rejected at construction so NaNs surface at the op that made
them instead of three losses later.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DimensionError, NumericError

Array = np.ndarray


def _as_float64(value) -> Array:
    arr = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NumericError("tensor contains NaN or Inf")
    return arr


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum `grad` down to `shape` (undo numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A float64 array plus the tape edge that produced it."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, value, requires_grad: bool = False,
                 _parents: tuple["Tensor", ...] = (),
                 _vjp: Callable[[Array], tuple[Array, ...]] | None = None):
        self.value = _as_float64(value)
        self.grad: Array | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._vjp = _vjp

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.value)

    def detach(self) -> "Tensor":
        return Tensor(self.value)

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = as_tensor(other)
        out_val = self.value + other.value

        def vjp(g: Array):
            return _unbroadcast(g, self.shape), _unbroadcast(g, other.shape)

        return Tensor(out_val, _parents=(self, other), _vjp=vjp)

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return Tensor(-self.value, _parents=(self,), _vjp=lambda g: (-g,))

    def __sub__(self, other) -> "Tensor":
        return self + (-as_tensor(other))

    def __rsub__(self, other) -> "Tensor":
        return as_tensor(other) + (-self)

    def __mul__(self, other) -> "Tensor":
        other = as_tensor(other)
        out_val = self.value * other.value
        a, b = self.value, other.value

        def vjp(g: Array):
            return _unbroadcast(g * b, self.shape), _unbroadcast(g * a, other.shape)

        return Tensor(out_val, _parents=(self, other), _vjp=vjp)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = as_tensor(other)
        out_val = self.value / other.value
        a, b = self.value, other.value

        def vjp(g: Array):
            return (_unbroadcast(g / b, self.shape),
                    _unbroadcast(-g * a / (b * b), other.shape))

        return Tensor(out_val, _parents=(self, other), _vjp=vjp)

    def __rtruediv__(self, other) -> "Tensor":
        return as_tensor(other) / self

    def __pow__(self, exponent: float) -> "Tensor":
        if not isinstance(exponent, (int, float)):
            raise TypeError("only constant exponents are supported")
        out_val = self.value ** exponent
        base = self.value

        def vjp(g: Array):
            return (g * exponent * base ** (exponent - 1),)

        return Tensor(out_val, _parents=(self,), _vjp=vjp)

    def __matmul__(self, other) -> "Tensor":
        other = as_tensor(other)
        if self.ndim != 2 or other.ndim != 2:
            raise DimensionError("matmul expects 2-D operands")
        if self.shape[1] != other.shape[0]:
            raise DimensionError(
                f"matmul shapes {self.shape} and {other.shape} do not chain")
        a, b = self.value, other.value

        def vjp(g: Array):
            return g @ b.T, a.T @ g

        return Tensor(a @ b, _parents=(self, other), _vjp=vjp)

    # -- elementwise nonlinearities ------------------------------------------

    def tanh(self) -> "Tensor":
        out_val = np.tanh(self.value)

        def vjp(g: Array):
            return (g * (1.0 - out_val * out_val),)

        return Tensor(out_val, _parents=(self,), _vjp=vjp)

    def relu(self) -> "Tensor":
        mask = self.value > 0

        def vjp(g: Array):
            return (g * mask,)

        return Tensor(self.value * mask, _parents=(self,), _vjp=vjp)

    def exp(self) -> "Tensor":
        out_val = np.exp(self.value)

        def vjp(g: Array):
            return (g * out_val,)

        return Tensor(out_val, _parents=(self,), _vjp=vjp)

    def log(self) -> "Tensor":
        base = self.value

        def vjp(g: Array):
            return (g / base,)

        return Tensor(np.log(self.value), _parents=(self,), _vjp=vjp)

    def sqrt(self) -> "Tensor":
        out_val = np.sqrt(self.value)

        def vjp(g: Array):
            return (g * 0.5 / out_val,)

        return Tensor(out_val, _parents=(self,), _vjp=vjp)

    def clip(self, lo: float, hi: float) -> "Tensor":
        mask = (self.value >= lo) & (self.value <= hi)

        def vjp(g: Array):
            return (g * mask,)

        return Tensor(np.clip(self.value, lo, hi), _parents=(self,), _vjp=vjp)

    # -- shape ops ------------------------------------------------------------

    def transpose(self) -> "Tensor":
        if self.ndim != 2:
            raise DimensionError("transpose expects a 2-D tensor")
        return Tensor(self.value.T, _parents=(self,), _vjp=lambda g: (g.T,))

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        old = self.shape

        def vjp(g: Array):
            return (g.reshape(old),)

        return Tensor(self.value.reshape(shape), _parents=(self,), _vjp=vjp)

    def __getitem__(self, key) -> "Tensor":
        out_val = self.value[key]
        shape = self.shape

        def vjp(g: Array):
            full = np.zeros(shape)
            full[key] = g
            return (full,)

        return Tensor(out_val, _parents=(self,), _vjp=vjp)

    # -- reductions ------------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        shape = self.shape

        def vjp(g: Array):
            if axis is None:
                return (np.broadcast_to(g, shape).copy(),)
            g_ = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(g_, shape).copy(),)

        return Tensor(self.value.sum(axis=axis, keepdims=keepdims),
                      _parents=(self,), _vjp=vjp)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        n = self.value.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- autodiff ------------------------------------------------------------

    def _topo_order(self) -> list["Tensor"]:
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        return order

    def _grads(self) -> dict[int, Array]:
        if self.ndim != 0:
            raise ValueError("backward requires a scalar loss")
        if not self.requires_grad:
            return {}
        grads: dict[int, Array] = {id(self): np.ones(())}
        for node in reversed(self._topo_order()):
            g = grads.get(id(node))
            if g is None or node._vjp is None:
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if not parent.requires_grad:
                    continue
                if not np.all(np.isfinite(pg)):
                    raise NumericError("gradient contains NaN or Inf")
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = np.asarray(pg, dtype=np.float64)
        return grads

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable leaf."""
        grads = self._grads()
        for node in self._topo_order():
            if node._parents or not node.requires_grad:
                continue
            g = grads.get(id(node))
            if g is None:
                g = np.zeros(node.shape)
            node.grad = g if node.grad is None else node.grad + g


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def parameter(value) -> Tensor:
    return Tensor(value, requires_grad=True)


def from_op(value, parents: Sequence[Tensor],
            vjp: Callable[[Array], tuple[Array, ...]]) -> Tensor:
    """Build a tape node with a custom vector-Jacobian product."""
    return Tensor(value, _parents=tuple(parents), _vjp=vjp)


def grad(output: Tensor, wrt: Sequence[Tensor]) -> list[Array]:
    """Gradients of a scalar `output` without touching ``.grad`` buffers."""
    grads = output._grads()
    return [grads.get(id(w), np.zeros(w.shape)) for w in wrt]


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    values = [t.value for t in tensors]
    out_val = np.concatenate(values, axis=axis)
    sizes = [v.shape[axis] for v in values]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g: Array):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor(out_val, _parents=tuple(tensors), _vjp=vjp)


def logsumexp(x: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    # detached max shift; its gradient contribution cancels exactly
    shift = Tensor(np.max(x.value, axis=axis, keepdims=True))
    out = (x - shift).exp().sum(axis=axis, keepdims=True).log() + shift
    if not keepdims:
        out = out.reshape(np.squeeze(out.value, axis=axis).shape)
    return out


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x - Tensor(np.max(x.value, axis=axis, keepdims=True))
    e = shifted.exp()
    return e / e.sum(axis=axis, keepdims=True)


# ---------------------------------------------------------------------------
# MLP
# ---------------------------------------------------------------------------

_ACTIVATIONS = {"tanh": Tensor.tanh, "relu": Tensor.relu}


class Mlp:
    """Fully connected net; weights are (out, in) per layer, fan-in init."""

    def __init__(self, in_dim: int, hidden: Sequence[int], out_dim: int,
                 rng: np.random.Generator, activation: str = "tanh"):
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.activation = activation
        sizes = [in_dim, *hidden, out_dim]
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = math.sqrt(1.0 / fan_in)
            self.weights.append(parameter(rng.uniform(-bound, bound, (fan_out, fan_in))))
            self.biases.append(parameter(rng.uniform(-bound, bound, fan_out)))

    def __call__(self, x: Tensor | Array) -> Tensor:
        x = as_tensor(x)
        if x.ndim != 2:
            raise DimensionError("Mlp expects a (batch, features) input")
        if x.shape[1] != self.in_dim:
            raise DimensionError(
                f"input has {x.shape[1]} features, expected {self.in_dim}")
        act = _ACTIVATIONS[self.activation]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.T + b
            if i < last:
                h = act(h)
        return h

    def parameters(self) -> list[Tensor]:
        params = []
        for w, b in zip(self.weights, self.biases):
            params.extend((w, b))
        return params

    def named_parameters(self, prefix: str) -> list[tuple[str, Tensor]]:
        named = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            named.append((f"{prefix}.w{i}", w))
            named.append((f"{prefix}.b{i}", b))
        return named

    @property
    def n_params(self) -> int:
        return sum(p.value.size for p in self.parameters())


class Adam:
    """Standard Adam with bias correction; state is checkpointable."""

    def __init__(self, params: Iterable[Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros(p.shape) for p in self.params]
        self.v = [np.zeros(p.shape) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros(p.shape)
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            m_hat = self.m[i] / (1 - b1 ** self.t)
            v_hat = self.v[i] / (1 - b2 ** self.t)
            p.value = _as_float64(p.value - self.lr * m_hat / (np.sqrt(v_hat) + self.eps))

    def state_arrays(self) -> tuple[int, list[Array], list[Array]]:
        return self.t, self.m, self.v

    def load_state_arrays(self, t: int, m: list[Array], v: list[Array]) -> None:
        if len(m) != len(self.params) or len(v) != len(self.params):
            raise DimensionError("optimizer state does not match parameter list")
        self.t = t
        self.m = [np.asarray(a, dtype=np.float64).reshape(p.shape)
                  for a, p in zip(m, self.params)]
        self.v = [np.asarray(a, dtype=np.float64).reshape(p.shape)
                  for a, p in zip(v, self.params)]


# ---------------------------------------------------------------------------
# RNG + finite-difference helpers
# ---------------------------------------------------------------------------

def make_rng(seed: int) -> np.random.Generator:
    """Seeded PCG64 stream; equal seeds give bitwise-equal draw sequences."""
    return np.random.Generator(np.random.PCG64(seed))


def spawn_rngs(seed: int, n: int) -> list[np.random.Generator]:
    """n independent child streams derived from one seed."""
    return [np.random.Generator(np.random.PCG64(child))
            for child in np.random.SeedSequence(seed).spawn(n)]


def central_difference(f: Callable[[Array], float], x: Array,
                       h: float = 1e-5) -> Array:
    """Central finite-difference gradient of scalar f at x."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros(x.size)
    flat = x.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f(x)
        flat[i] = orig - h
        down = f(x)
        flat[i] = orig
        out[i] = (up - down) / (2.0 * h)
    return out.reshape(x.shape)


def max_rel_error(a: Array, b: Array, floor: float = 1e-3) -> float:
    """Max elementwise |a-b| / max(|a|,|b|,floor)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def check_gradient(loss_fn: Callable[[], Tensor], params: Sequence[Tensor],
                   h: float = 1e-5) -> float:
    """Compare tape gradients of loss_fn() against central differences.

    loss_fn must rebuild the loss from the live parameter values on every
    call. Returns the max relative error over all parameter entries.
    """
    loss = loss_fn()
    analytic = grad(loss, params)
    worst = 0.0
    for p, ga in zip(params, analytic):
        def eval_at(x, _p=p):
            _p.value = x
            return loss_fn().item()

        base = p.value.copy()
        gf = central_difference(eval_at, base.copy(), h=h)
        p.value = base
        worst = max(worst, max_rel_error(ga, gf))
    return worst
