#!/usr/bin/env python3
"""
Neural Network Core
===================

Minimal reverse-mode differentiation on top of numpy, plus the handful of
building blocks every trained component in the pipeline is made of.

Features:
- Tensor with recorded parents and per-op backward closures
- Iterative topological backward pass (safe for long recurrent graphs)
- Dense / Mlp / RmsNorm modules with named parameters
- Adam optimizer with bias correction, global-norm gradient clipping
- Central finite-difference verification
- Hyperspherical projection used by every memory readout

Graphs are built per training step and dropped afterwards; nothing is retained
between calls to compute_gradients.

Author: MATE Pipeline
Version: 1.0
"""

import math
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from errors import ConfigurationError, DegenerateInputError, NumericError, UsageError

ArrayLike = Union[np.ndarray, float, int, Sequence[float]]

_grad_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording on the current thread (rollouts, targets, timing)"""
    previous = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is Ellipsis or i is None for i in items)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape"""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """N-dimensional array that records how it was computed"""

    __slots__ = ("data", "requires_grad", "name", "op", "_parents", "_backward")
    # numpy defers to the reflected operators below for ndarray <op> Tensor
    __array_ufunc__ = None

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: Optional[str] = None,
                 dtype: Optional[np.dtype] = None):
        array = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(array.dtype, np.floating):
            array = array.astype(np.float64)
        self.data = array
        self.requires_grad = requires_grad
        self.name = name
        self.op = "leaf"
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None

    # ------------------------------------------------------------------
    # construction helpers
    # ------------------------------------------------------------------
    @staticmethod
    def _from_op(data: np.ndarray, parents: Tuple["Tensor", ...], op: str,
                 backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.name = None
        out.op = op
        if is_grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    def _lift(self, other: ArrayLike) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    # ------------------------------------------------------------------
    # properties
    # ------------------------------------------------------------------
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{label})"

    # ------------------------------------------------------------------
    # arithmetic
    # ------------------------------------------------------------------
    def __add__(self, other: ArrayLike) -> "Tensor":
        other = self._lift(other)
        a_shape, b_shape = self.shape, other.shape
        return Tensor._from_op(self.data + other.data, (self, other), "add",
                               lambda g: (_unbroadcast(g, a_shape), _unbroadcast(g, b_shape)))

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return Tensor._from_op(-self.data, (self,), "neg", lambda g: (-g,))

    def __sub__(self, other: ArrayLike) -> "Tensor":
        other = self._lift(other)
        a_shape, b_shape = self.shape, other.shape
        return Tensor._from_op(self.data - other.data, (self, other), "sub",
                               lambda g: (_unbroadcast(g, a_shape), _unbroadcast(-g, b_shape)))

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return self._lift(other) - self

    def __mul__(self, other: ArrayLike) -> "Tensor":
        other = self._lift(other)
        a, b = self.data, other.data
        return Tensor._from_op(a * b, (self, other), "mul",
                               lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)))

    __rmul__ = __mul__

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        other = self._lift(other)
        a, b = self.data, other.data
        return Tensor._from_op(a / b, (self, other), "div",
                               lambda g: (_unbroadcast(g / b, a.shape),
                                          _unbroadcast(-g * a / (b * b), b.shape)))

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        return self._lift(other) / self

    def __pow__(self, exponent: float) -> "Tensor":
        if isinstance(exponent, Tensor):
            raise UsageError("Tensor exponents are not supported; use a Python scalar")
        a = self.data
        return Tensor._from_op(a ** exponent, (self,), "pow",
                               lambda g: (g * exponent * a ** (exponent - 1),))

    def __matmul__(self, other: "Tensor") -> "Tensor":
        other = self._lift(other)
        a, b = self.data, other.data
        if a.ndim < 2 or b.ndim < 2:
            raise UsageError(f"matmul expects operands of rank >= 2, got {a.shape} and {b.shape}")

        def backward(g: np.ndarray):
            ga = g @ np.swapaxes(b, -1, -2)
            gb = np.swapaxes(a, -1, -2) @ g
            return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

        return Tensor._from_op(a @ b, (self, other), "matmul", backward)

    def __rmatmul__(self, other: ArrayLike) -> "Tensor":
        return self._lift(other) @ self

    # ------------------------------------------------------------------
    # reductions and shape ops
    # ------------------------------------------------------------------
    def sum(self, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> "Tensor":
        shape = self.shape

        def backward(g: np.ndarray):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor._from_op(self.data.sum(axis=axis, keepdims=keepdims), (self,), "sum", backward)

    def mean(self, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            count = self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape: int) -> "Tensor":
        original = self.shape
        return Tensor._from_op(self.data.reshape(*shape), (self,), "reshape",
                               lambda g: (g.reshape(original),))

    def swapaxes(self, axis1: int, axis2: int) -> "Tensor":
        return Tensor._from_op(np.swapaxes(self.data, axis1, axis2), (self,), "swapaxes",
                               lambda g: (np.swapaxes(g, axis1, axis2),))

    @property
    def T(self) -> "Tensor":
        return self.swapaxes(-1, -2)

    def __getitem__(self, index) -> "Tensor":
        shape, dtype = self.shape, self.dtype
        basic = _is_basic_index(index)

        def backward(g: np.ndarray):
            full = np.zeros(shape, dtype=dtype)
            if basic:
                full[index] = g
            else:
                # fancy indices may repeat
                np.add.at(full, index, g)
            return (full,)

        return Tensor._from_op(self.data[index], (self,), "index", backward)

    def cumsum(self, axis: int = 0) -> "Tensor":
        """Prefix sum, a left fold in index order"""
        def backward(g: np.ndarray):
            return (np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis),)

        return Tensor._from_op(np.cumsum(self.data, axis=axis), (self,), "cumsum", backward)

    # ------------------------------------------------------------------
    # elementwise functions
    # ------------------------------------------------------------------
    def exp(self) -> "Tensor":
        out = np.exp(self.data)
        return Tensor._from_op(out, (self,), "exp", lambda g: (g * out,))

    def log(self) -> "Tensor":
        a = self.data
        return Tensor._from_op(np.log(a), (self,), "log", lambda g: (g / a,))

    def sqrt(self) -> "Tensor":
        out = np.sqrt(self.data)
        return Tensor._from_op(out, (self,), "sqrt", lambda g: (g * 0.5 / out,))

    def tanh(self) -> "Tensor":
        out = np.tanh(self.data)
        return Tensor._from_op(out, (self,), "tanh", lambda g: (g * (1.0 - out * out),))

    def sigmoid(self) -> "Tensor":
        out = 0.5 * (1.0 + np.tanh(0.5 * self.data))
        return Tensor._from_op(out, (self,), "sigmoid", lambda g: (g * out * (1.0 - out),))

    def relu(self) -> "Tensor":
        mask = self.data > 0
        return Tensor._from_op(self.data * mask, (self,), "relu", lambda g: (g * mask,))

    def softplus(self) -> "Tensor":
        a = self.data
        out = np.logaddexp(0.0, a).astype(a.dtype, copy=False)
        slope = 0.5 * (1.0 + np.tanh(0.5 * a))
        return Tensor._from_op(out, (self,), "softplus", lambda g: (g * slope,))

    def gelu(self) -> "Tensor":
        """Tanh-form GELU; the derivative is exact for this form"""
        a = self.data
        k = math.sqrt(2.0 / math.pi)
        inner = k * (a + 0.044715 * a ** 3)
        t = np.tanh(inner)
        out = 0.5 * a * (1.0 + t)
        slope = 0.5 * (1.0 + t) + 0.5 * a * (1.0 - t * t) * k * (1.0 + 3 * 0.044715 * a * a)
        return Tensor._from_op(out, (self,), "gelu", lambda g: (g * slope,))

    def clip(self, low: float, high: float) -> "Tensor":
        a = self.data
        mask = (a >= low) & (a <= high)
        return Tensor._from_op(np.clip(a, low, high), (self,), "clip", lambda g: (g * mask,))

    def softmax(self, axis: int = -1) -> "Tensor":
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        out = e / e.sum(axis=axis, keepdims=True)

        def backward(g: np.ndarray):
            return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

        return Tensor._from_op(out, (self,), "softmax", backward)

    def norm(self, axis: int = -1, keepdims: bool = True) -> "Tensor":
        return (self * self).sum(axis=axis, keepdims=keepdims).sqrt()


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    """Concatenate tensors; the gradient is split back along the same axis"""
    arrays = [t.data for t in tensors]
    sizes = [a.shape[axis] for a in arrays]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g: np.ndarray):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._from_op(np.concatenate(arrays, axis=axis), tuple(tensors), "concat", backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Stack equally shaped tensors along a new axis"""
    def backward(g: np.ndarray):
        return tuple(np.moveaxis(g, axis, 0))

    return Tensor._from_op(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), "stack", backward)


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise minimum; ties route the gradient to the first operand"""
    mask = a.data <= b.data
    return Tensor._from_op(np.minimum(a.data, b.data), (a, b), "minimum",
                           lambda g: (_unbroadcast(g * mask, a.shape), _unbroadcast(g * ~mask, b.shape)))


ACTIVATIONS: Dict[str, Callable[[Tensor], Tensor]] = {
    "tanh": Tensor.tanh,
    "gelu": Tensor.gelu,
    "relu": Tensor.relu,
    "softplus": Tensor.softplus,
    "identity": lambda x: x,
}


def apply_activation(name: str, x: Tensor) -> Tensor:
    if name not in ACTIVATIONS:
        raise ConfigurationError(f"Unknown activation '{name}' (registry: {sorted(ACTIVATIONS)})")
    return ACTIVATIONS[name](x)


# ----------------------------------------------------------------------
# gradients
# ----------------------------------------------------------------------
def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited = set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def compute_gradients(loss: Tensor, params: Sequence[Tensor]) -> List[np.ndarray]:
    """
    Reverse-mode gradients of a scalar loss with respect to params

    Args:
        loss: Scalar tensor produced by a recorded forward pass
        params: Leaf tensors to differentiate against

    Returns:
        One gradient per parameter, zeros for parameters not on the loss path
    """
    if loss.data.size != 1:
        raise UsageError(f"compute_gradients needs a scalar loss, got shape {loss.shape}")

    wanted = {id(p) for p in params}
    leaf_grads: Dict[int, np.ndarray] = {}
    if loss.requires_grad:
        pending: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(_topological_order(loss)):
            grad = pending.pop(id(node), None)
            if grad is None:
                continue
            if node._backward is None:
                if id(node) in wanted:
                    leaf_grads[id(node)] = grad
                continue
            for parent, parent_grad in zip(node._parents, node._backward(grad)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                if not np.all(np.isfinite(parent_grad)):
                    raise NumericError(f"Non-finite gradient flowing out of node '{node.op}'"
                                       f"{' (' + node.name + ')' if node.name else ''}")
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + parent_grad
                else:
                    pending[key] = parent_grad
    return [leaf_grads.get(id(p), np.zeros_like(p.data)) for p in params]


def global_norm(grads: Iterable[np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads))


def clip_gradients(grads: Sequence[np.ndarray], max_norm: float) -> List[np.ndarray]:
    """Rescale grads so their global L2 norm is at most max_norm (direction preserved)"""
    if max_norm <= 0:
        raise UsageError(f"max_norm must be positive, got {max_norm}")
    grads = list(grads)
    if not grads:
        return grads
    norm = global_norm(grads)
    if norm <= max_norm:
        return grads
    scale = max_norm / norm
    return [g * scale for g in grads]


def finite_difference_check(forward: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5,
                            floor: float = 1e-5) -> float:
    """
    Max relative error between analytic gradients and central differences

    Args:
        forward: Re-evaluates the scalar objective from the current parameter values
        params: Parameters to perturb (64-bit)
        eps: Perturbation size in (0, 1e-2]
        floor: Smallest denominator; entries below it are compared absolutely

    Returns:
        max |analytic - numeric| / max(|analytic|, |numeric|, floor)
    """
    if not 0 < eps <= 1e-2:
        raise UsageError(f"eps must lie in (0, 1e-2], got {eps}")

    analytic = compute_gradients(forward(), params)
    worst = 0.0
    with no_grad():
        for param, grad in zip(params, analytic):
            flat = param.data.reshape(-1)
            for i in range(flat.size):
                original = flat[i]
                flat[i] = original + eps
                upper = forward().item()
                flat[i] = original - eps
                lower = forward().item()
                flat[i] = original
                if not (math.isfinite(upper) and math.isfinite(lower)):
                    raise NumericError(f"Non-finite evaluation while perturbing '{param.name}'[{i}]")
                numeric = (upper - lower) / (2 * eps)
                exact = float(grad.reshape(-1)[i])
                denom = max(abs(exact), abs(numeric), floor)
                worst = max(worst, abs(exact - numeric) / denom)
    return worst


# ----------------------------------------------------------------------
# projection
# ----------------------------------------------------------------------
def hypersphere_project(v: Tensor, offset: Tensor, scale: Optional[float] = None) -> Tensor:
    """
    scale * (v + offset) / ||v + offset|| along the last axis

    Raises DegenerateInputError when ||v + offset|| < 1e-12 instead of returning NaN.
    """
    if v.shape[-1] != offset.shape[-1]:
        raise ConfigurationError(f"Projection dimension mismatch: {v.shape[-1]} vs offset {offset.shape[-1]}")
    if scale is None:
        scale = math.sqrt(v.shape[-1])
    shifted = v + offset
    norms = np.sqrt(np.sum(shifted.data.astype(np.float64) ** 2, axis=-1))
    if np.any(norms < 1e-12):
        raise DegenerateInputError(f"Cannot project a vector of norm {float(np.min(norms)):.3e} onto the hypersphere")
    return shifted * (scale / shifted.norm(axis=-1, keepdims=True))


# ----------------------------------------------------------------------
# modules
# ----------------------------------------------------------------------
def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, dtype=np.float64) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in)).astype(dtype)


class Module:
    """Anything owning named parameters"""

    def named_parameters(self, prefix: str = "") -> List[Tuple[str, Tensor]]:
        raise NotImplementedError

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def parameter_count(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))


class Dense(Module):
    """y = f(x A^T + b) with A stored as (out, in)"""

    def __init__(self, in_dim: int, out_dim: int, activation: str = "identity",
                 rng: Optional[np.random.Generator] = None, dtype=np.float64, name: str = "dense"):
        if activation not in ACTIVATIONS:
            raise ConfigurationError(f"Unknown activation '{activation}' for layer '{name}'")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_dim, self.out_dim = in_dim, out_dim
        self.activation = activation
        self.name = name
        self.A = Tensor(glorot_uniform(rng, in_dim, out_dim, dtype), requires_grad=True, name=f"{name}/A")
        self.b = Tensor(np.zeros(out_dim, dtype=dtype), requires_grad=True, name=f"{name}/b")

    def named_parameters(self, prefix: str = "") -> List[Tuple[str, Tensor]]:
        return [(f"{prefix}A", self.A), (f"{prefix}b", self.b)]

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise ConfigurationError(f"Layer '{self.name}' expects input dim {self.in_dim}, got {x.shape[-1]}")
        pre = x @ self.A.T if x.ndim >= 2 else (x.reshape(1, -1) @ self.A.T).reshape(self.out_dim)
        out = apply_activation(self.activation, pre + self.b)
        if not np.all(np.isfinite(out.data)):
            raise NumericError(f"Non-finite output from layer '{self.name}'")
        return out


@dataclass
class MlpParams:
    """Layer sizes and activation per layer; sizes chain by construction"""
    sizes: List[int]
    activations: List[str]

    def __post_init__(self):
        if len(self.sizes) < 2:
            raise ConfigurationError("An MLP needs at least an input and an output size")
        if len(self.activations) != len(self.sizes) - 1:
            raise ConfigurationError(f"{len(self.sizes) - 1} layers but {len(self.activations)} activations")
        unknown = [a for a in self.activations if a not in ACTIVATIONS]
        if unknown:
            raise ConfigurationError(f"Unknown activation(s) {unknown}")


class Mlp(Module):
    def __init__(self, params: MlpParams, rng: Optional[np.random.Generator] = None,
                 dtype=np.float64, name: str = "mlp"):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.spec = params
        self.layers = [Dense(params.sizes[i], params.sizes[i + 1], params.activations[i], rng, dtype,
                             name=f"{name}/{i}")
                       for i in range(len(params.sizes) - 1)]

    @property
    def in_dim(self) -> int:
        return self.spec.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.spec.sizes[-1]

    def named_parameters(self, prefix: str = "") -> List[Tuple[str, Tensor]]:
        named = []
        for i, layer in enumerate(self.layers):
            named.extend(layer.named_parameters(f"{prefix}{i}/"))
        return named

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x


def mlp_forward(params: Mlp, x: Tensor) -> Tensor:
    return params(x)


def build_mlp(in_dim: int, hidden: Sequence[int], out_dim: int, activation: str = "relu",
              out_activation: str = "identity", rng: Optional[np.random.Generator] = None,
              dtype=np.float64, name: str = "mlp") -> Mlp:
    sizes = [in_dim, *hidden, out_dim]
    activations = [activation] * len(hidden) + [out_activation]
    return Mlp(MlpParams(sizes, activations), rng=rng, dtype=dtype, name=name)


class RmsNorm(Module):
    def __init__(self, dim: int, dtype=np.float64, name: str = "norm", eps: float = 1e-6):
        self.gain = Tensor(np.ones(dim, dtype=dtype), requires_grad=True, name=f"{name}/gain")
        self.eps = eps

    def named_parameters(self, prefix: str = "") -> List[Tuple[str, Tensor]]:
        return [(f"{prefix}gain", self.gain)]

    def __call__(self, x: Tensor) -> Tensor:
        rms = ((x * x).mean(axis=-1, keepdims=True) + self.eps).sqrt()
        return x / rms * self.gain


# ----------------------------------------------------------------------
# optimizer
# ----------------------------------------------------------------------
@dataclass
class AdamState:
    m: List[np.ndarray]
    v: List[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam_state(params: Sequence[Tensor], beta1: float = 0.9, beta2: float = 0.999,
                    eps: float = 1e-8) -> AdamState:
    return AdamState(m=[np.zeros_like(p.data) for p in params],
                     v=[np.zeros_like(p.data) for p in params],
                     beta1=beta1, beta2=beta2, eps=eps)


def adam_step(state: AdamState, params: Sequence[Tensor], grads: Sequence[np.ndarray],
              lr: float) -> Tuple[Sequence[Tensor], AdamState]:
    """One bias-corrected Adam update; parameter arrays are replaced, not mutated"""
    if lr <= 0:
        raise UsageError(f"Learning rate must be positive, got {lr}")
    if not (len(params) == len(grads) == len(state.m)):
        raise UsageError(f"Adam got {len(params)} params, {len(grads)} grads, {len(state.m)} moment slots")
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.data.shape != g.shape or state.m[i].shape != g.shape:
            raise UsageError(f"Adam shape mismatch for parameter '{p.name}': "
                             f"param {p.data.shape}, grad {g.shape}, moments {state.m[i].shape}")

    state.step += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** state.step
    correction2 = 1.0 - b2 ** state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        m_hat = state.m[i] / correction1
        v_hat = state.v[i] / correction2
        p.data = (p.data - lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.data.dtype, copy=False)
    return params, state


class AdamOptimizer:
    """Adam bound to a fixed parameter list, with optional global-norm clipping"""

    def __init__(self, params: Sequence[Tensor], lr: float, grad_clip: Optional[float] = None):
        self.params = list(params)
        self.lr = lr
        self.grad_clip = grad_clip
        self.state = init_adam_state(self.params)

    def step(self, grads: Sequence[np.ndarray]) -> float:
        """Apply one update; returns the pre-clip global gradient norm"""
        norm = global_norm(grads)
        if self.grad_clip is not None:
            grads = clip_gradients(grads, self.grad_clip)
        adam_step(self.state, self.params, grads, self.lr)
        return norm


def snapshot(params: Sequence[Tensor]) -> List[np.ndarray]:
    return [p.data.copy() for p in params]
