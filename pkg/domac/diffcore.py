"""Dense MLPs with exact backpropagation, softmax and Adam.

All arrays are float64. Weights are stored as (fan_in, fan_out) so a layer is
``x @ W + b`` on row-major batches.
"""
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Literal, Sequence, Tuple, Union

import numpy as np

from domac.errors import ConfigurationError, NumericError, ShapeError

Activation = Literal["tanh", "relu"]

# central differences at h = 1e-5 resolve an exact zero gradient to about 1e-11
FD_NOISE_FLOOR = 1e-9


@dataclass
class ParamBlock:
    name: str
    shape: Tuple[int, ...]
    values: np.ndarray
    grads: np.ndarray = None

    def __post_init__(self):
        self.shape = tuple(int(s) for s in self.shape)
        self.values = np.array(self.values, dtype=np.float64).reshape(self.shape)
        if self.grads is None:
            self.grads = np.zeros(self.shape, dtype=np.float64)
        else:
            self.grads = np.array(self.grads, dtype=np.float64).reshape(self.shape)
        if any(s < 1 for s in self.shape):
            raise ShapeError(f"shape must be positive, got {self.shape}", field=self.name)

    @property
    def size(self):
        return int(np.prod(self.shape))

    def zero_grad(self):
        self.grads.fill(0.0)

    def is_finite(self):
        return bool(np.all(np.isfinite(self.values)) and np.all(np.isfinite(self.grads)))


@dataclass(frozen=True)
class MLPSpec:
    input_dim: int
    hidden_dims: Tuple[int, ...]
    output_dim: int
    hidden_activation: Activation = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1 or self.output_dim < 1:
            raise ConfigurationError("input_dim and output_dim must be >= 1", field="MLPSpec")
        if not self.hidden_dims or any(h < 1 for h in self.hidden_dims):
            raise ConfigurationError("hidden_dims must be non-empty and positive", field="MLPSpec")
        if self.hidden_activation not in ("tanh", "relu"):
            raise ConfigurationError(f"unknown activation {self.hidden_activation!r}",
                                     field="MLPSpec.hidden_activation")

    @property
    def layer_dims(self):
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        return list(zip(dims[:-1], dims[1:]))

    @property
    def n_layers(self):
        return len(self.hidden_dims) + 1

    def parameter_count(self):
        return sum(i * o + o for i, o in self.layer_dims)


@dataclass
class ForwardCache:
    spec: MLPSpec
    params: List[ParamBlock]
    layer_inputs: List[np.ndarray] = field(default_factory=list)
    pre_activations: List[np.ndarray] = field(default_factory=list)

    @property
    def batch_size(self):
        return self.layer_inputs[0].shape[0]


def init_params(spec: MLPSpec, rng: np.random.Generator, prefix: str,
                zero_output_layer: bool = False) -> List[ParamBlock]:
    """Scaled-uniform weights (bound 1/sqrt(fan_in)) and zero biases."""
    params = []
    for i, (fan_in, fan_out) in enumerate(spec.layer_dims):
        bound = 1.0 / np.sqrt(fan_in)
        if zero_output_layer and i == spec.n_layers - 1:
            weights = np.zeros((fan_in, fan_out))
        else:
            weights = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        params.append(ParamBlock(f"{prefix}.W{i}", (fan_in, fan_out), weights))
        params.append(ParamBlock(f"{prefix}.b{i}", (fan_out,), np.zeros(fan_out)))
    return params


def _check_params(spec, params):
    if len(params) != 2 * spec.n_layers:
        raise ShapeError(f"expected {2 * spec.n_layers} parameter blocks, got {len(params)}",
                         field="params")
    for i, (fan_in, fan_out) in enumerate(spec.layer_dims):
        weight, bias = params[2 * i], params[2 * i + 1]
        if weight.shape != (fan_in, fan_out) or bias.shape != (fan_out,):
            raise ShapeError(f"layer {i} expects W{(fan_in, fan_out)} and b{(fan_out,)}, "
                             f"got {weight.shape} and {bias.shape}", field=weight.name)


def _activate(kind, z):
    if kind == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _activation_grad(kind, z, a):
    if kind == "tanh":
        return 1.0 - a * a
    return (z > 0.0).astype(np.float64)


def mlp_forward(spec: MLPSpec, params: Sequence[ParamBlock],
                inputs: np.ndarray) -> Tuple[np.ndarray, ForwardCache]:
    _check_params(spec, params)
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ShapeError(f"input must be [batch x {spec.input_dim}], got {x.shape}", field="input")
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite network input")

    cache = ForwardCache(spec=spec, params=list(params))
    a = x
    for i in range(spec.n_layers):
        weight, bias = params[2 * i], params[2 * i + 1]
        cache.layer_inputs.append(a)
        z = a @ weight.values + bias.values
        cache.pre_activations.append(z)
        a = z if i == spec.n_layers - 1 else _activate(spec.hidden_activation, z)
    return a, cache


def mlp_backward(cache: ForwardCache, output_grad: np.ndarray) -> Tuple[List[np.ndarray], np.ndarray]:
    """Backpropagate ``output_grad`` and accumulate into the grads buffers.

    Returns the gradients of this call (in parameter order) and the gradient
    with respect to the network input.
    """
    spec = cache.spec
    delta = np.asarray(output_grad, dtype=np.float64)
    if delta.ndim == 1:
        delta = delta[None, :]
    expected = (cache.batch_size, spec.output_dim)
    if delta.shape != expected:
        raise ShapeError(f"output_grad must be {expected}, got {delta.shape}", field="output_grad")

    param_grads: List[np.ndarray] = [None] * (2 * spec.n_layers)
    for i in reversed(range(spec.n_layers)):
        weight, bias = cache.params[2 * i], cache.params[2 * i + 1]
        d_weight = cache.layer_inputs[i].T @ delta
        d_bias = delta.sum(axis=0)
        weight.grads += d_weight
        bias.grads += d_bias
        param_grads[2 * i], param_grads[2 * i + 1] = d_weight, d_bias
        delta = delta @ weight.values.T
        if i > 0:
            delta = delta * _activation_grad(spec.hidden_activation,
                                             cache.pre_activations[i - 1],
                                             cache.layer_inputs[i])
    return param_grads, delta


def softmax(logits: np.ndarray) -> np.ndarray:
    """Max-stabilised softmax over the last axis."""
    z = np.asarray(logits, dtype=np.float64)
    if z.size == 0 or z.shape[-1] == 0:
        raise ShapeError("softmax of an empty vector", field="logits")
    if not np.all(np.isfinite(z)):
        raise NumericError("non-finite logits")
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def one_hot(indices, depth: int) -> np.ndarray:
    indices = np.asarray(indices, dtype=np.int64)
    out = np.zeros(indices.shape + (depth,), dtype=np.float64)
    np.put_along_axis(out, indices[..., None], 1.0, axis=-1)
    return out


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: Sequence[ParamBlock], lr, beta1=0.9, beta2=0.999, eps=1e-8):
        state = cls(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        for p in params:
            state.m[p.name] = np.zeros(p.shape)
            state.v[p.name] = np.zeros(p.shape)
        return state

    def hyperparameters(self):
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps, "t": self.t}


def adam_step(params: Union[ParamBlock, Sequence[ParamBlock]], state: AdamState):
    """Bias-corrected Adam update; zeroes the grads buffers afterwards.

    Non-finite values or gradients abort the whole update before anything is touched.
    """
    blocks = [params] if isinstance(params, ParamBlock) else list(params)
    for p in blocks:
        if p.name not in state.m or state.m[p.name].shape != p.shape:
            raise ShapeError(f"optimizer state not co-shaped with {p.name}", field=p.name)
        if not p.is_finite():
            raise NumericError(f"non-finite values or gradient in {p.name}",
                               details={"block": p.name, "nan": int(np.isnan(p.grads).sum()),
                                        "inf": int(np.isinf(p.grads).sum())})

    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for p in blocks:
        g = p.grads
        m, v = state.m[p.name], state.v[p.name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.values -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p.zero_grad()
    return params, state


def finite_diff_check(loss_fn: Callable[[bool], float], params: Union[ParamBlock, Sequence[ParamBlock]],
                      h: float = 1e-5, noise_floor: float = FD_NOISE_FLOOR) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn(backward)`` returns the loss for the current parameter values and,
    when ``backward`` is true, also accumulates analytic gradients into the
    grads buffers of ``params``. Coordinates where both gradients are below
    ``noise_floor`` count as exact zeros; central differences only resolve
    them to roundoff.
    """
    if h <= 0:
        raise ConfigurationError("h must be positive", field="h")
    blocks = [params] if isinstance(params, ParamBlock) else list(params)
    for p in blocks:
        p.zero_grad()
    loss_fn(True)
    analytic = [p.grads.copy() for p in blocks]
    for p in blocks:
        p.zero_grad()

    worst = 0.0
    for p, grad in zip(blocks, analytic):
        flat = p.values.reshape(-1)
        flat_grad = grad.reshape(-1)
        for j in range(flat.size):
            original = flat[j]
            flat[j] = original + h
            plus = loss_fn(False)
            flat[j] = original - h
            minus = loss_fn(False)
            flat[j] = original
            numeric = (plus - minus) / (2.0 * h)
            if abs(flat_grad[j]) < noise_floor and abs(numeric) < noise_floor:
                continue
            err = abs(flat_grad[j] - numeric) / max(1e-8, abs(numeric))
            worst = max(worst, err)
    return worst
