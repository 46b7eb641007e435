"""Dense fully connected networks with hand-written backprop, gradient
checking, RMSprop, and a reproducible splitmix64 random stream.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. Network
parameters are a flat list ``[W1, b1, W2, b2, ...]`` where ``Wk`` has shape
``(out, in)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import ConfigError, ContractError, EvaluationError

HIDDEN_ACTIVATIONS = ("tanh", "relu", "sigmoid")
OUTPUT_ACTIVATIONS = ("identity", "sigmoid")

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def _mix64(x):
    x = (x ^ (x >> np.uint64(30))) * _MIX1
    x = (x ^ (x >> np.uint64(27))) * _MIX2
    return x ^ (x >> np.uint64(31))


def splitmix64(seed: int, key: int = 0) -> int:
    """One splitmix64 output for ``seed`` advanced ``key + 1`` times."""
    state = (seed + (key + 1) * 0x9E3779B97F4A7C15) & _MASK64
    with np.errstate(over="ignore"):
        return int(_mix64(np.uint64(state)))


class Rng:
    """Counter-based splitmix64 stream.

    Output ``i`` is ``mix(seed + (i + 1) * gamma)``, identical to the
    sequential generator, which lets blocks be drawn vectorized.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self.counter = 0

    def next_u64(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return _mix64(np.uint64(self.seed) + idx * _GAMMA)

    def uniform(self, n: int) -> np.ndarray:
        """Uniform doubles in [0, 1) from the top 53 bits."""
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normal(self, n: int) -> np.ndarray:
        """Standard normals by Box-Muller, two per pair of uniforms."""
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs)
        u1 = 1.0 - u[0::2]  # (0, 1]
        u2 = u[1::2]
        r = np.sqrt(-2.0 * np.log(u1))
        out = np.empty(2 * pairs)
        out[0::2] = r * np.cos(2.0 * np.pi * u2)
        out[1::2] = r * np.sin(2.0 * np.pi * u2)
        return out[:n]

    def integers(self, high: int, n: int) -> np.ndarray:
        return np.minimum((self.uniform(n) * high).astype(np.int64), high - 1)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of ``range(n)``."""
        perm = np.arange(n)
        u = self.uniform(max(n - 1, 0))
        for k, i in enumerate(range(n - 1, 0, -1)):
            j = min(int(u[k] * (i + 1)), i)
            perm[i], perm[j] = perm[j], perm[i]
        return perm


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple[int, ...]
    hidden_activation: str = "tanh"
    output_activation: str = "identity"

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        if len(self.layer_sizes) < 2:
            raise ConfigError("layer_sizes", "need at least 2 layer sizes")
        if any(s < 1 for s in self.layer_sizes):
            raise ConfigError("layer_sizes", f"sizes must be positive, got {self.layer_sizes}")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ConfigError("hidden_activation", f"unknown activation {self.hidden_activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ConfigError("output_activation", f"unknown activation {self.output_activation!r}")

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    def param_shapes(self) -> list[tuple[int, ...]]:
        shapes = []
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            shapes += [(fan_out, fan_in), (fan_out,)]
        return shapes

    def n_params(self) -> int:
        return sum(int(np.prod(s)) for s in self.param_shapes())


def init_params(spec: MlpSpec, rng: Rng) -> list[np.ndarray]:
    """Glorot-uniform weights, zero biases."""
    params = []
    for fan_out, fan_in in spec.param_shapes()[0::2]:
        s = np.sqrt(6.0 / (fan_in + fan_out))
        w = (2.0 * rng.uniform(fan_out * fan_in) - 1.0) * s
        params += [w.reshape(fan_out, fan_in), np.zeros(fan_out)]
    return params


def zero_params(spec: MlpSpec) -> list[np.ndarray]:
    return [np.zeros(s) for s in spec.param_shapes()]


def _activate(name, a):
    if name == "tanh":
        return np.tanh(a)
    if name == "relu":
        return np.maximum(a, 0.0)
    if name == "sigmoid":
        return expit(a)
    return a


def _activation_grad(name, a, h, upstream):
    """d(act)/da applied to ``upstream``; ``h`` is act(a)."""
    if name == "tanh":
        return upstream * (1.0 - h * h)
    if name == "relu":
        # derivative at exactly 0 is taken as 0
        return upstream * (a > 0.0)
    if name == "sigmoid":
        return upstream * h * (1.0 - h)
    return upstream


@dataclass
class MlpCache:
    params: list
    inputs: list = field(default_factory=list)  # input to each layer
    pre: list = field(default_factory=list)  # pre-activations per layer
    post: list = field(default_factory=list)  # activations per layer


def check_params(spec: MlpSpec, params) -> None:
    shapes = spec.param_shapes()
    if len(params) != len(shapes):
        raise ConfigError("params", f"expected {len(shapes)} arrays, got {len(params)}")
    for k, (p, s) in enumerate(zip(params, shapes)):
        if np.shape(p) != s:
            kind = "weight" if k % 2 == 0 else "bias"
            raise ConfigError(f"layer {k // 2}", f"{kind} shape {np.shape(p)} != expected {s}")


def mlp_forward(spec: MlpSpec, params, x):
    """Forward pass for a single vector or a batch of row vectors.

    Returns ``(output, cache)``; the cache is what ``mlp_backward`` needs.
    """
    check_params(spec, params)
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != spec.layer_sizes[0] or x.ndim not in (1, 2):
        raise ConfigError("layer 0", f"input shape {x.shape} incompatible with size {spec.layer_sizes[0]}")
    cache = MlpCache(params=params)
    h = x
    for k in range(spec.n_layers):
        w, b = params[2 * k], params[2 * k + 1]
        a = h @ w.T + b
        act = spec.output_activation if k == spec.n_layers - 1 else spec.hidden_activation
        cache.inputs.append(h)
        cache.pre.append(a)
        h = _activate(act, a)
        cache.post.append(h)
    return h, cache


def mlp_backward(spec: MlpSpec, params, cache: MlpCache, output_gradient, param_grads: bool = True):
    """Reverse pass. Returns ``(param_gradients, input_gradient)``.

    For batched input the parameter gradients are summed over rows. With
    ``param_grads=False`` only the input gradient is formed and the first
    element of the result is ``None``.
    """
    stale = len(cache.params) != len(params) or any(a is not b for a, b in zip(cache.params, params))
    if stale or len(cache.pre) != spec.n_layers:
        raise ContractError("cache was not produced by mlp_forward with these params")
    g = np.asarray(output_gradient, dtype=np.float64)
    if g.shape != cache.post[-1].shape:
        raise ContractError(f"output gradient shape {g.shape} != output shape {cache.post[-1].shape}")
    grads = [None] * len(params)
    for k in range(spec.n_layers - 1, -1, -1):
        act = spec.output_activation if k == spec.n_layers - 1 else spec.hidden_activation
        da = _activation_grad(act, cache.pre[k], cache.post[k], g)
        h = cache.inputs[k]
        if param_grads and da.ndim == 1:
            grads[2 * k] = np.outer(da, h)
            grads[2 * k + 1] = da.copy()
        elif param_grads:
            grads[2 * k] = da.T @ h
            grads[2 * k + 1] = da.sum(axis=0)
        g = da @ params[2 * k]
    return (grads if param_grads else None), g


def finite_diff_gradient(f, params: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at flat vector ``params``."""
    if not h > 0:
        raise ValueError(f"step h must be positive, got {h}")
    p = np.array(params, dtype=np.float64).ravel()
    grad = np.empty_like(p)
    for i in range(p.size):
        orig = p[i]
        p[i] = orig + h
        fp = f(p.copy())
        p[i] = orig - h
        fm = f(p.copy())
        p[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise EvaluationError(f"non-finite function value at coordinate {i}", index=i)
        grad[i] = (fp - fm) / (2.0 * h)
    return grad


def flatten(arrays) -> np.ndarray:
    return np.concatenate([np.ravel(a) for a in arrays]) if arrays else np.zeros(0)


def unflatten(flat, shapes) -> list[np.ndarray]:
    out, pos = [], 0
    for s in shapes:
        n = int(np.prod(s))
        out.append(np.array(flat[pos:pos + n]).reshape(s))
        pos += n
    if pos != len(flat):
        raise ContractError(f"flat vector has {len(flat)} entries, shapes need {pos}")
    return out


def max_relative_error(a, b) -> float:
    a, b = np.ravel(a), np.ravel(b)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return float(np.max(np.abs(a - b) / denom))


@dataclass
class RmspropState:
    accumulators: list
    decay: float = 0.9
    epsilon: float = 1e-8
    learning_rate: float = 1e-3

    @classmethod
    def fresh(cls, params, decay=0.9, epsilon=1e-8, learning_rate=1e-3):
        return cls([np.zeros_like(p) for p in params], decay, epsilon, learning_rate)


def rmsprop_step(params, gradients, state: RmspropState):
    """One RMSprop update; returns new arrays and leaves inputs untouched."""
    if len(params) != len(gradients) or len(params) != len(state.accumulators):
        raise ConfigError("gradients", "parameter, gradient and accumulator counts differ")
    rho, eps, lr = state.decay, state.epsilon, state.learning_rate
    new_params, new_acc = [], []
    for p, g, s in zip(params, gradients, state.accumulators):
        if np.shape(p) != np.shape(g) or np.shape(p) != np.shape(s):
            raise ConfigError("gradients", f"shape mismatch {np.shape(p)} / {np.shape(g)} / {np.shape(s)}")
        s = rho * s + (1.0 - rho) * g * g
        new_acc.append(s)
        new_params.append(p - lr * g / (np.sqrt(s) + eps))
    return new_params, RmspropState(new_acc, rho, eps, lr)
