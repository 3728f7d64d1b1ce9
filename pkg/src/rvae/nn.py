"""Dense feed-forward networks, Adam, and seeded sampling.

Everything runs in float64 on the tape from :mod:`rvae.engine`, so every
network used by the models is checkable against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import engine
from .engine import Tensor
from .errors import TrainingError

ACTIVATIONS = ("relu", "identity")


class Rng:
    """Seeded PCG64 stream; identical seed means identical sample stream."""

    def __init__(self, seed: int, algorithm: str = "pcg64", _seq: np.random.SeedSequence | None = None):
        if algorithm != "pcg64":
            raise ValueError(f"unknown rng algorithm: {algorithm}")
        self.seed = int(seed)
        self.algorithm = algorithm
        self._seq = _seq if _seq is not None else np.random.SeedSequence(self.seed)
        self.gen = np.random.Generator(np.random.PCG64(self._seq))

    def derive(self, *keys: int) -> "Rng":
        """Independent child stream keyed by (seed, *keys), e.g. per row."""
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=tuple(int(k) for k in keys))
        return Rng(self.seed, self.algorithm, _seq=seq)

    def normal(self, size=None) -> np.ndarray:
        return self.gen.standard_normal(size)

    def uniform(self, size=None) -> np.ndarray:
        return self.gen.random(size)

    def permutation(self, n: int) -> np.ndarray:
        return self.gen.permutation(n)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size=size)


@dataclass
class Layer:
    W: Tensor
    b: Tensor
    activation: str


class DenseNet:
    """A plain MLP: affine layers with ReLU or identity activations.

    ``forward`` caches the tape so ``backward`` can return gradients for
    every parameter and for the input, per the engine contract.
    """

    def __init__(self, sizes: list[int], activations: list[str], rng: Rng | None = None, name: str = "net"):
        if len(activations) != len(sizes) - 1:
            raise ValueError("need one activation per layer")
        for act in activations:
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation: {act}")
        self.name = name
        self.layers: list[Layer] = []
        for i, (n_in, n_out, act) in enumerate(zip(sizes[:-1], sizes[1:], activations)):
            if rng is None:
                w = np.zeros((n_in, n_out))
            else:
                # He-style scaling for ReLU layers, LeCun-style otherwise
                scale = np.sqrt((2.0 if act == "relu" else 1.0) / n_in)
                w = rng.normal((n_in, n_out)) * scale
            self.layers.append(Layer(Tensor(w), Tensor(np.zeros(n_out)), act))
        self._cache: tuple[Tensor, Tensor] | None = None

    @classmethod
    def from_layers(cls, layers: list[tuple[np.ndarray, np.ndarray, str]], name: str = "net") -> "DenseNet":
        net = cls([1, 1], ["identity"], name=name)
        net.layers = []
        prev_out = None
        for w, b, act in layers:
            w = np.asarray(w, dtype=np.float64)
            b = np.asarray(b, dtype=np.float64)
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation: {act}")
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError("layer shapes disagree")
            if prev_out is not None and w.shape[0] != prev_out:
                raise ValueError(f"consecutive layer dimensions disagree: {prev_out} vs {w.shape[0]}")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValueError("non-finite parameters")
            prev_out = w.shape[1]
            net.layers.append(Layer(Tensor(w), Tensor(b), act))
        return net

    @property
    def n_inputs(self) -> int:
        return self.layers[0].W.value.shape[0]

    @property
    def n_outputs(self) -> int:
        return self.layers[-1].W.value.shape[1]

    def apply(self, x: Tensor) -> Tensor:
        """Tape-through forward on a (B, n_inputs) tensor."""
        out = x
        for layer in self.layers:
            out = engine.add(engine.matmul(out, layer.W), layer.b)
            if layer.activation == "relu":
                out = engine.relu(out)
        return out

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Plain-array forward; caches the tape for :meth:`backward`."""
        x = np.asarray(x, dtype=np.float64)
        vector_in = x.ndim == 1
        if vector_in:
            x = x[None, :]
        if x.shape[1] != self.n_inputs:
            raise ValueError(f"input length {x.shape[1]} does not match first layer ({self.n_inputs})")
        x_t = Tensor(x)
        out_t = self.apply(x_t)
        self._cache = (x_t, out_t)
        return out_t.value[0] if vector_in else out_t.value

    def backward(self, upstream: np.ndarray) -> tuple[dict[str, np.ndarray], np.ndarray]:
        """Gradients w.r.t. every parameter and the input of the cached forward."""
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        x_t, out_t = self._cache
        upstream = np.asarray(upstream, dtype=np.float64)
        vector_out = upstream.ndim == 1
        if vector_out:
            upstream = upstream[None, :]
        out_t.backward(seed=upstream.reshape(out_t.value.shape))
        grads = {name: (t.grad if t.grad is not None else np.zeros_like(t.value)) for name, t in self.params().items()}
        x_grad = x_t.grad if x_t.grad is not None else np.zeros_like(x_t.value)
        return grads, (x_grad[0] if vector_out else x_grad)

    def params(self) -> dict[str, Tensor]:
        out = {}
        for i, layer in enumerate(self.layers):
            out[f"{self.name}.W{i}"] = layer.W
            out[f"{self.name}.b{i}"] = layer.b
        return out


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Softmax with max subtraction; rows sum to 1 within 1e-12."""
    x = np.asarray(x, dtype=np.float64)
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


@dataclass
class AdamState:
    """Per-parameter moment accumulators plus the optimizer hyperparameters."""

    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def init_adam(params: dict[str, Tensor], lr: float = 0.001, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.0) -> AdamState:
    state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps, weight_decay=weight_decay)
    for name, p in params.items():
        state.m[name] = np.zeros_like(p.value)
        state.v[name] = np.zeros_like(p.value)
    return state


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState) -> AdamState:
    """One bias-corrected Adam update, in place on the parameter tensors.

    L2 decay is applied as a gradient addition weight_decay * param before
    the moment updates (the classic optimizer-level weight decay).
    """
    state.step_count += 1
    t = state.step_count
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.value)
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter '{name}'")
        if g.shape != p.value.shape:
            raise ValueError(f"gradient shape mismatch for '{name}'")
        if state.weight_decay != 0.0:
            g = g + state.weight_decay * p.value
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        p.value -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return state


def sample_gaussian(rng: Rng, mean, std):
    """Reparameterized draw mean + std * eps with eps ~ N(0, I).

    Accepts plain arrays or tape tensors; with tensors the draw is
    differentiable w.r.t. mean and std. Rejects non-positive std.
    """
    mean_val = mean.value if isinstance(mean, Tensor) else np.asarray(mean, dtype=np.float64)
    std_val = std.value if isinstance(std, Tensor) else np.asarray(std, dtype=np.float64)
    if np.any(std_val <= 0.0):
        raise ValueError("std must be positive elementwise")
    eps = rng.normal(np.broadcast_shapes(mean_val.shape, std_val.shape))
    if isinstance(mean, Tensor) or isinstance(std, Tensor):
        return engine.add(engine._wrap(mean), engine.mul(engine._wrap(std), eps))
    return mean_val + std_val * eps
