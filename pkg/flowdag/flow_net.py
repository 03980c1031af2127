"""
Flow function F_theta(s, a): a two-hidden-layer perceptron over the state
adjacency, with hand-written backpropagation and Adam.

The network outputs log-flows, one per action index target*d + source.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
from scipy.special import logsumexp

from flowdag.errors import DeadEndError, ShapeError, TrainingDivergenceError
from flowdag.graph_state import BuilderState

LEAK = 0.01

FeatureKind = Literal["adjacency", "adjacency_closure"]


@dataclass
class FlowNet:
    d: int
    hidden_width: int
    params: list[np.ndarray]  # [W1, b1, W2, b2, W3, b3]
    features: FeatureKind = "adjacency"

    @property
    def input_dim(self) -> int:
        return self.d * self.d * (2 if self.features == "adjacency_closure" else 1)


@dataclass
class OptState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class ActionDistribution:
    """Action probabilities of one state, or of a batch with one row per state."""

    probs: np.ndarray
    support: np.ndarray = field(repr=False)

    def with_exploration(self, epsilon: float) -> "ActionDistribution":
        """Mixes in the uniform distribution over the support with weight epsilon."""
        if epsilon <= 0:
            return self
        uniform = self.support / self.support.sum(axis=-1, keepdims=True)
        return ActionDistribution((1 - epsilon) * self.probs + epsilon * uniform, self.support)

    def draw(self, uniforms: np.ndarray) -> np.ndarray:
        """Inverse-CDF draw of one action index per row.

        `uniforms` holds one U[0, 1) variate per row; zero-probability entries
        are never returned.
        """
        probs = np.atleast_2d(self.probs)
        cdf = np.cumsum(probs, axis=1)
        return np.argmax(cdf > np.reshape(uniforms, (-1, 1)) * cdf[:, -1:], axis=1)


def init_flow_net(d: int, hidden_width: int = 256, features: FeatureKind = "adjacency",
                  seed: int = 0, zero: bool = False) -> FlowNet:
    """Glorot-uniform weights, zero biases. `zero=True` gives the all-zero network."""
    rng = np.random.default_rng(seed)
    in_dim = d * d * (2 if features == "adjacency_closure" else 1)
    sizes = [in_dim, hidden_width, hidden_width, d * d]
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        W = np.zeros((fan_in, fan_out)) if zero else rng.uniform(-limit, limit, size=(fan_in, fan_out))
        params.extend([W, np.zeros(fan_out)])
    return FlowNet(d=d, hidden_width=hidden_width, params=params, features=features)


def featurize(states: Sequence[BuilderState], features: FeatureKind = "adjacency") -> np.ndarray:
    """Row-major flattened A (optionally followed by H) as float64 rows."""
    blocks = [np.stack([s.A.reshape(-1) for s in states]).astype(np.float64)]
    if features == "adjacency_closure":
        blocks.append(np.stack([s.H.reshape(-1) for s in states]).astype(np.float64))
    return np.concatenate(blocks, axis=1)


def _leaky(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, x, LEAK * x)


def forward_batch(net: FlowNet, inputs: np.ndarray) -> tuple[np.ndarray, tuple]:
    """Log-flows for a batch of feature rows, plus the cache for backward()."""
    if inputs.ndim != 2 or inputs.shape[1] != net.input_dim:
        raise ShapeError(f"Expected inputs of width {net.input_dim}, got shape {inputs.shape}.")
    W1, b1, W2, b2, W3, b3 = net.params
    z1 = inputs @ W1 + b1
    h1 = _leaky(z1)
    z2 = h1 @ W2 + b2
    h2 = _leaky(z2)
    out = h2 @ W3 + b3
    return out, (inputs, z1, h1, z2, h2)


def forward(net: FlowNet, s: BuilderState) -> np.ndarray:
    """Log-flows of every action index out of a single state.

    Args:
        net: Flow network built for the same node count as `s`.
        s: State to evaluate.

    Returns:
        A vector of d*d log-flows, entry target*d + source.
    """
    if s.d != net.d:
        raise ShapeError(f"Network built for d={net.d}, state has d={s.d}.")
    out, _ = forward_batch(net, featurize([s], net.features))
    return out[0]


def backward(net: FlowNet, cache: tuple, grad_out: np.ndarray) -> list[np.ndarray]:
    """Parameter gradients given dLoss/dOutput, in the order of net.params."""
    inputs, z1, h1, z2, h2 = cache
    _, _, W2, _, W3, _ = net.params
    dW3 = h2.T @ grad_out
    db3 = grad_out.sum(axis=0)
    dz2 = (grad_out @ W3.T) * np.where(z2 > 0, 1.0, LEAK)
    dW2 = h1.T @ dz2
    db2 = dz2.sum(axis=0)
    dz1 = (dz2 @ W2.T) * np.where(z1 > 0, 1.0, LEAK)
    dW1 = inputs.T @ dz1
    db1 = dz1.sum(axis=0)
    return [dW1, db1, dW2, db2, dW3, db3]


def masked_log_probs(logflows: np.ndarray, forbidden: np.ndarray) -> np.ndarray:
    """Log-softmax over the unmasked entries of each row; masked entries get -inf.

    Args:
        logflows: One vector of log-flows, or an (N, d*d) batch.
        forbidden: Boolean mask of the same shape, True where an action is masked.

    Raises:
        DeadEndError: If some row has every action masked.
    """
    support = ~np.asarray(forbidden, dtype=bool)
    if not support.any(axis=-1).all():
        raise DeadEndError("Every action is masked.")
    logits = np.where(support, logflows, -np.inf)
    return logits - logsumexp(logits, axis=-1, keepdims=True)


def masked_distribution(logflows: np.ndarray, forbidden: np.ndarray) -> ActionDistribution:
    """Softmax over the unmasked entries; masked entries get probability 0.

    Works row-wise on an (N, d*d) batch as well as on a single vector.
    """
    probs = np.exp(masked_log_probs(logflows, forbidden))
    probs /= probs.sum(axis=-1, keepdims=True)
    return ActionDistribution(probs=probs, support=~np.asarray(forbidden, dtype=bool))


def init_opt_state(net: FlowNet, lr: float = 1e-4, beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8) -> OptState:
    return OptState(m=[np.zeros_like(p) for p in net.params], v=[np.zeros_like(p) for p in net.params],
                    lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def adam_update(params: list[np.ndarray], grads: list[np.ndarray],
                opt: OptState) -> tuple[list[np.ndarray], OptState]:
    """One bias-corrected Adam step over a list of arrays."""
    if len(grads) != len(params) or any(g.shape != p.shape for g, p in zip(grads, params)):
        raise ShapeError("Gradient shapes do not match parameter shapes.")
    step = opt.step + 1
    if not all(np.all(np.isfinite(g)) for g in grads):
        raise TrainingDivergenceError("Non-finite gradient", step=step)
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, opt.m, opt.v):
        m = opt.beta1 * m + (1 - opt.beta1) * g
        v = opt.beta2 * v + (1 - opt.beta2) * g * g
        m_hat = m / (1 - opt.beta1 ** step)
        v_hat = v / (1 - opt.beta2 ** step)
        new_params.append(p - opt.lr * m_hat / (np.sqrt(v_hat) + opt.eps))
        new_m.append(m)
        new_v.append(v)
    return new_params, OptState(m=new_m, v=new_v, step=step, lr=opt.lr,
                                beta1=opt.beta1, beta2=opt.beta2, eps=opt.eps)


def adam_step(net: FlowNet, grads: list[np.ndarray], opt: OptState) -> tuple[FlowNet, OptState]:
    params, opt = adam_update(net.params, grads, opt)
    return FlowNet(net.d, net.hidden_width, params, net.features), opt


def save_checkpoint(net: FlowNet, opt: OptState, stem: Path | str, extra: dict | None = None) -> tuple[Path, Path]:
    """Writes <stem>.json (manifest) and <stem>.bin (little-endian float64).

    `extra` is stored verbatim under the manifest key "extra".
    """
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    manifest = {
        "d": net.d,
        "hidden_width": net.hidden_width,
        "features": net.features,
        "layer_shapes": [list(p.shape) for p in net.params],
        "optimizer": {"lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps},
        "step": opt.step,
        "blocks": ["params", "m", "v"],
        "extra": extra or {},
    }
    json_path = stem.with_suffix(".json")
    bin_path = stem.with_suffix(".bin")
    json_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    flat = np.concatenate([a.reshape(-1) for a in [*net.params, *opt.m, *opt.v]])
    flat.astype("<f8").tofile(bin_path)
    return json_path, bin_path


def read_checkpoint_manifest(stem: Path | str) -> dict:
    path = Path(stem).with_suffix(".json")
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise ValueError(f"Checkpoint manifest '{path}' not found.")


def load_checkpoint(stem: Path | str) -> tuple[FlowNet, OptState]:
    stem = Path(stem)
    manifest = read_checkpoint_manifest(stem)
    flat = np.fromfile(stem.with_suffix(".bin"), dtype="<f8").astype(np.float64)
    shapes = [tuple(s) for s in manifest["layer_shapes"]]
    arrays, offset = [], 0
    for _ in range(3):
        for shape in shapes:
            size = int(np.prod(shape))
            arrays.append(flat[offset:offset + size].reshape(shape))
            offset += size
    if offset != flat.size:
        raise ShapeError(f"Checkpoint payload has {flat.size} values, manifest describes {offset}.")
    k = len(shapes)
    net = FlowNet(manifest["d"], manifest["hidden_width"], arrays[:k], manifest.get("features", "adjacency"))
    opt_cfg = manifest["optimizer"]
    opt = OptState(m=arrays[k:2 * k], v=arrays[2 * k:], step=manifest["step"], **opt_cfg)
    return net, opt
