"""From-scratch MLP pose networks and the Bin & Delta composition rules.

Networks are lists of (W, b, activation) layers on plain numpy arrays;
forward keeps a cache so the hand-written backward pass can produce weight
gradients from a loss gradient at the output.  No batch normalization:
desk-scale batches make its statistics noisy (deviation from the reference
topology, recorded in the experiment docs).
"""

from __future__ import annotations

import dataclasses
import json
import math

import numpy as np

from . import dictionary as dct
from . import so3

ACTIVATIONS = ("relu", "pi_tanh", "l2_normalize", "softmax", "linear")

ADDITIVE = "additive"
QUATERNION_RENORM = "quaternion_renorm"
RIEMANNIAN = "riemannian"
COMBINATION_RULES = (ADDITIVE, QUATERNION_RENORM, RIEMANNIAN)

CHECKPOINT_VERSION = 1


class DimensionMismatch(ValueError):
    pass


class ZeroSum(ValueError):
    """Renormalized quaternion sum with vanishing norm."""


@dataclasses.dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise DimensionMismatch("weight/bias shapes disagree")
        if not (np.all(np.isfinite(self.weight)) and np.all(np.isfinite(self.bias))):
            raise ValueError("non-finite parameters")


@dataclasses.dataclass
class MLP:
    layers: list

    def __post_init__(self):
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if nxt.weight.shape[1] != prev.weight.shape[0]:
                raise DimensionMismatch("consecutive layer dimensions do not chain")

    @property
    def in_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].weight.shape[0]


def _apply_activation(tag: str, z: np.ndarray) -> np.ndarray:
    if tag == "linear":
        return z
    if tag == "relu":
        return np.maximum(z, 0.0)
    if tag == "pi_tanh":
        # float tanh saturates to exactly 1.0 around |z|=19; clip to the
        # largest double below pi so outputs stay strictly inside (-pi, pi)
        limit = np.nextafter(math.pi, 0.0)
        return np.clip(math.pi * np.tanh(z), -limit, limit)
    if tag == "l2_normalize":
        n = np.linalg.norm(z, axis=-1, keepdims=True)
        if np.any(n < 1e-300):
            raise ZeroSum("l2_normalize on a zero pre-activation")
        return z / n
    if tag == "softmax":
        m = z.max(axis=-1, keepdims=True)
        e = np.exp(z - m)
        return e / e.sum(axis=-1, keepdims=True)
    raise ValueError(tag)


def _activation_backward(tag: str, z: np.ndarray, h: np.ndarray, g: np.ndarray) -> np.ndarray:
    """d loss / d z given h = act(z) and g = d loss / d h."""
    if tag == "linear":
        return g
    if tag == "relu":
        return g * (z > 0.0)
    if tag == "pi_tanh":
        # h = pi tanh z  =>  dh/dz = pi (1 - tanh^2 z) = pi - h^2 / pi
        return g * (math.pi - h * h / math.pi)
    if tag == "l2_normalize":
        n = np.linalg.norm(z, axis=-1, keepdims=True)
        dot = np.sum(h * g, axis=-1, keepdims=True)
        return (g - h * dot) / n
    if tag == "softmax":
        dot = np.sum(h * g, axis=-1, keepdims=True)
        return h * (g - dot)
    raise ValueError(tag)


def forward(net: MLP, f: np.ndarray) -> np.ndarray:
    """Run the network on a single feature vector or a (n, in_dim) batch."""
    out, _ = forward_cached(net, f)
    return out


def forward_cached(net: MLP, f: np.ndarray):
    """Forward pass keeping per-layer (pre-activation, activation) pairs."""
    x = np.asarray(f, dtype=float)
    if x.shape[-1] != net.in_dim:
        raise DimensionMismatch(
            f"feature dim {x.shape[-1]} does not match first layer {net.in_dim}"
        )
    cache = [("input", None, x)]
    h = x
    for layer in net.layers:
        z = h @ layer.weight.T + layer.bias
        h = _apply_activation(layer.activation, z)
        cache.append((layer.activation, z, h))
    return h, cache


def backward(net: MLP, cache, grad_out: np.ndarray, from_logits: bool = False):
    """Weight/bias gradients for a loss gradient at the network output.

    With from_logits=True the final activation is skipped: grad_out is then
    the gradient at the last pre-activation (the usual cross-entropy /
    softmax folding).  Returns (grads, grad_input) where grads is a list of
    (dW, db) aligned with net.layers.  Batched inputs sum over the batch.
    """
    grads = [None] * len(net.layers)
    g = np.asarray(grad_out, dtype=float)
    for i in reversed(range(len(net.layers))):
        layer = net.layers[i]
        tag, z, h = cache[i + 1]
        if i == len(net.layers) - 1 and from_logits:
            gz = g
        else:
            gz = _activation_backward(tag, z, h, g)
        h_prev = cache[i][2]
        if gz.ndim == 1:
            dw = np.outer(gz, h_prev)
            db = gz.copy()
        else:
            dw = gz.T @ h_prev
            db = gz.sum(axis=0)
        grads[i] = (dw, db)
        g = gz @ layer.weight
    return grads, g


def init_pose_network(sizes, seed: int, activations=None) -> MLP:
    """Kaiming-style fan-in uniform init: W ~ U(+-sqrt(6/fan_in)), b = 0.

    Default activations are relu on hidden layers and linear on the head;
    pass an explicit list (one tag per layer) for pose heads.
    """
    sizes = list(sizes)
    if len(sizes) < 2:
        raise ValueError("need at least input and output sizes")
    n_layers = len(sizes) - 1
    if activations is None:
        activations = ["relu"] * (n_layers - 1) + ["linear"]
    if len(activations) != n_layers:
        raise ValueError("one activation per layer required")
    rng = np.random.default_rng(seed)
    layers = []
    for i in range(n_layers):
        fan_in = sizes[i]
        bound = math.sqrt(6.0 / fan_in)
        w = rng.uniform(-bound, bound, size=(sizes[i + 1], sizes[i]))
        layers.append(Layer(w, np.zeros(sizes[i + 1]), activations[i]))
    return MLP(layers)


# ---------------------------------------------------------------------------
# Bin & Delta composition


def compose(rule: str, key: np.ndarray, delta: np.ndarray):
    """Fuse a key pose and a delta into a final pose.

    additive          -> z_l + dy                  (vector)
    quaternion_renorm -> (z_l + dy) / |z_l + dy|   (vector)
    riemannian        -> R(z_l) @ exp(dy)          (Rotation)
    """
    key = np.asarray(key, dtype=float)
    delta = np.asarray(delta, dtype=float)
    if key.shape != delta.shape:
        raise DimensionMismatch("key and delta dimensions differ")
    if rule == ADDITIVE:
        return key + delta
    if rule == QUATERNION_RENORM:
        s = key + delta
        n = np.linalg.norm(s)
        if n < 1e-12:
            raise ZeroSum(f"|z + dy| = {n:.3g}")
        return s / n
    if rule == RIEMANNIAN:
        if key.shape != (3,):
            raise DimensionMismatch("riemannian rule is axis-angle only")
        key_m = so3.rodrigues(so3.clip_axis_angle_norm(key))
        delta_m = so3.rodrigues(so3.clip_axis_angle_norm(delta))
        return so3.Rotation(key_m @ delta_m)
    raise ValueError(f"unknown combination rule {rule!r}")


def compose_rotation(rule: str, key: np.ndarray, delta: np.ndarray) -> so3.Rotation:
    """compose(...) followed by conversion to a Rotation (with the axis-angle
    safety projection for vector rules)."""
    out = compose(rule, key, delta)
    if isinstance(out, so3.Rotation):
        return out
    if rule == ADDITIVE:
        return so3.Rotation(so3.rodrigues(so3.clip_axis_angle_norm(out)))
    return so3.Rotation(so3._quat_to_matrix(so3.canonical_quaternion(out)))


@dataclasses.dataclass(frozen=True, eq=False)
class BinDeltaPrediction:
    """Softmax probabilities plus one (shared) or K (per-bin) delta vectors."""

    probs: np.ndarray
    deltas: np.ndarray  # (d,) shared or (K, d) per-bin

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if abs(p.sum() - 1.0) > 1e-9 or np.any(p < 0.0):
            raise ValueError("probs must sum to 1 within 1e-9")

    @property
    def per_bin(self) -> bool:
        return np.asarray(self.deltas).ndim == 2


def predict(bd: BinDeltaPrediction, dictionary: dct.PoseDictionary, rule: str) -> so3.Rotation:
    """argmax label (lowest index on ties), then compose that key and delta."""
    probs = np.asarray(bd.probs, dtype=float)
    if probs.shape[0] != dictionary.size:
        raise DimensionMismatch("probs length does not match dictionary size")
    label = int(np.argmax(probs))
    delta = np.asarray(bd.deltas, dtype=float)
    if delta.ndim == 2:
        delta = delta[label]
    return compose_rotation(rule, dictionary.keys[label], delta)


# ---------------------------------------------------------------------------
# checkpoints


def save_mlp(net: MLP, path, seed=None) -> None:
    """JSON checkpoint: header with sizes/activations/seed, layer-ordered
    tensors.  json round-trips doubles exactly (shortest-repr), so loading
    reproduces the weights bit-for-bit."""
    sizes = [net.in_dim] + [layer.weight.shape[0] for layer in net.layers]
    doc = {
        "version": CHECKPOINT_VERSION,
        "sizes": sizes,
        "activations": [layer.activation for layer in net.layers],
        "seed": seed,
        "tensors": [
            {"weight": layer.weight.tolist(), "bias": layer.bias.tolist()}
            for layer in net.layers
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_mlp(path) -> MLP:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    layers = [
        Layer(
            np.array(t["weight"], dtype=float),
            np.array(t["bias"], dtype=float),
            act,
        )
        for t, act in zip(doc["tensors"], doc["activations"])
    ]
    return MLP(layers)
