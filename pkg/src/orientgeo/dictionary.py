"""Key-pose dictionaries: K-means over pose targets plus label assignment.

Clustering runs in the chosen vector representation (axis-angle 3-vectors or
quaternion 4-vectors) with plain Euclidean distance, the same distance the
hard-label rule argmin_k |y - z_k| uses; this is not geodesic K-means.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from . import so3

AXIS_ANGLE = "axis_angle"
QUATERNION = "quaternion"
REPRESENTATIONS = (AXIS_ANGLE, QUATERNION)

KMEANS_MAX_ITER = 300
KMEANS_SHIFT_TOL = 1e-10


class InsufficientData(ValueError):
    """Fewer targets than requested clusters."""


class DegenerateDictionary(ValueError):
    """Dictionary with coincident keys where distinct keys are required."""


def _check_representation(representation):
    if representation not in REPRESENTATIONS:
        raise ValueError(f"unknown representation {representation!r}")


@dataclasses.dataclass(frozen=True, eq=False)
class PoseDictionary:
    """K key poses as rows of ``keys`` plus the representation tag."""

    keys: np.ndarray
    representation: str

    def __post_init__(self):
        _check_representation(self.representation)
        keys = np.array(self.keys, dtype=float)
        dim = 3 if self.representation == AXIS_ANGLE else 4
        if keys.ndim != 2 or keys.shape[1] != dim:
            raise ValueError(f"keys must be (K, {dim}), got {keys.shape}")
        if keys.shape[0] < 1:
            raise ValueError("dictionary needs at least one key")
        if not np.all(np.isfinite(keys)):
            raise ValueError("keys must be finite")
        keys.setflags(write=False)
        object.__setattr__(self, "keys", keys)

    @property
    def size(self) -> int:
        return self.keys.shape[0]

    def key_rotation(self, k: int) -> so3.Rotation:
        return key_to_rotation(self.keys[k], self.representation)


@dataclasses.dataclass(frozen=True, eq=False)
class SoftAssignment:
    p: np.ndarray
    gamma: float

    def __post_init__(self):
        p = np.array(self.p, dtype=float)
        if p.ndim != 1 or np.any(p < 0.0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("p must be a probability vector (sum 1 within 1e-12)")
        if self.gamma <= 0.0:
            raise ValueError("gamma must be positive")
        p.setflags(write=False)
        object.__setattr__(self, "p", p)


def key_to_rotation(key: np.ndarray, representation: str) -> so3.Rotation:
    if representation == AXIS_ANGLE:
        return so3.Rotation(so3.rodrigues(so3.clip_axis_angle_norm(key)))
    q = np.asarray(key, dtype=float)
    return so3.Rotation(so3._quat_to_matrix(so3.canonical_quaternion(q / np.linalg.norm(q))))


def _renormalize_centroids(centroids: np.ndarray, representation: str) -> np.ndarray:
    """Pull averaged centroids back onto the representation's domain.

    Quaternion means drift off the unit sphere; axis-angle means cannot leave
    the norm-pi ball by convexity but are clamped anyway for safety.
    """
    out = centroids.copy()
    if representation == QUATERNION:
        for i in range(out.shape[0]):
            n = np.linalg.norm(out[i])
            if n < 1e-12:
                raise DegenerateDictionary("quaternion centroid collapsed to zero")
            out[i] = so3.canonical_quaternion(out[i] / n)
    else:
        for i in range(out.shape[0]):
            out[i] = so3.clip_axis_angle_norm(out[i])
    return out


def _plus_plus_seeds(targets: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++: first center uniform, then proportional to squared distance."""
    n = targets.shape[0]
    centers = np.empty((k, targets.shape[1]))
    idx = int(rng.integers(n))
    centers[0] = targets[idx]
    d2 = np.sum((targets - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # all remaining mass on already-chosen points: fall back to uniform
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[j] = targets[idx]
        d2 = np.minimum(d2, np.sum((targets - centers[j]) ** 2, axis=1))
    return centers


def fit_kmeans(targets, k: int, seed: int, representation: str = AXIS_ANGLE) -> PoseDictionary:
    """Lloyd's algorithm with k-means++ seeding, deterministic given seed.

    Stops when the largest centroid shift falls below 1e-10 or after 300
    iterations.  Empty clusters are repaired by reassigning the point
    farthest from its current centroid.
    """
    _check_representation(representation)
    targets = np.array([np.asarray(t, dtype=float) for t in targets])
    if targets.ndim != 2:
        raise ValueError("targets must be a list of equal-length vectors")
    n = targets.shape[0]
    if n < k:
        raise InsufficientData(f"{n} targets for {k} clusters")
    rng = np.random.default_rng(seed)
    centers = _plus_plus_seeds(targets, k, rng)
    for _ in range(KMEANS_MAX_ITER):
        d2 = np.sum((targets[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        labels = np.argmin(d2, axis=1)
        # empty-cluster repair: hand the farthest point to each empty cluster
        repaired = np.zeros(n, dtype=bool)
        for j in range(k):
            if not np.any(labels == j):
                assigned = d2[np.arange(n), labels].copy()
                assigned[repaired] = -np.inf
                far = int(np.argmax(assigned))
                labels[far] = j
                repaired[far] = True
        new_centers = np.empty_like(centers)
        for j in range(k):
            new_centers[j] = targets[labels == j].mean(axis=0)
        new_centers = _renormalize_centroids(new_centers, representation)
        shift = np.max(np.abs(new_centers - centers))
        centers = new_centers
        if shift < KMEANS_SHIFT_TOL:
            break
    return PoseDictionary(centers, representation)


def kmeans_objective(targets, dictionary: PoseDictionary) -> float:
    """Sum of squared distances from each target to its nearest key."""
    targets = np.asarray(targets, dtype=float)
    d2 = np.sum((targets[:, None, :] - dictionary.keys[None, :, :]) ** 2, axis=2)
    return float(np.min(d2, axis=1).sum())


def hard_label(y, dictionary: PoseDictionary) -> int:
    """argmin_k |y - z_k|_2, ties broken by lowest index (np.argmin does)."""
    y = np.asarray(y, dtype=float)
    d2 = np.sum((dictionary.keys - y) ** 2, axis=1)
    return int(np.argmin(d2))


def soft_assign(y, dictionary: PoseDictionary, gamma: float) -> SoftAssignment:
    """Softmax over -gamma * |y - z_k|^2, max-subtracted for stability."""
    if gamma <= 0.0:
        raise ValueError("gamma must be positive")
    y = np.asarray(y, dtype=float)
    logits = -gamma * np.sum((dictionary.keys - y) ** 2, axis=1)
    logits = logits - logits.max()
    e = np.exp(logits)
    return SoftAssignment(e / e.sum(), gamma)


def soft_assign_probs(y, keys: np.ndarray, gamma: float) -> np.ndarray:
    """Probability vector of soft_assign without the wrapper type (hot path)."""
    logits = -gamma * np.sum((keys - np.asarray(y, dtype=float)) ** 2, axis=1)
    logits -= logits.max()
    e = np.exp(logits)
    return e / e.sum()


def min_pairwise_sq_distance(keys: np.ndarray) -> float:
    k = keys.shape[0]
    best = math.inf
    for i in range(k):
        d2 = np.sum((keys[i + 1 :] - keys[i]) ** 2, axis=1)
        if d2.size:
            best = min(best, float(d2.min()))
    return best


def default_gamma(dictionary: PoseDictionary) -> float:
    """0.5 / min_{i != j} |z_i - z_j|^2: scales the kernel to key spacing."""
    if dictionary.size < 2:
        raise ValueError("default_gamma needs K >= 2")
    m = min_pairwise_sq_distance(dictionary.keys)
    if m == 0.0:
        raise DegenerateDictionary("coincident keys give an infinite gamma")
    return 0.5 / m


def save_dictionary(dictionary: PoseDictionary, path) -> None:
    """Text format: header `repr=<representation> K=<int>`, one key per line."""
    lines = [f"repr={dictionary.representation} K={dictionary.size}"]
    for key in dictionary.keys:
        lines.append(" ".join(repr(float(x)) for x in key))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_dictionary(path) -> PoseDictionary:
    with open(path) as fh:
        header = fh.readline().split()
        fields = dict(part.split("=", 1) for part in header)
        representation = fields["repr"]
        k = int(fields["K"])
        keys = [[float(x) for x in fh.readline().split()] for _ in range(k)]
    return PoseDictionary(np.array(keys), representation)
