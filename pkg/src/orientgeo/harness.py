"""Experiment harness: synthetic orientation data, balanced-batch training,
end-to-end runs, and ablation sweeps.

The data generator stands in for a CNN feature extractor: each category gets
a hidden random linear map from the flattened rotation matrix to feature
space, plus Gaussian observation noise.  Targets are drawn from a mixture of
concentrated modes so the pose distribution is multimodal.  Everything is
driven by numpy Generator streams derived from one SeedSequence, so a config
plus a seed reproduces every byte of every artifact.
"""

import dataclasses
import json
import math
import os
import statistics

import numpy as np

from . import dictionary as dct
from . import losses, metrics, models, so3

AUGMENTATIONS = ("none", "jittered", "jittered+extra")

# extra augmented copies of the train split per setting
_AUG_COPIES = {"none": 0, "jittered": 1, "jittered+extra": 2}

SEED_ENV_VAR = "ORIENT_GEO_SEED"


class NonFiniteLoss(RuntimeError):
    """Training aborted because an objective value or gradient left floats."""


# ---------------------------------------------------------------------------
# configuration


@dataclasses.dataclass(frozen=True)
class OptimizerConfig:
    """Adam schedule: lr decays by `decay` after every scheduled epoch."""

    learning_rate: float = 1e-4
    decay: float = 0.1
    epochs: int = 5
    batch_per_category: int = 8  # split half clean / half augmented when possible
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0.0 or self.decay <= 0.0:
            raise ValueError("learning_rate and decay must be positive")
        if self.epochs < 1 or self.batch_per_category < 1:
            raise ValueError("epochs and batch_per_category must be >= 1")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0 and self.eps > 0.0):
            raise ValueError("invalid Adam moments")


@dataclasses.dataclass(frozen=True)
class DataConfig:
    categories: int = 12
    train_samples: int = 2000
    val_samples: int = 500
    test_samples: int = 500
    feature_dim: int = 64
    noise: float = 0.05
    modes: int = 4
    mode_spread: float = 0.7  # tangent-space std around each mode, radians
    augmentation: str = "none"
    # pose offsets (degrees) used to synthesize augmented samples, mirroring
    # the image-warp grid
    jitter_az: tuple = (-1.0, 0.0, 1.0)
    jitter_el: tuple = (-1.0, 0.0, 1.0)
    jitter_ct: tuple = (-4.0, -2.0, 0.0, 2.0, 4.0)

    def __post_init__(self):
        if min(self.categories, self.train_samples, self.val_samples, self.test_samples) < 1:
            raise ValueError("all split sizes and the category count must be >= 1")
        if self.feature_dim < 9:
            raise ValueError("feature_dim must be at least 9 to disambiguate poses")
        if self.noise < 0.0:
            raise ValueError("noise must be non-negative")
        if self.modes < 1 or self.mode_spread <= 0.0:
            raise ValueError("modes >= 1 and mode_spread > 0 required")
        if self.augmentation not in AUGMENTATIONS:
            raise ValueError(f"augmentation must be one of {AUGMENTATIONS}")
        for name in ("jitter_az", "jitter_el", "jitter_ct"):
            vals = tuple(float(v) for v in getattr(self, name))
            if not vals:
                raise ValueError(f"{name} must be non-empty")
            object.__setattr__(self, name, vals)


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    objective: losses.ObjectiveSpec = dataclasses.field(
        default_factory=lambda: losses.ObjectiveSpec("M_G")
    )
    dictionary_size: int = 100
    dictionary_seed: int = 0
    hidden: tuple = (64, 32)
    optimizer: OptimizerConfig = dataclasses.field(default_factory=OptimizerConfig)
    data: DataConfig = dataclasses.field(default_factory=DataConfig)
    seed: int = 0
    trials: int = 3

    def __post_init__(self):
        if self.dictionary_size < 1 or self.trials < 1:
            raise ValueError("dictionary_size and trials must be >= 1")
        hidden = tuple(int(h) for h in self.hidden)
        if not hidden or min(hidden) < 1:
            raise ValueError("hidden sizes must be positive")
        object.__setattr__(self, "hidden", hidden)


def config_to_json(cfg: ExperimentConfig) -> str:
    return json.dumps(dataclasses.asdict(cfg), indent=2, sort_keys=True)


def config_from_json(text: str) -> ExperimentConfig:
    doc = json.loads(text)
    return ExperimentConfig(
        objective=losses.ObjectiveSpec(**doc["objective"]),
        dictionary_size=doc["dictionary_size"],
        dictionary_seed=doc["dictionary_seed"],
        hidden=tuple(doc["hidden"]),
        optimizer=OptimizerConfig(**doc["optimizer"]),
        data=DataConfig(**doc["data"]),
        seed=doc["seed"],
        trials=doc["trials"],
    )


def load_config(path) -> ExperimentConfig:
    """Read a config file; ORIENT_GEO_SEED (when set) overrides its seed."""
    with open(path, "r", encoding="utf-8") as fh:
        cfg = config_from_json(fh.read())
    return apply_seed_override(cfg)


def apply_seed_override(cfg: ExperimentConfig) -> ExperimentConfig:
    env = os.environ.get(SEED_ENV_VAR)
    if env is None:
        return cfg
    return dataclasses.replace(cfg, seed=int(env))


def respec(spec: losses.ObjectiveSpec, **overrides) -> losses.ObjectiveSpec:
    """Rebuild an objective spec with overrides, re-resolving the combination
    rule unless one is given explicitly (dataclasses.replace would carry a
    stale resolved rule across a representation change)."""
    fields = {
        "family": spec.family,
        "representation": spec.representation,
        "alpha": spec.alpha,
        "gamma": spec.gamma,
    }
    fields.update(overrides)
    return losses.ObjectiveSpec(**fields)


# ---------------------------------------------------------------------------
# synthetic data


@dataclasses.dataclass(frozen=True, eq=False)
class CategorySplit:
    features: np.ndarray  # (n, feature_dim)
    targets: np.ndarray  # (n, 3, 3)
    aug_features: np.ndarray = None  # augmented pool, train split only
    aug_targets: np.ndarray = None

    def __post_init__(self):
        if not np.all(np.isfinite(self.features)):
            raise ValueError("non-finite features")
        if self.features.shape[0] != self.targets.shape[0]:
            raise ValueError("feature/target counts disagree")

    @property
    def size(self) -> int:
        return self.features.shape[0]


@dataclasses.dataclass(frozen=True, eq=False)
class SyntheticDataset:
    categories: tuple
    train: dict
    val: dict
    test: dict
    hidden_maps: dict  # category -> (W (feature_dim, 9), b (feature_dim,))
    modes: dict  # category -> (M, 3, 3) mode rotations


def category_names(n: int):
    return tuple(f"cat{i + 1:02d}" for i in range(n))


def _features_of(rotations: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    return rotations.reshape(rotations.shape[0], 9) @ w.T + b


def _sample_targets(rng, modes: np.ndarray, n: int, spread: float) -> np.ndarray:
    """Mixture draw: pick a mode, perturb it by a tangent Gaussian.  Samples
    whose total rotation angle lands within 1e-3 of pi are redrawn so the
    axis-angle pose vector is always well-defined."""
    out = np.empty((n, 3, 3))
    pending = np.arange(n)
    while pending.size:
        idx = rng.integers(0, modes.shape[0], size=pending.size)
        eps = rng.normal(scale=spread, size=(pending.size, 3))
        norms = np.linalg.norm(eps, axis=1)
        big = norms >= math.pi - 1e-3
        if np.any(big):
            eps[big] *= (math.pi - 1e-3) / norms[big, None] * 0.999
        keep = []
        for row, (j, e) in enumerate(zip(idx, eps)):
            r = modes[j] @ so3.rodrigues(e)
            if np.trace(r) <= -1.0 + 2e-6:  # angle within ~1e-3 of pi
                keep.append(row)
            else:
                out[pending[row]] = r
        pending = pending[keep]
    return out


def _jittered_copy(rng, targets: np.ndarray, data_cfg: DataConfig) -> np.ndarray:
    """Perturb each pose by one random cell of the augmentation offset grid."""
    daz = rng.choice(data_cfg.jitter_az, size=targets.shape[0])
    del_ = rng.choice(data_cfg.jitter_el, size=targets.shape[0])
    dct_ = rng.choice(data_cfg.jitter_ct, size=targets.shape[0])
    out = np.empty_like(targets)
    for i in range(targets.shape[0]):
        try:
            e = so3.rotation_to_euler(so3.Rotation(targets[i]))
            out[i] = so3.euler_to_rotation(
                so3.EulerZXZ(
                    e.azimuth + math.radians(daz[i]),
                    e.elevation + math.radians(del_[i]),
                    e.tilt + math.radians(dct_[i]),
                )
            ).matrix
        except so3.GimbalLock:
            out[i] = targets[i]
        if np.trace(out[i]) <= -1.0 + 2e-6:  # keep poses off the pi shell
            out[i] = targets[i]
    return out


def generate_synthetic(cfg: ExperimentConfig, seed=None) -> SyntheticDataset:
    seed = cfg.seed if seed is None else seed
    data = cfg.data
    names = category_names(data.categories)
    train, val, test, hidden_maps, mode_sets = {}, {}, {}, {}, {}
    for c, name in enumerate(names):
        streams = [
            np.random.default_rng(np.random.SeedSequence([int(seed), c, which]))
            for which in range(5)
        ]
        gen_rng, train_rng, val_rng, test_rng, aug_rng = streams
        w = gen_rng.normal(size=(data.feature_dim, 9)) / 3.0
        b = gen_rng.normal(size=data.feature_dim) * 0.1
        modes = np.stack(
            [so3.random_rotation(gen_rng).matrix for _ in range(data.modes)]
        )
        hidden_maps[name] = (w, b)
        mode_sets[name] = modes

        def _split(rng, n):
            targets = _sample_targets(rng, modes, n, data.mode_spread)
            feats = _features_of(targets, w, b)
            if data.noise > 0.0:
                feats = feats + data.noise * rng.normal(size=feats.shape)
            return feats, targets

        tr_feats, tr_targets = _split(train_rng, data.train_samples)
        copies = _AUG_COPIES[data.augmentation]
        aug_feats = aug_targets = None
        if copies:
            pools_f, pools_t = [], []
            for _ in range(copies):
                jt = _jittered_copy(aug_rng, tr_targets, data)
                jf = _features_of(jt, w, b)
                if data.noise > 0.0:
                    jf = jf + data.noise * aug_rng.normal(size=jf.shape)
                pools_f.append(jf)
                pools_t.append(jt)
            aug_feats = np.concatenate(pools_f)
            aug_targets = np.concatenate(pools_t)
        train[name] = CategorySplit(tr_feats, tr_targets, aug_feats, aug_targets)
        val[name] = CategorySplit(*_split(val_rng, data.val_samples))
        test[name] = CategorySplit(*_split(test_rng, data.test_samples))
    return SyntheticDataset(names, train, val, test, hidden_maps, mode_sets)


# ---------------------------------------------------------------------------
# dictionary + targets


def pose_vector(rotation_matrix: np.ndarray, representation: str) -> np.ndarray:
    if representation == dct.AXIS_ANGLE:
        return so3.log_rotation(rotation_matrix)
    return so3.rotation_to_quaternion(so3.Rotation(rotation_matrix)).wxyz


def fit_shared_dictionary(cfg: ExperimentConfig, dataset: SyntheticDataset) -> dct.PoseDictionary:
    """One dictionary for all categories, fit on the pooled train targets."""
    rep = cfg.objective.representation
    vectors = [
        pose_vector(m, rep)
        for name in dataset.categories
        for m in dataset.train[name].targets
    ]
    return dct.fit_kmeans(vectors, cfg.dictionary_size, cfg.dictionary_seed, rep)


def _make_targets(spec, dictionary, target_mats, gamma):
    out = []
    for m in target_mats:
        y = pose_vector(m, spec.representation)
        label = soft = None
        if dictionary is not None:
            label = dct.hard_label(y, dictionary)
            if spec.family in losses.SOFT_TARGET_FAMILIES:
                soft = dct.soft_assign_probs(y, dictionary.keys, gamma)
        out.append(losses.Target(y=y, label=label, soft=soft))
    return out


def discretization_floor(dataset: SyntheticDataset, dictionary: dct.PoseDictionary,
                         split: str = "test") -> float:
    """Mean over categories of the median nearest-key geodesic distance in
    degrees: the best MedErr a pure classifier over these keys can reach."""
    splits = getattr(dataset, split)
    per_cat = []
    for name in dataset.categories:
        dists = []
        for m in splits[name].targets:
            r = so3.Rotation(m)
            best = min(
                so3.geodesic_distance(r, dictionary.key_rotation(k))
                for k in range(dictionary.size)
            )
            dists.append(math.degrees(best))
        per_cat.append(statistics.median(dists))
    return sum(per_cat) / len(per_cat)


# ---------------------------------------------------------------------------
# models


def build_category_model(cfg: ExperimentConfig, seed: int) -> dict:
    """Networks for one category, keyed by role.  Direct regression uses one
    pose head; Bin & Delta uses a logit network plus either a shared delta
    network or one small head per dictionary key."""
    spec = cfg.objective
    fdim = cfg.data.feature_dim
    hidden = list(cfg.hidden)
    pose_act = ["relu"] * len(hidden) + [
        "pi_tanh" if spec.representation == dct.AXIS_ANGLE else "linear"
    ]
    nets = {}
    if spec.family in ("R_G", "R_E"):
        nets["pose"] = models.init_pose_network(
            [fdim] + hidden + [spec.pose_dim], seed, pose_act
        )
        return nets
    nets["logits"] = models.init_pose_network(
        [fdim] + hidden + [cfg.dictionary_size], seed
    )
    if spec.family == "C":
        return nets
    if spec.per_bin:
        head_act = ["relu", pose_act[-1]]
        for k in range(cfg.dictionary_size):
            nets[f"delta_head_{k:03d}"] = models.init_pose_network(
                [fdim, hidden[-1], spec.pose_dim], seed + 1 + k, head_act
            )
    else:
        nets["delta"] = models.init_pose_network(
            [fdim] + hidden + [spec.pose_dim], seed + 1, pose_act
        )
    return nets


def _head_names(nets):
    return sorted(n for n in nets if n.startswith("delta_head_"))


def predict_rotation(spec, nets, dictionary, x: np.ndarray) -> so3.Rotation:
    """One feature vector to one rotation, by the family's decoding rule."""
    if spec.family in ("R_G", "R_E"):
        y = models.forward(nets["pose"], x)
        if spec.representation == dct.AXIS_ANGLE:
            return so3.Rotation(so3.rodrigues(so3.clip_axis_angle_norm(y)))
        n = np.linalg.norm(y)
        if n < 1e-12:
            raise models.ZeroSum("quaternion head collapsed to zero")
        return so3.quaternion_to_rotation(so3.UnitQuaternion(y / n))
    logits = models.forward(nets["logits"], x)
    label = int(np.argmax(logits))
    if spec.family == "C":
        return dictionary.key_rotation(label)
    if spec.per_bin:
        delta = models.forward(nets[f"delta_head_{label:03d}"], x)
    else:
        delta = models.forward(nets["delta"], x)
    return models.compose_rotation(spec.combination, dictionary.keys[label], delta)


# ---------------------------------------------------------------------------
# optimizer


class _Adam:
    """Adam state for one MLP; updates parameters in place."""

    def __init__(self, net: models.MLP, opt: OptimizerConfig):
        self.opt = opt
        self.t = 0
        self.m = [(np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in net.layers]
        self.v = [(np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in net.layers]

    def step(self, net: models.MLP, grads, lr: float):
        o = self.opt
        self.t += 1
        c1 = 1.0 - o.beta1**self.t
        c2 = 1.0 - o.beta2**self.t
        for i, layer in enumerate(net.layers):
            for j, (param, grad) in enumerate(
                ((layer.weight, grads[i][0]), (layer.bias, grads[i][1]))
            ):
                m = self.m[i][j]
                v = self.v[i][j]
                m *= o.beta1
                m += (1.0 - o.beta1) * grad
                v *= o.beta2
                v += (1.0 - o.beta2) * grad * grad
                param -= lr * (m / c1) / (np.sqrt(v / c2) + o.eps)


# ---------------------------------------------------------------------------
# training


@dataclasses.dataclass(frozen=True)
class TrainLog:
    lines: tuple  # one human-readable line per scheduled epoch
    epoch_losses: tuple  # mean loss per scheduled epoch
    step_losses: tuple  # tuple per scheduled epoch of per-step mean losses

    @property
    def text(self) -> str:
        return "\n".join(self.lines) + "\n"


def _batch_losses(spec, nets, adams, dictionary, feats, targets, lr):
    """One optimizer step on one category batch; returns the mean loss."""
    b = feats.shape[0]
    total = 0.0
    if spec.family in ("R_G", "R_E"):
        out, cache = models.forward_cached(nets["pose"], feats)
        gout = np.empty_like(out)
        for i in range(b):
            lv = losses.objective(spec, out[i], targets[i])
            total += lv.value
            gout[i] = lv.grads["pose"]
        grads, _ = models.backward(nets["pose"], cache, gout / b)
        adams["pose"].step(nets["pose"], grads, lr)
        return total / b

    logits, lcache = models.forward_cached(nets["logits"], feats)
    glogits = np.empty_like(logits)
    if spec.family == "C":
        for i in range(b):
            lv = losses.objective(spec, logits[i], targets[i])
            total += lv.value
            glogits[i] = lv.grads["logits"]
        grads, _ = models.backward(nets["logits"], lcache, glogits / b)
        adams["logits"].step(nets["logits"], grads, lr)
        return total / b

    if spec.per_bin:
        heads = _head_names(nets)
        outs, caches = [], []
        for name in heads:
            o, c = models.forward_cached(nets[name], feats)
            outs.append(o)
            caches.append(c)
        stacked = np.stack(outs, axis=0)  # (K, b, d)
        ghead = np.zeros_like(stacked)
        for i in range(b):
            lv = losses.objective(spec, (logits[i], stacked[:, i, :]), targets[i], dictionary)
            total += lv.value
            glogits[i] = lv.grads["logits"]
            ghead[:, i, :] = lv.grads["deltas"]
        grads, _ = models.backward(nets["logits"], lcache, glogits / b)
        adams["logits"].step(nets["logits"], grads, lr)
        for k, name in enumerate(heads):
            if not np.any(ghead[k]):
                continue  # no sample touched this head this step
            grads, _ = models.backward(nets[name], caches[k], ghead[k] / b)
            adams[name].step(nets[name], grads, lr)
        return total / b

    deltas, dcache = models.forward_cached(nets["delta"], feats)
    gdelta = np.empty_like(deltas)
    for i in range(b):
        lv = losses.objective(spec, (logits[i], deltas[i]), targets[i], dictionary)
        total += lv.value
        glogits[i] = lv.grads["logits"]
        gdelta[i] = lv.grads["delta"]
    grads, _ = models.backward(nets["logits"], lcache, glogits / b)
    adams["logits"].step(nets["logits"], grads, lr)
    grads, _ = models.backward(nets["delta"], dcache, gdelta / b)
    adams["delta"].step(nets["delta"], grads, lr)
    return total / b


def train(cfg: ExperimentConfig, dataset: SyntheticDataset,
          dictionary: dct.PoseDictionary = None, seed=None):
    """Balanced-batch Adam training of one network set per category.

    Every batch takes the same per-category quota; with augmentation the
    quota is split half clean, half from the augmented pool.  The learning
    rate decays by cfg.optimizer.decay after every scheduled epoch, and the
    geodesic/riemannian Bin & Delta families spend one warm-start epoch on
    their Simple counterpart (fresh optimizer state when the objective
    switches).  Returns (models_by_category, dictionary, TrainLog).
    """
    seed = cfg.seed if seed is None else seed
    spec = cfg.objective
    opt = cfg.optimizer
    if dictionary is None and spec.family != "R_G" and spec.family != "R_E":
        dictionary = fit_shared_dictionary(cfg, dataset)
    schedule = losses.simple_init_schedule(spec, opt.epochs)
    gamma = (
        losses.resolve_gamma(spec, dictionary)
        if spec.family in losses.SOFT_TARGET_FAMILIES
        else None
    )

    nets_by_cat, adams_by_cat, batch_rngs = {}, {}, {}
    targets_by_cat, aug_targets_by_cat = {}, {}
    for c, name in enumerate(dataset.categories):
        nets = build_category_model(cfg, seed + 1000 * (c + 1))
        nets_by_cat[name] = nets
        adams_by_cat[name] = {role: _Adam(net, opt) for role, net in nets.items()}
        batch_rngs[name] = np.random.default_rng(
            np.random.SeedSequence([int(seed), c, 10])
        )
        split = dataset.train[name]
        targets_by_cat[name] = _make_targets(spec, dictionary, split.targets, gamma)
        if split.aug_targets is not None:
            aug_targets_by_cat[name] = _make_targets(
                spec, dictionary, split.aug_targets, gamma
            )

    has_aug = bool(aug_targets_by_cat)
    clean_quota = max(1, opt.batch_per_category // 2) if has_aug else opt.batch_per_category
    aug_quota = opt.batch_per_category - clean_quota if has_aug else 0

    lines, epoch_losses, step_losses = [], [], []
    prev_family = None
    for epoch, epoch_spec in enumerate(schedule):
        if prev_family is not None and epoch_spec.family != prev_family:
            for name in dataset.categories:  # fresh moments for the new objective
                adams_by_cat[name] = {
                    role: _Adam(net, opt) for role, net in nets_by_cat[name].items()
                }
        prev_family = epoch_spec.family
        lr = opt.learning_rate * opt.decay**epoch

        orders, aug_orders = {}, {}
        steps = None
        for name in dataset.categories:
            n = dataset.train[name].size
            orders[name] = batch_rngs[name].permutation(n)
            cat_steps = n // clean_quota
            steps = cat_steps if steps is None else min(steps, cat_steps)
            if aug_quota:
                pool = dataset.train[name].aug_targets.shape[0]
                draws = []
                while len(draws) * pool < cat_steps * aug_quota + pool:
                    draws.append(batch_rngs[name].permutation(pool))
                aug_orders[name] = np.concatenate(draws)
        if steps < 1:
            raise ValueError("batch_per_category exceeds the train split")

        per_step = []
        for t in range(steps):
            step_total = 0.0
            for name in dataset.categories:
                split = dataset.train[name]
                idx = orders[name][t * clean_quota : (t + 1) * clean_quota]
                feats = split.features[idx]
                targets = [targets_by_cat[name][i] for i in idx]
                if aug_quota:
                    aidx = aug_orders[name][t * aug_quota : (t + 1) * aug_quota]
                    feats = np.concatenate([feats, split.aug_features[aidx]])
                    targets = targets + [aug_targets_by_cat[name][i] for i in aidx]
                try:
                    # divergence is reported via NonFiniteLoss, not warnings
                    with np.errstate(over="ignore", invalid="ignore"):
                        loss = _batch_losses(
                            epoch_spec, nets_by_cat[name], adams_by_cat[name],
                            dictionary, feats, targets, lr,
                        )
                except losses.FamilyMismatch:
                    raise  # a wiring error, not a numeric blow-up
                except ValueError as exc:
                    raise NonFiniteLoss(
                        f"category {name} epoch {epoch} step {t}: {exc}"
                    ) from exc
                if not math.isfinite(loss):
                    raise NonFiniteLoss(f"category {name} epoch {epoch} step {t}")
                step_total += loss
            per_step.append(step_total / len(dataset.categories))
        epoch_mean = sum(per_step) / len(per_step)
        epoch_losses.append(epoch_mean)
        step_losses.append(tuple(per_step))
        lines.append(
            f"epoch {epoch} objective {epoch_spec.family} lr {lr:.3e} "
            f"loss {epoch_mean:.6f}"
        )
    log = TrainLog(tuple(lines), tuple(epoch_losses), tuple(step_losses))
    return nets_by_cat, dictionary, log


# ---------------------------------------------------------------------------
# end-to-end runs


@dataclasses.dataclass(frozen=True, eq=False)
class RunResult:
    config: ExperimentConfig
    seed: int
    report: metrics.MetricReport  # test split
    val_report: metrics.MetricReport
    log: TrainLog
    models: dict
    dictionary: dct.PoseDictionary
    out_dir: str = None


def evaluate_split(spec, nets_by_cat, dictionary, dataset, split: str):
    """Pose records for one split, in category-then-index order."""
    records = []
    splits = getattr(dataset, split)
    for name in dataset.categories:
        data = splits[name]
        for i in range(data.size):
            pred = predict_rotation(spec, nets_by_cat[name], dictionary, data.features[i])
            records.append(
                metrics.EvalRecord(name, so3.Rotation(data.targets[i]), pred)
            )
    return records


def _dump_records(path, records):
    """Detection-style dump: every record gets its own unit-IoU box at a
    distinct location with score 1.0, so the matcher pairs dump lines back
    exactly and every report cell is recomputable from this file."""
    dets, gts = [], []
    for i, rec in enumerate(records):
        box = (20.0 * i, 0.0, 20.0 * i + 10.0, 10.0)
        gts.append(metrics.GroundTruth(rec.category, box, rec.r_true))
        dets.append(metrics.Detection(rec.category, box, 1.0, rec.r_pred))
    metrics.write_records(path, dets, gts)


def run_experiment(cfg: ExperimentConfig, out_dir=None, seed=None) -> RunResult:
    seed = cfg.seed if seed is None else seed
    dataset = generate_synthetic(cfg, seed)
    dictionary = fit_shared_dictionary(cfg, dataset)
    nets_by_cat, dictionary, log = train(cfg, dataset, dictionary, seed=seed)
    spec = cfg.objective
    test_records = evaluate_split(spec, nets_by_cat, dictionary, dataset, "test")
    val_records = evaluate_split(spec, nets_by_cat, dictionary, dataset, "val")
    report = metrics.pose_report(test_records)
    val_report = metrics.pose_report(val_records)

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        effective = dataclasses.replace(cfg, seed=seed)
        with open(os.path.join(out_dir, "config.json"), "w", encoding="utf-8") as fh:
            fh.write(config_to_json(effective) + "\n")
        metrics.write_report(
            report,
            os.path.join(out_dir, "report.csv"),
            os.path.join(out_dir, "report.json"),
        )
        metrics.write_report(
            val_report,
            os.path.join(out_dir, "val_report.csv"),
            os.path.join(out_dir, "val_report.json"),
        )
        _dump_records(os.path.join(out_dir, "records.txt"), test_records)
        dct.save_dictionary(dictionary, os.path.join(out_dir, "dictionary.txt"))
        ck_dir = os.path.join(out_dir, "checkpoint")
        os.makedirs(ck_dir, exist_ok=True)
        for name, nets in nets_by_cat.items():
            for role, net in nets.items():
                models.save_mlp(net, os.path.join(ck_dir, f"{name}.{role}.json"))
        with open(os.path.join(out_dir, "train_log.txt"), "w", encoding="utf-8") as fh:
            fh.write(log.text)
    return RunResult(cfg, seed, report, val_report, log, nets_by_cat, dictionary, out_dir)


@dataclasses.dataclass(frozen=True)
class TrialSummary:
    metric_means: dict  # metric -> mean of per-trial means
    metric_stds: dict
    seeds: tuple

    def mean(self, metric: str) -> float:
        return self.metric_means[metric]


def run_trials(cfg: ExperimentConfig, out_dir=None, trials=None) -> TrialSummary:
    """Repeat the experiment on consecutive seeds; report mean/std per metric."""
    trials = cfg.trials if trials is None else trials
    seeds = tuple(cfg.seed + t for t in range(trials))
    results = []
    for t, s in enumerate(seeds):
        sub = os.path.join(out_dir, f"trial_{t}") if out_dir is not None else None
        results.append(run_experiment(cfg, out_dir=sub, seed=s))
    names = results[0].report.metrics
    means = {m: sum(r.report.mean[m] for r in results) / trials for m in names}
    stds = {
        m: statistics.pstdev([r.report.mean[m] for r in results]) for m in names
    }
    if out_dir is not None:
        lines = ["metric,mean,std"]
        for m in names:
            lines.append(f"{m},{means[m]!r},{stds[m]!r}")
        with open(os.path.join(out_dir, "trials.csv"), "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
    return TrialSummary(means, stds, seeds)


# ---------------------------------------------------------------------------
# ablations


ABLATION_KS = (50, 100, 200, 400)
ABLATION_ALPHAS = (0.1, 1.0, 10.0)


@dataclasses.dataclass(frozen=True, eq=False)
class AblationCell:
    sweep: str
    value: str
    config: ExperimentConfig
    result: RunResult


@dataclasses.dataclass(frozen=True, eq=False)
class AblationResult:
    cells: tuple
    best_alpha: float  # chosen by validation MedErr

    def table(self) -> str:
        lines = ["sweep,value,MedErr,Acc_pi6,ValMedErr,selected"]
        for cell in self.cells:
            selected = (
                cell.sweep == "alpha" and float(cell.value) == self.best_alpha
            )
            lines.append(
                ",".join(
                    [
                        cell.sweep,
                        cell.value,
                        repr(cell.result.report.mean["MedErr"]),
                        repr(cell.result.report.mean["Acc_pi6"]),
                        repr(cell.result.val_report.mean["MedErr"]),
                        "1" if selected else "0",
                    ]
                )
            )
        return "\n".join(lines) + "\n"


def ablation_cells(base: ExperimentConfig):
    """The fixed sweep grid: representation, dictionary size, alpha weight,
    augmentation setting.  Cells reuse the base seed so rows are comparable.
    Representations a family cannot express (the tangent-space models are
    axis-angle only) are left out of its sweep."""
    cells = []
    for rep in dct.REPRESENTATIONS:
        try:
            cfg = dataclasses.replace(
                base, objective=respec(base.objective, representation=rep)
            )
        except losses.FamilyMismatch:
            continue
        cells.append(("representation", rep, cfg))
    for k in ABLATION_KS:
        cells.append(("dictionary_size", str(k), dataclasses.replace(base, dictionary_size=k)))
    for alpha in ABLATION_ALPHAS:
        cfg = dataclasses.replace(base, objective=respec(base.objective, alpha=alpha))
        cells.append(("alpha", str(alpha), cfg))
    for aug in AUGMENTATIONS:
        cfg = dataclasses.replace(base, data=dataclasses.replace(base.data, augmentation=aug))
        cells.append(("augmentation", aug, cfg))
    return cells


def ablation_suite(base: ExperimentConfig, out_dir=None) -> AblationResult:
    cells = []
    for sweep, value, cfg in ablation_cells(base):
        sub = None
        if out_dir is not None:
            sub = os.path.join(out_dir, f"{sweep}_{value.replace('+', '_')}")
        cells.append(AblationCell(sweep, value, cfg, run_experiment(cfg, out_dir=sub)))
    alpha_cells = [c for c in cells if c.sweep == "alpha"]
    best = min(alpha_cells, key=lambda c: (c.result.val_report.mean["MedErr"], c.value))
    result = AblationResult(tuple(cells), float(best.value))
    if out_dir is not None:
        with open(os.path.join(out_dir, "ablation.csv"), "w", encoding="utf-8") as fh:
            fh.write(result.table())
    return result
