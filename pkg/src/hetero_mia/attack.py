"""Shadow-model membership inference against federated snapshots.

A passive variant of the Nasr et al. attack: the attacker sees global model
snapshots and, for a point ``(x, y)``, reads off per round

    probs sorted descending (K) | cross-entropy loss | correct? | |dL/dW_last|

(the last two only when enabled, always in this order).  The gradient norm is
the Frobenius norm of the loss gradient with respect to the output layer's
weight matrix, ``|h| * |p - onehot(y)|`` with ``h`` the penultimate
activation.  Correctness uses ``argmax`` with ties going to the lowest class
index.

A shadow model trained on half of the attacker's data yields
membership-labeled features; an MLP attack classifier learns from them and
scores challenge points, predicting "member" when its score is >= 0.5.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .dataset import TabularDataset
from .errors import ConfigError, DataError
from .fedavg import FLConfig, RoundSnapshot, run_rounds
from .model import Architecture, ModelParams, TrainConfig, forward, init_model, predict_proba, train
from .seeding import derive_seed, make_rng
from .splitting import ChallengeSet

__all__ = [
    "FEATURES",
    "AttackConfig",
    "AttackModel",
    "AttackResult",
    "extract_features",
    "feature_dim",
    "shadow_snapshots",
    "train_shadow_attack",
    "run_attack",
    "tally",
]

FEATURES = ("prediction_vector", "loss", "correctness", "last_layer_grad_norm")


@dataclass(frozen=True)
class AttackConfig:
    features: tuple[str, ...] = FEATURES
    rounds: tuple[int, ...] | None = None
    shadow_train: TrainConfig | None = None
    classifier_train: TrainConfig = field(default_factory=lambda: TrainConfig(lr=0.05, epochs=100, batch_size=16))
    classifier_hidden: tuple[int, ...] = (16,)
    shadow_member_fraction: float = 0.5
    shadow_federated: bool = False
    seed: int = 0

    def __post_init__(self):
        feats = tuple(self.features)
        if not feats:
            raise ConfigError("attack feature set is empty")
        unknown = set(feats) - set(FEATURES)
        if unknown:
            raise ConfigError(f"unknown attack features {sorted(unknown)}")
        object.__setattr__(self, "features", tuple(f for f in FEATURES if f in feats))
        if self.rounds is not None:
            object.__setattr__(self, "rounds", tuple(int(r) for r in self.rounds))
            if not self.rounds:
                raise ConfigError("rounds list is empty")
        if not 0 < self.shadow_member_fraction < 1:
            raise ConfigError("shadow_member_fraction must lie in (0, 1)")

    def to_dict(self) -> dict:
        return {
            "features": list(self.features),
            "rounds": None if self.rounds is None else list(self.rounds),
            "shadow_train": None if self.shadow_train is None else vars(self.shadow_train).copy(),
            "classifier_train": vars(self.classifier_train).copy(),
            "classifier_hidden": list(self.classifier_hidden),
            "shadow_member_fraction": self.shadow_member_fraction,
            "shadow_federated": self.shadow_federated,
            "seed": self.seed,
        }


def _as_round_map(snapshots) -> dict[int, ModelParams]:
    if isinstance(snapshots, Mapping):
        return dict(snapshots)
    if isinstance(snapshots, ModelParams):
        return {1: snapshots}
    return {s.round: s.params for s in snapshots}


def _used_rounds(available: Mapping[int, ModelParams], cfg: AttackConfig) -> list[int]:
    if not available:
        raise ValueError("no snapshots given")
    if cfg.rounds is None:
        return [max(available)]
    missing = [r for r in cfg.rounds if r not in available]
    if missing:
        raise KeyError(f"snapshot round(s) {missing} not available; have {sorted(available)}")
    return list(cfg.rounds)


def feature_dim(n_classes: int, cfg: AttackConfig, n_rounds: int | None = None) -> int:
    per = sum(n_classes if f == "prediction_vector" else 1 for f in cfg.features)
    if n_rounds is None:
        n_rounds = 1 if cfg.rounds is None else len(cfg.rounds)
    return per * n_rounds


def _round_features(params: ModelParams, x: np.ndarray, y: np.ndarray, features: Sequence[str]) -> np.ndarray:
    inputs, logits = forward(params, x)
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    probs = np.exp(shifted - logz[:, None])
    rows = np.arange(len(y))
    cols = []
    if "prediction_vector" in features:
        cols.append(-np.sort(-probs, axis=1))
    if "loss" in features:
        cols.append((logz - shifted[rows, y])[:, None])
    if "correctness" in features:
        cols.append((np.argmax(probs, axis=1) == y).astype(np.float64)[:, None])
    if "last_layer_grad_norm" in features:
        residual = probs.copy()
        residual[rows, y] -= 1.0
        norm = np.linalg.norm(inputs[-1], axis=1) * np.linalg.norm(residual, axis=1)
        cols.append(norm[:, None])
    return np.hstack(cols)


def extract_features(snapshots, x: np.ndarray, y, cfg: AttackConfig) -> np.ndarray:
    """Attack features for one point (1-D ``x``) or a batch, in the module's documented layout."""
    rounds = _as_round_map(snapshots)
    used = _used_rounds(rounds, cfg)
    single = np.ndim(x) == 1
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if len(x) != len(y):
        raise ValueError("feature and label counts differ")
    k = rounds[used[0]].arch.n_out
    if y.size and (y.min() < 0 or y.max() >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    feats = np.hstack([_round_features(rounds[r], x, y, cfg.features) for r in used])
    return feats[0] if single else feats


@dataclass(frozen=True)
class AttackModel:
    """Attack classifier plus the feature standardization fitted on shadow features."""

    params: ModelParams
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    shadow_rounds: tuple[int, ...] = ()
    train_accuracy: float = float("nan")

    def score(self, features: np.ndarray) -> np.ndarray:
        features = np.atleast_2d(features)
        if features.shape[1] != self.params.arch.n_in:
            raise ValueError(
                f"attack features have dimension {features.shape[1]}, classifier expects {self.params.arch.n_in}"
            )
        z = (features - self.feature_mean) / self.feature_scale
        return predict_proba(self.params, z)[:, 1]


@dataclass
class AttackResult:
    accuracy: float
    tp: int
    fp: int
    tn: int
    fn: int
    scores: np.ndarray
    membership: np.ndarray
    indices: np.ndarray
    config: dict = field(default_factory=dict)
    seed: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self, with_scores: bool = False) -> dict:
        out = {
            "accuracy": self.accuracy,
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
            "total": self.total,
            "config": self.config,
            "seed": self.seed,
        }
        if with_scores:
            out["scores"] = self.scores.tolist()
            out["membership"] = self.membership.tolist()
            out["indices"] = self.indices.tolist()
        return out


def shadow_snapshots(
    shadow_in: TabularDataset,
    fl_cfg: FLConfig,
    cfg: AttackConfig,
    hidden: tuple[int, ...],
    seed: int,
) -> list[RoundSnapshot]:
    """Train the shadow model with the target's round structure.

    Centralized by default: ``rounds * local_epochs`` epochs of SGD with a
    snapshot every ``local_epochs`` epochs, so round ``r`` of the shadow
    matches round ``r`` of the target in training time.
    """
    local = cfg.shadow_train or fl_cfg.train
    if cfg.shadow_federated:
        shadow_fl = replace(fl_cfg, train=local, seed=derive_seed(seed, 1))
        return run_rounds(shadow_in, shadow_fl, derive_seed(seed, 2), hidden)
    params = init_model(Architecture.mlp(shadow_in.d, shadow_in.n_classes, hidden), derive_seed(seed, 2))
    tcfg = replace(local, epochs=fl_cfg.local_epochs, seed=derive_seed(seed, 1))
    snaps = []
    for r in range(1, fl_cfg.rounds + 1):
        params, _ = train(params, shadow_in.features, shadow_in.labels, tcfg, start_epoch=(r - 1) * fl_cfg.local_epochs)
        snaps.append(RoundSnapshot(r, params, (shadow_in.n,)))
    return snaps


def train_shadow_attack(
    attacker: TabularDataset,
    fl_cfg: FLConfig,
    cfg: AttackConfig,
    hidden: tuple[int, ...] = (32,),
) -> AttackModel:
    """Fit the attack classifier from a shadow model trained on the attacker's data."""
    n_in = int(round(cfg.shadow_member_fraction * attacker.n))
    if n_in < 2 or attacker.n - n_in < 2:
        raise DataError(f"attacker dataset has {attacker.n} rows; too few for a shadow member/non-member split")
    order = make_rng(cfg.seed, 0).permutation(attacker.n)
    in_idx, out_idx = np.sort(order[:n_in]), np.sort(order[n_in:])
    shadow_in, shadow_out = attacker.subset(in_idx), attacker.subset(out_idx)

    snaps = shadow_snapshots(shadow_in, fl_cfg, cfg, hidden, derive_seed(cfg.seed, 1))
    f_in = extract_features(snaps, shadow_in.features, shadow_in.labels, cfg)
    f_out = extract_features(snaps, shadow_out.features, shadow_out.labels, cfg)

    # balanced training set so the classifier's prior matches the balanced challenge
    m = min(len(f_in), len(f_out))
    rng = make_rng(cfg.seed, 2)
    f_in = f_in[np.sort(rng.permutation(len(f_in))[:m])]
    f_out = f_out[np.sort(rng.permutation(len(f_out))[:m])]
    feats = np.vstack([f_in, f_out])
    bits = np.concatenate([np.ones(m, dtype=np.int64), np.zeros(m, dtype=np.int64)])

    mean = feats.mean(axis=0)
    scale = feats.std(axis=0)
    scale[scale == 0] = 1.0
    z = (feats - mean) / scale
    arch = Architecture.mlp(feats.shape[1], 2, cfg.classifier_hidden)
    params = init_model(arch, derive_seed(cfg.seed, 3))
    params, _ = train(params, z, bits, replace(cfg.classifier_train, seed=derive_seed(cfg.seed, 4)))
    model = AttackModel(params, mean, scale, tuple(s.round for s in snaps))
    train_acc = float(np.mean((model.score(feats) >= 0.5) == bits))
    return replace(model, train_accuracy=train_acc)


def tally(
    membership: np.ndarray,
    scores: np.ndarray,
    indices: np.ndarray | None = None,
    config: dict | None = None,
    seed: int = 0,
) -> AttackResult:
    membership = np.asarray(membership, dtype=np.int64)
    predicted = (np.asarray(scores) >= 0.5).astype(np.int64)
    tp = int(np.sum((predicted == 1) & (membership == 1)))
    fp = int(np.sum((predicted == 1) & (membership == 0)))
    tn = int(np.sum((predicted == 0) & (membership == 0)))
    fn = int(np.sum((predicted == 0) & (membership == 1)))
    total = tp + fp + tn + fn
    return AttackResult(
        accuracy=(tp + tn) / total,
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
        scores=np.asarray(scores, dtype=np.float64),
        membership=membership,
        indices=np.arange(total) if indices is None else np.asarray(indices),
        config=config or {},
        seed=seed,
    )


def run_attack(
    attack_model: AttackModel,
    snapshots,
    challenge: ChallengeSet,
    cfg: AttackConfig,
) -> AttackResult:
    if len(challenge) == 0:
        raise ValueError("empty challenge set")
    if challenge.member_count != challenge.nonmember_count:
        raise ValueError("challenge set is not balanced")
    feats = extract_features(snapshots, challenge.features, challenge.labels, cfg)
    scores = attack_model.score(feats)
    return tally(challenge.membership, scores, challenge.indices, cfg.to_dict(), cfg.seed)
