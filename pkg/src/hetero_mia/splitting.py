"""Attacker / target / non-member splits and the balanced challenge set.

Two regimes: ``uniform`` (one seeded permutation, no heterogeneity) and
``natural`` (pre-existing groups such as schools or hospitals are assigned
to roles).  The challenge set mixes target-distribution and third-distribution
non-members in proportion ``rho``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .dataset import TabularDataset
from .errors import ConfigError, DataError
from .seeding import make_rng

__all__ = [
    "SplitPlan",
    "SplitOutput",
    "ChallengeSet",
    "split",
    "uniform_split",
    "natural_split",
    "build_challenge",
    "third_count",
]

ROLES = ("target", "attacker", "third")


@dataclass(frozen=True)
class SplitPlan:
    """How to carve a dataset into parties.

    ``sizes`` (uniform only) is ``(attacker, target, nonmember)``; entries
    below 1 are fractions of ``n``, others absolute counts.  ``roles`` (natural
    only) maps each role to the group values it pools.
    """

    strategy: str
    sizes: tuple[float, float, float] | None = None
    roles: Mapping[str, tuple[str, ...]] = field(default_factory=dict)
    holdout_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in ("uniform", "natural"):
            raise ConfigError(f"unknown split strategy {self.strategy!r}")
        roles = {k: tuple(str(g) for g in (v if isinstance(v, (list, tuple)) else [v])) for k, v in self.roles.items()}
        object.__setattr__(self, "roles", roles)
        if self.strategy == "uniform":
            if self.sizes is None or len(self.sizes) != 3:
                raise ConfigError("uniform split needs sizes (attacker, target, nonmember)")
            if any(s <= 0 for s in self.sizes):
                raise ConfigError("uniform split sizes must all be positive")
            fracs = [s for s in self.sizes if s < 1]
            if fracs and len(fracs) == 3 and sum(fracs) > 1 + 1e-12:
                raise ConfigError("uniform split fractions sum above 1")
        else:
            unknown = set(roles) - set(ROLES)
            if unknown:
                raise ConfigError(f"unknown roles {sorted(unknown)}")
            if not roles.get("target") or not roles.get("attacker"):
                raise ConfigError("natural split needs nonempty target and attacker groups")
            seen: dict[str, str] = {}
            for role, groups in roles.items():
                for g in groups:
                    if g in seen:
                        raise ConfigError(f"group {g!r} assigned to both {seen[g]} and {role}")
                    seen[g] = role
            if not 0 <= self.holdout_fraction < 1:
                raise ConfigError("holdout_fraction must lie in [0, 1)")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["roles"] = {k: list(v) for k, v in self.roles.items()}
        out["sizes"] = None if self.sizes is None else list(self.sizes)
        return out


@dataclass
class SplitOutput:
    attacker_idx: np.ndarray
    target_idx: np.ndarray
    nonmember_pool_same_idx: np.ndarray
    nonmember_pool_third_idx: np.ndarray
    plan: SplitPlan

    def __post_init__(self):
        pools = [self.attacker_idx, self.target_idx, self.nonmember_pool_same_idx, self.nonmember_pool_third_idx]
        sets = [set(p.tolist()) for p in pools]
        total = sum(len(s) for s in sets)
        if total != len(set().union(*sets)) or total != sum(len(p) for p in pools):
            raise AssertionError("split index lists are not pairwise disjoint")

    def to_dict(self) -> dict:
        return {
            "attacker_idx": self.attacker_idx.tolist(),
            "target_idx": self.target_idx.tolist(),
            "nonmember_pool_same_idx": self.nonmember_pool_same_idx.tolist(),
            "nonmember_pool_third_idx": self.nonmember_pool_third_idx.tolist(),
            "plan": self.plan.to_dict(),
        }


@dataclass
class ChallengeSet:
    """Balanced evaluation points; ``indices`` refer to the source dataset."""

    indices: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    membership: np.ndarray
    third_count: int = 0

    @property
    def member_count(self) -> int:
        return int(self.membership.sum())

    @property
    def nonmember_count(self) -> int:
        return int(len(self.membership) - self.membership.sum())

    def __len__(self) -> int:
        return len(self.membership)


def _resolve_sizes(sizes: Sequence[float], n: int) -> list[int]:
    out = [int(round(s * n)) if s < 1 else int(s) for s in sizes]
    if any(s == 0 for s in out):
        raise DataError(f"split sizes {out} include an empty pool")
    if sum(out) > n:
        raise DataError(f"split sizes {out} exceed the {n} available rows")
    return out


def uniform_split(ds: TabularDataset, plan: SplitPlan) -> SplitOutput:
    if plan.strategy != "uniform":
        raise ConfigError("uniform_split needs a uniform plan")
    n_att, n_tgt, n_non = _resolve_sizes(plan.sizes, ds.n)
    order = make_rng(plan.seed).permutation(ds.n)
    return SplitOutput(
        attacker_idx=np.sort(order[:n_att]),
        target_idx=np.sort(order[n_att : n_att + n_tgt]),
        nonmember_pool_same_idx=np.sort(order[n_att + n_tgt : n_att + n_tgt + n_non]),
        nonmember_pool_third_idx=np.array([], dtype=np.int64),
        plan=plan,
    )


def natural_split(ds: TabularDataset, plan: SplitPlan) -> SplitOutput:
    """Assign whole groups to roles; hold out part of the target groups as non-members."""
    if plan.strategy != "natural":
        raise ConfigError("natural_split needs a natural plan")
    if ds.groups is None:
        raise DataError("natural split needs group identifiers")
    present = set(ds.group_values())
    for role, groups in plan.roles.items():
        missing = [g for g in groups if g not in present]
        if missing:
            raise DataError(f"{role} role references absent group(s) {missing}; available: {sorted(present)}")

    groups = np.array([str(g) for g in ds.groups], dtype=object)

    def rows_of(role: str) -> np.ndarray:
        return np.flatnonzero(np.isin(groups, list(plan.roles.get(role, ()))))

    target_rows = rows_of("target")
    n_hold = int(round(plan.holdout_fraction * len(target_rows)))
    if plan.holdout_fraction > 0 and (n_hold == 0 or n_hold >= len(target_rows)):
        raise DataError(f"target groups have {len(target_rows)} rows; cannot hold out {plan.holdout_fraction:.0%} as non-members")
    order = target_rows[make_rng(plan.seed).permutation(len(target_rows))]
    return SplitOutput(
        attacker_idx=rows_of("attacker"),
        target_idx=np.sort(order[n_hold:]),
        nonmember_pool_same_idx=np.sort(order[:n_hold]),
        nonmember_pool_third_idx=rows_of("third"),
        plan=plan,
    )


def split(ds: TabularDataset, plan: SplitPlan) -> SplitOutput:
    return uniform_split(ds, plan) if plan.strategy == "uniform" else natural_split(ds, plan)


def third_count(per_side: int, rho: float) -> int:
    """Number of third-distribution non-members; Python's ``round`` ties to even."""
    return int(round(rho * per_side))


def build_challenge(
    split_out: SplitOutput,
    ds: TabularDataset,
    per_side: int,
    rho: float,
    seed: int,
) -> ChallengeSet:
    """Sample ``per_side`` members and ``per_side`` non-members, then shuffle.

    Non-members are ``third_count(per_side, rho)`` rows from the third pool and
    the rest from the held-out target-distribution pool.
    """
    if not 0 <= rho <= 1:
        raise ConfigError(f"rho must lie in [0, 1], got {rho}")
    if per_side < 1:
        raise ConfigError("per_side must be >= 1")
    n_third = third_count(per_side, rho)
    n_same = per_side - n_third
    needs = [
        ("target (members)", split_out.target_idx, per_side),
        ("same-distribution non-member", split_out.nonmember_pool_same_idx, n_same),
        ("third-distribution non-member", split_out.nonmember_pool_third_idx, n_third),
    ]
    for name, pool, need in needs:
        if need > len(pool):
            raise DataError(f"{name} pool has {len(pool)} rows, needs {need} (short by {need - len(pool)})")

    rng = make_rng(seed)
    members = rng.choice(split_out.target_idx, size=per_side, replace=False)
    same = rng.choice(split_out.nonmember_pool_same_idx, size=n_same, replace=False) if n_same else np.array([], dtype=np.int64)
    third = rng.choice(split_out.nonmember_pool_third_idx, size=n_third, replace=False) if n_third else np.array([], dtype=np.int64)
    idx = np.concatenate([members, same, third]).astype(np.int64)
    bits = np.concatenate([np.ones(per_side, dtype=np.int64), np.zeros(per_side, dtype=np.int64)])
    order = rng.permutation(len(idx))
    idx, bits = idx[order], bits[order]

    target = set(split_out.target_idx.tolist())
    if any((i in target) != bool(b) for i, b in zip(idx.tolist(), bits.tolist())):
        raise AssertionError("challenge membership bits disagree with the target training set")
    return ChallengeSet(idx, ds.features[idx], ds.labels[idx], bits, third_count=n_third)
