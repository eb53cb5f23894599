"""Group-membership features over a finite, possibly overlapping group family.

A family is either a list of scalar covariate intervals or a list of
predicted-label sets. Membership of a point is a fixed-length binary vector
(one bit per group, in family order). Atoms are the equivalence classes of
observed membership patterns: the disjoint refinement of the family.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

MembershipVector = tuple[int, ...]
AtomKey = tuple[int, ...]


class CoveringError(ValueError):
    """A covariate fell outside every group of the family."""


class FamilyConfigError(ValueError):
    """Malformed group-family configuration."""


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float
    lo_closed: bool = True
    hi_closed: bool = True

    def contains(self, x: float) -> bool:
        above = x >= self.lo if self.lo_closed else x > self.lo
        below = x <= self.hi if self.hi_closed else x < self.hi
        return above and below


@dataclass(frozen=True)
class LabelSet:
    labels: frozenset[int]

    def contains(self, y: int) -> bool:
        return int(y) in self.labels


@dataclass(frozen=True)
class GroupFamily:
    """Ordered groups; order defines bit positions in membership vectors.

    ``feature`` selects the covariate coordinate for interval families (an
    index into vector covariates, ignored for scalars) or is the string
    "predicted_label" for label-set families.
    """

    groups: tuple[Interval | LabelSet, ...]
    feature: int | str = 0

    def __post_init__(self):
        if not self.groups:
            raise FamilyConfigError("group family must be nonempty")

    def __len__(self) -> int:
        return len(self.groups)


def _select_feature(x, family: GroupFamily):
    if np.ndim(x) == 0:
        return x
    return x[family.feature]


def membership_vector(x, family: GroupFamily) -> MembershipVector:
    """Bit g is set iff x belongs to group g under its closure convention."""
    value = _select_feature(x, family)
    bits = tuple(int(g.contains(value)) for g in family.groups)
    if not any(bits):
        raise CoveringError(
            f"covariate value {value!r} is outside every group of the family"
        )
    return bits


def membership_matrix(xs: Sequence, family: GroupFamily) -> np.ndarray:
    """Vectorized membership for interval families; (n, |groups|) int array."""
    xs = np.asarray(xs)
    if xs.ndim > 1:
        xs = xs[:, family.feature]
    cols = []
    for g in family.groups:
        if isinstance(g, Interval):
            above = xs >= g.lo if g.lo_closed else xs > g.lo
            below = xs <= g.hi if g.hi_closed else xs < g.hi
            cols.append(above & below)
        else:
            cols.append(np.isin(xs.astype(int), sorted(g.labels)))
    mat = np.column_stack(cols).astype(int)
    uncovered = np.flatnonzero(mat.sum(axis=1) == 0)
    if uncovered.size:
        i = int(uncovered[0])
        raise CoveringError(
            f"covariate value {xs[i]!r} (index {i}) is outside every group"
        )
    return mat


def enumerate_atoms(
    covariates: Sequence, family: GroupFamily
) -> dict[AtomKey, list[int]]:
    """Group sample indices by identical membership pattern.

    Only non-empty atoms appear; keys iterate in lexicographic bit order.
    """
    if len(covariates) == 0:
        raise ValueError("enumerate_atoms requires at least one covariate")
    mat = membership_matrix(covariates, family)
    atoms: dict[AtomKey, list[int]] = {}
    for i, row in enumerate(mat):
        atoms.setdefault(tuple(int(b) for b in row), []).append(i)
    return dict(sorted(atoms.items()))


def atom_feature(atom: AtomKey) -> MembershipVector:
    """The shared membership vector of every point in the atom."""
    return atom


def family_to_json(family: GroupFamily) -> str:
    if isinstance(family.groups[0], Interval):
        return json.dumps(
            {
                "kind": "intervals",
                "feature": family.feature,
                "groups": [
                    {
                        "lo": g.lo,
                        "hi": g.hi,
                        "lo_closed": g.lo_closed,
                        "hi_closed": g.hi_closed,
                    }
                    for g in family.groups
                ],
            }
        )
    return json.dumps(
        {
            "kind": "label_sets",
            "feature": family.feature,
            "groups": [sorted(g.labels) for g in family.groups],
        }
    )


def family_from_json(payload: str | Mapping) -> GroupFamily:
    try:
        obj = json.loads(payload) if isinstance(payload, str) else payload
        kind = obj["kind"]
        raw = obj["groups"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FamilyConfigError(f"malformed family configuration: {exc}") from exc
    feature = obj.get("feature", 0 if kind == "intervals" else "predicted_label")
    if kind == "intervals":
        groups = []
        for g in raw:
            try:
                groups.append(
                    Interval(
                        lo=float(g["lo"]),
                        hi=float(g["hi"]),
                        lo_closed=bool(g.get("lo_closed", True)),
                        hi_closed=bool(g.get("hi_closed", True)),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise FamilyConfigError(f"malformed interval {g!r}") from exc
        return GroupFamily(groups=tuple(groups), feature=feature)
    if kind == "label_sets":
        try:
            groups = tuple(LabelSet(frozenset(int(y) for y in g)) for g in raw)
        except (TypeError, ValueError) as exc:
            raise FamilyConfigError(f"malformed label set: {exc}") from exc
        return GroupFamily(groups=groups, feature=feature)
    raise FamilyConfigError(f"unknown family kind {kind!r}")


def interval_family(bounds: Sequence[tuple[float, float]]) -> GroupFamily:
    """Closed-interval family over a scalar covariate, e.g. [(0,2),(1,3),...]."""
    return GroupFamily(groups=tuple(Interval(lo, hi) for lo, hi in bounds))


SINGLE_GROUP = GroupFamily(groups=(Interval(-np.inf, np.inf),))
