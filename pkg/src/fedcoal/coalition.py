"""Coalition formation over client weight vectors.

One aggregation round works in four steps: every client joins the
coalition whose center client has the nearest weights (Euclidean
distance), each coalition's barycenter is computed, the member closest
to the barycenter becomes the next round's center, and the global model
is the plain mean of the coalition barycenters (one vote per coalition,
regardless of size).

All ties break toward the lowest coalition index or client id, and all
scans run in ascending-id order, so a round is a pure deterministic
function of its inputs.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass

from .paramvec import ParamVector, barycenter, euclidean_distance
from .rng import make_rng


class DegenerateWeights(ValueError):
    """No center set with pairwise-distinct weights exists."""


@dataclass(frozen=True, eq=False)
class CoalitionState:
    """Snapshot of one round: centers, memberships and barycenters.

    ``centers`` are the ids elected for the *next* assignment;
    ``members``/``barycenters`` describe the grouping formed *this*
    round and are absent (None) on the bootstrap state.
    """

    round: int
    centers: tuple[int, ...]
    members: tuple[frozenset[int], ...] | None = None
    barycenters: tuple[ParamVector, ...] | None = None

    def __post_init__(self) -> None:
        if self.round < 0:
            raise ValueError(f"round must be >= 0, got {self.round}")
        if len(self.centers) < 2:
            raise ValueError(f"need at least 2 coalitions, got {len(self.centers)}")
        if len(set(self.centers)) != len(self.centers):
            raise ValueError(f"duplicate center ids: {self.centers}")
        if self.members is not None:
            if len(self.members) != len(self.centers):
                raise ValueError("one member set per coalition required")
            if any(len(group) == 0 for group in self.members):
                raise ValueError("every coalition must be nonempty")
            all_ids = [uid for group in self.members for uid in group]
            if len(all_ids) != len(set(all_ids)):
                raise ValueError("member sets must be disjoint")
        if self.barycenters is not None and len(self.barycenters) != len(self.centers):
            raise ValueError("one barycenter per coalition required")

    @property
    def coalition_count(self) -> int:
        return len(self.centers)


@dataclass(frozen=True, eq=False)
class GlobalModel:
    """Server-side weights for one round."""

    round: int
    theta: ParamVector


def _check_weights(weights: Mapping[int, ParamVector]) -> list[int]:
    if not weights:
        raise ValueError("empty client weight map")
    ids = sorted(weights)
    dim = weights[ids[0]].size
    for uid in ids:
        if weights[uid].size != dim:
            raise ValueError(
                f"dimension mismatch: client {ids[0]} has dim {dim}, "
                f"client {uid} has dim {weights[uid].size}"
            )
    return ids


def init_centers(weights: Mapping[int, ParamVector], k: int, seed: int) -> tuple[int, ...]:
    """Draw k distinct client ids as initial coalition centers.

    Candidates are sampled uniformly without replacement from a seeded
    stream and re-drawn until all pairwise weight distances are strictly
    positive.  Raises DegenerateWeights when no such k-subset exists
    (fewer than k distinct weight vectors).
    """
    ids = _check_weights(weights)
    if k < 2:
        raise ValueError(f"need at least 2 coalitions, got {k}")
    if len(ids) < k:
        raise ValueError(f"need at least {k} clients, got {len(ids)}")
    # +0.0 collapses -0.0 onto +0.0 so byte keys agree with distance-zero.
    distinct = {(weights[uid] + 0.0).tobytes() for uid in ids}
    if len(distinct) < k:
        raise DegenerateWeights(
            f"degenerate weight set: only {len(distinct)} distinct weight "
            f"vectors among {len(ids)} clients, need {k}"
        )
    rng = make_rng(seed, "init-centers")
    while True:
        picks = rng.choice(len(ids), size=k, replace=False)
        centers = tuple(ids[i] for i in picks)
        if all(
            euclidean_distance(weights[a], weights[b]) > 0.0
            for i, a in enumerate(centers)
            for b in centers[i + 1 :]
        ):
            return centers


def assign_members(
    weights: Mapping[int, ParamVector], centers: Sequence[int]
) -> tuple[frozenset[int], ...]:
    """Assign every client to the coalition with the nearest center.

    Centers belong to their own coalition; other clients join the argmin
    over d(own weights, center weights), ties to the lowest coalition
    index.  The result partitions the client set.
    """
    ids = _check_weights(weights)
    if len(set(centers)) != len(centers):
        raise ValueError(f"duplicate center ids: {tuple(centers)}")
    missing = [c for c in centers if c not in weights]
    if missing:
        raise ValueError(f"center ids without weights: {missing}")
    groups: list[set[int]] = [{c} for c in centers]
    center_set = set(centers)
    for uid in ids:
        if uid in center_set:
            continue
        best_j = 0
        best_d = euclidean_distance(weights[uid], weights[centers[0]])
        for j in range(1, len(centers)):
            d = euclidean_distance(weights[uid], weights[centers[j]])
            if d < best_d:
                best_d = d
                best_j = j
        groups[best_j].add(uid)
    return tuple(frozenset(g) for g in groups)


def coalition_barycenters(
    weights: Mapping[int, ParamVector], members: Sequence[frozenset[int]]
) -> tuple[ParamVector, ...]:
    """Mean weight vector of each coalition, summed in ascending-id order."""
    out = []
    for j, group in enumerate(members):
        if not group:
            raise ValueError(f"coalition {j} is empty")
        out.append(barycenter([weights[uid] for uid in sorted(group)]))
    return tuple(out)


def elect_centers(
    weights: Mapping[int, ParamVector],
    members: Sequence[frozenset[int]],
    barycenters_: Sequence[ParamVector],
) -> tuple[int, ...]:
    """Next-round center of each coalition: the member nearest its
    barycenter, ties to the lowest client id."""
    if len(members) != len(barycenters_):
        raise ValueError("one barycenter per coalition required")
    elected = []
    for group, center_of_mass in zip(members, barycenters_):
        if not group:
            raise ValueError("cannot elect a center for an empty coalition")
        best_id = -1
        best_d = float("inf")
        for uid in sorted(group):
            d = euclidean_distance(weights[uid], center_of_mass)
            if d < best_d:
                best_d = d
                best_id = uid
        elected.append(best_id)
    return tuple(elected)


def aggregate_global(barycenters_: Sequence[ParamVector]) -> ParamVector:
    """Global weights: unweighted mean of the coalition barycenters, in
    coalition order.  Every coalition counts equally regardless of size."""
    if len(barycenters_) == 0:
        raise ValueError("no barycenters to aggregate")
    return barycenter(list(barycenters_))


def coalition_round(
    weights: Mapping[int, ParamVector], prev: CoalitionState
) -> tuple[CoalitionState, GlobalModel]:
    """Run one full aggregation round against the current client weights.

    Uses ``prev.centers`` for assignment, computes barycenters, elects
    next-round centers, and averages the barycenters into the global
    model.  Returns the new state (members/barycenters of this round,
    centers for the next) and the global model.
    """
    ids = _check_weights(weights)
    missing = [c for c in prev.centers if c not in weights]
    if missing:
        raise ValueError(f"previous centers {missing} not in current client set {ids}")
    members = assign_members(weights, prev.centers)
    barys = coalition_barycenters(weights, members)
    next_centers = elect_centers(weights, members, barys)
    theta = aggregate_global(barys)
    state = CoalitionState(
        round=prev.round + 1,
        centers=next_centers,
        members=members,
        barycenters=barys,
    )
    return state, GlobalModel(round=prev.round + 1, theta=theta)
