"""Query/document clustering.

Two procedures live here:

* threshold community clustering with a population pass, used to extract
  topic clusters from a sampled query set and then grow them from the rest
  of the corpus;
* a size-constrained 2-means on unit vectors, used to split one topic's
  queries or documents into two coherent halves.

All cosine math runs on the unit vectors stored in an EmbeddingTable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .embeddings import EmbeddingTable
from .errors import InputError
from .seeding import rng_for

_BLOCK = 512  # rows per similarity block; bounds memory at ~block * n floats


@dataclass(frozen=True)
class ClusterParams:
    """Thresholds and sizes for community clustering.

    t1 gates seed-community membership, t2 gates population (t2 < t1),
    min_size is the smallest seed community kept.
    """

    t1: float
    t2: float
    min_size: int
    sample_size: int = 50_000
    seed: int = 13

    def __post_init__(self):
        if not (0.0 < self.t1 < 1.0 and 0.0 < self.t2 < 1.0):
            raise InputError("thresholds must lie in (0, 1)")
        if self.t2 >= self.t1:
            raise InputError("population threshold t2 must be below seed threshold t1")
        if self.min_size < 1:
            raise InputError("min_size must be positive")


@dataclass(frozen=True)
class TopicCluster:
    cluster_id: int
    anchor: str
    seed_members: tuple[str, ...]
    populated_members: tuple[str, ...]
    centroid: np.ndarray

    @property
    def members(self) -> tuple[str, ...]:
        return self.seed_members + self.populated_members

    @property
    def size(self) -> int:
        return len(self.seed_members) + len(self.populated_members)


def seed_clusters(sample, table: EmbeddingTable, params: ClusterParams) -> list[TopicCluster]:
    """Extract threshold communities from a sampled id set.

    A community is an anchor id plus every sample id with cosine >= t1 to it.
    Communities below min_size are discarded; the rest are taken greedily by
    descending size (anchor id breaks ties) and a community is dropped whole
    if any member already belongs to an earlier one, so clusters never
    overlap. Returns clusters ordered by descending size then anchor id, with
    cluster ids assigned in that order.
    """
    ids = sorted(set(sample))
    if not ids:
        return []
    mat = table.matrix(ids)
    n = len(ids)

    neighborhoods: list[tuple[int, int]] = []  # (size, anchor row) for qualifying rows
    neighbor_rows: dict[int, np.ndarray] = {}
    for start in range(0, n, _BLOCK):
        block = mat[start : start + _BLOCK]
        sims = block @ mat.T
        hits = sims >= params.t1
        sizes = hits.sum(axis=1)
        for offset in np.nonzero(sizes >= params.min_size)[0]:
            row = start + int(offset)
            neighborhoods.append((int(sizes[offset]), row))
            neighbor_rows[row] = np.nonzero(hits[offset])[0]

    neighborhoods.sort(key=lambda item: (-item[0], ids[item[1]]))

    clusters: list[TopicCluster] = []
    assigned = np.zeros(n, dtype=bool)
    for _, row in neighborhoods:
        members = neighbor_rows[row]
        if assigned[members].any():
            continue
        assigned[members] = True
        member_ids = tuple(ids[i] for i in members)
        clusters.append(
            TopicCluster(
                cluster_id=len(clusters),
                anchor=ids[row],
                seed_members=member_ids,
                populated_members=(),
                centroid=table.centroid(member_ids),
            )
        )
    return clusters


def populate_clusters(
    clusters: list[TopicCluster],
    pool,
    table: EmbeddingTable,
    params: ClusterParams,
) -> list[TopicCluster]:
    """Assign pool ids to the nearest cluster centroid when cosine >= t2.

    Single pass with centroids frozen during assignment, so the result is
    independent of pool order; ties go to the lower cluster id. Centroids are
    recomputed once afterwards over seed plus populated members.
    """
    if not clusters:
        return []
    pool_ids = sorted(set(pool))
    taken = {m for c in clusters for m in c.members}
    overlap = taken.intersection(pool_ids)
    if overlap:
        raise InputError(f"population pool overlaps cluster members, e.g. {sorted(overlap)[:3]}")

    centroid_mat = np.stack([c.centroid for c in clusters])
    added: dict[int, list[str]] = {c.cluster_id: [] for c in clusters}
    for start in range(0, len(pool_ids), _BLOCK):
        chunk = pool_ids[start : start + _BLOCK]
        sims = table.matrix(chunk) @ centroid_mat.T
        best = np.argmax(sims, axis=1)  # first max wins -> lowest cluster id
        for i, qid in enumerate(chunk):
            if sims[i, best[i]] >= params.t2:
                added[clusters[int(best[i])].cluster_id].append(qid)

    out = []
    for c in clusters:
        new_members = tuple(added[c.cluster_id])
        centroid = table.centroid(c.seed_members + new_members) if new_members else c.centroid
        out.append(replace(c, populated_members=new_members, centroid=centroid))
    return out


def partition_objective(side_a, side_b, table: EmbeddingTable) -> float:
    """Sum of cosines to each side's own (normalized-mean) center."""
    total = 0.0
    for side in (list(side_a), list(side_b)):
        if not side:
            continue
        vecs = table.matrix(side)
        mean = vecs.mean(axis=0)
        norm = float(np.linalg.norm(mean))
        if norm < 1e-12:
            continue  # cancelled side contributes nothing
        total += float((vecs @ (mean / norm)).sum())
    return total


def constrained_two_means(
    ids,
    table: EmbeddingTable,
    min_frac: float = 0.25,
    max_iter: int = 50,
    seed: int = 13,
) -> tuple[tuple[str, ...], tuple[str, ...]]:
    """Split ids into two sets, each holding >= ceil(min_frac * n) members
    (capped at floor(n/2) so odd counts stay feasible at min_frac = 0.5).

    Cosine 2-means: centers start from the most mutually-distant pair among
    eight seeded random candidates; every iteration assigns points optimally
    under the size floor (sort by similarity margin between the two centers)
    and moves each center to the normalized mean of its side, then a local
    refinement pass moves or swaps single points while that helps. The
    objective (sum of cosines to own center) never decreases across
    iterations. Deterministic per seed.
    """
    ids = list(ids)
    n = len(ids)
    if n < 4:
        raise InputError(f"constrained 2-means needs at least 4 points, got {n}")
    if not (0.0 < min_frac <= 0.5):
        raise InputError("min_frac must lie in (0, 0.5]")
    floor = min(math.ceil(min_frac * n), n // 2)
    vecs = table.matrix(ids)

    rng = rng_for(seed, "2means-init")
    cand = rng.sample(range(n), min(8, n))
    best_pair, best_sim = (cand[0], cand[1]), float("inf")
    for i in range(len(cand)):
        for j in range(i + 1, len(cand)):
            sim = float(np.dot(vecs[cand[i]], vecs[cand[j]]))
            if sim < best_sim:
                best_pair, best_sim = (cand[i], cand[j]), sim
    c1, c2 = vecs[best_pair[0]].copy(), vecs[best_pair[1]].copy()

    prev: np.ndarray | None = None
    in_first = np.zeros(n, dtype=bool)
    iters_left = max_iter
    while iters_left > 0:
        iters_left -= 1
        delta = vecs @ c1 - vecs @ c2
        order = np.lexsort((np.arange(n), -delta))  # by margin desc, then position
        in_first[:] = False
        in_first[order[:floor]] = True
        middle = order[floor : n - floor]
        in_first[middle] = delta[middle] > 0.0
        if prev is not None and np.array_equal(in_first, prev):
            break
        prev = in_first.copy()
        for flag, center in ((True, 0), (False, 1)):
            side = vecs[in_first == flag]
            mean = side.mean(axis=0)
            norm = float(np.linalg.norm(mean))
            if norm >= 1e-12:
                if center == 0:
                    c1 = mean / norm
                else:
                    c2 = mean / norm

    _refine_partition(vecs, in_first, floor, iters_left)
    if n <= 16:
        # small instances admit the exact optimum; use it when it strictly
        # beats the refined fixed point
        current = float(
            np.linalg.norm(vecs[in_first].sum(axis=0)) + np.linalg.norm(vecs[~in_first].sum(axis=0))
        )
        best_obj, best_mask = _exact_best_partition(vecs, floor)
        if best_obj > current + 1e-12:
            for i in range(n):
                in_first[i] = bool(best_mask >> i & 1)
    first = tuple(ids[i] for i in range(n) if in_first[i])
    second = tuple(ids[i] for i in range(n) if not in_first[i])
    return first, second


def _exact_best_partition(vecs: np.ndarray, floor: int) -> tuple[float, int]:
    """Exhaustive best split under the size floor (Gray-code walk, n <= 16).

    With optimal centers a side's objective is the norm of its vector sum,
    so each one-bit flip updates the objective in O(dim).
    """
    n = len(vecs)
    total = vecs.sum(axis=0)
    sum_a = np.zeros_like(total)
    pop = 0
    best_obj, best_mask = -1.0, 0
    gray = 0
    for i in range(1, 1 << n):
        bit = (i & -i).bit_length() - 1
        gray ^= 1 << bit
        if gray >> bit & 1:
            sum_a += vecs[bit]
            pop += 1
        else:
            sum_a -= vecs[bit]
            pop -= 1
        if floor <= pop <= n - floor:
            obj = float(np.linalg.norm(sum_a) + np.linalg.norm(total - sum_a))
            if obj > best_obj:
                best_obj, best_mask = obj, gray
    return best_obj, best_mask


def _refine_partition(vecs: np.ndarray, in_first: np.ndarray, floor: int, budget: int) -> None:
    """Greedy move/swap polish of a 2-means fixed point, in place.

    With optimal (normalized-mean) centers a side's objective equals the norm
    of its vector sum, so candidate moves are evaluated exactly in O(dim).
    Plain alternation lands in weak local optima on unstructured data; this
    pass keeps the objective non-decreasing and the floors intact. Swap
    search is O(n^2) per round and is skipped on large inputs, where the
    alternating phase is already adequate.
    """
    n = len(vecs)
    sum_a = vecs[in_first].sum(axis=0)
    sum_b = vecs[~in_first].sum(axis=0)
    try_swaps = n <= 600

    for _ in range(max(budget, 8) * n):
        current = float(np.linalg.norm(sum_a) + np.linalg.norm(sum_b))
        count_a = int(in_first.sum())
        best_gain, best_op = 1e-10, None
        for i in range(n):
            if in_first[i]:
                if count_a - 1 < floor:
                    continue
                gain = (
                    float(np.linalg.norm(sum_a - vecs[i]) + np.linalg.norm(sum_b + vecs[i]))
                    - current
                )
            else:
                if n - count_a - 1 < floor:
                    continue
                gain = (
                    float(np.linalg.norm(sum_a + vecs[i]) + np.linalg.norm(sum_b - vecs[i]))
                    - current
                )
            if gain > best_gain:
                best_gain, best_op = gain, (i, -1)
        if try_swaps:
            a_idx = np.nonzero(in_first)[0]
            b_idx = np.nonzero(~in_first)[0]
            for i in a_idx:
                shifted_a = sum_a - vecs[i]
                shifted_b = sum_b + vecs[i]
                norms_a = np.linalg.norm(shifted_a + vecs[b_idx], axis=1)
                norms_b = np.linalg.norm(shifted_b - vecs[b_idx], axis=1)
                gains = norms_a + norms_b - current
                k = int(np.argmax(gains))
                if gains[k] > best_gain:
                    best_gain, best_op = float(gains[k]), (int(i), int(b_idx[k]))
        if best_op is None:
            break
        i, j = best_op
        if j == -1:
            if in_first[i]:
                sum_a -= vecs[i]
                sum_b += vecs[i]
                in_first[i] = False
            else:
                sum_a += vecs[i]
                sum_b -= vecs[i]
                in_first[i] = True
        else:
            sum_a += vecs[j] - vecs[i]
            sum_b += vecs[i] - vecs[j]
            in_first[i] = False
            in_first[j] = True
