"""Hamming matching: exact linear scan and a randomized hierarchical clustering forest.

Descriptors are handled as rows of a ``(D, words)`` uint64 matrix; Hamming
distance is XOR followed by a population count per word.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ParameterError
from .signature import BinarySignature, signature_matrix

DEFAULT_TREES = 3
DEFAULT_BRANCHING = 16
DEFAULT_MAX_LEAF = 150


class MatchCandidate(NamedTuple):
    query_id: int
    target_id: int
    distance: int


def as_matrix(descriptors) -> np.ndarray:
    """Accept a signature list, a single signature, or a uint64 matrix."""
    if isinstance(descriptors, BinarySignature):
        return descriptors.words.reshape(1, -1)
    if isinstance(descriptors, np.ndarray):
        mat = np.ascontiguousarray(descriptors, dtype=np.uint64)
        return mat.reshape(1, -1) if mat.ndim == 1 else mat
    return signature_matrix(list(descriptors))


def hamming(a, b) -> int:
    """Number of differing stored bits between two equal-length signatures."""
    wa = a.words if isinstance(a, BinarySignature) else np.asarray(a, dtype=np.uint64)
    wb = b.words if isinstance(b, BinarySignature) else np.asarray(b, dtype=np.uint64)
    if wa.shape != wb.shape:
        raise ParameterError(f"signature lengths differ: {wa.size} vs {wb.size} words")
    return int(np.bitwise_count(wa ^ wb).sum())


def hamming_to_rows(query: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Distances from one descriptor to every row of ``rows``."""
    return np.bitwise_count(rows ^ query).sum(axis=1, dtype=np.int64)


def hamming_matrix(queries, targets, chunk: int = 256) -> np.ndarray:
    q = as_matrix(queries)
    t = as_matrix(targets)
    if q.shape[1] != t.shape[1]:
        raise ParameterError(f"signature lengths differ: {q.shape[1]} vs {t.shape[1]} words")
    out = np.empty((len(q), len(t)), dtype=np.int64)
    for s in range(0, len(q), chunk):
        block = q[s : s + chunk]
        out[s : s + chunk] = np.bitwise_count(block[:, None, :] ^ t[None, :, :]).sum(axis=2, dtype=np.int64)
    return out


def _best_k(query_id: int, ids: np.ndarray, dists: np.ndarray, k: int) -> list[MatchCandidate]:
    order = np.lexsort((ids, dists))[:k]
    return [MatchCandidate(query_id, int(ids[i]), int(dists[i])) for i in order]


def brute_force_match(queries, targets, k: int = 1) -> list[list[MatchCandidate]]:
    """Exact ``k`` nearest targets per query, ties broken by target id."""
    if k < 1:
        raise ParameterError("k must be >= 1")
    t = as_matrix(targets)
    if len(t) == 0:
        raise ParameterError("no targets to match against")
    dist = hamming_matrix(queries, t)
    ids = np.arange(len(t))
    return [_best_k(qi, ids, row, k) for qi, row in enumerate(dist)]


# -- clustering forest ----------------------------------------------------------


@dataclass(eq=False)
class Node:
    ids: np.ndarray | None = None  # leaf members
    centers: np.ndarray | None = None  # (K', words) center descriptors
    center_ids: np.ndarray | None = None
    children: list[Node] = field(default_factory=list)

    @property
    def is_leaf(self) -> bool:
        return self.ids is not None


@dataclass(eq=False)
class ClusteringForest:
    data: np.ndarray
    trees: list[Node]
    branching: int
    max_leaf: int
    seed: int

    def __len__(self) -> int:
        return len(self.data)

    def leaves(self, tree: int) -> list[np.ndarray]:
        out, stack = [], [self.trees[tree]]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                out.append(node.ids)
            else:
                stack.extend(reversed(node.children))
        return out


def _build_node(data: np.ndarray, ids: np.ndarray, branching: int, max_leaf: int, rng) -> Node:
    if len(ids) < max_leaf:
        return Node(ids=ids)
    picks = rng.choice(len(ids), size=branching, replace=False)
    center_ids = ids[picks]
    centers = data[center_ids]
    dist = np.bitwise_count(data[ids][:, None, :] ^ centers[None, :, :]).sum(axis=2)
    label = np.argmin(dist, axis=1)  # ties -> lowest center ordinal
    groups = [ids[label == c] for c in range(branching)]
    keep = [c for c in range(branching) if len(groups[c])]
    if len(keep) == 1:
        # every member copies one descriptor; split evenly so leaves stay small
        parts = np.array_split(ids[rng.permutation(len(ids))], branching)
        heads = np.array([part[0] for part in parts])
        children = [_build_node(data, part, branching, max_leaf, rng) for part in parts]
        return Node(centers=data[heads], center_ids=heads, children=children)
    children = [_build_node(data, groups[c], branching, max_leaf, rng) for c in keep]
    return Node(centers=centers[keep], center_ids=center_ids[keep], children=children)


def build_forest(
    descriptors,
    trees: int = DEFAULT_TREES,
    branching: int = DEFAULT_BRANCHING,
    max_leaf: int = DEFAULT_MAX_LEAF,
    seed: int = 42,
) -> ClusteringForest:
    """Build ``trees`` independent hierarchical clustering trees.

    A node with at least ``max_leaf`` members picks ``branching`` distinct
    members at random as centers, assigns every member to its nearest center and
    recurses; smaller nodes become leaves. Tree t draws from ``seed + t``.
    """
    if trees < 1:
        raise ParameterError("trees must be >= 1")
    if branching < 2:
        raise ParameterError("branching must be >= 2")
    if max_leaf < branching:
        raise ParameterError("max_leaf must be >= branching")
    data = as_matrix(descriptors)
    all_ids = np.arange(len(data))
    roots = [
        _build_node(data, all_ids, branching, max_leaf, np.random.default_rng(seed + t))
        for t in range(trees)
    ]
    return ClusteringForest(data, roots, branching, max_leaf, seed)


def search(
    forest: ClusteringForest,
    query,
    k: int = 1,
    max_checks: int | None = None,
    query_id: int = 0,
) -> tuple[list[MatchCandidate], int]:
    """Approximate ``k``-NN of ``query`` in the forest.

    All tree roots start in one priority queue. Each pop descends toward the
    nearest center, queueing the other children keyed by their center distance,
    and scans the leaf it reaches. Scanning stops once ``max_checks`` distinct
    descriptors have been compared (``None`` or ``>= len(forest)`` is exact).
    Returns the matches and the number of descriptors checked.
    """
    if k < 1:
        raise ParameterError("k must be >= 1")
    n = len(forest)
    if n == 0:
        return [], 0
    if max_checks is None:
        max_checks = n
    if max_checks < k:
        raise ParameterError("max_checks must be >= k")
    q = as_matrix(query)[0]
    if q.shape[0] != forest.data.shape[1]:
        raise ParameterError("query length differs from indexed descriptors")

    checked = np.zeros(n, dtype=bool)
    n_checked = 0
    found_ids, found_d = [], []
    seq = 0
    heap = []
    for root in forest.trees:
        heap.append((0, seq, root))
        seq += 1
    heapq.heapify(heap)

    while heap and n_checked < max_checks:
        _, _, node = heapq.heappop(heap)
        while not node.is_leaf:
            d = hamming_to_rows(q, node.centers)
            order = np.argsort(d, kind="stable")
            for c in order[1:]:
                heapq.heappush(heap, (int(d[c]), seq, node.children[c]))
                seq += 1
            node = node.children[order[0]]
        fresh = node.ids[~checked[node.ids]]
        if len(fresh):
            checked[fresh] = True
            n_checked += len(fresh)
            found_ids.append(fresh)
            found_d.append(hamming_to_rows(q, forest.data[fresh]))

    ids = np.concatenate(found_ids)
    dists = np.concatenate(found_d)
    return _best_k(query_id, ids, dists, k), n_checked


def search_batch(forest: ClusteringForest, queries, k: int = 1, max_checks: int | None = None):
    """:func:`search` for every row; returns (matches per query, total checks)."""
    q = as_matrix(queries)
    results, total = [], 0
    for qi, row in enumerate(q):
        res, used = search(forest, row, k, max_checks, query_id=qi)
        results.append(res)
        total += used
    return results, total


def measure_search_precision(forest: ClusteringForest, queries, k: int = 1, max_checks: int | None = None) -> float:
    """Fraction of the exact k nearest neighbours the forest search returns."""
    q = as_matrix(queries)
    if len(q) == 0:
        raise ParameterError("no queries")
    approx, _ = search_batch(forest, q, k, max_checks)
    exact = brute_force_match(q, forest.data, k)
    hits = sum(
        len({m.target_id for m in a} & {m.target_id for m in e}) for a, e in zip(approx, exact)
    )
    return hits / (k * len(q))
