"""Slow, independent reference implementations used as test oracles.

Nothing here imports the package's algorithmic code: frames are expanded
to Python sets, distances are plain dot products, and searches are
exhaustive.
"""

from __future__ import annotations

import itertools
import math
from fractions import Fraction

import numpy as np


def frame_set(intervals):
    return {f for s, e in intervals for f in range(s, e + 1)}


def naive_cannot_links(frames: dict) -> set:
    """Pairs (i < j) of track ids sharing at least one frame."""
    sets = {t: frame_set(iv) for t, iv in frames.items()}
    ids = sorted(sets)
    return {(a, b) for a, b in itertools.combinations(ids, 2) if sets[a] & sets[b]}


def _centroid(vectors):
    acc = np.zeros_like(vectors[0])
    for v in vectors:
        acc = acc + v
    acc = acc / len(vectors)
    return acc / math.sqrt(float(np.dot(acc, acc)))


def naive_stage1(faces: dict, cannot: set, tau: float) -> dict:
    """First-NN agglomeration straight from the adjacency definition.

    Returns track id -> cluster id (cluster id = smallest member id).
    """
    clusters = {t: [t] for t in sorted(faces)}
    while True:
        cids = sorted(clusters)
        n = len(cids)
        if n < 2:
            break
        cent = [_centroid([faces[t] for t in clusters[c]]) for c in cids]
        D = [[1.0 - float(np.dot(cent[i], cent[j])) for j in range(n)] for i in range(n)]
        nn, nd = [], []
        for i in range(n):
            best = None
            for j in range(n):
                if j != i and (best is None or D[i][j] < D[i][best]):
                    best = j
            nn.append(best)
            nd.append(D[i][best])
        edges = []
        for i in range(n):
            for j in range(i + 1, n):
                linked = nn[i] == j or nn[j] == i or nn[i] == nn[j]
                if linked and nd[i] <= tau and nd[j] <= tau:
                    edges.append((D[i][j], cids[i], cids[j]))
        edges.sort()
        comp = {c: {c} for c in cids}          # component -> cluster ids
        owner = {c: c for c in cids}
        merged = False
        for _, a, b in edges:
            ra, rb = owner[a], owner[b]
            if ra == rb:
                continue
            ta = [t for c in comp[ra] for t in clusters[c]]
            tb = [t for c in comp[rb] for t in clusters[c]]
            if any((min(x, y), max(x, y)) in cannot for x in ta for y in tb):
                continue
            keep, drop = min(ra, rb), max(ra, rb)
            comp[keep] |= comp.pop(drop)
            for c in comp[keep]:
                owner[c] = keep
            merged = True
        if not merged:
            break
        new = {}
        for root, members in comp.items():
            tracks = sorted(t for c in members for t in clusters[c])
            new[tracks[0]] = tracks
        clusters = new
    return {t: c for c, ms in clusters.items() for t in ms}


def canonical(assignment: dict) -> set:
    """Partition as a set of frozensets, independent of cluster ids."""
    groups = {}
    for t, c in assignment.items():
        groups.setdefault(c, set()).add(t)
    return {frozenset(g) for g in groups.values()}


def exhaustive_assignment(cost) -> tuple[float, tuple]:
    """Minimum cost over all injective row->column maps of size min(r, c).

    Returns (cost, lexicographically smallest optimal mapping as a row tuple
    with ``c`` marking an unmatched row).
    """
    a = np.asarray(cost, dtype=float)
    r, c = a.shape
    best_cost, best_map = None, None
    k = min(r, c)
    for rows in itertools.combinations(range(r), k):
        for cols in itertools.permutations(range(c), k):
            total = 0.0
            for i, j in zip(rows, cols):
                total += a[i, j]
            mapping = [c] * r
            for i, j in zip(rows, cols):
                mapping[i] = j
            key = tuple(mapping)
            if best_cost is None or total < best_cost or (total == best_cost and key < best_map):
                best_cost, best_map = total, key
    return best_cost, best_map


def order_statistic_percentile(values, q) -> Fraction:
    """Linear-interpolation percentile computed in exact rational arithmetic."""
    xs = sorted(Fraction(v) for v in values)
    h = (len(xs) - 1) * Fraction(q) / 100
    lo = math.floor(h)
    hi = min(lo + 1, len(xs) - 1)
    return xs[lo] + (h - lo) * (xs[hi] - xs[lo])


def contingency_counts(clusters, labels):
    """clusters: list of lists of labels."""
    chars = sorted({lab for cl in clusters for lab in cl})
    return chars, [[Fraction(cl.count(y)) for cl in clusters] for y in chars]
