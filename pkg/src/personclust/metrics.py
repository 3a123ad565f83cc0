"""Clustering metrics (WCP, NMI, CP/CR), Hungarian assignment and character
co-occurrence."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Mapping, NamedTuple, Optional, Sequence

import numpy as np

from .core import Dataset, Partition, intersect_intervals, interval_length, union_intervals

WEIGHTINGS = ("track", "frame")


# --------------------------------------------------------------------------
# Hungarian assignment
# --------------------------------------------------------------------------

def _solve_square(cost: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Shortest-augmenting-path Hungarian method on an n x n matrix.

    Returns (row -> col matching, row potentials u, col potentials v) with
    ``cost[i, j] - u[i] - v[j] >= 0`` everywhere and ``== 0`` on the matching.
    """
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)   # p[j]: row matched to column j (1-based, 0 = free)
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            upd = free & (cur < minv[1:])
            minv[1:][upd] = cur[upd]
            way[1:][upd] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    row_to_col = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        row_to_col[p[j] - 1] = j - 1
    # potentials as in the usual convention: u[i] + v[j] <= cost[i, j]
    return row_to_col, u[1:], v[1:]


def _lexicographic(tight: np.ndarray, match: np.ndarray, n_rows: int) -> np.ndarray:
    """Lexicographically smallest perfect matching of the tight-edge graph.

    ``match`` is any perfect matching inside ``tight``. For each row in turn,
    the smallest column lying on an alternating cycle through that row is
    swapped in, then the row and column are frozen.
    """
    n = tight.shape[0]
    match = match.copy()
    match_c = np.empty(n, dtype=np.int64)
    match_c[match] = np.arange(n)
    row_free = np.ones(n, dtype=bool)
    col_free = np.ones(n, dtype=bool)
    for i in range(n_rows):
        # columns from which row i is reachable along alternating paths
        nxt = {}
        reach_c = {int(match[i])}
        frontier = [int(match[i])]
        seen_r = {i}
        while frontier:
            new = []
            for c in frontier:
                rows = np.flatnonzero(tight[:, c] & row_free)
                for r in rows.tolist():
                    if r in seen_r or match[r] == c:
                        continue
                    seen_r.add(r)
                    nxt[r] = c
                    mc = int(match[r])
                    if mc not in reach_c:
                        reach_c.add(mc)
                        new.append(mc)
            frontier = new
        cands = [c for c in np.flatnonzero(tight[i] & col_free).tolist() if c in reach_c]
        j = min(cands)
        if j != match[i]:
            r = int(match_c[j])
            match[i] = j
            match_c[j] = i
            while r != i:
                c = nxt[r]
                r_next = int(match_c[c])
                match[r] = c
                match_c[c] = r
                r = r_next
        row_free[i] = False
        col_free[j] = False
    return match


class Assignment(NamedTuple):
    mapping: dict[int, int]
    cost: float


def hungarian(cost, maximize: bool = False, secondary=None) -> Assignment:
    """Optimal injective row -> column assignment of a rectangular matrix.

    ``min(rows, cols)`` pairs are matched. When ``secondary`` (same shape,
    same sense) is given, ties on ``cost`` are settled by its total. Among
    the remaining optima the lexicographically smallest row -> column
    mapping is returned (an unmatched row counts as larger than any column).
    """
    a = np.asarray(cost, dtype=np.float64)
    if a.size == 0:
        return Assignment({}, 0.0)
    if a.ndim != 2:
        raise ValueError("cost must be a 2-D matrix")
    if not np.all(np.isfinite(a)):
        raise ValueError("cost entries must be finite")
    work = -a if maximize else a
    r, c = work.shape
    n = max(r, c)
    pad = float(work.max())
    sq = np.full((n, n), pad)
    sq[:r, :c] = work
    match, u, v = _solve_square(sq)
    scale = max(1.0, float(np.abs(sq).max()))
    tight = (sq - u[:, None] - v[None, :]) <= 1e-9 * scale
    if secondary is not None:
        b = np.asarray(secondary, dtype=np.float64)
        if b.shape != a.shape or not np.all(np.isfinite(b)):
            raise ValueError("secondary must be a finite matrix shaped like cost")
        b = -b if maximize else b
        sq2 = np.zeros((n, n))
        sq2[:r, :c] = b
        # any matching outside the tight graph costs more than every one inside
        big = 2.0 * n * (float(np.abs(sq2).max()) + 1.0)
        sq2 = np.where(tight, sq2, big)
        match, u, v = _solve_square(sq2)
        scale = max(1.0, float(np.abs(sq2).max()))
        tight &= (sq2 - u[:, None] - v[None, :]) <= 1e-9 * scale
    match = _lexicographic(tight, match, n_rows=min(r, n))
    mapping = {i: int(match[i]) for i in range(r) if match[i] < c}
    total = float(sum(a[i, j] for i, j in mapping.items()))
    return Assignment(mapping, total)


# --------------------------------------------------------------------------
# Contingency helpers
# --------------------------------------------------------------------------

def track_weights(dataset: Dataset, weighting: str = "track") -> dict[int, float]:
    if weighting not in WEIGHTINGS:
        raise ValueError(f"weighting must be one of {WEIGHTINGS}")
    if weighting == "track":
        return {t.id: 1.0 for t in dataset.tracks}
    return {t.id: float(t.n_frames) for t in dataset.tracks}


def contingency(partition: Partition, labels: Mapping[int, Optional[str]],
                weights: Optional[Mapping[int, float]] = None
                ) -> tuple[list[str], list[int], np.ndarray]:
    """(characters, cluster ids, weight matrix characters x clusters)."""
    missing = [t for t in partition.assignment if labels.get(t) is None]
    if missing:
        raise ValueError(f"unlabeled track(s) in evaluation set: {sorted(missing)[:5]}")
    chars = sorted({labels[t] for t in partition.assignment})
    cids = list(partition.clusters)
    ci = {c: k for k, c in enumerate(chars)}
    ki = {c: k for k, c in enumerate(cids)}
    W = np.zeros((len(chars), len(cids)))
    for t, c in partition.assignment.items():
        W[ci[labels[t]], ki[c]] += 1.0 if weights is None else weights[t]
    return chars, cids, W


def wcp(partition: Partition, labels, weights=None) -> float:
    """Size-weighted cluster purity."""
    _, _, W = contingency(partition, labels, weights)
    total = W.sum()
    if total == 0:
        return 1.0
    return float(W.max(axis=0).sum() / total)


def _entropy(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def nmi(partition: Partition, labels, weights=None) -> float:
    """``2 I(Y;C) / (H(Y) + H(C))`` in nats.

    Both entropies zero gives 1.0; exactly one zero gives 0.0.
    """
    _, _, W = contingency(partition, labels, weights)
    total = W.sum()
    if total == 0:
        return 1.0
    P = W / total
    py, pc = P.sum(axis=1), P.sum(axis=0)
    hy, hc = _entropy(py), _entropy(pc)
    if hy == 0 and hc == 0:
        return 1.0
    if hy == 0 or hc == 0:
        return 0.0
    nz = P > 0
    if (nz.sum(axis=0) == 1).all() and (nz.sum(axis=1) == 1).all():
        # one-to-one table: I = H(Y) = H(C) exactly, avoid rounding below 1
        return 1.0
    outer = np.outer(py, pc)
    mi = float((P[nz] * np.log(P[nz] / outer[nz])).sum())
    return float(min(1.0, max(0.0, 2.0 * mi / (hy + hc))))


class CharacterRow(NamedTuple):
    character: str
    cluster: Optional[int]
    cp: float
    cr: float


def character_pr(partition: Partition, labels, weights=None
                 ) -> tuple[float, float, list[CharacterRow]]:
    """Character precision/recall after a one-to-one character -> cluster match.

    The match maximises total recall; ties go to the higher total
    precision, which keeps both means independent of cluster ids and
    character names. Characters left without a cluster score zero. Means
    are unweighted over characters.
    """
    chars, cids, W = contingency(partition, labels, weights)
    if not chars:
        return 1.0, 1.0, []
    CR = W / W.sum(axis=1, keepdims=True)
    col_tot = W.sum(axis=0)
    CP = W / col_tot
    match = hungarian(CR, maximize=True, secondary=CP).mapping
    rows = []
    for y, name in enumerate(chars):
        k = match.get(y)
        if k is None:
            rows.append(CharacterRow(name, None, 0.0, 0.0))
        else:
            rows.append(CharacterRow(name, cids[k], float(W[y, k] / col_tot[k]), float(CR[y, k])))
    cp = float(np.mean([r.cp for r in rows]))
    cr = float(np.mean([r.cr for r in rows]))
    return cp, cr, rows


@dataclass(frozen=True)
class MetricsReport:
    wcp: float
    nmi: float
    cp: float
    cr: float
    predicted_clusters: int
    ground_truth_clusters: int
    rows: tuple[CharacterRow, ...] = ()
    weighting: str = "track"

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "weighting": self.weighting,
            "wcp": self.wcp,
            "nmi": self.nmi,
            "cp": self.cp,
            "cr": self.cr,
            "predicted_clusters": self.predicted_clusters,
            "ground_truth_clusters": self.ground_truth_clusters,
            "characters": [
                {"character": r.character, "cluster": r.cluster, "cp": r.cp, "cr": r.cr}
                for r in self.rows
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        rows = tuple(CharacterRow(r["character"], r["cluster"], r["cp"], r["cr"])
                     for r in d.get("characters", []))
        return cls(d["wcp"], d["nmi"], d["cp"], d["cr"], d["predicted_clusters"],
                   d["ground_truth_clusters"], rows, d.get("weighting", "track"))


def evaluate(partition: Partition, dataset: Dataset, weighting: str = "track") -> MetricsReport:
    """All metrics over the tracks present in ``partition``."""
    labels = dataset.labels
    weights = track_weights(dataset, weighting)
    cp, cr, rows = character_pr(partition, labels, weights)
    return MetricsReport(
        wcp=wcp(partition, labels, weights),
        nmi=nmi(partition, labels, weights),
        cp=cp,
        cr=cr,
        predicted_clusters=partition.n_clusters,
        ground_truth_clusters=len({labels[t] for t in partition.assignment}),
        rows=tuple(rows),
        weighting=weighting,
    )


def average_reports(reports: Sequence[MetricsReport]) -> MetricsReport:
    """Unweighted mean over per-episode reports (character rows dropped)."""
    if not reports:
        raise ValueError("no reports to average")
    mean = lambda key: float(np.mean([getattr(r, key) for r in reports]))  # noqa: E731
    return MetricsReport(
        wcp=mean("wcp"), nmi=mean("nmi"), cp=mean("cp"), cr=mean("cr"),
        predicted_clusters=round(mean("predicted_clusters")),
        ground_truth_clusters=round(mean("ground_truth_clusters")),
        rows=(), weighting=reports[0].weighting,
    )


# --------------------------------------------------------------------------
# Co-occurrence
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CoOccurrenceMatrix:
    characters: tuple[str, ...]
    matrix: np.ndarray
    total_frames: int

    def __eq__(self, other):
        return (isinstance(other, CoOccurrenceMatrix) and self.characters == other.characters
                and self.total_frames == other.total_frames
                and np.array_equal(self.matrix, other.matrix))

    __hash__ = None

    def to_dict(self) -> dict:
        return {"version": 1, "characters": list(self.characters),
                "total_frames": self.total_frames, "matrix": self.matrix.tolist()}


def majority_labels(partition: Partition, labels: Mapping[int, Optional[str]]) -> dict[int, str]:
    """cluster id -> most frequent member label (ties: smallest name)."""
    out = {}
    for cid, members in partition.clusters.items():
        counts = Counter(labels[m] for m in members if labels.get(m) is not None)
        if not counts:
            raise ValueError(f"cluster {cid} has no labelled member")
        out[cid] = min(counts, key=lambda k: (-counts[k], k))
    return out


def cooccurrence(dataset: Dataset, characters: Optional[Sequence[str]] = None,
                 partition: Optional[Partition] = None,
                 total_frames: Optional[int] = None) -> CoOccurrenceMatrix:
    """Fraction of all frames in which each pair of characters appears together.

    With ``partition``, each clustered track takes its cluster's majority
    ground-truth label; otherwise ground-truth labels are used directly.
    ``total_frames`` defaults to ``last frame + 1``.
    """
    gt = dataset.labels
    known = sorted({v for v in gt.values() if v is not None})
    if characters is None:
        characters = known
    unknown = [c for c in characters if c not in set(known)]
    if unknown:
        raise ValueError(f"unknown character name(s): {unknown}")
    if total_frames is None:
        total_frames = dataset.last_frame + 1
    if total_frames <= 0:
        raise ValueError("total_frames must be positive")

    if partition is None:
        owner = {t: lab for t, lab in gt.items() if lab is not None}
    else:
        naming = majority_labels(partition, gt)
        owner = {t: naming[c] for t, c in partition.assignment.items()}

    by_id = dataset.by_id
    frames = {c: union_intervals(by_id[t].frames for t, lab in owner.items() if lab == c)
              for c in characters}
    k = len(characters)
    M = np.zeros((k, k))
    for a in range(k):
        for b in range(a, k):
            fa, fb = frames[characters[a]], frames[characters[b]]
            n = interval_length(fa) if a == b else interval_length(intersect_intervals(fa, fb))
            M[a, b] = M[b, a] = n / total_frames
    return CoOccurrenceMatrix(tuple(characters), M, int(total_frames))


def relative_cooccurrence(predicted: CoOccurrenceMatrix, truth: CoOccurrenceMatrix) -> np.ndarray:
    """Entrywise predicted / ground truth, with 0/0 read as 1."""
    if predicted.characters != truth.characters:
        raise ValueError("matrices cover different characters")
    p, g = predicted.matrix, truth.matrix
    out = np.ones_like(p)
    nz = g != 0
    out[nz] = p[nz] / g[nz]
    out[(~nz) & (p != 0)] = math.inf
    return out
