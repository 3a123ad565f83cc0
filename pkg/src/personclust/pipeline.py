"""Three-stage person clustering: face NN agglomeration, face+voice bridging,
and back assignment by body appearance, plus oracle-count reduction."""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Optional

import numpy as np

from .core import (
    ClusteringConfig,
    Dataset,
    Partition,
    centroid_matrix,
    check_dataset,
)
from .distance import BLOCK, first_neighbors, knn, ratio_distinctive
from .thresholds import (
    collect_voice_negatives,
    filter_voice_tracks,
    learn_voice_threshold,
    mask_voices,
)
from .unionfind import ConstrainedUnionFind

log = logging.getLogger(__name__)


class CannotSplit(ValueError):
    pass


# --------------------------------------------------------------------------
# Cannot-link constraints
# --------------------------------------------------------------------------

class CannotLinkSet:
    """Unordered pairs of tracks that share at least one frame."""

    def __init__(self, pairs: Iterable[tuple[int, int]] = ()):
        self._pairs = frozenset((min(a, b), max(a, b)) for a, b in pairs if a != b)
        nb: dict[int, set[int]] = {}
        for a, b in self._pairs:
            nb.setdefault(a, set()).add(b)
            nb.setdefault(b, set()).add(a)
        self._nb = {k: frozenset(v) for k, v in nb.items()}

    def __contains__(self, pair) -> bool:
        a, b = pair
        return (min(a, b), max(a, b)) in self._pairs

    def __iter__(self) -> Iterator[tuple[int, int]]:
        return iter(sorted(self._pairs))

    def __len__(self):
        return len(self._pairs)

    def __eq__(self, other):
        return isinstance(other, CannotLinkSet) and self._pairs == other._pairs

    __hash__ = None

    def of(self, track: int) -> frozenset:
        return self._nb.get(track, frozenset())

    def between_clusters(self, partition: Partition) -> dict[int, set[int]]:
        """cluster id -> clusters holding a track cannot-linked with one of its members."""
        assign = partition.assignment
        out: dict[int, set[int]] = {c: set() for c in partition.clusters}
        for a, b in self._pairs:
            ca, cb = assign.get(a), assign.get(b)
            if ca is None or cb is None:
                continue
            out[ca].add(cb)
            out[cb].add(ca)
        return out

    def violations(self, partition: Partition) -> list[tuple[int, int]]:
        assign = partition.assignment
        return [(a, b) for a, b in sorted(self._pairs)
                if a in assign and b in assign and assign[a] == assign[b]]


def build_cannot_links(dataset: Dataset) -> CannotLinkSet:
    """All pairs of tracks whose frame sets intersect (interval sweep)."""
    ivs = sorted((s, e, t.id) for t in dataset.tracks for s, e in t.frames)
    active: list[tuple[int, int]] = []  # heap of (end, track)
    pairs = set()
    for s, e, tid in ivs:
        while active and active[0][0] < s:
            heapq.heappop(active)
        for _, other in active:
            if other != tid:
                pairs.add((min(tid, other), max(tid, other)))
        heapq.heappush(active, (e, tid))
    return CannotLinkSet(pairs)


# --------------------------------------------------------------------------
# Result records
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Bridge:
    clusters: tuple[int, int]
    tracks: tuple[int, int]
    d_face: float
    d_voice: float


@dataclass(frozen=True)
class BackAssignment:
    track: int
    cluster: int
    neighbor: int
    d1: float
    d2: float  # inf when the candidate pool held a single body


@dataclass(frozen=True)
class PipelineResult:
    final: Partition
    history: tuple[Partition, ...]
    bridges: tuple[Bridge, ...] = ()
    backs: tuple[BackAssignment, ...] = ()
    unassigned: Mapping[int, str] = field(default_factory=dict)
    tau_v_loose: Optional[float] = None
    tau_v_learned: bool = False
    n_voice_negatives: int = 0
    usable_voice: tuple[int, ...] = ()
    n_cannot_links: int = 0
    config: ClusteringConfig = field(default_factory=ClusteringConfig)

    __hash__ = None

    def stage(self, tag: str) -> Optional[Partition]:
        """Last partition produced by ``tag`` (stage1/stage2/stage3/oracle)."""
        found = [p for p in self.history if p.tag == tag]
        return found[-1] if found else None

    @property
    def cluster_counts(self) -> dict[str, int]:
        out = {}
        for p in self.history:
            out[p.tag] = p.n_clusters
        return out


# --------------------------------------------------------------------------
# Stage 1
# --------------------------------------------------------------------------

def nn_edges(cids: list[int], C: np.ndarray, tau: float, n_jobs: Optional[int] = None
             ) -> list[tuple[float, int, int]]:
    """Candidate merges between clusters from first-NN relations.

    Clusters i and j are joined when one is the other's first NN or both
    share the same first NN, and both have their first NN within ``tau``.
    Returns ``(distance, lower id, higher id)`` sorted ascending.
    """
    nn, nd = first_neighbors(C, n_jobs=n_jobs)
    valid = (nn >= 0) & (nd <= tau)
    pairs = set()
    by_nn: dict[int, list[int]] = {}
    for i in np.flatnonzero(valid).tolist():
        j = int(nn[i])
        pairs.add((min(i, j), max(i, j)))
        by_nn.setdefault(j, []).append(i)
    for group in by_nn.values():
        for x in range(len(group)):
            for y in range(x + 1, len(group)):
                a, b = group[x], group[y]
                pairs.add((min(a, b), max(a, b)))
    edges = [(1.0 - float(C[a] @ C[b]), cids[a], cids[b]) for a, b in pairs]
    edges.sort()
    return edges


def stage1_step(partition: Partition, dataset: Dataset, cannot: CannotLinkSet,
                tau: float, n_jobs: Optional[int] = None) -> Partition:
    """One round of constrained first-NN agglomeration over face centroids.

    Edges are unioned in ascending distance order; unions that would place
    two cannot-linked clusters together are refused. Returns the next
    partition (same clusters when nothing merged).
    """
    cids, C = centroid_matrix(partition, dataset, "face")
    if len(cids) < 2:
        return partition.relabel(partition.level + 1, "stage1")
    edges = nn_edges(cids, C, tau, n_jobs)
    uf = ConstrainedUnionFind(partition.clusters, cannot.between_clusters(partition))
    for _, a, b in edges:
        uf.union(a, b)
    assignment = {t: uf.find(c) for t, c in partition.assignment.items()}
    return Partition(assignment, partition.level + 1, "stage1")


def stage1_cluster(dataset: Dataset, config: ClusteringConfig, cannot: CannotLinkSet,
                   *, history: Optional[list] = None, n_jobs: Optional[int] = None
                   ) -> Partition:
    """Agglomerate face tracks until a round produces no merge.

    Tracks without a face embedding are left out. When ``history`` is a
    list, every partition (starting with the singletons) is appended to it.
    """
    p = Partition.singletons(dataset.ids_with("face"))
    if history is not None:
        history.append(p)
    while True:
        nxt = stage1_step(p, dataset, cannot, config.tau_f_tight, n_jobs)
        if nxt.n_clusters == p.n_clusters:
            return p
        log.debug("stage1 level %d: %d -> %d clusters", nxt.level, p.n_clusters, nxt.n_clusters)
        p = nxt
        if history is not None:
            history.append(p)


# --------------------------------------------------------------------------
# Stage 2
# --------------------------------------------------------------------------

def _bridge_candidates(ids: np.ndarray, labels: np.ndarray, F: np.ndarray, V: np.ndarray,
                       tau_f: float, tau_v: float) -> dict[tuple[int, int], tuple]:
    best: dict[tuple[int, int], tuple] = {}
    n = len(ids)
    for s in range(0, n, BLOCK):
        rows = np.arange(s, min(s + BLOCK, n))
        df = 1.0 - F[rows] @ F.T
        dv = 1.0 - V[rows] @ V.T
        ok = (df < tau_f) & (dv < tau_v) & (labels[rows][:, None] != labels[None, :])
        ok &= rows[:, None] < np.arange(n)[None, :]
        for r, c in zip(*np.nonzero(ok)):
            i, j = rows[r], c
            ca, cb = int(labels[i]), int(labels[j])
            key = (min(ca, cb), max(ca, cb))
            ti, tj = int(ids[i]), int(ids[j])
            tracks = (ti, tj) if labels[i] == key[0] else (tj, ti)
            d_f, d_v = float(df[r, c]), float(dv[r, c])
            cand = (d_f + d_v, tracks, d_f, d_v)
            if key not in best or cand[:2] < best[key][:2]:
                best[key] = cand
    return best


def stage2_bridge(partition: Partition, dataset: Dataset, config: ClusteringConfig,
                  cannot: CannotLinkSet, tau_v_loose: Optional[float] = None
                  ) -> tuple[Partition, list[Bridge]]:
    """Merge clusters whose member tracks agree on identity by face and voice.

    A pair of clusters is bridged when some cross-cluster pair of speaking
    face-tracks has face distance below ``tau_f_loose`` and voice distance
    below ``tau_v_loose``. Bridges are applied in ascending ``d_f + d_v``
    order, skipping any that would join cannot-linked clusters.
    """
    tau_v = config.tau_v_loose if tau_v_loose is None else tau_v_loose
    if tau_v is None:
        raise ValueError("voice threshold unavailable")
    by_id = dataset.by_id
    speakers = sorted(t for t in partition.assignment
                      if by_id[t].face is not None and by_id[t].voice is not None)
    nxt_level = partition.level + 1
    if len(speakers) < 2:
        return partition.relabel(nxt_level, "stage2"), []

    ids = np.array(speakers)
    labels = np.array([partition.assignment[t] for t in speakers])
    best = _bridge_candidates(ids, labels, dataset.matrix("face", speakers),
                              dataset.matrix("voice", speakers),
                              config.tau_f_loose, tau_v)
    order = sorted(best.items(), key=lambda kv: (kv[1][0], kv[0]))
    uf = ConstrainedUnionFind(partition.clusters, cannot.between_clusters(partition))
    bridges = []
    for (ca, cb), (_, tracks, d_f, d_v) in order:
        if uf.union(ca, cb):
            bridges.append(Bridge((ca, cb), tracks, d_f, d_v))
    assignment = {t: uf.find(c) for t, c in partition.assignment.items()}
    return Partition(assignment, nxt_level, "stage2"), bridges


# --------------------------------------------------------------------------
# Stage 3
# --------------------------------------------------------------------------

def stage3_assign_backs(partition: Partition, dataset: Dataset, config: ClusteringConfig,
                        cannot: Optional[CannotLinkSet] = None
                        ) -> tuple[Partition, list[BackAssignment], dict[int, str]]:
    """Attach face-less tracks to the cluster of their nearest body nearby.

    Candidates are clustered bodies within ``shot_window`` shots. A back is
    left out when no candidate exists, its first/second-NN ratio fails, or
    its nearest body is farther than ``tau_b_back``. Gated backs are applied
    in ascending ``d1`` order; an assignment that would put the back with a
    track it co-occurs with is refused. The number of clusters is unchanged.
    """
    by_id = dataset.by_id
    assign = partition.assignment
    backs = [t for t in dataset.tracks
             if t.face is None and t.body is not None and t.id not in assign]

    by_shot: dict[int, list[int]] = {}
    for tid in sorted(assign):
        t = by_id[tid]
        if t.body is not None:
            by_shot.setdefault(t.shot, []).append(tid)

    unassigned: dict[int, str] = {}
    tentative = []
    w = config.shot_window
    for b in sorted(backs, key=lambda t: t.id):
        pool = sorted(i for s in range(b.shot - w, b.shot + w + 1) for i in by_shot.get(s, ()))
        if not pool:
            unassigned[b.id] = "empty_pool"
            continue
        nl = knn(b.id, b.body, pool, dataset.matrix("body", pool), k=2)
        d1 = nl.distances[0]
        d2 = nl.distances[1] if len(nl) > 1 else math.inf
        if not ratio_distinctive(d1, d2, config.rho):
            unassigned[b.id] = "non_distinctive"
        elif d1 > config.tau_b_back:
            unassigned[b.id] = "too_far"
        else:
            tentative.append((d1, b.id, nl.ids[0], d2))

    members = {c: set(ms) for c, ms in partition.clusters.items()}
    new_assign = dict(assign)
    done = []
    for d1, bid, nb, d2 in sorted(tentative):
        cid = assign[nb]
        if cannot is not None and cannot.of(bid) & members[cid]:
            unassigned[bid] = "cannot_link"
            continue
        members[cid].add(bid)
        new_assign[bid] = cid
        done.append(BackAssignment(bid, cid, nb, d1, d2))
    done.sort(key=lambda a: a.track)
    unassigned = dict(sorted(unassigned.items()))
    return Partition(new_assign, partition.level + 1, "stage3"), done, unassigned


# --------------------------------------------------------------------------
# Oracle cluster count
# --------------------------------------------------------------------------

def reduce_to_oracle(partition: Partition, n_clusters: int) -> Partition:
    """Merge the smallest cluster into the largest until ``n_clusters`` remain.

    Ties pick the lower cluster id for both roles. Cannot-links are not
    consulted. The largest cluster only grows, so it keeps that role
    throughout and the smallest ones are absorbed in (size, id) order.
    """
    k = partition.n_clusters
    if n_clusters < 1:
        raise ValueError("cluster count must be positive")
    if n_clusters > k:
        raise CannotSplit(f"cannot split clusters: have {k}, asked for {n_clusters}")
    if n_clusters == k:
        return partition.relabel(partition.level + 1, "oracle")
    sizes = partition.sizes
    largest = min(sizes, key=lambda c: (-sizes[c], c))
    rest = sorted((c for c in sizes if c != largest), key=lambda c: (sizes[c], c))
    absorbed = set(rest[: k - n_clusters])
    assignment = {t: (largest if c in absorbed else c) for t, c in partition.assignment.items()}
    return Partition(assignment, partition.level + 1, "oracle")


# --------------------------------------------------------------------------
# Orchestration
# --------------------------------------------------------------------------

def run_pipeline(dataset: Dataset, config: Optional[ClusteringConfig] = None,
                 n_jobs: Optional[int] = None) -> PipelineResult:
    """Voice filtering, Stage 1-3, then the oracle reduction for ``oc:<C>``."""
    config = config or ClusteringConfig()
    dataset = check_dataset(dataset)

    usable = filter_voice_tracks(dataset, config.voice_overlap_max, config.voice_min_seconds)
    ds = mask_voices(dataset, usable)
    cannot = build_cannot_links(ds)

    history: list[Partition] = []
    p1 = stage1_cluster(ds, config, cannot, history=history, n_jobs=n_jobs)

    tau_v, learned, n_neg = config.tau_v_loose, False, 0
    if tau_v is None:
        negatives = collect_voice_negatives(p1, cannot, ds, n_jobs=n_jobs)
        n_neg = len(negatives)
        if n_neg:
            tau_v = learn_voice_threshold(negatives, config.voice_percentile)
            learned = True
            log.info("learnt tau_v_loose=%.4f from %d negatives", tau_v, n_neg)

    if tau_v is None:
        # no cross-cluster speaking pair exists, so no bridge could form
        p2, bridges = p1.relabel(p1.level + 1, "stage2"), []
    else:
        p2, bridges = stage2_bridge(p1, ds, config, cannot, tau_v)
    history.append(p2)

    p3, backs, unassigned = stage3_assign_backs(p2, ds, config, cannot)
    history.append(p3)
    final = p3

    c = config.oracle_clusters
    if c is not None:
        final = reduce_to_oracle(p3, c)
        history.append(final)

    return PipelineResult(
        final=final,
        history=tuple(history),
        bridges=tuple(bridges),
        backs=tuple(backs),
        unassigned=unassigned,
        tau_v_loose=tau_v,
        tau_v_learned=learned,
        n_voice_negatives=n_neg,
        usable_voice=tuple(sorted(usable)),
        n_cannot_links=len(cannot),
        config=config,
    )
