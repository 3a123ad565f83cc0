"""Domain types: tracks, datasets, partitions and the clustering config."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, NamedTuple, Optional, Sequence

import numpy as np

MODALITIES = ("face", "body", "voice")

# Inputs closer than this to unit norm are kept bit-for-bit, so that
# normalising an already-normalised vector is the identity.
_RENORM_TOL = 1e-9
UNIT_NORM_TOL = 1e-6

Interval = tuple[int, int]


# --------------------------------------------------------------------------
# Frame intervals
# --------------------------------------------------------------------------

def as_intervals(pairs: Iterable[Sequence[int]]) -> tuple[Interval, ...]:
    """Convert ``[[start, end], ...]`` (inclusive) to a tuple of int pairs."""
    return tuple((int(s), int(e)) for s, e in pairs)


def intervals_ok(ivs: Sequence[Interval]) -> bool:
    """True when every interval is non-inverted and the list is sorted and disjoint."""
    prev_end = None
    for s, e in ivs:
        if e < s:
            return False
        if prev_end is not None and s <= prev_end:
            return False
        prev_end = e
    return True


def interval_length(ivs: Sequence[Interval]) -> int:
    return sum(e - s + 1 for s, e in ivs)


def intersect_intervals(a: Sequence[Interval], b: Sequence[Interval]) -> list[Interval]:
    out = []
    i = j = 0
    while i < len(a) and j < len(b):
        s = max(a[i][0], b[j][0])
        e = min(a[i][1], b[j][1])
        if s <= e:
            out.append((s, e))
        if a[i][1] < b[j][1]:
            i += 1
        else:
            j += 1
    return out


def intervals_overlap(a: Sequence[Interval], b: Sequence[Interval]) -> bool:
    i = j = 0
    while i < len(a) and j < len(b):
        if max(a[i][0], b[j][0]) <= min(a[i][1], b[j][1]):
            return True
        if a[i][1] < b[j][1]:
            i += 1
        else:
            j += 1
    return False


def union_intervals(groups: Iterable[Sequence[Interval]]) -> list[Interval]:
    """Merge any number of interval lists into one sorted, disjoint list."""
    flat = sorted(iv for g in groups for iv in g)
    out: list[list[int]] = []
    for s, e in flat:
        if out and s <= out[-1][1] + 1:
            out[-1][1] = max(out[-1][1], e)
        else:
            out.append([s, e])
    return [(s, e) for s, e in out]


def interval_median(ivs: Sequence[Interval]) -> float:
    """Median frame index of the frame set described by ``ivs``."""
    n = interval_length(ivs)
    if n == 0:
        raise ValueError("empty frame set has no median")

    def kth(k: int) -> int:
        for s, e in ivs:
            span = e - s + 1
            if k < span:
                return s + k
            k -= span
        raise IndexError(k)

    return (kth((n - 1) // 2) + kth(n // 2)) / 2.0


# --------------------------------------------------------------------------
# Embeddings
# --------------------------------------------------------------------------

def as_embedding(values, *, normalize: bool = True) -> np.ndarray:
    """Return a read-only float64 vector, L2-normalised when ``normalize``.

    Vectors already within 1e-9 of unit norm are left untouched so that
    repeated normalisation is bit-stable.
    """
    v = np.array(values, dtype=np.float64).reshape(-1)
    if normalize:
        n = float(np.linalg.norm(v))
        if n > 0 and abs(n - 1.0) > _RENORM_TOL:
            v = v / n
    v.flags.writeable = False
    return v


def l2_normalize_rows(m: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return m / norms


# --------------------------------------------------------------------------
# Track / Dataset
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Track:
    """One person-track.

    ``frames`` and ``voice_span`` are inclusive ``(start, end)`` intervals.
    Structural invariants are not enforced here; see :func:`validate_dataset`.
    """

    id: int
    frames: tuple[Interval, ...]
    shot: int
    face: Optional[np.ndarray] = None
    body: Optional[np.ndarray] = None
    voice: Optional[np.ndarray] = None
    voice_span: Optional[tuple[Interval, ...]] = None
    label: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "frames", as_intervals(self.frames))
        if self.voice_span is not None:
            object.__setattr__(self, "voice_span", as_intervals(self.voice_span))
        for m in MODALITIES:
            v = getattr(self, m)
            if v is not None and not (isinstance(v, np.ndarray) and not v.flags.writeable):
                object.__setattr__(self, m, as_embedding(v, normalize=False))

    def has(self, modality: str) -> bool:
        return getattr(self, modality) is not None

    @property
    def is_back(self) -> bool:
        """Body visible, face not."""
        return self.face is None and self.body is not None

    @property
    def n_frames(self) -> int:
        return interval_length(self.frames)

    @property
    def median_frame(self) -> float:
        return interval_median(self.frames)

    def replace(self, **changes) -> "Track":
        kw = {f: getattr(self, f) for f in
              ("id", "frames", "shot", "face", "body", "voice", "voice_span", "label")}
        kw.update(changes)
        return Track(**kw)

    def __eq__(self, other):
        if not isinstance(other, Track):
            return NotImplemented
        if (self.id, self.frames, self.shot, self.voice_span, self.label) != (
            other.id, other.frames, other.shot, other.voice_span, other.label
        ):
            return False
        for m in MODALITIES:
            a, b = getattr(self, m), getattr(other, m)
            if (a is None) != (b is None):
                return False
            if a is not None and not np.array_equal(a, b):
                return False
        return True

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Dataset:
    """Ordered collection of tracks from one or more concatenated videos."""

    tracks: tuple[Track, ...]
    fps: float = 25.0
    program_set: Optional[tuple[Optional[str], ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "tracks", tuple(self.tracks))
        if self.program_set is not None:
            object.__setattr__(self, "program_set", tuple(self.program_set))

    def __len__(self):
        return len(self.tracks)

    def __iter__(self):
        return iter(self.tracks)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.fps == other.fps and self.program_set == other.program_set
                and self.tracks == other.tracks)

    __hash__ = None

    @cached_property
    def by_id(self) -> dict[int, Track]:
        return {t.id: t for t in self.tracks}

    @property
    def ids(self) -> list[int]:
        return [t.id for t in self.tracks]

    def ids_with(self, *modalities: str) -> list[int]:
        return [t.id for t in self.tracks if all(t.has(m) for m in modalities)]

    def matrix(self, modality: str, ids: Sequence[int]) -> np.ndarray:
        """Stack the ``modality`` embeddings of ``ids`` into an (n, d) array."""
        if len(ids) == 0:
            return np.zeros((0, self.dim(modality) or 0))
        return np.stack([getattr(self.by_id[i], modality) for i in ids])

    def dim(self, modality: str) -> Optional[int]:
        for t in self.tracks:
            v = getattr(t, modality)
            if v is not None:
                return v.shape[0]
        return None

    @property
    def labels(self) -> dict[int, Optional[str]]:
        return {t.id: t.label for t in self.tracks}

    @property
    def last_frame(self) -> int:
        return max((t.frames[-1][1] for t in self.tracks if t.frames), default=-1)

    def with_tracks(self, tracks: Iterable[Track]) -> "Dataset":
        return Dataset(tuple(tracks), fps=self.fps, program_set=self.program_set)


class Violation(NamedTuple):
    track_id: Optional[int]
    rule: str

    def __str__(self):
        where = "dataset" if self.track_id is None else f"track {self.track_id}"
        return f"{where}: {self.rule}"


def validate_dataset(dataset: Dataset) -> list[Violation]:
    """Check every Track/Dataset invariant; returns an empty list when valid."""
    out: list[Violation] = []
    seen: set[int] = set()
    dims: dict[str, int] = {}
    if not (dataset.fps > 0 and math.isfinite(dataset.fps)):
        out.append(Violation(None, "fps must be positive"))

    for t in dataset.tracks:
        if t.id in seen:
            out.append(Violation(t.id, "duplicate id"))
        seen.add(t.id)
        if t.face is None and t.body is None:
            out.append(Violation(t.id, "no visual modality"))
        if not t.frames:
            out.append(Violation(t.id, "empty frames"))
        elif not intervals_ok(t.frames):
            out.append(Violation(t.id, "frames not sorted disjoint intervals"))
        if t.voice is not None and t.voice_span is None:
            out.append(Violation(t.id, "voice without voice_span"))
        if t.voice_span is not None and not intervals_ok(t.voice_span):
            out.append(Violation(t.id, "voice_span not sorted disjoint intervals"))
        for m in MODALITIES:
            v = getattr(t, m)
            if v is None:
                continue
            if not np.all(np.isfinite(v)):
                out.append(Violation(t.id, f"non-finite {m} embedding"))
                continue
            d = dims.setdefault(m, v.shape[0])
            if v.shape[0] != d:
                out.append(Violation(t.id, f"{m} dimension {v.shape[0]} != {d}"))
            if abs(float(np.linalg.norm(v)) - 1.0) > UNIT_NORM_TOL:
                out.append(Violation(t.id, f"{m} embedding not unit norm"))

    # shots must follow video order
    keyed = sorted(
        (t.median_frame, t.shot, t.id)
        for t in dataset.tracks if t.frames and intervals_ok(t.frames)
    )
    max_shot = None
    for _, shot, tid in keyed:
        if max_shot is not None and shot < max_shot:
            out.append(Violation(tid, "shot index decreases in video order"))
        max_shot = shot if max_shot is None else max(max_shot, shot)
    return out


def check_dataset(X) -> Dataset:
    """Coerce ``X`` to a :class:`Dataset` and raise ``ValueError`` if invalid."""
    if isinstance(X, Dataset):
        ds = X
    else:
        tracks = list(X)
        if not all(isinstance(t, Track) for t in tracks):
            raise TypeError("expected a Dataset or an iterable of Track")
        ds = Dataset(tuple(tracks))
    problems = validate_dataset(ds)
    if problems:
        shown = "; ".join(str(p) for p in problems[:5])
        more = f" (+{len(problems) - 5} more)" if len(problems) > 5 else ""
        raise ValueError(f"invalid dataset: {shown}{more}")
    return ds


# --------------------------------------------------------------------------
# Partition
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Partition:
    """Disjoint assignment of track ids to cluster ids.

    Centroids are not stored; they are derived from the raw member
    embeddings with :func:`centroids` so they can never go stale.
    """

    assignment: Mapping[int, int]
    level: int = 0
    tag: str = ""

    __hash__ = None

    @classmethod
    def singletons(cls, ids: Iterable[int], tag: str = "stage1") -> "Partition":
        return cls({i: i for i in ids}, level=0, tag=tag)

    @classmethod
    def from_members(cls, members: Mapping[int, Iterable[int]], level: int = 0,
                     tag: str = "") -> "Partition":
        assignment = {}
        for cid, ms in members.items():
            for m in ms:
                if m in assignment:
                    raise ValueError(f"track {m} appears in two clusters")
                assignment[m] = cid
        return cls(assignment, level, tag)

    @cached_property
    def clusters(self) -> dict[int, tuple[int, ...]]:
        """cluster id -> sorted member ids, ordered by cluster id."""
        tmp: dict[int, list[int]] = {}
        for t, c in self.assignment.items():
            tmp.setdefault(c, []).append(t)
        return {c: tuple(sorted(tmp[c])) for c in sorted(tmp)}

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    @property
    def sizes(self) -> dict[int, int]:
        return {c: len(m) for c, m in self.clusters.items()}

    def relabel(self, level: int, tag: str) -> "Partition":
        return Partition(dict(self.assignment), level, tag)


def centroid_matrix(partition: Partition, dataset: Dataset, modality: str
                    ) -> tuple[list[int], np.ndarray]:
    """Per-cluster mean of member ``modality`` embeddings, re-L2-normalised.

    Clusters with no member carrying the modality are omitted. Returns the
    cluster ids (ascending) and the (k, d) centroid matrix.
    """
    by_id = dataset.by_id
    cids, rows = [], []
    for cid, members in partition.clusters.items():
        vecs = [getattr(by_id[m], modality) for m in members]
        vecs = [v for v in vecs if v is not None]
        if not vecs:
            continue
        cids.append(cid)
        rows.append(np.mean(np.stack(vecs), axis=0))
    if not rows:
        return [], np.zeros((0, dataset.dim(modality) or 0))
    return cids, l2_normalize_rows(np.stack(rows))


def centroids(partition: Partition, dataset: Dataset, modality: str) -> dict[int, np.ndarray]:
    cids, m = centroid_matrix(partition, dataset, modality)
    return {c: m[k] for k, c in enumerate(cids)}


def check_partition(partition: Partition, dataset: Dataset, tol: float = 1e-9) -> list[str]:
    """Disjoint-cover and centroid-mean checks; returns a list of problems."""
    problems = []
    by_id = dataset.by_id
    covered = [m for ms in partition.clusters.values() for m in ms]
    if len(covered) != len(set(covered)):
        problems.append("clusters overlap")
    if set(covered) != set(partition.assignment):
        problems.append("clusters do not cover the assignment")
    unknown = set(partition.assignment) - set(by_id)
    if unknown:
        problems.append(f"unknown track ids {sorted(unknown)[:5]}")
        return problems
    for modality in MODALITIES:
        for cid, c in centroids(partition, dataset, modality).items():
            acc = np.zeros_like(c)
            n = 0
            for m in partition.clusters[cid]:
                v = getattr(by_id[m], modality)
                if v is not None:
                    acc = acc + v
                    n += 1
            ref = acc / n
            nrm = np.linalg.norm(ref)
            if nrm > 0:
                ref = ref / nrm
            if not np.allclose(c, ref, atol=tol, rtol=0):
                problems.append(f"cluster {cid} {modality} centroid is not the member mean")
    return problems


# --------------------------------------------------------------------------
# Config
# --------------------------------------------------------------------------

def parse_protocol(protocol: str) -> Optional[int]:
    """``"at"`` -> None, ``"oc:<C>"`` -> C."""
    p = protocol.strip().lower()
    if p == "at":
        return None
    if p.startswith("oc:"):
        try:
            c = int(p[3:])
        except ValueError:
            raise ValueError(f"bad protocol {protocol!r}") from None
        if c < 1:
            raise ValueError("oc protocol needs a positive cluster count")
        return c
    raise ValueError(f"bad protocol {protocol!r}; expected 'at' or 'oc:<C>'")


@dataclass(frozen=True)
class ClusteringConfig:
    tau_f_tight: float = 0.48
    delta: float = 0.025
    tau_v_loose: Optional[float] = None
    rho: float = 0.9
    tau_b_back: float = 0.4
    shot_window: int = 1
    voice_overlap_max: float = 0.20
    voice_min_seconds: float = 1.0
    voice_percentile: float = 99.9
    protocol: str = "at"

    def __post_init__(self):
        for key in ("tau_f_tight", "tau_b_back"):
            _check_distance(key, getattr(self, key))
        if self.tau_v_loose is not None:
            _check_distance("tau_v_loose", self.tau_v_loose)
        if not (math.isfinite(self.delta) and self.delta >= 0):
            raise ValueError("delta: must be a non-negative real")
        _check_distance("tau_f_loose", self.tau_f_loose)
        if not (0 < self.rho <= 1):
            raise ValueError("rho: ratio threshold must lie in (0, 1]")
        if isinstance(self.shot_window, bool) or not isinstance(self.shot_window, int) \
                or self.shot_window < 0:
            raise ValueError("shot_window: must be a non-negative integer")
        if not (0 <= self.voice_overlap_max <= 1):
            raise ValueError("voice_overlap_max: must lie in [0, 1]")
        if not (self.voice_min_seconds > 0 and math.isfinite(self.voice_min_seconds)):
            raise ValueError("voice_min_seconds: must be positive")
        if not (0 < self.voice_percentile < 100):
            raise ValueError("voice_percentile: must lie in (0, 100)")
        parse_protocol(self.protocol)

    @property
    def tau_f_loose(self) -> float:
        return self.tau_f_tight + self.delta

    @property
    def oracle_clusters(self) -> Optional[int]:
        return parse_protocol(self.protocol)

    def replace(self, **changes) -> "ClusteringConfig":
        kw = self.to_dict()
        kw.update(changes)
        return ClusteringConfig(**kw)

    def to_dict(self) -> dict:
        return {
            "tau_f_tight": self.tau_f_tight,
            "delta": self.delta,
            "tau_v_loose": self.tau_v_loose,
            "rho": self.rho,
            "tau_b_back": self.tau_b_back,
            "shot_window": self.shot_window,
            "voice_overlap_max": self.voice_overlap_max,
            "voice_min_seconds": self.voice_min_seconds,
            "voice_percentile": self.voice_percentile,
            "protocol": self.protocol,
        }


def _check_distance(key: str, value: float) -> None:
    if not (isinstance(value, (int, float)) and 0.0 <= value <= 2.0):
        raise ValueError(f"{key}: distance threshold must lie in [0, 2], got {value!r}")
