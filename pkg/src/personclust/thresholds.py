"""Voice-track filtering and per-dataset learning of the voice bridge threshold."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Iterable, Iterator, NamedTuple, Optional, Sequence, Union

import numpy as np

from .core import Dataset, Interval, Partition, intersect_intervals, interval_length
from .distance import pairwise_distances

log = logging.getLogger(__name__)


class InsufficientNegatives(ValueError):
    pass


def _multi_covered(spans: Iterable[Sequence[Interval]]) -> list[Interval]:
    """Frames covered by at least two of the given (per-track disjoint) spans."""
    events = []
    for span in spans:
        for s, e in span:
            events.append((s, 1))
            events.append((e + 1, -1))
    events.sort()
    out, depth, start = [], 0, None
    for pos, step in events:
        before = depth
        depth += step
        if before < 2 <= depth:
            start = pos
        elif before >= 2 > depth:
            if pos - 1 >= start:
                if out and out[-1][1] >= start - 1:
                    out[-1] = (out[-1][0], pos - 1)
                else:
                    out.append((start, pos - 1))
    return out


def filter_voice_tracks(dataset: Dataset, overlap_max: float = 0.20,
                        min_seconds: float = 1.0) -> set[int]:
    """Ids of tracks whose voice is usable for clustering.

    A voice is dropped when it is shorter than ``min_seconds`` or when more
    than ``overlap_max`` of its frames are shared with another track's voice.
    """
    if dataset.fps <= 0:
        raise ValueError("fps must be positive")
    speaking = [t for t in dataset.tracks if t.voice is not None and t.voice_span]
    multi = _multi_covered(t.voice_span for t in speaking)
    min_frames = min_seconds * dataset.fps
    usable = set()
    for t in speaking:
        n = interval_length(t.voice_span)
        if n < min_frames:
            continue
        shared = interval_length(intersect_intervals(t.voice_span, multi))
        if shared / n <= overlap_max:
            usable.add(t.id)
    return usable


def mask_voices(dataset: Dataset, usable: Iterable[int]) -> Dataset:
    """Drop voice embedding and span from every track not in ``usable``."""
    usable = set(usable)
    tracks = [
        t if t.voice is None or t.id in usable else t.replace(voice=None, voice_span=None)
        for t in dataset.tracks
    ]
    return dataset.with_tracks(tracks)


class NegativeDistanceSample(NamedTuple):
    pair: tuple[int, int]
    d_v: float
    source: str  # "cannot-link" | "cross-cluster"


@dataclass(frozen=True, eq=False)
class NegativeSamples:
    """Voice distances between track pairs assumed to be different people.

    Stored column-wise; iterate to get :class:`NegativeDistanceSample` rows.
    """

    pairs: np.ndarray          # (n, 2) int, i < j, sorted
    distances: np.ndarray      # (n,)
    from_cannot_link: np.ndarray  # (n,) bool

    def __len__(self):
        return len(self.distances)

    def __iter__(self) -> Iterator[NegativeDistanceSample]:
        for (i, j), d, c in zip(self.pairs.tolist(), self.distances.tolist(),
                                self.from_cannot_link.tolist()):
            yield NegativeDistanceSample((i, j), d, "cannot-link" if c else "cross-cluster")


def collect_voice_negatives(partition: Partition, cannot, dataset: Dataset,
                            n_jobs: Optional[int] = None) -> NegativeSamples:
    """Negative voice distances from cannot-links and Stage-1 cross-cluster pairs.

    ``dataset`` is expected to carry only usable voices (see
    :func:`mask_voices`). Pairs found by both sources are kept once, tagged
    as cannot-link.
    """
    by_id = dataset.by_id
    cl_pairs = sorted(
        (i, j) for i, j in cannot
        if by_id[i].voice is not None and by_id[j].voice is not None
    )
    cl_set = set(cl_pairs)

    speakers = sorted(t for t in partition.assignment if by_id[t].voice is not None)
    rows: dict[tuple[int, int], float] = {}
    if len(speakers) > 1:
        labels = np.array([partition.assignment[t] for t in speakers])
        V = dataset.matrix("voice", speakers)
        D = pairwise_distances(V, n_jobs=n_jobs)
        iu, ju = np.triu_indices(len(speakers), k=1)
        cross = labels[iu] != labels[ju]
        ids = np.array(speakers)
        for a, b, d in zip(ids[iu[cross]].tolist(), ids[ju[cross]].tolist(),
                           D[iu[cross], ju[cross]].tolist()):
            rows[(a, b)] = d
    for i, j in cl_pairs:
        if (i, j) not in rows:
            rows[(i, j)] = 1.0 - float(by_id[i].voice @ by_id[j].voice)

    keys = sorted(rows)
    pairs = np.array(keys, dtype=np.int64).reshape(-1, 2)
    dist = np.array([rows[k] for k in keys], dtype=np.float64)
    flag = np.array([k in cl_set for k in keys], dtype=bool)
    return NegativeSamples(pairs, dist, flag)


def learn_voice_threshold(samples: Union[NegativeSamples, Sequence[float], np.ndarray],
                          percentile: float = 99.9) -> float:
    """Threshold that exceeds only ``100 - percentile`` % of the negatives.

    This is the ``(100 - percentile)``-th percentile of the negative
    distances, linearly interpolated between order statistics.
    """
    d = samples.distances if isinstance(samples, NegativeSamples) else np.asarray(samples, float)
    if d.size == 0:
        raise InsufficientNegatives("insufficient negatives")
    if not (0 < percentile < 100):
        raise ValueError("percentile must lie in (0, 100)")
    return float(np.percentile(d, 100.0 - percentile, method="linear"))


@lru_cache(maxsize=None)
def voice_presets() -> dict[str, float]:
    """Named ``tau_v_loose`` values learnt on reference program sets."""
    text = resources.files("personclust").joinpath("data/voice_presets.json").read_text()
    return {k: float(v["tau_v_loose"]) for k, v in json.loads(text)["presets"].items()}
