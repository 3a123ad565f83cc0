"""Seeded generator of labelled synthetic track datasets.

Noise model
-----------
Anchors of one modality are unit vectors with pairwise cosine distance
``separation`` (``a_k = sqrt(s) u_k + sqrt(1 - s) u_0`` over an orthonormal
set). A track embedding is ``(a + e) / sqrt(1 + sigma^2)`` where ``e`` has
norm exactly ``sigma`` and is drawn isotropically from the orthogonal
complement of all anchors. This gives exact bounds:

* same anchor:       mean ``sigma^2 / (1 + sigma^2)``,  max ``2 sigma^2 / (1 + sigma^2)``
* different anchors: mean ``(s + sigma^2) / (1 + sigma^2)``,  min ``s / (1 + sigma^2)``
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .core import Dataset, Track, as_embedding


def noise_for_max_distance(d_max: float) -> float:
    """Noise norm whose worst-case same-anchor distance is ``d_max``."""
    if not 0 <= d_max < 2:
        raise ValueError("d_max must lie in [0, 2)")
    return math.sqrt(d_max / (2.0 - d_max))


def separation_for_min_distance(d_min: float, sigma: float) -> float:
    """Anchor separation whose worst-case cross-anchor distance is ``d_min``."""
    s = d_min * (1.0 + sigma ** 2)
    if not 0 < s <= 1:
        raise ValueError("infeasible: required anchor separation outside (0, 1]")
    return s


def calibration(sigma: float, separation: float) -> dict[str, float]:
    k = 1.0 + sigma ** 2
    return {
        "intra_mean": sigma ** 2 / k,
        "intra_max": 2 * sigma ** 2 / k,
        "inter_mean": (separation + sigma ** 2) / k,
        "inter_min": separation / k,
    }


class _Modality:
    """Anchors plus the orthonormal basis their noise must avoid."""

    def __init__(self, rng: np.random.Generator, dim: int, anchors: np.ndarray,
                 span: np.ndarray, sigma: float):
        self.rng, self.dim, self.anchors, self.span, self.sigma = rng, dim, anchors, span, sigma

    @classmethod
    def equidistant(cls, rng, dim: int, n: int, separation: float, sigma: float) -> "_Modality":
        need = n + 1 + (1 if sigma > 0 else 0)
        if dim < need:
            raise ValueError(f"infeasible: dimension {dim} too small for {n} anchors")
        Q, _ = np.linalg.qr(rng.standard_normal((dim, n + 1)))
        anchors = math.sqrt(separation) * Q[:, 1:].T + math.sqrt(1.0 - separation) * Q[:, 0]
        return cls(rng, dim, anchors, Q, sigma)

    def sample(self, k: int) -> np.ndarray:
        a = self.anchors[k]
        if self.sigma == 0:
            return as_embedding(a / np.linalg.norm(a))
        g = self.rng.standard_normal(self.dim)
        g -= self.span @ (self.span.T @ g)
        g *= self.sigma / np.linalg.norm(g)
        x = a + g
        return as_embedding(x / np.linalg.norm(x))


@dataclass(frozen=True)
class GeneratorParams:
    n_characters: int = 10
    n_tracks: int = 200
    face_dim: int = 128
    body_dim: int = 256
    voice_dim: int = 128
    face_noise: float = 0.3
    body_noise: float = 0.3
    voice_noise: float = 0.2
    face_separation: float = 1.0
    body_separation: float = 1.0
    voice_separation: float = 1.0
    p_speaking: float = 0.3
    p_back: float = 0.1
    scenes: int = 4
    shots_per_scene: int = 5
    p_concurrent: float = 0.2
    max_concurrent: int = 3
    slot_frames: int = 100
    fps: float = 25.0
    seed: int = 0

    def check(self) -> None:
        for name in ("p_speaking", "p_back", "p_concurrent"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        for name in ("face", "body", "voice"):
            s = getattr(self, f"{name}_separation")
            if not 0 < s <= 1:
                raise ValueError(f"{name}_separation must lie in (0, 1]")
            if getattr(self, f"{name}_noise") < 0:
                raise ValueError(f"{name}_noise must be non-negative")
        if self.n_characters < 1:
            raise ValueError("need at least one character")
        if self.n_characters > self.n_tracks:
            raise ValueError("infeasible: n_characters > n_tracks")
        if self.scenes < 1 or self.shots_per_scene < 1 or self.max_concurrent < 1:
            raise ValueError("scenes, shots_per_scene and max_concurrent must be positive")
        if self.slot_frames < self.max_concurrent:
            raise ValueError("slot_frames too short for max_concurrent speakers")


@dataclass
class Manifest:
    """Planted structure behind a generated dataset."""

    params: dict
    characters: list[str]
    track_character: dict[int, str]
    cannot_links: list[tuple[int, int]]
    backs: list[int]
    speakers: list[int]
    calibration: dict[str, dict[str, float]]
    anchors: dict[str, list] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "params": self.params,
            "characters": self.characters,
            "track_character": [[t, c] for t, c in sorted(self.track_character.items())],
            "cannot_links": [list(p) for p in self.cannot_links],
            "backs": self.backs,
            "speakers": self.speakers,
            "calibration": self.calibration,
            "anchors": self.anchors,
        }


def _names(n: int) -> list[str]:
    width = max(2, len(str(n - 1)))
    return [f"char_{k:0{width}d}" for k in range(n)]


def generate(params: GeneratorParams, *, with_anchors: bool = True) -> tuple[Dataset, Manifest]:
    """Build a dataset with planted identities, shots, scenes and co-occurrences."""
    params.check()
    rng = np.random.default_rng(params.seed)
    n_chars = params.n_characters
    names = _names(n_chars)
    face = _Modality.equidistant(rng, params.face_dim, n_chars, params.face_separation,
                                 params.face_noise)
    voice = _Modality.equidistant(rng, params.voice_dim, n_chars, params.voice_separation,
                                  params.voice_noise)
    # one clothing anchor per character per scene
    body = _Modality.equidistant(rng, params.body_dim, n_chars * params.scenes,
                                 params.body_separation, params.body_noise)

    # slots: groups of tracks sharing one frame range; >1 track means co-occurrence
    sizes, left = [], params.n_tracks
    while left:
        m = 1
        top = min(params.max_concurrent, n_chars, left)
        if top >= 2 and rng.random() < params.p_concurrent:
            m = int(rng.integers(2, top + 1))
        sizes.append(m)
        left -= m

    queue = list(rng.permutation(n_chars))
    n_shots = params.scenes * params.shots_per_scene
    tracks, cannot, backs, speakers = [], [], [], []
    who: dict[int, str] = {}
    tid = 0
    for k, m in enumerate(sizes):
        chars = []
        while queue and len(chars) < m:
            c = int(queue.pop(0))
            if c not in chars:
                chars.append(c)
        if len(chars) < m:
            pool = [c for c in range(n_chars) if c not in chars]
            chars += [int(c) for c in rng.choice(pool, size=m - len(chars), replace=False)]
        shot = k * n_shots // len(sizes)
        scene = shot // params.shots_per_scene
        start = k * params.slot_frames
        frames = ((start, start + params.slot_frames - 1),)
        width = params.slot_frames // m
        slot_ids = []
        for r, c in enumerate(chars):
            is_back = rng.random() < params.p_back
            speaks = rng.random() < params.p_speaking
            kw = dict(id=tid, frames=frames, shot=shot, label=names[c],
                      body=body.sample(c * params.scenes + scene))
            if not is_back:
                kw["face"] = face.sample(c)
            else:
                backs.append(tid)
            if speaks:
                s = start + r * width
                kw["voice"] = voice.sample(c)
                kw["voice_span"] = ((s, s + width - 1),)
                speakers.append(tid)
            tracks.append(Track(**kw))
            who[tid] = names[c]
            slot_ids.append(tid)
            tid += 1
        for x in range(len(slot_ids)):
            for y in range(x + 1, len(slot_ids)):
                cannot.append((slot_ids[x], slot_ids[y]))

    manifest = Manifest(
        params=asdict(params),
        characters=names,
        track_character=who,
        cannot_links=cannot,
        backs=backs,
        speakers=speakers,
        calibration={
            "face": calibration(params.face_noise, params.face_separation),
            "body": calibration(params.body_noise, params.body_separation),
            "voice": calibration(params.voice_noise, params.voice_separation),
        },
        anchors={
            "face": face.anchors.tolist(),
            "body": body.anchors.tolist(),
            "voice": voice.anchors.tolist(),
        } if with_anchors else {},
    )
    return Dataset(tuple(tracks), fps=params.fps), manifest


def bridge_dataset(n_characters: int = 10, tracks_per_mode: int = 4,
                   mode_distance: float = 0.49, face_noise: float = 0.05,
                   voice_noise: float = 0.2, negative_groups: int = 300,
                   dim: int = 64, fps: float = 25.0, seed: int = 0
                   ) -> tuple[Dataset, Manifest]:
    """Characters split into two face modes, each mode with one speaking track.

    Mode anchors of a character sit ``mode_distance`` apart; tracks within a
    mode are at most ``2 sigma^2 / (1 + sigma^2)`` apart. After the face
    tracks come ``negative_groups`` shots in which every character appears
    at once as a speaking back (disjoint voice turns). Those co-occurrences
    supply the different-speaker voice distances the threshold learner
    needs.
    """
    if dim < 2 * n_characters + 2:
        raise ValueError("infeasible: dimension too small")
    rng = np.random.default_rng(seed)
    names = _names(n_characters)
    n = n_characters

    Q, _ = np.linalg.qr(rng.standard_normal((dim, 2 * n)))
    cos = 1.0 - mode_distance
    sin = math.sqrt(max(0.0, 1.0 - cos ** 2))
    modes = np.concatenate([Q[:, :n].T, cos * Q[:, :n].T + sin * Q[:, n:].T])
    face = _Modality(rng, dim, modes, Q, face_noise)
    voice = _Modality.equidistant(rng, dim, n, 1.0, voice_noise)
    body = _Modality.equidistant(rng, dim, n, 1.0, 0.3)

    tracks, speakers, backs, cannot = [], [], [], []
    who: dict[int, str] = {}
    slot = 50
    tid = shot = 0
    for c in range(n):
        for mode in (0, 1):
            for r in range(tracks_per_mode):
                frames = ((tid * slot, tid * slot + slot - 1),)
                kw = dict(id=tid, frames=frames, shot=shot, label=names[c],
                          face=face.sample(mode * n + c))
                if r == 0:
                    kw["voice"] = voice.sample(c)
                    kw["voice_span"] = frames
                    speakers.append(tid)
                tracks.append(Track(**kw))
                who[tid] = names[c]
                tid += 1
            shot += 1

    start = tid * slot + 1000
    shot += 2
    turn = 30
    for g in range(negative_groups):
        g0 = start + g * n * turn
        frames = ((g0, g0 + n * turn - 1),)
        ids = []
        for c in range(n):
            s = g0 + c * turn
            tracks.append(Track(id=tid, frames=frames, shot=shot, label=names[c],
                                body=body.sample(c), voice=voice.sample(c),
                                voice_span=((s, s + turn - 1),)))
            who[tid] = names[c]
            backs.append(tid)
            speakers.append(tid)
            ids.append(tid)
            tid += 1
        cannot += [(ids[x], ids[y]) for x in range(n) for y in range(x + 1, n)]
        shot += 1

    manifest = Manifest(
        params={"n_characters": n, "tracks_per_mode": tracks_per_mode,
                "mode_distance": mode_distance, "face_noise": face_noise,
                "voice_noise": voice_noise, "negative_groups": negative_groups,
                "dim": dim, "seed": seed},
        characters=names,
        track_character=who,
        cannot_links=cannot,
        backs=backs,
        speakers=speakers,
        calibration={"face": calibration(face_noise, 1.0),
                     "voice": calibration(voice_noise, 1.0)},
    )
    return Dataset(tuple(tracks), fps=fps), manifest
