"""Small constructors for hand-built test fixtures."""

import math

import numpy as np

from personclust.core import Dataset, Track


def unit(*xs) -> np.ndarray:
    v = np.asarray(xs, dtype=float)
    return v / np.linalg.norm(v)


def at_distance(d: float, dim: int = 2, axis: int = 1) -> np.ndarray:
    """Unit vector at cosine distance ``d`` from e_0."""
    c = 1.0 - d
    v = np.zeros(dim)
    v[0] = c
    v[axis] = math.sqrt(max(0.0, 1.0 - c * c))
    return v


def face_track(tid, vec, start=None, length=10, shot=0, **kw) -> Track:
    start = tid * 100 if start is None else start
    return Track(id=tid, frames=((start, start + length - 1),), shot=shot, face=vec, **kw)


def dataset(*tracks, fps=25.0) -> Dataset:
    return Dataset(tuple(tracks), fps=fps)
