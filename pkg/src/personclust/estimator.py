"""scikit-learn compatible wrapper around :func:`run_pipeline`."""

from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_is_fitted

from .core import ClusteringConfig, Dataset, check_dataset
from .metrics import MetricsReport, evaluate
from .pipeline import PipelineResult, run_pipeline


class PersonClusterer(ClusterMixin, BaseEstimator):
    """Cluster person-tracks by identity from face, body and voice embeddings.

    Parameters
    ----------
    tau_f_tight : float, default=0.48
        Maximum face distance to a first nearest neighbour for a merge.
    delta : float, default=0.025
        Margin added to ``tau_f_tight`` for face+voice bridges.
    tau_v_loose : float or None, default=None
        Voice distance threshold for bridges. Learnt from the data when None.
    rho : float, default=0.9
        First/second-NN ratio above which a back's body match is ignored.
    tau_b_back : float, default=0.4
        Maximum body distance for attaching a back to a cluster.
    shot_window : int, default=1
        Backs are matched against bodies at most this many shots away.
    voice_overlap_max : float, default=0.2
        Voices sharing a larger fraction of frames with another voice are dropped.
    voice_min_seconds : float, default=1.0
        Shorter voices are dropped.
    voice_percentile : float, default=99.9
        Fraction (in percent) of negative voice distances kept above ``tau_v_loose``.
    n_clusters : int or None, default=None
        When set, clusters are reduced to exactly this many (oracle protocol).
    n_jobs : int or None, default=None
        Threads for distance computations; results do not depend on it.

    Attributes
    ----------
    labels_ : ndarray of shape (n_tracks,)
        Cluster id per input track, ``-1`` for backs left unassigned.
    result_ : PipelineResult
        Full per-stage record.
    n_clusters_ : int
    tau_v_loose_ : float or None
        Voice threshold actually used.
    """

    def __init__(self, tau_f_tight=0.48, delta=0.025, tau_v_loose=None, rho=0.9,
                 tau_b_back=0.4, shot_window=1, voice_overlap_max=0.2,
                 voice_min_seconds=1.0, voice_percentile=99.9, n_clusters=None,
                 n_jobs=None):
        self.tau_f_tight = tau_f_tight
        self.delta = delta
        self.tau_v_loose = tau_v_loose
        self.rho = rho
        self.tau_b_back = tau_b_back
        self.shot_window = shot_window
        self.voice_overlap_max = voice_overlap_max
        self.voice_min_seconds = voice_min_seconds
        self.voice_percentile = voice_percentile
        self.n_clusters = n_clusters
        self.n_jobs = n_jobs

    def _config(self) -> ClusteringConfig:
        return ClusteringConfig(
            tau_f_tight=self.tau_f_tight,
            delta=self.delta,
            tau_v_loose=self.tau_v_loose,
            rho=self.rho,
            tau_b_back=self.tau_b_back,
            shot_window=self.shot_window,
            voice_overlap_max=self.voice_overlap_max,
            voice_min_seconds=self.voice_min_seconds,
            voice_percentile=self.voice_percentile,
            protocol="at" if self.n_clusters is None else f"oc:{self.n_clusters}",
        )

    @classmethod
    def from_config(cls, config: ClusteringConfig, n_jobs: Optional[int] = None):
        params = config.to_dict()
        params.pop("protocol")
        return cls(**params, n_clusters=config.oracle_clusters, n_jobs=n_jobs)

    def fit(self, X, y=None):
        """Cluster the tracks of ``X`` (a Dataset or an iterable of Track).

        ``y`` is ignored.
        """
        ds = check_dataset(X)
        result = run_pipeline(ds, self._config(), n_jobs=self.n_jobs)
        assign = result.final.assignment
        self.labels_ = np.array([assign.get(t.id, -1) for t in ds.tracks], dtype=np.int64)
        self.result_ = result
        self.n_clusters_ = result.final.n_clusters
        self.tau_v_loose_ = result.tau_v_loose
        return self

    def score(self, X, y=None, weighting: str = "track") -> float:
        """NMI of the fitted clustering against the track labels of ``X``."""
        return self.evaluate(X, weighting).nmi

    def evaluate(self, X, weighting: str = "track") -> MetricsReport:
        check_is_fitted(self, "result_")
        ds = X if isinstance(X, Dataset) else check_dataset(X)
        return evaluate(self.result_.final, ds, weighting)
