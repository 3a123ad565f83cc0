import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from personclust.core import ClusteringConfig, Dataset, Partition, Track
from personclust.metrics import nmi
from personclust.pipeline import (
    CannotLinkSet,
    CannotSplit,
    build_cannot_links,
    reduce_to_oracle,
    run_pipeline,
    stage1_cluster,
    stage1_step,
    stage2_bridge,
    stage3_assign_backs,
)
from personclust.synth import GeneratorParams, bridge_dataset, generate

from builders import at_distance, dataset, face_track, unit
from reference import canonical, naive_cannot_links, naive_stage1

NO_LINKS = CannotLinkSet()


def random_instance(seed, n_max=15):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, n_max + 1))
    vecs = rng.standard_normal((n, int(rng.integers(2, 5))))
    vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
    frames = {}
    tracks = []
    for i in range(n):
        s = int(rng.integers(0, 60))
        frames[i] = ((s, s + int(rng.integers(0, 12))),)
        tracks.append(Track(id=i, frames=frames[i], shot=0, face=vecs[i]))
    return Dataset(tuple(tracks)), vecs, frames


class TestCannotLinks:
    def test_overlap(self):
        ds = dataset(face_track(0, unit(1, 0), start=1, length=10),
                     face_track(1, unit(1, 0), start=5, length=4))
        assert list(build_cannot_links(ds)) == [(0, 1)]

    def test_disjoint(self):
        ds = dataset(face_track(0, unit(1, 0), start=1, length=10),
                     face_track(1, unit(1, 0), start=11, length=10))
        assert len(build_cannot_links(ds)) == 0

    def test_three_tracks(self):
        ds = dataset(face_track(0, unit(1, 0), start=1, length=10),
                     face_track(1, unit(1, 0), start=5, length=4),
                     face_track(2, unit(1, 0), start=9, length=4))
        assert list(build_cannot_links(ds)) == [(0, 1), (0, 2)]

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000))
    def test_matches_frame_sets(self, seed):
        ds, _, frames = random_instance(seed)
        assert set(build_cannot_links(ds)) == naive_cannot_links(frames)

    def test_cluster_level_extension(self):
        links = CannotLinkSet([(1, 4)])
        p = Partition({1: 0, 2: 0, 4: 3, 5: 5})
        assert links.between_clusters(p) == {0: {3}, 3: {0}, 5: set()}
        assert links.violations(Partition({1: 0, 4: 0})) == [(1, 4)]


class TestStage1Step:
    def test_merges_close_pair(self):
        ds = dataset(face_track(0, unit(1, 0)), face_track(1, at_distance(0.3)))
        p = stage1_step(Partition.singletons([0, 1]), ds, NO_LINKS, 0.48)
        assert p.n_clusters == 1 and p.level == 1

    def test_threshold_veto(self):
        ds = dataset(face_track(0, unit(1, 0)), face_track(1, at_distance(0.6)))
        p = stage1_step(Partition.singletons([0, 1]), ds, NO_LINKS, 0.48)
        assert p.clusters == {0: (0,), 1: (1,)}

    def test_shared_neighbour_with_cannot_link(self):
        # A=0 and B=1 both have C=2 as first NN; A is closer to C; A and B co-occur
        a = np.array([0.9, math.sqrt(1 - 0.81)])
        b = np.array([0.85, -math.sqrt(1 - 0.85 ** 2)])
        ds = dataset(face_track(0, a, start=0), face_track(1, b, start=5),
                     face_track(2, unit(1, 0), start=100))
        links = build_cannot_links(ds)
        assert (0, 1) in links
        p = stage1_step(Partition.singletons([0, 1, 2]), ds, links, 0.48)
        assert canonical(p.assignment) == {frozenset({0, 2}), frozenset({1})}


class TestStage1Cluster:
    def test_all_far_apart(self):
        ds = dataset(*(face_track(i, np.eye(4)[i]) for i in range(4)))
        assert stage1_cluster(ds, ClusteringConfig(), NO_LINKS).n_clusters == 4

    def test_two_tight_groups(self):
        rng = np.random.default_rng(0)
        tracks = []
        for i in range(10):
            g = i // 5
            v = np.eye(8)[g].copy()
            v[2 + 3 * g: 5 + 3 * g] = 0.05 * rng.standard_normal(3)   # private noise dims
            tracks.append(face_track(i, v / np.linalg.norm(v)))
        ds = dataset(*tracks)
        F = ds.matrix("face", ds.ids)
        D = 1 - F @ F.T
        same = np.equal.outer(np.arange(10) // 5, np.arange(10) // 5)
        assert D[same].max() < 0.1 and D[~same].min() > 0.9
        p = stage1_cluster(ds, ClusteringConfig(), NO_LINKS)
        assert canonical(p.assignment) == {frozenset(range(5)), frozenset(range(5, 10))}

    def test_single_track(self):
        history = []
        p = stage1_cluster(dataset(face_track(0, unit(1, 0))), ClusteringConfig(), NO_LINKS,
                           history=history)
        assert p.n_clusters == 1 and len(history) == 1

    def test_faceless_tracks_withheld(self):
        back = Track(id=5, frames=((900, 910),), shot=0, body=unit(1, 0))
        ds = dataset(face_track(0, unit(1, 0)), back)
        assert 5 not in stage1_cluster(ds, ClusteringConfig(), NO_LINKS).assignment

    @settings(max_examples=80, deadline=None)
    @given(st.integers(0, 100_000), st.floats(0.02, 0.9))
    def test_matches_naive_reference(self, seed, tau):
        ds, vecs, frames = random_instance(seed)
        got = stage1_cluster(ds, ClusteringConfig(tau_f_tight=tau), build_cannot_links(ds))
        want = naive_stage1(dict(enumerate(vecs)), naive_cannot_links(frames), tau)
        assert dict(got.assignment) == want

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 100_000), st.floats(0.02, 0.9), st.floats(0.02, 0.9))
    def test_raising_tau_never_increases_k1(self, seed, t1, t2):
        ds, _, _ = random_instance(seed)
        lo, hi = min(t1, t2), max(t1, t2)
        k = [stage1_cluster(ds, ClusteringConfig(tau_f_tight=t), NO_LINKS).n_clusters
             for t in (lo, hi)]
        assert k[1] <= k[0]


def speaking(tid, face, voice, start=None, **kw):
    t = face_track(tid, face, start=start, length=50, **kw)
    return t.replace(voice=voice, voice_span=t.frames)


class TestStage2:
    def pair(self, d_f, d_v, overlap=False):
        return dataset(speaking(0, unit(1, 0), unit(1, 0), start=0),
                       speaking(1, at_distance(d_f), at_distance(d_v), start=10 if overlap else 100))

    def test_both_inequalities_pass(self):
        ds = self.pair(0.50, 0.10)
        p, bridges = stage2_bridge(Partition({0: 0, 1: 1}), ds,
                                   ClusteringConfig(tau_v_loose=0.31), NO_LINKS)
        assert p.n_clusters == 1 and len(bridges) == 1
        assert bridges[0].tracks == (0, 1) and bridges[0].d_voice == pytest.approx(0.10)

    def test_voice_fails(self):
        ds = self.pair(0.50, 0.40)
        p, bridges = stage2_bridge(Partition({0: 0, 1: 1}), ds,
                                   ClusteringConfig(tau_v_loose=0.31), NO_LINKS)
        assert p.n_clusters == 2 and bridges == []

    def test_face_fails(self):
        ds = self.pair(0.51, 0.05)
        p, _ = stage2_bridge(Partition({0: 0, 1: 1}), ds, ClusteringConfig(tau_v_loose=0.31),
                             NO_LINKS)
        assert p.n_clusters == 2

    def test_cannot_linked_clusters_not_bridged(self):
        ds = self.pair(0.50, 0.10, overlap=True)
        p, bridges = stage2_bridge(Partition({0: 0, 1: 1}), ds,
                                   ClusteringConfig(tau_v_loose=0.31), build_cannot_links(ds))
        assert p.n_clusters == 2 and bridges == []

    def test_no_speakers(self):
        ds = dataset(face_track(0, unit(1, 0)), face_track(1, at_distance(0.5)))
        p, bridges = stage2_bridge(Partition({0: 0, 1: 1}), ds,
                                   ClusteringConfig(tau_v_loose=0.31), NO_LINKS)
        assert p.clusters == {0: (0,), 1: (1,)} and bridges == []

    def test_missing_threshold(self):
        with pytest.raises(ValueError, match="voice threshold unavailable"):
            stage2_bridge(Partition({0: 0, 1: 1}), self.pair(0.5, 0.1), ClusteringConfig(),
                          NO_LINKS)

    def test_criterion_needs_extra_negatives(self):
        # the speaking face-tracks alone give ~5% same-identity negatives,
        # so the learnt threshold falls below nearly every true pair
        ds, _ = bridge_dataset(negative_groups=0)
        result = run_pipeline(ds)
        assert result.stage("stage1").n_clusters == 20
        assert result.stage("stage2").n_clusters > 10
        assert len(result.bridges) <= 2


def body_track(tid, body, shot=0, start=None, face=True):
    start = tid * 100 if start is None else start
    return Track(id=tid, frames=((start, start + 9),), shot=shot, body=body,
                 face=unit(1, 0, 0) if face else None)


class TestStage3:
    def run(self, back, others, window=1, links=None):
        ds = dataset(*others, back)
        p = Partition({t.id: t.id for t in others})
        return stage3_assign_backs(p, ds, ClusteringConfig(shot_window=window), links)

    def test_assigned(self):
        back = body_track(9, unit(1, 0, 0), face=False, start=1000)
        p, backs, unassigned = self.run(back, [body_track(1, at_distance(0.1, 3)),
                                               body_track(2, at_distance(0.8, 3, axis=2))])
        assert p.assignment[9] == 1 and unassigned == {}
        assert backs[0].d1 == pytest.approx(0.1) and backs[0].d2 == pytest.approx(0.8)
        assert p.n_clusters == 2

    def test_too_far(self):
        back = body_track(9, unit(1, 0, 0), face=False, start=1000)
        _, _, unassigned = self.run(back, [body_track(1, at_distance(0.5, 3)),
                                           body_track(2, at_distance(0.9, 3, axis=2))])
        assert unassigned == {9: "too_far"}

    def test_non_distinctive(self):
        back = body_track(9, unit(1, 0, 0), face=False, start=1000)
        _, _, unassigned = self.run(back, [body_track(1, at_distance(0.30, 3)),
                                           body_track(2, at_distance(0.31, 3, axis=2))])
        assert unassigned == {9: "non_distinctive"}

    def test_empty_pool(self):
        back = body_track(9, unit(1, 0, 0), shot=10, face=False, start=1000)
        others = [body_track(1, unit(1, 0, 0), shot=7), body_track(2, unit(1, 0, 0), shot=8)]
        _, _, unassigned = self.run(back, others)
        assert unassigned == {9: "empty_pool"}

    def test_lone_neighbour_passes_ratio(self):
        back = body_track(9, unit(1, 0, 0), face=False, start=1000)
        p, backs, _ = self.run(back, [body_track(1, at_distance(0.2, 3))])
        assert p.assignment[9] == 1 and math.isinf(backs[0].d2)

    def test_cannot_link_refused(self):
        back = body_track(9, unit(1, 0, 0), face=False, start=100)     # overlaps track 1
        others = [body_track(1, at_distance(0.1, 3)), body_track(2, at_distance(0.8, 3, axis=2))]
        ds = dataset(*others, back)
        _, _, unassigned = self.run(back, others, links=build_cannot_links(ds))
        assert unassigned == {9: "cannot_link"}


class TestOracle:
    def sized(self, *sizes):
        assignment, t = {}, 0
        for cid, n in enumerate(sizes):
            for _ in range(n):
                assignment[t] = cid
                t += 1
        return Partition(assignment)

    def test_one_step(self):
        p = reduce_to_oracle(self.sized(10, 3, 1), 2)
        assert sorted(p.sizes.values()) == [3, 11] and p.sizes[0] == 11

    def test_identity(self):
        p = reduce_to_oracle(self.sized(10, 3, 1), 3)
        assert p.sizes == {0: 10, 1: 3, 2: 1} and p.tag == "oracle"

    def test_tie_break(self):
        p = reduce_to_oracle(self.sized(5, 5, 1), 2)
        assert p.sizes == {0: 6, 1: 5}

    def test_cannot_split(self):
        with pytest.raises(CannotSplit, match="cannot split clusters"):
            reduce_to_oracle(self.sized(2, 2), 3)

    def test_incremental_equals_repeated_single_steps(self):
        p = self.sized(7, 1, 4, 2, 2, 9, 1)
        step = p
        for c in range(p.n_clusters - 1, 0, -1):
            step = reduce_to_oracle(step, c)
            assert reduce_to_oracle(p, c).assignment == step.assignment


class TestRunPipeline:
    def test_faces_only_equals_stage1(self):
        ds, _ = generate(GeneratorParams(n_tracks=80, p_back=0, p_speaking=0, seed=2))
        result = run_pipeline(ds)
        p1 = stage1_cluster(ds, ClusteringConfig(), build_cannot_links(ds))
        assert result.final.assignment == p1.assignment
        assert result.bridges == () and result.backs == () and result.tau_v_loose is None

    def test_frontal_profile_bridge(self):
        frontal, profile, other = np.eye(6)[0], at_distance(0.49, 6, axis=1), np.eye(6)[3]
        va, vb = np.eye(6)[4], np.eye(6)[5]
        tracks = [speaking(0, frontal, va, label="A"), face_track(1, frontal, label="A"),
                  face_track(2, frontal, label="A"),
                  speaking(3, profile, va, label="A"), face_track(4, profile, label="A"),
                  speaking(5, other, vb, label="B"), face_track(6, other, label="B")]
        result = run_pipeline(dataset(*tracks), ClusteringConfig(tau_v_loose=0.3))
        assert result.stage("stage1").n_clusters == 3
        assert result.final.n_clusters == 2 and len(result.bridges) == 1
        assert result.bridges[0].tracks == (0, 3)
        assert nmi(result.final, dataset(*tracks).labels) == 1.0

    def test_oc_protocol(self):
        ds, _ = generate(GeneratorParams(n_tracks=100, seed=3))
        assert run_pipeline(ds, ClusteringConfig(protocol="oc:4")).final.n_clusters == 4

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 1000))
    def test_history_invariants(self, seed):
        ds, _ = generate(GeneratorParams(n_tracks=120, face_noise=0.7, face_separation=0.4,
                                         p_concurrent=0.6, seed=seed))
        result = run_pipeline(ds)
        levels = [p.level for p in result.history]
        assert levels == sorted(set(levels))
        counts = [p.n_clusters for p in result.history if p.tag in ("stage1", "stage2")]
        assert all(b <= a for a, b in zip(counts, counts[1:]))
        assert result.stage("stage3").n_clusters == result.stage("stage2").n_clusters
        links = build_cannot_links(ds)
        assert all(not links.violations(p) for p in result.history)

    def test_deterministic(self):
        ds, _ = generate(GeneratorParams(n_tracks=150, seed=9))
        a, b = run_pipeline(ds), run_pipeline(ds, n_jobs=3)
        assert a.final.assignment == b.final.assignment and a.bridges == b.bridges
