"""Reading and writing datasets, configs, pipeline results and reports.

Datasets are line-delimited JSON, one track per line::

    {"id": 3, "shot": 0, "frames": [[10, 42]], "label": "Sheldon",
     "face": [...], "body": [...], "voice": [...], "voice_span": [[12, 40]]}

Only ``id``, ``shot`` and ``frames`` are required. Configs, results and
reports are single JSON documents carrying ``"version": 1``.
"""

from __future__ import annotations

import json
import logging
import math
import os
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .core import (
    ClusteringConfig,
    Dataset,
    Partition,
    Track,
    as_embedding,
    validate_dataset,
)
from .metrics import MetricsReport
from .pipeline import BackAssignment, Bridge, PipelineResult
from .thresholds import voice_presets

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
TRACK_KEYS = ("id", "shot", "frames", "label", "face", "body", "voice", "voice_span")
PathLike = Union[str, os.PathLike]


class FormatError(ValueError):
    """Malformed or invalid input file."""


def _dumps(obj) -> str:
    # repr-based float output is the shortest string that round-trips
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


# --------------------------------------------------------------------------
# Tracks
# --------------------------------------------------------------------------

def _int(value, key: str, lineno: int) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise FormatError(f"{key} must be an integer, line {lineno}")
    return value


def _intervals(value, key: str, lineno: int):
    if not isinstance(value, list):
        raise FormatError(f"{key} must be a list of [start, end] pairs, line {lineno}")
    out = []
    for iv in value:
        if not (isinstance(iv, list) and len(iv) == 2):
            raise FormatError(f"{key} must be a list of [start, end] pairs, line {lineno}")
        s, e = (_int(x, key, lineno) for x in iv)
        if e < s:
            raise FormatError(f"inverted interval, line {lineno}")
        out.append((s, e))
    return tuple(out)


def _vector(value, key: str, lineno: int, track_id: int) -> np.ndarray:
    if not (isinstance(value, list) and value
            and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in value)):
        raise FormatError(f"{key} must be a non-empty list of numbers, line {lineno}")
    raw = np.array(value, dtype=np.float64)
    if not np.all(np.isfinite(raw)):
        raise FormatError(f"{key} has non-finite values, line {lineno}")
    norm = float(np.linalg.norm(raw))
    if norm == 0:
        raise FormatError(f"{key} is the zero vector, line {lineno}")
    if abs(norm - 1.0) > 1e-3:
        log.warning("track %d: %s norm %.4f, normalising", track_id, key, norm)
    return as_embedding(raw)


def parse_track(line: str, lineno: int) -> Track:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as e:
        raise FormatError(f"malformed JSON, line {lineno}: {e.msg}") from None
    if not isinstance(rec, dict):
        raise FormatError(f"record must be an object, line {lineno}")
    unknown = set(rec) - set(TRACK_KEYS)
    if unknown:
        raise FormatError(f"unknown key(s) {sorted(unknown)}, line {lineno}")
    for key in ("id", "shot", "frames"):
        if key not in rec:
            raise FormatError(f"missing key {key!r}, line {lineno}")
    tid = _int(rec["id"], "id", lineno)
    kw = {
        "id": tid,
        "shot": _int(rec["shot"], "shot", lineno),
        "frames": _intervals(rec["frames"], "frames", lineno),
    }
    label = rec.get("label")
    if label is not None:
        if not isinstance(label, str):
            raise FormatError(f"label must be a string, line {lineno}")
        kw["label"] = label
    for m in ("face", "body", "voice"):
        if rec.get(m) is not None:
            kw[m] = _vector(rec[m], m, lineno, tid)
    if rec.get("voice_span") is not None:
        kw["voice_span"] = _intervals(rec["voice_span"], "voice_span", lineno)
    return Track(**kw)


def read_tracks(path: PathLike) -> list[Track]:
    """Parse every record without checking dataset-level invariants."""
    tracks = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            tracks.append(parse_track(line, lineno))
    return tracks


def load_dataset(path: PathLike, fps: float = 25.0) -> Dataset:
    """Load and validate a track file; any invariant violation is an error."""
    if not fps > 0:
        raise FormatError("fps must be positive")
    ds = Dataset(tuple(read_tracks(path)), fps=float(fps))
    problems = validate_dataset(ds)
    if problems:
        raise FormatError(f"{path}: {problems[0]}"
                          + (f" (+{len(problems) - 1} more)" if len(problems) > 1 else ""))
    return ds


def track_record(t: Track) -> dict:
    rec = {"id": t.id, "shot": t.shot, "frames": [list(iv) for iv in t.frames]}
    if t.label is not None:
        rec["label"] = t.label
    for m in ("face", "body", "voice"):
        v = getattr(t, m)
        if v is not None:
            rec[m] = v.tolist()
    if t.voice_span is not None:
        rec["voice_span"] = [list(iv) for iv in t.voice_span]
    return rec


def dumps_dataset(dataset: Union[Dataset, Iterable[Track]]) -> str:
    tracks = dataset.tracks if isinstance(dataset, Dataset) else dataset
    return "".join(_dumps(track_record(t)) + "\n" for t in tracks)


def save_dataset(dataset: Union[Dataset, Iterable[Track]], path: PathLike) -> None:
    Path(path).write_text(dumps_dataset(dataset), encoding="utf-8")


def concat_datasets(datasets: Sequence[Dataset], names: Optional[Sequence[str]] = None
                    ) -> Dataset:
    """Concatenate videos end to end.

    Frames and shots of each later dataset are offset past the previous ones
    so that no spurious co-occurrence is created. Track ids must already be
    unique across inputs.
    """
    if not datasets:
        return Dataset(())
    fps = {d.fps for d in datasets}
    if len(fps) > 1:
        raise ValueError("datasets have different fps")
    tracks, tags = [], []
    frame_off = shot_off = 0
    seen: set[int] = set()
    for k, d in enumerate(datasets):
        for t in d.tracks:
            if t.id in seen:
                raise ValueError(f"duplicate id {t.id} across concatenated datasets")
            seen.add(t.id)
            shift = lambda ivs: tuple((s + frame_off, e + frame_off) for s, e in ivs)  # noqa: E731
            tracks.append(t.replace(
                frames=shift(t.frames), shot=t.shot + shot_off,
                voice_span=None if t.voice_span is None else shift(t.voice_span)))
            tags.append(names[k] if names else None)
        if d.tracks:
            frame_off += d.last_frame + 1
            shot_off += max(t.shot for t in d.tracks) + 1
    return Dataset(tuple(tracks), fps=fps.pop(), program_set=tuple(tags) if names else None)


# --------------------------------------------------------------------------
# Config
# --------------------------------------------------------------------------

CONFIG_KEYS = set(ClusteringConfig().to_dict()) | {"preset", "version", "tau_f_loose"}


def config_from_dict(d: dict) -> ClusteringConfig:
    unknown = set(d) - CONFIG_KEYS
    if unknown:
        raise FormatError(f"unknown config key(s): {sorted(unknown)}")
    d = dict(d)
    version = d.pop("version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise FormatError(f"unsupported config version {version}")
    if "tau_f_loose" in d:
        d.pop("tau_f_loose")
        log.warning("tau_f_loose is derived from tau_f_tight + delta; ignoring file value")
    preset = d.pop("preset", None)
    if preset is not None:
        presets = voice_presets()
        if preset not in presets:
            raise FormatError(f"preset: unknown program set {preset!r}")
        d.setdefault("tau_v_loose", presets[preset])
    try:
        return ClusteringConfig(**d)
    except (TypeError, ValueError) as e:
        raise FormatError(str(e)) from None


def load_config(path: Optional[PathLike] = None) -> ClusteringConfig:
    """Read a JSON config; absent keys keep their defaults."""
    if path is None:
        return ClusteringConfig()
    text = Path(path).read_text(encoding="utf-8")
    if not text.strip():
        return ClusteringConfig()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: malformed JSON: {e.msg}") from None
    if not isinstance(d, dict):
        raise FormatError(f"{path}: config must be a JSON object")
    return config_from_dict(d)


def save_config(config: ClusteringConfig, path: PathLike) -> None:
    d = {"version": SCHEMA_VERSION, **config.to_dict()}
    Path(path).write_text(json.dumps(d, indent=2) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# Results
# --------------------------------------------------------------------------

def _partition_doc(p: Partition) -> dict:
    return {"level": p.level, "tag": p.tag,
            "assignment": [[t, c] for t, c in sorted(p.assignment.items())]}


def _partition_from(doc: dict) -> Partition:
    return Partition({int(t): int(c) for t, c in doc["assignment"]},
                     int(doc["level"]), str(doc["tag"]))


def _num(x: float):
    return None if math.isinf(x) else x


def result_to_dict(result: PipelineResult) -> dict:
    return {
        "version": SCHEMA_VERSION,
        "config": result.config.to_dict(),
        "tau_v_loose": result.tau_v_loose,
        "tau_v_learned": result.tau_v_learned,
        "n_voice_negatives": result.n_voice_negatives,
        "n_cannot_links": result.n_cannot_links,
        "usable_voice": list(result.usable_voice),
        "assignment": _partition_doc(result.final),
        "history": [_partition_doc(p) for p in result.history],
        "bridges": [
            {"clusters": list(b.clusters), "tracks": list(b.tracks),
             "d_face": b.d_face, "d_voice": b.d_voice}
            for b in result.bridges
        ],
        "backs": [
            {"track": a.track, "cluster": a.cluster, "neighbor": a.neighbor,
             "d1": a.d1, "d2": _num(a.d2)}
            for a in result.backs
        ],
        "unassigned": [[t, r] for t, r in sorted(result.unassigned.items())],
    }


def result_from_dict(d: dict) -> PipelineResult:
    if d.get("version") != SCHEMA_VERSION:
        raise FormatError(f"unsupported result version {d.get('version')!r}")
    for key in ("assignment", "history", "bridges", "backs", "unassigned", "config"):
        if key not in d:
            raise FormatError(f"result is missing the {key!r} section")
    return PipelineResult(
        final=_partition_from(d["assignment"]),
        history=tuple(_partition_from(p) for p in d["history"]),
        bridges=tuple(Bridge(tuple(b["clusters"]), tuple(b["tracks"]), b["d_face"], b["d_voice"])
                      for b in d["bridges"]),
        backs=tuple(BackAssignment(a["track"], a["cluster"], a["neighbor"], a["d1"],
                                   math.inf if a["d2"] is None else a["d2"])
                    for a in d["backs"]),
        unassigned={int(t): str(r) for t, r in d["unassigned"]},
        tau_v_loose=d.get("tau_v_loose"),
        tau_v_learned=bool(d.get("tau_v_learned", False)),
        n_voice_negatives=int(d.get("n_voice_negatives", 0)),
        usable_voice=tuple(d.get("usable_voice", ())),
        n_cannot_links=int(d.get("n_cannot_links", 0)),
        config=config_from_dict(d["config"]),
    )


def save_result(result: PipelineResult, path: PathLike) -> None:
    Path(path).write_text(_dumps(result_to_dict(result)) + "\n", encoding="utf-8")


def load_result(path: PathLike) -> PipelineResult:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: malformed JSON: {e.msg}") from None
    if not isinstance(d, dict):
        raise FormatError(f"{path}: result must be a JSON object")
    return result_from_dict(d)


# --------------------------------------------------------------------------
# Reports
# --------------------------------------------------------------------------

def report_to_text(report: MetricsReport) -> str:
    """Line-oriented ``key value`` rendering."""
    lines = [
        f"version {SCHEMA_VERSION}",
        f"weighting {report.weighting}",
        f"wcp {report.wcp!r}",
        f"nmi {report.nmi!r}",
        f"cp {report.cp!r}",
        f"cr {report.cr!r}",
        f"predicted_clusters {report.predicted_clusters}",
        f"ground_truth_clusters {report.ground_truth_clusters}",
    ]
    for r in report.rows:
        cluster = "none" if r.cluster is None else r.cluster
        lines.append(f"character {json.dumps(r.character)} cluster {cluster} "
                     f"cp {r.cp!r} cr {r.cr!r}")
    return "\n".join(lines) + "\n"


def save_report(report: MetricsReport, path: PathLike) -> None:
    Path(path).write_text(_dumps(report.to_dict()) + "\n", encoding="utf-8")


def load_report(path: PathLike) -> MetricsReport:
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    if d.get("version") != SCHEMA_VERSION:
        raise FormatError(f"unsupported report version {d.get('version')!r}")
    return MetricsReport.from_dict(d)
