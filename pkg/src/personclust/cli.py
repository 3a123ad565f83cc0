"""Command-line interface.

Exit codes: 0 success, 1 domain error (invalid data, infeasible request),
2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import io
from .core import ClusteringConfig, Dataset, parse_protocol, validate_dataset
from .metrics import (
    MetricsReport,
    average_reports,
    cooccurrence,
    evaluate,
    relative_cooccurrence,
)
from .pipeline import build_cannot_links, run_pipeline, stage1_cluster
from .synth import (
    GeneratorParams,
    bridge_dataset,
    generate,
    noise_for_max_distance,
    separation_for_min_distance,
)
from .thresholds import (
    collect_voice_negatives,
    filter_voice_tracks,
    learn_voice_threshold,
    mask_voices,
    voice_presets,
)

log = logging.getLogger("personclust")


class UsageError(Exception):
    pass


def _read_dataset(paths: Sequence[str], fps: float) -> Dataset:
    for p in paths:
        if not Path(p).is_file():
            raise UsageError(f"dataset file not found: {p}")
    sets = [io.load_dataset(p, fps) for p in paths]
    if len(sets) == 1:
        return sets[0]
    return io.concat_datasets(sets, names=[Path(p).stem for p in paths])


def _read_config(path: Optional[str]) -> ClusteringConfig:
    if path is not None and not Path(path).is_file():
        raise UsageError(f"config file not found: {path}")
    return io.load_config(path)


def _fmt(x: Optional[float], nd: int = 4) -> str:
    return "-" if x is None else f"{x:.{nd}f}"


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_cluster(args) -> int:
    ds = _read_dataset(args.dataset, args.fps)
    config = _read_config(args.config)
    if args.protocol is not None:
        parse_protocol(args.protocol)
        config = config.replace(protocol=args.protocol)
    result = run_pipeline(ds, config, n_jobs=args.jobs)
    if args.out:
        io.save_result(result, args.out)

    n_face = sum(t.face is not None for t in ds.tracks)
    n_back = sum(t.is_back for t in ds.tracks)
    out = sys.stdout
    print(f"tracks {len(ds)}  faces {n_face}  backs {n_back}  "
          f"usable voices {len(result.usable_voice)}  cannot-links {result.n_cannot_links}",
          file=out)
    s1 = [p for p in result.history if p.tag == "stage1"]
    progression = " ".join(str(p.n_clusters) for p in s1)
    print(f"stage1  K={s1[-1].n_clusters}  partitions {progression}", file=out)
    s2 = result.stage("stage2")
    if result.bridges:
        src = (f"learnt from {result.n_voice_negatives} negatives" if result.tau_v_learned
               else "from config")
        print(f"stage2  K={s2.n_clusters}  bridges {len(result.bridges)}  "
              f"tau_v_loose {_fmt(result.tau_v_loose)} ({src})", file=out)
    else:
        print(f"stage2  K={s2.n_clusters}  no-op  tau_v_loose {_fmt(result.tau_v_loose)}",
              file=out)
    s3 = result.stage("stage3")
    if n_back:
        print(f"stage3  K={s3.n_clusters}  backs assigned {len(result.backs)}/{n_back}",
              file=out)
    else:
        print(f"stage3  K={s3.n_clusters}  no-op", file=out)
    if result.stage("oracle") is not None:
        print(f"oracle  K={result.final.n_clusters}", file=out)
    return 0


def _report_table(names: Sequence[str], reports: Sequence[MetricsReport]) -> str:
    lines = [f"{'unit':<24} {'WCP':>7} {'NMI':>7} {'CP':>7} {'CR':>7} {'#pred':>6} {'#gt':>5}"]
    for name, r in zip(names, reports):
        lines.append(f"{name:<24} {r.wcp:7.4f} {r.nmi:7.4f} {r.cp:7.4f} {r.cr:7.4f} "
                     f"{r.predicted_clusters:6d} {r.ground_truth_clusters:5d}")
    return "\n".join(lines)


def cmd_eval(args) -> int:
    reports, names = [], []
    for data_path, result_path in args.unit:
        if not Path(result_path).is_file():
            raise UsageError(f"result file not found: {result_path}")
        ds = _read_dataset([data_path], args.fps)
        if any(t.label is None for t in ds.tracks):
            raise ValueError(f"{data_path}: dataset has unlabeled tracks")
        result = io.load_result(result_path)
        reports.append(evaluate(result.final, ds, args.weighting))
        names.append(Path(data_path).stem)
    final = reports[0] if len(reports) == 1 else average_reports(reports)
    table_names, table_reports = list(names), list(reports)
    if len(reports) > 1:
        table_names.append("mean")
        table_reports.append(final)
    print(_report_table(table_names, table_reports))
    if args.out:
        doc = final.to_dict()
        if len(reports) > 1:
            doc["units"] = [dict(r.to_dict(), unit=n) for n, r in zip(names, reports)]
        Path(args.out).write_text(json.dumps(doc, separators=(",", ":")) + "\n")
    if args.text:
        Path(args.text).write_text(io.report_to_text(final))
    return 0


def cmd_learn(args) -> int:
    if args.list_presets:
        for name, tau in voice_presets().items():
            print(f"{name} {tau}")
        return 0
    if not args.dataset:
        raise UsageError("a dataset is required unless --list-presets is given")
    ds = _read_dataset(args.dataset, args.fps)
    config = _read_config(args.config)
    usable = filter_voice_tracks(ds, config.voice_overlap_max, config.voice_min_seconds)
    masked = mask_voices(ds, usable)
    cannot = build_cannot_links(masked)
    p1 = stage1_cluster(masked, config, cannot, n_jobs=args.jobs)
    negatives = collect_voice_negatives(p1, cannot, masked, n_jobs=args.jobs)
    if args.negatives_out:
        with open(args.negatives_out, "w") as fh:
            fh.write("track_a\ttrack_b\td_v\tsource\n")
            for s in negatives:
                fh.write(f"{s.pair[0]}\t{s.pair[1]}\t{s.d_v!r}\t{s.source}\n")
    tau = learn_voice_threshold(negatives, config.voice_percentile)
    print(f"tau_v_loose {tau!r}")
    print(f"negatives {len(negatives)}  (cannot-link {int(negatives.from_cannot_link.sum())})")
    return 0


def _matrix_text(title: str, names: Sequence[str], m: np.ndarray) -> str:
    w = max(8, max((len(n) for n in names), default=0) + 1)
    head = " " * w + "".join(f"{n:>{w}}" for n in names)
    rows = [f"{n:<{w}}" + "".join(f"{x:>{w}.4f}" for x in row) for n, row in zip(names, m)]
    return "\n".join([title, head, *rows])


def cmd_cooccur(args) -> int:
    ds = _read_dataset(args.dataset, args.fps)
    chars = args.characters.split(",") if args.characters else None
    gt = cooccurrence(ds, chars, total_frames=args.total_frames)
    outdir = Path(args.out_dir) if args.out_dir else None
    if outdir:
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "ground_truth.json").write_text(json.dumps(gt.to_dict()) + "\n")
    print(_matrix_text("ground truth", gt.characters, gt.matrix))
    if args.result:
        if not Path(args.result).is_file():
            raise UsageError(f"result file not found: {args.result}")
        result = io.load_result(args.result)
        pred = cooccurrence(ds, chars, partition=result.final, total_frames=args.total_frames)
        rel = relative_cooccurrence(pred, gt)
        print()
        print(_matrix_text("predicted", pred.characters, pred.matrix))
        print()
        print(_matrix_text("relative (predicted / ground truth)", pred.characters, rel))
        if outdir:
            (outdir / "predicted.json").write_text(json.dumps(pred.to_dict()) + "\n")
            rel_doc = {"version": 1, "characters": list(pred.characters),
                       "matrix": [[None if not np.isfinite(x) else x for x in row]
                                  for row in rel.tolist()]}
            (outdir / "relative.json").write_text(json.dumps(rel_doc) + "\n")
    return 0


def cmd_synth(args) -> int:
    if args.scenario == "bridge":
        ds, manifest = bridge_dataset(n_characters=args.n_characters or 10, seed=args.seed)
    else:
        params = GeneratorParams(seed=args.seed)
        if args.scenario == "separable":
            sigma = noise_for_max_distance(0.2)
            params = replace(params, n_characters=20, n_tracks=400, p_back=0.0,
                             face_noise=sigma,
                             face_separation=separation_for_min_distance(0.8, sigma))
        overrides = {k: getattr(args, k) for k in
                     ("n_characters", "n_tracks", "p_back", "p_speaking", "p_concurrent",
                      "scenes", "shots_per_scene")
                     if getattr(args, k) is not None}
        params = replace(params, **overrides)
        ds, manifest = generate(params, with_anchors=args.anchors)
    io.save_dataset(ds, args.out)
    if args.manifest:
        Path(args.manifest).write_text(json.dumps(manifest.to_dict()) + "\n")
    print(f"wrote {len(ds)} tracks, {len(manifest.characters)} characters to {args.out}")
    return 0


def cmd_validate(args) -> int:
    if not Path(args.dataset).is_file():
        raise UsageError(f"dataset file not found: {args.dataset}")
    ds = Dataset(tuple(io.read_tracks(args.dataset)), fps=args.fps)
    problems = validate_dataset(ds)
    for p in problems:
        print(p)
    print(f"{len(ds)} tracks, {len(problems)} violation(s)")
    return 1 if problems else 0


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="personclust",
                                 description="Cluster person-tracks in video by identity.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def fps(p):
        p.add_argument("--fps", type=float, default=25.0, help="frames per second (default 25)")

    p = sub.add_parser("cluster", help="run the clustering pipeline")
    p.add_argument("dataset", nargs="+", help="track file(s); several are concatenated")
    fps(p)
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--protocol", help="'at' or 'oc:<C>' (overrides the config)")
    p.add_argument("--out", help="result file to write")
    p.add_argument("--jobs", type=int, default=None, help="threads for distance computation")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("eval", help="score results against labelled datasets")
    p.add_argument("--unit", nargs=2, action="append", required=True,
                   metavar=("DATASET", "RESULT"), help="one episode; repeat to average")
    fps(p)
    p.add_argument("--weighting", choices=("track", "frame"), default="track")
    p.add_argument("--out", help="JSON report file")
    p.add_argument("--text", help="key-value text report file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("learn-voice-threshold", help="learn tau_v_loose from a dataset")
    p.add_argument("dataset", nargs="*")
    fps(p)
    p.add_argument("--config")
    p.add_argument("--negatives-out", help="write negative distances as TSV")
    p.add_argument("--list-presets", action="store_true")
    p.add_argument("--jobs", type=int, default=None)
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("cooccur", help="character co-occurrence matrices")
    p.add_argument("dataset", nargs="+")
    fps(p)
    p.add_argument("--result", help="pipeline result for the predicted matrix")
    p.add_argument("--characters", help="comma-separated character names")
    p.add_argument("--total-frames", type=int, default=None)
    p.add_argument("--out-dir", help="directory for JSON matrices")
    p.set_defaults(func=cmd_cooccur)

    p = sub.add_parser("synth", help="generate a synthetic labelled dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--manifest")
    p.add_argument("--scenario", choices=("generic", "separable", "bridge"), default="generic")
    p.add_argument("--seed", type=int, default=0)
    for flag, typ in (("--n-characters", int), ("--n-tracks", int), ("--p-back", float),
                      ("--p-speaking", float), ("--p-concurrent", float), ("--scenes", int),
                      ("--shots-per-scene", int)):
        p.add_argument(flag, type=typ, default=None)
    p.add_argument("--no-anchors", dest="anchors", action="store_false",
                   help="omit anchor vectors from the manifest")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("validate", help="check a track file")
    p.add_argument("dataset")
    fps(p)
    p.set_defaults(func=cmd_validate)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
