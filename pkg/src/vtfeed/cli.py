"""``vtfeed`` command-line front end.

Exit status is 0 on success, 1 when input data is unusable and 2 on usage
errors (bad flags, bad config).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import Iterable, Iterator, Optional, Sequence

from . import feed_stats, hunting
from .clustering.base import Clustering, read_clusters, write_clusters
from .clustering.fvg import fvg_cluster_file
from .clustering.hac import DistanceSpec, TooLarge, hac_cluster
from .clustering.hact import hact_cluster
from .config import ConfigError, PipelineConfig, parse_interval
from .evaluation import EmptyIntersection, cluster_size_stats, load_ground_truth, precision_recall_f1, size_stats
from .extsort import MiB, SortSpill
from .labeler import Taxonomy, label_sample
from .report_model import (
    FiletypeMapping,
    MalformedRecord,
    MalformedRow,
    ParseStats,
    ReportRecord,
    SampleFeatures,
    dedup_latest,
    extract_features,
    first_reports,
    open_text,
    parse_report_line,
    read_features,
    with_labels,
    write_features,
)
from .tlsh_metric import InvalidDigest

log = logging.getLogger("vtfeed")

EXIT_OK, EXIT_DATA, EXIT_USAGE = 0, 1, 2
DATA_ERRORS = (
    MalformedRow,
    MalformedRecord,
    InvalidDigest,
    EmptyIntersection,
    hunting.MissingScore,
    hunting.UnorderedHistory,
    TooLarge,
    SortSpill,
    OSError,
    ValueError,
)

_UNITS = {"": 1, "k": 1024, "m": MiB, "g": 1024 * MiB}


def parse_size(text: str) -> int:
    t = text.strip().lower().removesuffix("b").removesuffix("i")
    unit = t[-1] if t and t[-1] in "kmg" else ""
    try:
        return int(float(t[: len(t) - len(unit)]) * _UNITS[unit])
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad size {text!r}") from None


# -- shared plumbing -------------------------------------------------------


def _config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config)
    window = parse_interval(args.window) if args.window else None
    gaps = tuple(parse_interval(g) for g in args.gap) if args.gap else None
    return cfg.override(
        window=window, gaps=gaps, budget=args.budget, tmp_dir=args.tmp_dir, seed=args.seed, threads=args.threads
    )


def _parse_chunk(lines: list[str]) -> list:
    out = []
    for line in lines:
        try:
            out.append(parse_report_line(line))
        except MalformedRecord as exc:
            out.append(str(exc))
    return out


def _chunks(paths: Sequence[str], size: int = 2000) -> Iterator[list[str]]:
    for path in paths:
        with open_text(path) as fh:
            buf = []
            for line in fh:
                if line.strip():
                    buf.append(line)
                    if len(buf) >= size:
                        yield buf
                        buf = []
            if buf:
                yield buf


def iter_parsed(paths: Sequence[str], stats: ParseStats, threads: int = 1) -> Iterator[ReportRecord]:
    """Parse report files, in input order whatever the worker count."""
    if threads > 1:
        pool = ProcessPoolExecutor(max_workers=threads)
        results: Iterable[list] = pool.map(_parse_chunk, _chunks(paths), chunksize=4)
    else:
        pool = None
        results = map(_parse_chunk, _chunks(paths))
    try:
        for chunk in results:
            for item in chunk:
                stats.lines += 1
                if isinstance(item, str):
                    stats.errors += 1
                    log.debug("skipping malformed record: %s", item)
                else:
                    yield item
    finally:
        if pool is not None:
            pool.shutdown(cancel_futures=True)


def _load_features(path: str, view: str = "latest") -> list[SampleFeatures]:
    rows = read_features(path)
    if view == "latest":
        return dedup_latest(rows)
    if view == "first":
        return first_reports(rows)
    return list(rows)


def _emit(text: str, path: Optional[str]) -> None:
    if path and path != "-":
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text if text.endswith("\n") else text + "\n")
    else:
        print(text)


def _taxonomy(cfg: PipelineConfig) -> Taxonomy:
    return Taxonomy.load(cfg.taxonomy, cfg.aliases)


# -- subcommands -----------------------------------------------------------


def cmd_extract(args, cfg: PipelineConfig) -> int:
    stats = ParseStats()
    mapping = FiletypeMapping.load(cfg.filetypes)
    taxonomy = _taxonomy(cfg) if args.label else None
    rows = (
        extract_features(r, label_sample(r.detection_labels, taxonomy) if taxonomy else None, cfg.window, mapping)
        for r in iter_parsed(args.reports, stats, cfg.threads)
    )
    if args.dedup == "latest":
        rows = dedup_latest(rows)
    elif args.dedup == "first":
        rows = first_reports(rows)
    n = write_features(args.output, rows)
    print(json.dumps({"lines": stats.lines, "malformed": stats.errors, "rows": n}, sort_keys=True), file=sys.stderr)
    return EXIT_OK


def cmd_label(args, cfg: PipelineConfig) -> int:
    stats = ParseStats()
    taxonomy = _taxonomy(cfg)
    labels: dict[tuple[str, int], tuple] = {}
    for r in iter_parsed(args.reports, stats, cfg.threads):
        res = label_sample(r.detection_labels, taxonomy)
        labels[(r.sha256, r.scan_date)] = (res.family, res.is_pup)
    missing = 0

    def relabel() -> Iterator[SampleFeatures]:
        nonlocal missing
        for row in read_features(args.features):
            hit = labels.get((row.sha256, row.scan_date))
            if hit is None:
                missing += 1
                yield row
            else:
                yield with_labels(row, *hit)

    n = write_features(args.output, relabel())
    print(json.dumps({"rows": n, "unmatched": missing, "malformed": stats.errors}, sort_keys=True), file=sys.stderr)
    return EXIT_OK


def cmd_stats(args, cfg: PipelineConfig) -> int:
    reports = list(read_features(args.features))
    latest = dedup_latest(reports)
    first = first_reports(reports)
    daily = feed_stats.daily_volume(reports, cfg.window, cfg.gaps)
    detections = feed_stats.detection_distribution(
        (r.vt_score for r in first), cfg.low_threshold, cfg.high_threshold
    )
    filetypes = feed_stats.filetype_distribution(r.filetype for r in latest)
    prevalence = feed_stats.family_prevalence(
        {r.sha256: r.family for r in latest}, {r.sha256: r.filetype for r in latest}, top_k=args.top
    )
    doc = {
        "reports": len(reports),
        "samples": len(latest),
        "new_samples": len(first),
        "daily": daily.to_dict(),
        "detections_first_scan": detections.to_dict(),
        "filetypes": [r.__dict__ for r in filetypes],
        "families": prevalence.to_dict(),
    }
    _emit(feed_stats.to_json(doc), args.output)
    if args.csv_dir:
        os.makedirs(args.csv_dir, exist_ok=True)
        with open(os.path.join(args.csv_dir, "daily.csv"), "w", encoding="utf-8") as fh:
            fh.write(daily.csv())
        with open(os.path.join(args.csv_dir, "detections.csv"), "w", encoding="utf-8") as fh:
            fh.write(detections.csv())
    if args.output and args.output != "-":
        print(feed_stats.format_table(filetypes[: args.top], "filetype"))
    return EXIT_OK


def _read_epochs(path: str) -> dict[str, int]:
    out = {}
    with open_text(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 2:
                raise MalformedRow(f"{path}:{lineno}: expected sha256<TAB>epoch")
            try:
                out[parts[0].strip().lower()] = int(parts[1])
            except ValueError:
                raise MalformedRow(f"{path}:{lineno}: bad epoch {parts[1]!r}") from None
    return out


def cmd_delay(args, cfg: PipelineConfig) -> int:
    delays, summary = feed_stats.telemetry_delay(_read_epochs(args.vt), _read_epochs(args.other))
    if args.per_sample:
        with open(args.per_sample, "w", encoding="utf-8") as fh:
            fh.writelines(f"{sha}\t{d}\n" for sha, d in delays.items())
    _emit(json.dumps(summary.to_dict(), sort_keys=True), args.output)
    return EXIT_OK


def cmd_cluster(args, cfg: PipelineConfig) -> int:
    if args.method == "fvg":
        run = fvg_cluster_file(args.features, args.output, args.feature, budget=cfg.budget, tmp_dir=cfg.tmp_dir)
        stats = size_stats(run.null_singletons, run.sizes)
        doc = {"feature": run.feature, "rows": run.rows, "sort_seconds": round(run.sort.seconds, 3),
               "group_seconds": round(run.group_seconds, 3), **json.loads(stats.to_json())}
    else:
        samples = _load_features(args.features)
        if args.method == "hac":
            spec = DistanceSpec(tuple(f.strip() for f in args.features_list.split(",") if f.strip()),
                                args.threshold if args.threshold is not None else cfg.hac_threshold)
            clustering = hac_cluster(samples, spec, max_samples=cfg.hac_max_samples)
        else:
            cdist = args.cdist if args.cdist is not None else cfg.cdist
            clustering = hact_cluster(
                [(s.sha256, s.tlsh) for s in samples], cdist=cdist, exact=not args.approximate, seed=cfg.seed
            )
        write_clusters(args.output, clustering)
        doc = json.loads(cluster_size_stats(clustering).to_json())
    print(json.dumps(doc, sort_keys=True), file=sys.stderr)
    return EXIT_OK


def _truth(path: str) -> dict[str, str]:
    """Ground truth from ``sha256<TAB>family`` or from a cluster file."""
    with open(path, encoding="utf-8") as fh:
        first = next((line for line in fh if line.strip() and not line.startswith("#")), "")
    if first.count("\t") == 2:
        clustering = read_clusters(path)
        return {sha: str(cid) for cid, group in enumerate(clustering.members) for sha in group}
    return load_ground_truth(path)


def cmd_eval(args, cfg: PipelineConfig) -> int:
    report = precision_recall_f1(read_clusters(args.clusters), _truth(args.truth))
    print(report.to_json())
    print(report.table())
    return EXIT_OK


def _verdicts(args, cfg: PipelineConfig) -> list[hunting.ClusterVerdict]:
    clustering: Clustering = read_clusters(args.clusters)
    scores = {r.sha256: r.vt_score for r in _load_features(args.features)}
    return hunting.classify_clusters(
        clustering, scores, cfg.low_threshold, cfg.high_threshold, include_singletons=args.include_singletons
    )


def cmd_verdict(args, cfg: PipelineConfig) -> int:
    verdicts = _verdicts(args, cfg)
    hunting.write_verdicts(args.output, verdicts)
    print(json.dumps(hunting.summarize_verdicts(verdicts), sort_keys=True), file=sys.stderr)
    return EXIT_OK


def cmd_hunt(args, cfg: PipelineConfig) -> int:
    flagged = hunting.flag_undetected(_verdicts(args, cfg), args.min_ratio, args.ratio)
    hunting.write_flagged(args.output, flagged)
    print(json.dumps({"flagged": len(flagged)}), file=sys.stderr)
    return EXIT_OK


def cmd_fud(args, cfg: PipelineConfig) -> int:
    histories = hunting.histories_from_features(read_features(args.features))
    records = hunting.detect_originally_fud(
        histories, cfg.window, cfg.gaps,
        threshold=args.threshold if args.threshold is not None else cfg.fud_threshold,
        grace=args.grace if args.grace is not None else cfg.fud_grace,
    )
    hunting.write_fud(args.output, records)
    print(json.dumps({"samples": len(histories), "originally_fud": len(records)}), file=sys.stderr)
    return EXIT_OK


def cmd_synth(args, cfg: PipelineConfig) -> int:
    from . import synth

    if args.kind == "features":
        synth.write_feature_file(args.output, args.n, seed=cfg.seed)
        return EXIT_OK
    reports, manifest = synth.synth_feed(args.n, days=args.days, seed=cfg.seed)
    synth.write_feed(args.output, reports)
    if args.manifest:
        with open(args.manifest, "w", encoding="utf-8") as fh:
            fh.write(manifest.to_json() + "\n")
    return EXIT_OK


# -- argument parsing ------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("pipeline options")
    g.add_argument("--config", help="JSON config file; flags override it")
    g.add_argument("--window", nargs=2, metavar=("START", "END"), help="analysis window (epoch or ISO date)")
    g.add_argument("--gap", nargs=2, action="append", metavar=("START", "END"), help="collection gap, repeatable")
    g.add_argument("--budget", type=parse_size, help="memory budget for sorting, e.g. 1G")
    g.add_argument("--tmp-dir", help="spill directory (default: $VTFEED_TMPDIR or system temp)")
    g.add_argument("--seed", type=int)
    g.add_argument("--threads", type=int, help="worker processes for parsing")
    g.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="vtfeed", description="File-feed analytics: features, clustering, hunting.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("extract", parents=[common], help="report files -> feature file")
    p.add_argument("reports", nargs="+")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--dedup", choices=("none", "latest", "first"), default="none",
                   help="keep every report, the latest per sample, or the first report of new samples")
    p.add_argument("--label", action="store_true", help="fill family/is_pup while extracting")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("label", parents=[common], help="add family/is_pup columns to a feature file")
    p.add_argument("reports", nargs="+")
    p.add_argument("--features", required=True)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("stats", parents=[common], help="feed statistics from a report-level feature file")
    p.add_argument("features")
    p.add_argument("-o", "--output", help="JSON document path (default stdout)")
    p.add_argument("--csv-dir", help="also write CSV series here")
    p.add_argument("--top", type=int, default=20)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("delay", parents=[common], help="first-seen delay against another source")
    p.add_argument("--vt", required=True, help="sha256<TAB>epoch first-seen file")
    p.add_argument("--other", required=True, help="sha256<TAB>epoch first-seen file")
    p.add_argument("--per-sample", help="write per-sample delays here")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_delay)

    p = sub.add_parser("cluster", parents=[common], help="cluster a feature file")
    p.add_argument("method", choices=("fvg", "hac", "hact"))
    p.add_argument("features")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--feature", default="vhash", help="fvg: feature to group on")
    p.add_argument("--features-list", default="vhash,imphash,tlsh", help="hac: comma-separated features")
    p.add_argument("--threshold", type=float, help="hac: distance threshold")
    p.add_argument("--cdist", type=int, help="hact: TLSH distance threshold")
    p.add_argument("--approximate", action="store_true", help="hact: faster, may split clusters")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("eval", parents=[common], help="precision/recall/F1 against ground truth")
    p.add_argument("clusters")
    p.add_argument("truth", help="sha256<TAB>family file, or a cluster file")
    p.set_defaults(func=cmd_eval)

    for name, func, helptext in (
        ("verdict", cmd_verdict, "r1/r4 classification of clusters"),
        ("hunt", cmd_hunt, "zero-detection samples in malicious-majority clusters"),
    ):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("clusters")
        p.add_argument("features")
        p.add_argument("-o", "--output", required=True)
        p.add_argument("--include-singletons", action="store_true")
        if name == "hunt":
            p.add_argument("--min-ratio", type=float, default=hunting.MAJORITY)
            p.add_argument("--ratio", choices=("r1", "r4"), default="r1")
        p.set_defaults(func=func)

    p = sub.add_parser("fud", parents=[common], help="originally fully-undetected samples")
    p.add_argument("features", help="report-level feature file")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--threshold", type=int)
    p.add_argument("--grace", type=int, help="seconds")
    p.set_defaults(func=cmd_fud)

    p = sub.add_parser("synth", parents=[common])  # hidden: not listed in help
    p.add_argument("kind", choices=("feed", "features"))
    p.add_argument("n", type=int)
    p.add_argument("output")
    p.add_argument("--manifest")
    p.add_argument("--days", type=int, default=30)
    p.set_defaults(func=cmd_synth)
    sub._choices_actions = [a for a in sub._choices_actions if a.dest != "synth"]
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.threads is not None and args.threads < 1:
        parser.error("--threads must be positive")
    try:
        cfg = _config(args)
    except ConfigError as exc:
        print(f"vtfeed: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"vtfeed: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as exc:
        print(f"vtfeed: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
