"""Command-line interface.

Subcommands mirror the pipeline stages (transform, embed, cluster, pipeline)
plus benchmark generation, metric evaluation, update-log replay, and
transformation statistics.  Exit codes: 0 success, 1 usage error, 2 data
error, 3 internal error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import evaluation, incremental, pipeline
from .clustering import cluster, read_cluster_assignment, write_cluster_assignment
from .embedding import embed_graph, read_embedding, write_embedding
from .evaluation import SynthConfig, SynthConfigError
from .graph import (
    GraphParseError,
    ingest_edges,
    read_transformed_graph,
    transform,
    write_transformed_graph,
)
from .incremental import PipelineState, UnknownAccountError, parse_update_log, replay_events
from .pipeline import ConfigError, PipelineConfig, StageError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3

_DATA_ERRORS = (
    GraphParseError,
    ConfigError,
    SynthConfigError,
    UnknownAccountError,
    FileNotFoundError,
    IsADirectoryError,
    PermissionError,
)


class _Parser(argparse.ArgumentParser):
    # the interface contract wants usage failures on exit code 1, not argparse's 2
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_pipeline_config(args) -> PipelineConfig:
    cfg = pipeline.load_config(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg.embedding = replace(cfg.embedding, seed=args.seed)
    return cfg


def _write(path: str, writer) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        writer(fh)


def _cmd_generate(args) -> int:
    cfg = SynthConfig(
        n_legit=args.legit,
        n_rings=args.rings,
        ring_size_range=(args.ring_size[0], args.ring_size[1]),
        hard_link_density_in_ring=args.hard_density,
        soft_link_density_in_ring=args.soft_density,
        background_soft_noise=args.noise,
        family_hard_link_rate=args.family_rate,
        hard_ring_fraction=args.hard_ring_fraction,
        seed=args.seed if args.seed is not None else 0,
    )
    graph, truth = evaluation.generate(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def write_hard(fh):
        for link in graph.hard_links:
            fh.write(f"{graph.tokens[link.u]}\t{link.kind}\t{graph.tokens[link.v]}\n")

    def write_soft(fh):
        for link in graph.soft_links:
            fh.write(
                f"{graph.tokens[link.u]}\t{link.kind}\t{graph.tokens[link.v]}\t{link.weight:g}\n"
            )

    _write(str(out / "hard_links.tsv"), write_hard)
    _write(str(out / "soft_links.tsv"), write_soft)
    _write(str(out / "ground_truth.tsv"), lambda fh: evaluation.write_ground_truth(truth, graph.tokens, fh))
    print(f"wrote {out}/hard_links.tsv, soft_links.tsv, ground_truth.tsv")
    return EXIT_OK


def _cmd_transform(args) -> int:
    with open(args.hard, encoding="utf-8") as hard_fh, open(args.soft, encoding="utf-8") as soft_fh:
        graph = ingest_edges(hard_fh, soft_fh)
    transformed = transform(graph)
    _write(args.out, lambda fh: write_transformed_graph(transformed, fh))
    stats = graph.ingest_stats
    if stats and stats.self_loops_skipped:
        print(f"skipped {stats.self_loops_skipped} self-loop records", file=sys.stderr)
    print(
        f"{graph.num_accounts} accounts -> {transformed.num_supernodes} super-nodes, "
        f"{len(transformed.edges)} edges"
    )
    return EXIT_OK


def _cmd_embed(args) -> int:
    cfg = _load_pipeline_config(args)
    with open(args.graph, encoding="utf-8") as fh:
        transformed = read_transformed_graph(fh)
    emb = embed_graph(transformed, cfg.embedding)
    _write(args.out, lambda fh: write_embedding(emb, fh))
    zeros = int(emb.zero_rows.sum())
    print(f"embedded {emb.num_rows} super-nodes (dim {emb.dim}, {zeros} zero rows)")
    return EXIT_OK


def _cmd_cluster(args) -> int:
    cfg = _load_pipeline_config(args)
    with open(args.graph, encoding="utf-8") as fh:
        transformed = read_transformed_graph(fh)
    with open(args.embedding, encoding="utf-8") as fh:
        emb = read_embedding(fh)
    if emb.num_rows != transformed.num_supernodes:
        raise GraphParseError("embedding rows do not match the transformed graph")
    assignment = cluster(emb, cfg.clustering)
    _write(args.out_labels, lambda fh: write_cluster_assignment(assignment, fh))
    account_risk = None
    if args.risk:
        with open(args.risk, encoding="utf-8") as fh:
            account_risk = pipeline.read_risk_file(fh, {t: i for i, t in enumerate(transformed.tokens)})
    ranked = pipeline.rank_clusters(transformed, emb, assignment, cfg, account_risk)
    _write(args.out_report, lambda fh: pipeline.write_report(ranked, fh))
    print(f"{assignment.n_clusters} clusters, {assignment.n_noise} noise super-nodes")
    return EXIT_OK


def _cmd_pipeline(args) -> int:
    cfg = _load_pipeline_config(args)
    if args.out:
        cfg.out_dir = args.out
    result = pipeline.run_pipeline(cfg)
    print(
        f"{result.transformed.num_supernodes} super-nodes, "
        f"{result.assignment.n_clusters} clusters; report at {result.paths['report']}"
    )
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    with open(args.graph, encoding="utf-8") as fh:
        transformed = read_transformed_graph(fh)
    with open(args.labels, encoding="utf-8") as fh:
        assignment = read_cluster_assignment(fh)
    token_index = {t: i for i, t in enumerate(transformed.tokens)}
    with open(args.truth, encoding="utf-8") as fh:
        truth = evaluation.read_ground_truth(fh, token_index)
    cov = evaluation.coverage(assignment, truth, transformed.membership)
    prec = evaluation.precision(assignment, truth, transformed.membership)
    pur = evaluation.purity(assignment, truth, transformed.membership)
    lines = evaluation.format_metrics(cov, prec, pur)
    for line in lines:
        print(line)
    if args.out:
        _write(args.out, lambda fh: fh.write("\n".join(lines) + "\n"))
    return EXIT_OK


def _cmd_stats(args) -> int:
    with open(args.hard, encoding="utf-8") as hard_fh, open(args.soft, encoding="utf-8") as soft_fh:
        graph = ingest_edges(hard_fh, soft_fh)
    transformed = transform(graph)
    stats = evaluation.transform_stats(graph, transformed)
    sys.stdout.write(stats.text())
    if args.out:
        _write(args.out, lambda fh: fh.write(stats.text()))
    return EXIT_OK


def _cmd_replay(args) -> int:
    cfg = _load_pipeline_config(args)
    with open(args.hard, encoding="utf-8") as hard_fh, open(args.soft, encoding="utf-8") as soft_fh:
        graph = ingest_edges(hard_fh, soft_fh)
    transformed = transform(graph)
    emb = embed_graph(transformed, cfg.embedding)
    assignment = cluster(emb, cfg.clustering)
    state = PipelineState.from_batch(
        transformed,
        emb,
        assignment,
        decay_lambda=cfg.decay_lambda,
        nn_threshold=cfg.nn_threshold,
        seed=cfg.embedding.seed,
    )
    with open(args.log, encoding="utf-8") as fh:
        events = parse_update_log(fh)
    replay_events(state, events)
    if args.refresh:
        incremental.full_refresh(state, cfg.embedding, cfg.clustering)
    else:
        incremental.assign_new_to_clusters(state)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    snapshot, slot_order = state.snapshot(decayed=False)
    _write(str(out / "snapshot_graph.tsv"), lambda fh: write_transformed_graph(snapshot, fh))

    def write_labels(fh):
        for new, old in enumerate(slot_order):
            fh.write(f"{new}\t{state.labels[old]}\n")

    _write(str(out / "snapshot_labels.tsv"), write_labels)
    print(
        f"replayed {len(events)} events -> {state.num_supernodes} super-nodes "
        f"at day {state.now:g}; snapshots in {out}"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fraudrings", description=__doc__)
    parser.add_argument("--verbose", action="store_true", help="log stage progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None, help="override the configured seed")
        p.add_argument("--config", default=None, help="key=value config file")

    p = sub.add_parser("generate", help="generate a synthetic benchmark graph")
    common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--legit", type=int, default=SynthConfig.n_legit)
    p.add_argument("--rings", type=int, default=SynthConfig.n_rings)
    p.add_argument("--ring-size", type=int, nargs=2, default=[5, 15], metavar=("MIN", "MAX"))
    p.add_argument("--hard-density", type=float, default=SynthConfig.hard_link_density_in_ring)
    p.add_argument("--soft-density", type=float, default=SynthConfig.soft_link_density_in_ring)
    p.add_argument("--noise", type=float, default=SynthConfig.background_soft_noise)
    p.add_argument("--family-rate", type=float, default=SynthConfig.family_hard_link_rate)
    p.add_argument("--hard-ring-fraction", type=float, default=SynthConfig.hard_ring_fraction)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("transform", help="build the super-node graph from link files")
    common(p)
    p.add_argument("--hard", required=True)
    p.add_argument("--soft", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_transform)

    p = sub.add_parser("embed", help="train embeddings for a transformed graph")
    common(p)
    p.add_argument("--graph", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_embed)

    p = sub.add_parser("cluster", help="cluster an embedding and rank the clusters")
    common(p)
    p.add_argument("--graph", required=True)
    p.add_argument("--embedding", required=True)
    p.add_argument("--out-labels", required=True)
    p.add_argument("--out-report", required=True)
    p.add_argument("--risk", default=None, help="per-account risk indicator file")
    p.set_defaults(func=_cmd_cluster)

    p = sub.add_parser("pipeline", help="run every stage end to end")
    common(p)
    p.add_argument("--out", default=None, help="output directory (overrides config)")
    p.set_defaults(func=_cmd_pipeline)

    p = sub.add_parser("evaluate", help="score a clustering against ground truth")
    common(p)
    p.add_argument("--graph", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("replay", help="apply an update log to a base graph")
    common(p)
    p.add_argument("--hard", required=True)
    p.add_argument("--soft", required=True)
    p.add_argument("--log", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--refresh", action="store_true", help="retrain and recluster at the end")
    p.set_defaults(func=_cmd_replay)

    p = sub.add_parser("stats", help="report transformation statistics")
    common(p)
    p.add_argument("--hard", required=True)
    p.add_argument("--soft", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_stats)

    return parser


def cli(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    if args.verbose:
        logging.basicConfig(level=logging.INFO)
    try:
        return args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA if isinstance(exc.cause, _DATA_ERRORS) else EXIT_INTERNAL
    except _DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


def main() -> None:
    sys.exit(cli())


if __name__ == "__main__":
    main()
