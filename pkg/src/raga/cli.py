"""Command-line front end: ``raga {train,align,eval,gen-synth,sweep}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from threadpoolctl import threadpool_limits

from . import io
from .aligner import daa_align, fine_grained, hungarian_align, local_align, raw_similarity
from .config import MATCHERS, ConfigError, RunConfig
from .kg import AlignmentTask, ParseError, load_graph
from .metrics import MetricsReport, global_metrics, rank_metrics
from .synth import generate_synthetic_pair
from .trainer import TrainState, final_embeddings, train

log = logging.getLogger("raga")


@dataclasses.dataclass
class LoadedData:
    task: AlignmentTask
    emb1: Optional[np.ndarray]
    emb2: Optional[np.ndarray]


def load_data(cfg: RunConfig, need_embeddings: bool = True) -> LoadedData:
    keys = ["triples1", "triples2", "seeds", "tests"]
    if need_embeddings:
        keys += ["embeddings1", "embeddings2"]
    cfg.require_paths(*keys)
    kg1, kg2 = load_graph(cfg.triples1), load_graph(cfg.triples2)
    seeds = io.load_pairs(cfg.seeds, kg1, kg2)
    tests = io.load_pairs(cfg.tests, kg1, kg2)
    task = AlignmentTask(kg1, kg2, seeds, tests)
    emb1 = emb2 = None
    if need_embeddings:
        emb1 = io.load_embeddings(cfg.embeddings1, kg1)
        emb2 = io.load_embeddings(cfg.embeddings2, kg2)
    return LoadedData(task, emb1, emb2)


def run_training(cfg: RunConfig, task: AlignmentTask, emb1, emb2) -> TrainState:
    hyper = dataclasses.replace(cfg.hyper, d_e=emb1.shape[1])
    cfg.hyper = hyper
    return train(task, emb1, emb2, hyper, cfg.ablation, rng_seed=cfg.rng_seed)


def align_and_score(cfg: RunConfig, task: AlignmentTask, state: TrainState, matcher: Optional[str] = None):
    """Encode both graphs, match, and evaluate on the test pairs."""
    matcher = matcher or cfg.matcher
    x1, x2 = final_embeddings(task, state)
    s = raw_similarity(x1, x2)
    report = rank_metrics(s, task.test_pairs)
    scored = s if cfg.no_fine_grained else fine_grained(s)
    if matcher == "local":
        alignment = local_align(scored)
        report.conflict_count = alignment.conflict_count
    elif matcher == "daa":
        alignment = daa_align(scored)
        report = report.merged(global_metrics(alignment, task.test_pairs))
    else:
        alignment = hungarian_align(scored)
        report = report.merged(global_metrics(alignment, task.test_pairs))
    return alignment, report, alignment.total(scored)


def cmd_gen_synth(cfg: RunConfig) -> int:
    spec = cfg.synthetic
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    task, emb1, emb2 = generate_synthetic_pair(rng_seed=cfg.rng_seed, **dataclasses.asdict(spec))
    io.save_graph(out / "triples_1.tsv", task.kg1)
    io.save_graph(out / "triples_2.tsv", task.kg2)
    io.save_pairs(out / "seeds.tsv", task.seed_pairs, task.kg1, task.kg2)
    io.save_pairs(out / "tests.tsv", task.test_pairs, task.kg1, task.kg2)
    io.save_embeddings(out / "emb_1.txt", task.kg1, emb1)
    io.save_embeddings(out / "emb_2.txt", task.kg2, emb2)
    run_cfg = dataclasses.replace(
        cfg, triples1="triples_1.tsv", triples2="triples_2.tsv", seeds="seeds.tsv", tests="tests.tsv",
        embeddings1="emb_1.txt", embeddings2="emb_2.txt", output_dir="run",
        hyper=dataclasses.replace(cfg.hyper, d_e=spec.dim))
    run_cfg.write(out / "config.json")
    print(f"wrote synthetic task to {out} ({len(task.seed_pairs)} seeds, {len(task.test_pairs)} tests)")
    return 0


def cmd_train(cfg: RunConfig) -> int:
    data = load_data(cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    state = run_training(cfg, data.task, data.emb1, data.emb2)
    state.save(out / "checkpoint.npz")
    with open(out / "loss.tsv", "w", encoding="utf-8") as fh:
        for epoch, value in enumerate(state.loss_history):
            fh.write(f"{epoch}\t{value!r}\n")
    cfg.write(out / "effective_config.json")
    last = state.loss_history[-1] if state.loss_history else float("nan")
    print(f"trained {state.epoch} epochs, final loss {last:.6f}; artifacts in {out}")
    return 0


def _check_checkpoint(state: TrainState, task: AlignmentTask) -> None:
    p = state.params
    for side, kg in ((1, task.kg1), (2, task.kg2)):
        rows = p.embeddings(side).shape[0]
        if rows != kg.entity_count:
            raise ConfigError(
                f"checkpoint has {rows} KG{side} embedding rows but the graph has {kg.entity_count} entities")


def cmd_align(cfg: RunConfig, checkpoint: str) -> int:
    if not Path(checkpoint).exists():
        raise ConfigError(f"checkpoint not found: {checkpoint}")
    data = load_data(cfg, need_embeddings=False)
    state = TrainState.load(checkpoint)
    _check_checkpoint(state, data.task)
    cfg.hyper = state.hyper
    cfg.no_bna, cfg.no_rgat, cfg.aggregate_self = (
        state.ablation.no_bna, state.ablation.no_rgat, state.ablation.aggregate_self)
    alignment, report, total = align_and_score(cfg, data.task, state)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    io.save_alignment(out / f"alignment_{cfg.matcher}.tsv", alignment, data.task.kg1, data.task.kg2)
    (out / f"metrics_{cfg.matcher}.txt").write_text(
        report.to_keyvalue() + f"matcher={cfg.matcher}\ntotal_similarity={total:.10g}\n", encoding="utf-8")
    print(report.to_table())
    print(f"total_similarity  {total:.6f}")
    return 0


def cmd_eval(alignment_path: str, tests_path: str, output: Optional[str]) -> int:
    for name, path in (("alignment", alignment_path), ("tests", tests_path)):
        if not Path(path).exists():
            raise ConfigError(f"{name} not found: {path}")
    rows = io.load_alignment(alignment_path)
    tests = io.load_raw_pairs(tests_path)
    mapping: Dict[str, str] = {}
    claimed: Dict[str, int] = {}
    for e1, e2, _, _ in rows:
        mapping[e1] = e2
        claimed[e2] = claimed.get(e2, 0) + 1
    conflicts = sum(1 for c in claimed.values() if c > 1)
    h1 = sum(mapping.get(a) == b for a, b in tests) / len(tests) if tests else 0.0
    report = MetricsReport(conflict_count=conflicts, count=len(tests))
    if conflicts:
        report.hits_at[1] = h1
    else:
        report.one_to_one_h1 = h1
    print(report.to_table())
    if output:
        Path(output).write_text(report.to_keyvalue(), encoding="utf-8")
    return 0


def cmd_sweep(cfg: RunConfig, ratios: List[float]) -> int:
    """Per seed ratio: generate, train, align locally and with DAA."""
    rows = []
    for ratio in ratios:
        spec = dataclasses.replace(cfg.synthetic, seed_ratio=ratio)
        task, emb1, emb2 = generate_synthetic_pair(rng_seed=cfg.rng_seed, **dataclasses.asdict(spec))
        run_cfg = dataclasses.replace(cfg, synthetic=spec)
        state = run_training(run_cfg, task, emb1, emb2)
        _, local_report, _ = align_and_score(run_cfg, task, state, "local")
        _, daa_report, _ = align_and_score(run_cfg, task, state, "daa")
        rows.append((ratio, len(task.seed_pairs), local_report.hits_at[1], daa_report.one_to_one_h1))
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["seed_ratio\tseeds\tlocal_h1\tdaa_h1"]
    lines += [f"{r:.2f}\t{n}\t{a:.4f}\t{b:.4f}" for r, n, a, b in rows]
    (out / "sweep.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))
    return 0


def _add_run_flags(p: argparse.ArgumentParser, paths: bool = True) -> None:
    p.add_argument("--config", help="JSON run configuration")
    if paths:
        p.add_argument("--triples1")
        p.add_argument("--triples2")
        p.add_argument("--seeds")
        p.add_argument("--tests")
        p.add_argument("--embeddings1")
        p.add_argument("--embeddings2")
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--epochs", dest="hyper.epochs", type=int)
    p.add_argument("--lr", dest="hyper.learning_rate", type=float)
    p.add_argument("--margin", dest="hyper.margin", type=float)
    p.add_argument("--neg-k", dest="hyper.neg_k", type=int)
    p.add_argument("--neg-refresh", dest="hyper.neg_refresh_p", type=int)
    p.add_argument("--gcn-depth", dest="hyper.gcn_depth", type=int)
    p.add_argument("--d-r", dest="hyper.d_r", type=int)
    p.add_argument("--leaky-slope", dest="hyper.leaky_slope", type=float)
    for flag in ("no-bna", "no-rgat", "no-fine-grained", "aggregate-self"):
        p.add_argument(f"--{flag}", dest=flag.replace("-", "_"), action="store_const", const=True)
    p.add_argument("--matcher", choices=MATCHERS)
    p.add_argument("--seed", dest="rng_seed", type=int)
    p.add_argument("--threads", type=int)


def _add_synth_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n-entities", dest="synthetic.n_entities", type=int)
    p.add_argument("--n-relations", dest="synthetic.n_relations", type=int)
    p.add_argument("--n-triples", dest="synthetic.n_triples", type=int)
    p.add_argument("--edge-noise", dest="synthetic.edge_noise", type=float)
    p.add_argument("--embed-noise", dest="synthetic.embed_noise", type=float)
    p.add_argument("--seed-ratio", dest="synthetic.seed_ratio", type=float)
    p.add_argument("--dim", dest="synthetic.dim", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="raga", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on a KG pair and write a checkpoint")
    _add_run_flags(p)

    p = sub.add_parser("align", help="align with a trained checkpoint and report metrics")
    _add_run_flags(p)
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("eval", help="score an alignment TSV against test pairs")
    p.add_argument("--alignment", required=True)
    p.add_argument("--tests", required=True)
    p.add_argument("--output")

    p = sub.add_parser("gen-synth", help="write a synthetic KG pair and a ready-to-train config")
    _add_run_flags(p, paths=False)
    _add_synth_flags(p)

    p = sub.add_parser("sweep", help="seed-ratio sweep on synthetic data")
    _add_run_flags(p, paths=False)
    _add_synth_flags(p)
    p.add_argument("--ratios", type=float, nargs="*", default=[0.1, 0.2, 0.3, 0.4, 0.5])
    return parser


_NOT_CONFIG = {"command", "verbose", "config", "checkpoint", "alignment", "output", "ratios"}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "eval":
            return cmd_eval(args.alignment, args.tests, args.output)
        overrides = {k: v for k, v in vars(args).items() if k not in _NOT_CONFIG}
        cfg = RunConfig.load(args.config, overrides)
        with threadpool_limits(limits=cfg.threads):
            if args.command == "train":
                return cmd_train(cfg)
            if args.command == "align":
                return cmd_align(cfg, args.checkpoint)
            if args.command == "gen-synth":
                return cmd_gen_synth(cfg)
            return cmd_sweep(cfg, args.ratios)
    except (ConfigError, ParseError) as exc:
        print(f"raga: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # surfaced as a runtime failure
        log.debug("failure", exc_info=True)
        print(f"raga: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
