"""Command-line entry points: run research, ingest bundles, evaluate reports.

Exit codes are a stable contract for automation: 0 success, 1 runtime
failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys

from .bundle import ReportBundle
from .config import RunConfig
from .errors import CompileError, ConfigError, DeepdeskError, RunAborted
from .evaluation import (
    CachedTextJudge,
    CachedVisionJudge,
    CriterionSet,
    JudgeCache,
    compile_report,
    default_criterion_set,
    key_supportiveness,
    load_points,
    main_alignment,
    race_score,
)
from .evaluation.criteria import DIMENSION_LABELS
from .evaluation.metrics import VisionPair, vision_win_rate
from .gateway import Gateway, HttpBackend, ScriptedBackend
from .planner import Planner, ResearchQuestion
from .sandbox import FakeSandboxExecutor, SubprocessSandboxExecutor
from .search import HttpFetcher, HttpSearchClient, StaticFetcher, StaticSearchClient
from .store import ChunkStore, TableStore
from .table_analysis import TableAnalyzer
from .trajectory import RunTrace
from .web_analysis import WebAnalyzer
from .writer import Writer

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


def _slugify(text: str) -> str:
    slug = re.sub(r"[^a-z0-9]+", "-", text.lower()).strip("-")
    return slug[:48] or "question"


def _load_config(args) -> RunConfig:
    if args.config:
        config = RunConfig.load(args.config)
    else:
        config = RunConfig()
    if args.seed is not None:
        config.seed = args.seed
    return config


def _load_script(config: RunConfig) -> dict:
    if not config.script_file:
        raise ConfigError("run.script is required for --offline runs")
    try:
        with open(config.script_file, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read run.script file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"run.script is not valid JSON: {exc}") from exc


def _build_engine(config: RunConfig, offline: bool, question_id: str):
    trace = RunTrace(question_id)
    workdir = os.path.join(config.output_dir, ".work", question_id)
    if offline:
        script = _load_script(config)
        backend = ScriptedBackend.from_file(config.script_file)
        search_client = StaticSearchClient.from_entries(script.get("search", []))
        fetcher = StaticFetcher(script.get("pages", {}))
        executor = FakeSandboxExecutor.from_entries(script.get("sandbox", []))
    else:
        if not config.models:
            raise ConfigError("models.* sections are required for live runs")
        backend = HttpBackend(config.models)
        if not config.search.endpoint:
            raise ConfigError("search.endpoint is required for live runs")
        search_client = HttpSearchClient(config.search.endpoint)
        fetcher = HttpFetcher()
        executor = SubprocessSandboxExecutor(config.sandbox.argv(), workdir=workdir)
    gateway = Gateway(backend, trace)

    bundle_dir = config.require_bundle_dir()
    store = TableStore(embed_fn=gateway.embed, cache_path=config.embedding_cache_path())
    store.ingest(bundle_dir)

    chunks = ChunkStore(chunk_size=config.store.chunk_size,
                        overlap=config.store.chunk_overlap)
    assets_dir = os.path.join(config.output_dir, question_id, "assets")
    analyzer = TableAnalyzer(
        gateway, store, executor, trace, config.table_analysis,
        assets_dir=assets_dir,
        workdir=workdir,
        sandbox_timeout_s=config.sandbox.timeout_s,
    )
    web = WebAnalyzer(gateway, search_client, fetcher, chunks, trace,
                      config.web_analysis)
    writer = Writer(gateway, chunks, trace)
    planner = Planner(gateway, web, analyzer, writer, trace,
                      output_dir=config.output_dir, config=config.planner,
                      seed=config.seed)
    return planner


def _print_config(config: RunConfig) -> None:
    blob = {
        "models": {k: vars(v) for k, v in config.models.items()},
        "store": vars(config.store),
        "planner": vars(config.planner),
        "table_analysis": vars(config.table_analysis),
        "web_analysis": vars(config.web_analysis),
        "sandbox": vars(config.sandbox),
        "search": vars(config.search),
        "eval": vars(config.eval),
        "output_dir": config.output_dir,
        "script_file": config.script_file,
        "seed": config.seed,
    }
    print(json.dumps(blob, indent=2, sort_keys=True))


# -- commands -----------------------------------------------------------------


def cmd_run(args) -> int:
    config = _load_config(args)
    if args.question_file:
        with open(args.question_file, encoding="utf-8") as fh:
            text = fh.read().strip()
    else:
        text = args.question
    if not text:
        print("error: provide --question or --question-file", file=sys.stderr)
        return EXIT_USAGE
    question_id = args.question_id or _slugify(text)
    if args.dry_run:
        _print_config(config)
        return EXIT_OK
    planner = _build_engine(config, args.offline, question_id)
    question = ResearchQuestion(id=question_id, text=text, domain=args.domain)
    try:
        bundle = planner.run_research(question)
    except RunAborted as exc:
        print(f"run aborted: {exc}", file=sys.stderr)
        if exc.trajectory_path:
            print(f"partial trajectory: {exc.trajectory_path}", file=sys.stderr)
        return EXIT_RUNTIME
    print(bundle.root)
    return EXIT_OK


def cmd_ingest(args) -> int:
    config = _load_config(args)
    if args.bundle:
        config.store.bundle_dir = args.bundle
    bundle_dir = config.require_bundle_dir()
    if args.offline or not config.models:
        # honor the script's embedding dimension so the cache matches later runs
        if config.script_file and os.path.exists(config.script_file):
            backend = ScriptedBackend.from_file(config.script_file)
        else:
            backend = ScriptedBackend([])
        embed_fn = backend.embed
    else:
        embed_fn = Gateway(HttpBackend(config.models), RunTrace("ingest")).embed
    store = TableStore(embed_fn=embed_fn, cache_path=config.embedding_cache_path())
    count = store.ingest(bundle_dir, eager=args.embed)
    print(f"ingested {count} tables from {bundle_dir}")
    return EXIT_OK


def _eval_gateway(config: RunConfig, args) -> tuple[Gateway, JudgeCache, str]:
    cache = JudgeCache(config.eval.cache_dir)
    if args.offline:
        script = _load_script(config)
        backend = ScriptedBackend.from_file(config.script_file)
        label = "scripted"
        del script
    else:
        if not config.models:
            raise ConfigError("models.* sections are required for live evaluation")
        backend = HttpBackend(config.models)
        judge = config.models.get("judge_text")
        label = judge.model if judge else "default"
    return Gateway(backend, RunTrace("eval")), cache, label


def _criteria(config: RunConfig, args) -> CriterionSet:
    path = args.criteria or config.eval.criteria_file
    if path:
        return CriterionSet.load(path)
    return default_criterion_set()


def cmd_eval_race(args) -> int:
    config = _load_config(args)
    gateway, cache, label = _eval_gateway(config, args)
    judge = CachedTextJudge(gateway, cache, label)
    with open(args.gen, encoding="utf-8") as fh:
        gen = fh.read()
    with open(args.ref, encoding="utf-8") as fh:
        ref = fh.read()
    sheet = race_score(judge, gen, ref, _criteria(config, args))
    os.makedirs(os.path.join(args.out, "scores"), exist_ok=True)
    qid = args.question_id or "pair"
    with open(os.path.join(args.out, "scores", f"{qid}.json"), "w", encoding="utf-8") as fh:
        json.dump(sheet.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    summary = {
        "overall": sheet.overall,
        "dimensions": {
            DIMENSION_LABELS.get(name, name): scores["gen"]
            for name, scores in sheet.dimension_scores.items()
        },
    }
    with open(os.path.join(args.out, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"{'overall':<12}{sheet.overall:.4f}")
    for label_, value in sorted(summary["dimensions"].items()):
        print(f"{label_:<12}{value:.3f}")
    return EXIT_OK


def cmd_eval_knowledge(args) -> int:
    config = _load_config(args)
    gateway, cache, label = _eval_gateway(config, args)
    judge = CachedTextJudge(gateway, cache, label)
    point_files = sorted(
        f for f in os.listdir(args.points) if f.endswith(".json"))
    if not point_files:
        print(f"error: no points files in {args.points}", file=sys.stderr)
        return EXIT_USAGE
    rows = []
    per_question = {}
    for name in point_files:
        points = load_points(os.path.join(args.points, name))
        report_path = os.path.join(args.reports, points.question_id, "report.md")
        if not os.path.exists(report_path):
            print(f"error: no report for {points.question_id} under {args.reports}",
                  file=sys.stderr)
            return EXIT_USAGE
        with open(report_path, encoding="utf-8") as fh:
            report = fh.read()
        main = main_alignment(judge, report, points)
        support, coverage, table_use = key_supportiveness(judge, report, points)
        key = sum(coverage) / len(coverage)
        per_question[points.question_id] = {
            "Main.": main, "Key.": key, "Support.": support,
            "coverage_indicators": coverage, "table_use_indicators": table_use,
            "domain": points.domain,
        }
        rows.append((points.question_id, main, key, support))
        os.makedirs(os.path.join(args.out, "scores"), exist_ok=True)
        with open(os.path.join(args.out, "scores", f"{points.question_id}.json"),
                  "w", encoding="utf-8") as fh:
            json.dump(per_question[points.question_id], fh, indent=2, sort_keys=True)
            fh.write("\n")
    n = len(rows)
    summary = {
        "questions": per_question,
        "mean": {
            "Main.": sum(r[1] for r in rows) / n,
            "Key.": sum(r[2] for r in rows) / n,
            "Support.": sum(r[3] for r in rows) / n,
        },
    }
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"{'question':<24}{'Main.':>8}{'Key.':>8}{'Support.':>10}")
    for qid, main, key, support in rows:
        print(f"{qid:<24}{main:>8.1f}{key:>8.3f}{support:>10.3f}")
    print(f"{'mean':<24}{summary['mean']['Main.']:>8.1f}"
          f"{summary['mean']['Key.']:>8.3f}{summary['mean']['Support.']:>10.3f}")
    return EXIT_OK


def cmd_eval_vision(args) -> int:
    config = _load_config(args)
    gateway, cache, label = _eval_gateway(config, args)
    judge = CachedVisionJudge(gateway, cache, label)
    def bundle_ids(root: str) -> list[str]:
        return sorted(
            d for d in os.listdir(root)
            if os.path.exists(os.path.join(root, d, "report.md")))

    ids_a = bundle_ids(args.bundles_a)
    ids_b = bundle_ids(args.bundles_b)
    if ids_a != ids_b:
        print(f"error: bundle sets are not aligned "
              f"({len(ids_a)} vs {len(ids_b)} questions)", file=sys.stderr)
        return EXIT_USAGE
    max_pages = config.eval.max_pages_per_report
    pairs = []
    excluded = []
    for qid in ids_a:
        try:
            bundle_a = ReportBundle(root=os.path.join(args.bundles_a, qid))
            bundle_b = ReportBundle(root=os.path.join(args.bundles_b, qid))
            compiled_a = compile_report(bundle_a)
            compiled_b = compile_report(bundle_b)
        except (CompileError, DeepdeskError) as exc:
            excluded.append(qid)
            print(f"warning: excluding {qid}: {exc}", file=sys.stderr)
            continue
        meta = bundle_a.meta() if os.path.exists(bundle_a.meta_path) else {}
        pairs.append(VisionPair(
            question_id=qid,
            question_text=meta.get("question_text", qid),
            pages_a=tuple(compiled_a.page_paths[:max_pages]),
            pages_b=tuple(compiled_b.page_paths[:max_pages]),
            domain=meta.get("domain"),
        ))
    summary = vision_win_rate(judge, pairs, seed=config.seed, excluded=excluded)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "vision.json"), "w", encoding="utf-8") as fh:
        json.dump(summary.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"win rate A over B: {summary.win_rate:.3f} "
          f"({len(summary.records)} questions, seed {summary.seed})")
    for domain, rate in sorted(summary.per_domain.items()):
        print(f"  {domain:<24}{rate:.3f}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    path = args.path
    if os.path.isdir(path):
        path = os.path.join(path, "trajectory.json")
    with open(path, encoding="utf-8") as fh:
        steps = json.load(fh)
    print(f"{'step':>4}  {'phase':<9}{'subtask':<8}{'tool':<15}"
          f"{'materials':<22}{'exchanges':>9}")
    for step in steps:
        tool = (step.get("tool_call") or {}).get("kind", "-")
        materials = ",".join(step.get("material_ids", [])) or "-"
        print(f"{step['index']:>4}  {step['phase']:<9}"
              f"{(step.get('subtask_id') or '-'):<8}{tool:<15}"
              f"{materials:<22}{len(step.get('exchanges', [])):>9}")
    return EXIT_OK


# -- argument parsing ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deepdesk",
        description="Hybrid-knowledge research engine and report evaluator")
    parser.add_argument("--config", help="path to the run config file")
    parser.add_argument("--seed", type=int, default=None,
                        help="seed for randomized evaluation ordering")
    parser.add_argument("--dry-run", action="store_true",
                        help="print the resolved config and exit")
    parser.add_argument("--offline", action="store_true",
                        help="use the scripted backend from run.script")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="answer a research question")
    p_run.add_argument("--question", help="question text")
    p_run.add_argument("--question-file", help="file containing the question")
    p_run.add_argument("--question-id", help="bundle directory name")
    p_run.add_argument("--domain", help="benchmark domain tag")
    p_run.set_defaults(func=cmd_run)

    p_ingest = sub.add_parser("ingest", help="load and validate a table bundle")
    p_ingest.add_argument("--bundle", help="bundle directory (defaults to config)")
    p_ingest.add_argument("--embed", action="store_true",
                          help="embed all tables eagerly and write the cache")
    p_ingest.set_defaults(func=cmd_ingest)

    p_eval = sub.add_parser("eval", help="evaluate reports")
    eval_sub = p_eval.add_subparsers(dest="mode", required=True)

    p_race = eval_sub.add_parser("race", help="rubric comparison vs a reference report")
    p_race.add_argument("--gen", required=True)
    p_race.add_argument("--ref", required=True)
    p_race.add_argument("--criteria")
    p_race.add_argument("--question-id")
    p_race.add_argument("--out", required=True)
    p_race.set_defaults(func=cmd_eval_race)

    p_knowledge = eval_sub.add_parser("knowledge",
                                      help="knowledge-point metrics over bundles")
    p_knowledge.add_argument("--reports", required=True,
                             help="directory of report bundles")
    p_knowledge.add_argument("--points", required=True,
                             help="directory of knowledge-point files")
    p_knowledge.add_argument("--out", required=True)
    p_knowledge.set_defaults(func=cmd_eval_knowledge)

    p_vision = eval_sub.add_parser("vision", help="pairwise PDF preference")
    p_vision.add_argument("--bundles-a", required=True)
    p_vision.add_argument("--bundles-b", required=True)
    p_vision.add_argument("--out", required=True)
    p_vision.set_defaults(func=cmd_eval_vision)

    p_inspect = sub.add_parser("inspect-trajectory", help="summarize a trajectory log")
    p_inspect.add_argument("path", help="bundle directory or trajectory.json")
    p_inspect.set_defaults(func=cmd_inspect)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DeepdeskError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
