#
# Copyright (c) 2025 Commonwealth Scientific and Industrial Research Organisation (CSIRO). All rights reserved.
# Use of this source code is governed by a BSD-style license that can be
# found in the LICENSE file. See the AUTHORS file for names of contributors.
#
"""Command line front end.

    vrloop bin | dedup | run-vr | run-bon | build-opd | collect-vil | metrics | serve-sim

Exit codes: 0 success, 1 some work items failed, 2 configuration error.
"""
import argparse
import json
import os
import sys
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from ivcap_service import ExecutionError, getLogger

from .bon import BonRun, run_bon
from .config import Agents, RunConfig, build_agents, config_hash, load_config
from .core import Problem, Termination, VerdictMode, VRTrace
from .dataset import (
    Pass1Estimate, apply_bins, dedup_test_set, estimate_pass1, load_problems, save_problems,
)
from .embeddings import embed_problems
from .errors import ConfigError, DataError, VRLoopError
from .executor import FailureRecord, ScheduleReport, schedule_loops
from .logger import logging_init
from .loop import run_vr_loop
from .metrics import (
    matched_compute_compare, pass_at_k_curve, precision_coverage, round_pass1_by_bin, score_accuracy_series,
    delta_series, write_frontier_csv, write_matched_compute_csv, write_pass_at_k_csv, write_round_series_csv,
    write_score_accuracy_csv,
)
from .server import SimBackend, start_sim_server
from .stv import (
    VerifyPair, build_opd_records, build_sft_records, build_verdict_records, export_opd_dataset,
    export_sft_dataset, export_verdict_dataset, pairs_from_traces, sample_rollout_pairs, stv_loss_report,
)
from .store import JsonlAppender, RunManifest, open_manifest, read_jsonl, save_manifest, file_digest
from .version import get_version
from .vil import VilEpisode, collect_vil_episode, export_episodes, reward_histogram

logger = getLogger("cli")

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_CONFIG = 2

TRACES_FILE = "traces.jsonl"
BON_FILE = "bon.jsonl"
ROLLOUTS_FILE = "rollouts.jsonl"
ESTIMATES_FILE = "estimates.jsonl"
FAILURES_FILE = "failures.jsonl"
VIL_LOG_FILE = "episodes.log.jsonl"


class Run:
    """State shared by the subcommands: config, manifest, agents and file locations."""

    def __init__(self, cfg: RunConfig, *, http=None):
        self.cfg = cfg
        self.dir = cfg.run.output_dir
        os.makedirs(self.dir, exist_ok=True)
        self.manifest: RunManifest = open_manifest(self.dir, config_hash(cfg), cfg.run.seed)
        self._http = http
        self._agents: Optional[Agents] = None

    @property
    def agents(self) -> Agents:
        if self._agents is None:
            self._agents = build_agents(self.cfg, http=self._http)
        return self._agents

    def path(self, name: str) -> str:
        return os.path.join(self.dir, name)

    def problems(self) -> List[Problem]:
        path = self.cfg.data.problems
        if not path:
            raise ConfigError("data.problems is required for this command")
        problems = load_problems(path)
        self.manifest.datasets[os.path.basename(path)] = file_digest(path)
        if self.cfg.data.include_bins:
            keep = set(self.cfg.data.include_bins)
            problems = [p for p in problems if p.bin in keep]
        return problems

    def record_failures(self, report: ScheduleReport, arm: str):
        if not report.failures:
            return
        with JsonlAppender(self.path(FAILURES_FILE)) as out:
            for key in sorted(report.failures):
                out.append(FailureRecord.from_error(key, report.failures[key], arm))

    def save(self):
        if self._agents is not None:
            if self._agents.scoring_mechanism:
                self.manifest.scoring_mechanism = self._agents.scoring_mechanism
            self._agents.close()
        save_manifest(self.manifest, self.dir)


def _loop_items(problems: Sequence[Problem], loops: int) -> List[Tuple[Problem, int]]:
    return [(p, i) for p in problems for i in range(loops)]


def _item_key(item: Tuple[Problem, int]) -> str:
    return f"{item[0].id}/{item[1]}"


def load_traces(path: str) -> List[VRTrace]:
    """Traces of a run file, one per (problem, loop); a later successful trace wins over an error."""
    latest: Dict[str, VRTrace] = {}
    for t in read_jsonl(path, VRTrace):
        prev = latest.get(t.key)
        if prev is None or prev.termination == Termination.ERROR or t.termination != Termination.ERROR:
            latest[t.key] = t
    return [latest[k] for k in sorted(latest)]


def _latest_bon(path: str) -> List[BonRun]:
    latest = {r.key: r for r in read_jsonl(path, BonRun)}
    return [latest[k] for k in sorted(latest)]


# ---- subcommands ----

def cmd_bin(run: Run, args) -> int:
    problems = run.problems()
    done = {e.problem_id: e for e in read_jsonl(run.path(ESTIMATES_FILE), Pass1Estimate)}
    todo = [p for p in problems if p.id not in done]
    gen = run.agents.generator
    n = run.cfg.data.rollouts
    rollouts = JsonlAppender(run.path(ROLLOUTS_FILE))
    estimates = JsonlAppender(run.path(ESTIMATES_FILE))

    def store(p: Problem, est: Pass1Estimate):
        for r in est.rollouts:
            rollouts.append(r)
        estimates.append(est.model_copy(update={"rollouts": []}))
        done[p.id] = est
        run.manifest.add_usage(r.attempt.usage for r in est.rollouts if r.attempt and r.attempt.usage)

    report = schedule_loops(todo, lambda p: estimate_pass1(p, gen, n, run.cfg.run.seed), run.cfg.run.in_flight,
                            key=lambda p: p.id, on_result=store, name="estimate")
    rollouts.close()
    estimates.close()
    run.record_failures(report, "estimate")
    incomplete = [pid for pid, e in done.items() if e.incomplete]
    if incomplete:
        logger.warning(f"{len(incomplete)} estimate(s) are incomplete: {', '.join(sorted(incomplete))}")
    known = [p for p in problems if p.id in done]
    binned = apply_bins(known, {pid: e.value for pid, e in done.items()})
    save_problems(binned, run.path("problems.binned.jsonl"))
    counts: Dict[str, int] = {}
    for p in binned:
        counts[p.bin.value] = counts.get(p.bin.value, 0) + 1
    logger.info(f"bins: {json.dumps(counts, sort_keys=True)}")
    run.manifest.mark_completed("estimate", done)
    return EXIT_PARTIAL if report.failures or incomplete else EXIT_OK


def cmd_dedup(run: Run, args) -> int:
    d = run.cfg.data
    if not d.train or not d.test:
        raise ConfigError("data.train and data.test are required for dedup")
    train, test = load_problems(d.train), load_problems(d.test)
    for path in (d.train, d.test):
        run.manifest.datasets[os.path.basename(path)] = file_digest(path)
    vectors = embed_problems(train + test, run.agents.embedder(), cache_dir=run.dir)
    result = dedup_test_set(test, train, vectors, d.dedup_threshold)
    save_problems(result.kept, run.path("test.dedup.jsonl"))
    with open(run.path("dedup.report.json"), "w", encoding="utf-8") as fh:
        report = {"threshold": result.threshold, "kept": len(result.kept),
                  "removed": [r.model_dump() for r in result.removed]}
        json.dump(report, fh, indent=2)
    return EXIT_OK


def cmd_run_vr(run: Run, args) -> int:
    problems = run.problems()
    done = {t.key for t in load_traces(run.path(TRACES_FILE)) if t.termination != Termination.ERROR}
    items = [it for it in _loop_items(problems, run.cfg.run.loops_per_problem) if _item_key(it) not in done]
    logger.info(f"run-vr: {len(done)} loop(s) already done, {len(items)} to go")
    agents = run.agents
    agents.probe()
    config = run.cfg.loop_config()
    errors = []

    def work(item):
        p, loop_id = item
        return run_vr_loop(p, agents.generator, agents.verifier, config, loop_id=loop_id)

    with JsonlAppender(run.path(TRACES_FILE)) as out:
        def store(item, trace: VRTrace):
            out.append(trace)
            run.manifest.add_usage(trace.usage)
            if trace.termination == Termination.ERROR:
                errors.append(trace.key)
            else:
                run.manifest.mark_completed("vr", [trace.key])

        report = schedule_loops(items, work, run.cfg.run.in_flight, key=_item_key, on_result=store, name="vr")
    run.record_failures(report, "vr")
    if errors:
        logger.warning(f"{len(errors)} loop(s) ended with an endpoint error")
    return EXIT_PARTIAL if report.failures or errors else EXIT_OK


def cmd_run_bon(run: Run, args) -> int:
    problems = run.problems()
    n = args.n or run.cfg.bon_n
    done = {r.key for r in _latest_bon(run.path(BON_FILE)) if not r.degraded and r.n >= n}
    items = [it for it in _loop_items(problems, run.cfg.run.loops_per_problem) if _item_key(it) not in done]
    agents = run.agents
    agents.probe()
    degraded = []

    def work(item):
        p, loop_id = item
        return run_bon(p, agents.generator, agents.verifier, n, run.cfg.run.seed, loop_id=loop_id)

    with JsonlAppender(run.path(BON_FILE)) as out:
        def store(item, res: BonRun):
            out.append(res)
            for s in res.samples:
                run.manifest.add_usage(u for u in (s.attempt.usage if s.attempt else None,
                                                   s.verifier_output.usage if s.verifier_output else None) if u)
            if res.degraded:
                degraded.append(res.key)
            else:
                run.manifest.mark_completed("bon", [res.key])

        report = schedule_loops(items, work, run.cfg.run.in_flight, key=_item_key, on_result=store, name="bon")
    run.record_failures(report, "bon")
    return EXIT_PARTIAL if report.failures or degraded else EXIT_OK


def _sample_pairs(run: Run, problems: Sequence[Problem], failures: List[FailureRecord]) -> List[VerifyPair]:
    """Fresh rollout pairs, one scheduled item per problem, in problem order."""
    cfg = run.cfg
    sampled: Dict[str, List[VerifyPair]] = {}

    def work(p: Problem):
        errors: List[ExecutionError] = []
        return sample_rollout_pairs([p], run.agents.generator, cfg.stv.pairs_per_problem, cfg.run.seed,
                                    failures=errors), errors

    def store(p: Problem, res):
        sampled[p.id] = res[0]
        failures.extend(FailureRecord.from_error(p.id, f, "pairs") for f in res[1])

    report = schedule_loops(problems, work, cfg.run.in_flight, key=lambda p: p.id, on_result=store, name="pairs")
    failures.extend(FailureRecord.from_error(k, e, "pairs") for k, e in sorted(report.failures.items()))
    return [pair for p in problems for pair in sampled.get(p.id, [])]


def cmd_build_opd(run: Run, args) -> int:
    cfg = run.cfg
    problems = run.problems()
    agents = run.agents
    agents.probe(logprobs=True, scoring=True)
    failures: List[FailureRecord] = []
    if cfg.stv.pair_source == "traces":
        traces = [t for t in load_traces(run.path(TRACES_FILE)) if t.termination != Termination.ERROR]
        if not traces:
            raise ConfigError(f"pair_source 'traces' needs {run.path(TRACES_FILE)}; run run-vr first")
        pairs = pairs_from_traces(traces, {p.id: p for p in problems}, max_per_problem=cfg.stv.pairs_per_problem)
    else:
        pairs = _sample_pairs(run, problems, failures)
    logger.info(f"build-opd: {len(pairs)} pair(s) from {cfg.stv.pair_source}")

    def work(pair: VerifyPair):
        errors: List[ExecutionError] = []
        opd = build_opd_records(agents.student, agents.teacher, [pair], cfg.stv, seed=cfg.run.seed,
                                prompts=agents.prompts, failures=errors)
        verdicts = build_verdict_records(agents.verifier, [pair], seed=cfg.run.seed,
                                         samples_per_pair=cfg.stv.verdict_samples, prompts=agents.prompts,
                                         failures=errors)
        sft = []
        if cfg.stv.with_sft:
            sft = build_sft_records(agents.verifier, [pair], seed=cfg.run.seed,
                                    samples_per_pair=cfg.stv.samples_per_pair, prompts=agents.prompts,
                                    failures=errors)
        return opd, verdicts, sft, errors

    opd, verdicts, sft = [], [], []

    def store(pair: VerifyPair, res):
        opd.extend(res[0])
        verdicts.extend(res[1])
        sft.extend(res[2])
        failures.extend(FailureRecord.from_error(pair.attempt_ref, f, "opd") for f in res[3])

    report = schedule_loops(pairs, work, cfg.run.in_flight, key=lambda p: p.attempt_ref, on_result=store,
                            name="opd")
    order = lambda r: (r.attempt_ref, r.sample_index)  # noqa: E731
    export_opd_dataset(sorted(opd, key=order), run.path("opd.jsonl"))
    export_verdict_dataset(sorted(verdicts, key=order), run.path("verdicts.jsonl"))
    if cfg.stv.with_sft:
        export_sft_dataset(sorted(sft, key=order), run.path("sft.jsonl"))
    if opd and verdicts:
        loss = stv_loss_report(opd, verdicts, cfg.stv.lam)
        with open(run.path("stv_report.json"), "w", encoding="utf-8") as fh:
            fh.write(loss.model_dump_json(indent=2))
        logger.info(f"stv objective {loss.total:.6f} (opd {loss.opd_loss:.6f}, rl {loss.rl_loss:.6f})")
    run.record_failures(report, "opd")
    if failures:
        with JsonlAppender(run.path(FAILURES_FILE)) as out:
            for f in failures:
                out.append(f)
    return EXIT_PARTIAL if report.failures or failures else EXIT_OK


def cmd_collect_vil(run: Run, args) -> int:
    cfg = run.cfg
    problems = run.problems()
    agents = run.agents
    if not getattr(agents.verifier, "frozen", False):
        raise ConfigError("collect-vil needs a frozen verifier (verifier.frozen: true)")
    if cfg.loop.verdict_mode != VerdictMode.MODEL:
        raise ConfigError("collect-vil needs loop.verdict_mode: model")
    agents.probe()
    cap = args.max_episodes_per_problem or cfg.vil.max_episodes_per_problem
    loops = min(cfg.run.loops_per_problem, cap) if cap else cfg.run.loops_per_problem
    log_path = run.path(VIL_LOG_FILE)
    done = {f"{e.problem_id}/{e.loop_id}": e for e in read_jsonl(log_path, VilEpisode)}
    items = [it for it in _loop_items(problems, loops) if _item_key(it) not in done]
    config = cfg.loop_config()
    discarded = []

    def work(item):
        p, loop_id = item
        failures: List[ExecutionError] = []
        ep = collect_vil_episode(p, agents.generator, agents.verifier, config, loop_id=loop_id,
                                 verifier_tag=cfg.verifier.tag, failures=failures)
        return ep, failures

    with JsonlAppender(log_path) as out:
        def store(item, res):
            ep, failures = res
            if ep is None:
                discarded.extend(FailureRecord.from_error(_item_key(item), f, "vil") for f in failures)
                return
            out.append(ep)
            done[_item_key(item)] = ep
            run.manifest.mark_completed("vil", [_item_key(item)])

        report = schedule_loops(items, work, cfg.run.in_flight, key=_item_key, on_result=store, name="vil")
    episodes = [done[k] for k in sorted(done)]
    export_episodes(episodes, run.path("episodes.jsonl"))
    logger.info(f"collect-vil: {len(episodes)} episode(s), rewards {reward_histogram(episodes)}")
    run.record_failures(report, "vil")
    if discarded:
        with JsonlAppender(run.path(FAILURES_FILE)) as out:
            for f in discarded:
                out.append(f)
    return EXIT_PARTIAL if report.failures or discarded else EXIT_OK


def cmd_metrics(args) -> int:
    """Reads persisted files only; no config or network needed."""
    traces_path = args.traces or os.path.join(args.output_dir or ".", TRACES_FILE)
    out_dir = args.metrics_dir or os.path.join(os.path.dirname(traces_path) or ".", "metrics")
    os.makedirs(out_dir, exist_ok=True)
    traces = load_traces(traces_path)
    if not traces:
        raise DataError(f"no traces in {traces_path}")
    problems = {}
    if args.problems:
        problems = {p.id: p for p in load_problems(args.problems)}

    series = round_pass1_by_bin(traces, problems)
    if args.baseline:
        series["delta"] = delta_series(traces, load_traces(args.baseline))
    write_round_series_csv(series, os.path.join(out_dir, "round_pass1.csv"))
    write_pass_at_k_csv(pass_at_k_curve(traces), os.path.join(out_dir, "pass_at_k.csv"))
    write_frontier_csv(precision_coverage(traces), os.path.join(out_dir, "frontier.csv"))
    try:
        write_score_accuracy_csv(score_accuracy_series(traces), os.path.join(out_dir, "score_accuracy.csv"))
    except DataError as ex:
        logger.info(f"skipping score/accuracy series - {ex}")
    bon_path = args.bon or os.path.join(os.path.dirname(traces_path) or ".", BON_FILE)
    if os.path.exists(bon_path):
        runs = _latest_bon(bon_path)
        R = traces[0].max_rounds
        budgets = args.budgets
        if budgets is None and args.config:
            budgets = load_config(args.config).bon.budgets
        if budgets is None:
            budgets = list(range(min(R, min(r.n for r in runs) - 1) + 1))
        write_matched_compute_csv(matched_compute_compare(traces, runs, budgets),
                                  os.path.join(out_dir, "matched_compute.csv"))
    return EXIT_OK


def cmd_serve_sim(run: Run, args) -> int:
    agents = run.agents
    problems = run.problems() if run.cfg.data.problems else []
    if run.cfg.generator.kind != "simulated" or run.cfg.verifier.kind != "simulated":
        raise ConfigError("serve-sim needs simulated generator and verifier sections")
    backend = SimBackend(problems, agents.generator, agents.verifier, agents.student, agents.prompts)
    start_sim_server(backend, host=args.host, port=args.port, with_telemetry=args.with_telemetry, logger=logger)
    return EXIT_OK


COMMANDS: Dict[str, Callable[[Run, argparse.Namespace], int]] = {
    "bin": cmd_bin,
    "dedup": cmd_dedup,
    "run-vr": cmd_run_vr,
    "run-bon": cmd_run_bon,
    "build-opd": cmd_build_opd,
    "collect-vil": cmd_collect_vil,
    "serve-sim": cmd_serve_sim,
}


def _budgets(value: str) -> List[int]:
    try:
        return [int(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got '{value}'")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vrloop", description="Verification-refinement loop engine")
    parser.add_argument("--version", action="version", version=f"%(prog)s {get_version()}")
    parser.add_argument("--log-config", type=str, default=None, help="logging configuration (json)")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", type=str, default=os.environ.get("VRLOOP_CONFIG"), help="run config (yaml)")
    common.add_argument("--seed", type=int, default=None, help="base seed [0]")
    common.add_argument("--max-rounds", type=int, default=None, help="verification rounds per loop [20]")
    common.add_argument("--loops-per-problem", type=int, default=None, help="loops per problem [32]")
    common.add_argument("--in-flight", type=int, default=None, help="work items running at once [16]")
    common.add_argument("--output-dir", type=str, default=None, help="run directory")

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("bin", parents=[common], help="estimate pass@1 and assign difficulty bins")
    sub.add_parser("dedup", parents=[common], help="remove test problems too similar to training problems")
    sub.add_parser("run-vr", parents=[common], help="run verification-refinement loops")
    p = sub.add_parser("run-bon", parents=[common], help="run Best-of-N sampling")
    p.add_argument("--n", type=int, default=None, help="samples per run [max-rounds + 1]")
    sub.add_parser("build-opd", parents=[common], help="build distillation, verdict and sft records")
    p = sub.add_parser("collect-vil", parents=[common], help="collect generator episodes with a frozen verifier")
    p.add_argument("--max-episodes-per-problem", type=int, default=None)
    p = sub.add_parser("metrics", parents=[common], help="compute analysis tables from persisted traces")
    p.add_argument("--traces", type=str, default=None, help=f"trace file [<output-dir>/{TRACES_FILE}]")
    p.add_argument("--bon", type=str, default=None, help=f"BoN file [<output-dir>/{BON_FILE}]")
    p.add_argument("--baseline", type=str, default=None, help="baseline trace file for the delta series")
    p.add_argument("--problems", type=str, default=None, help="problems with bins for per-bin series")
    p.add_argument("--metrics-dir", type=str, default=None, help="where to write csv files")
    p.add_argument("--budgets", type=_budgets, default=None, help="comma separated refinement rounds [bon.budgets of --config, else 0..min(R, N-1)]")
    p = sub.add_parser("serve-sim", parents=[common], help="serve the simulated agents over HTTP")
    p.add_argument('--host', type=str, default=os.environ.get("HOST", "0.0.0.0"), help='Host address')
    p.add_argument('--port', type=int, default=os.environ.get("PORT", "8090"), help='Port number')
    p.add_argument('--with-telemetry', action="store_true", help='Initialise OpenTelemetry')
    return parser


def _overrides(args) -> Dict[str, Dict[str, object]]:
    return {
        "run": {"seed": args.seed, "output_dir": args.output_dir, "loops_per_problem": args.loops_per_problem,
                "in_flight": args.in_flight},
        "loop": {"max_rounds": args.max_rounds},
    }


def main(argv: Optional[Sequence[str]] = None, *, http=None) -> int:
    args = build_parser().parse_args(argv)
    logging_init(args.log_config)
    run = None
    try:
        if args.command == "metrics":
            return cmd_metrics(args)
        cfg = load_config(args.config, _overrides(args))
        run = Run(cfg, http=http)
        return COMMANDS[args.command](run, args)
    except (ConfigError, DataError) as ex:
        logger.error(f"{args.command}: {ex}")
        return EXIT_CONFIG
    except VRLoopError as ex:
        logger.error(f"{args.command} failed - {type(ex).__name__}: {ex}")
        return EXIT_PARTIAL
    finally:
        if run is not None:
            run.save()


if __name__ == "__main__":
    sys.exit(main())
