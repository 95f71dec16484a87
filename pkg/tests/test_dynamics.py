#
# Copyright (c) 2025 Commonwealth Scientific and Industrial Research Organisation (CSIRO). All rights reserved.
# Use of this source code is governed by a BSD-style license that can be
# found in the LICENSE file. See the AUTHORS file for names of contributors.
#
# Seeded properties of the simulated loop dynamics, checked at the sample
# sizes the analysis tables are read at.
#
import math

import numpy as np

from vrloop.agents.simulated import SIM_HINT_MARKER
from vrloop.bon import run_bon
from vrloop.core import LoopConfig, Termination, Verdict, VerdictMode
from vrloop.divergence import alpha_divergence, jensen_shannon
from vrloop.loop import check_attempt, round_series, run_vr_loop
from vrloop.metrics import (
    matched_compute_compare, precision_at_coverage, precision_coverage, round_pass1_series, score_accuracy_series,
)
from vrloop.vil import collect_vil_episode, scan_episode_leaks

from conftest import make_problem, sim_generator, sim_verifier


def _problems(n: int, **kw):
    return [make_problem(f"q{i:04d}", str(20000 + 37 * i), **kw) for i in range(n)]


def _loops(problems, gen, ver, cfg, loops_per_problem):
    return [run_vr_loop(p, gen, ver, cfg, loop_id=j) for p in problems for j in range(loops_per_problem)]


def _se(p: float, n: int) -> float:
    return math.sqrt(p * (1.0 - p) / n)


def test_divergence_properties_on_random_pairs():
    rng = np.random.default_rng(2025)
    ln2 = math.log(2.0)
    for _ in range(10_000):
        k = int(rng.integers(2, 40))
        p, q = rng.dirichlet(np.ones(k)), rng.dirichlet(np.ones(k))
        js = jensen_shannon(p, q)
        assert abs(js - jensen_shannon(q, p)) <= 1e-12
        assert 0.0 <= js <= ln2 + 1e-12
        assert jensen_shannon(p, p) <= 1e-9
        if np.max(np.abs(p - q)) > 1e-3:
            assert js > 1e-9
        a = alpha_divergence(p, q, 0.5)
        assert abs(a - alpha_divergence(q, p, 0.5)) <= 1e-10
        assert abs(a - 4.0 * (1.0 - np.sum(np.sqrt(p * q)))) <= 1e-10


def test_loop_invariants_hold_across_seeded_loops():
    R = 5
    problems = _problems(250)
    gen, ver = sim_generator(0.2, uplift=0.1), sim_verifier(0.8, 0.2)
    cfg = LoopConfig(max_rounds=R, seed=11)
    traces = _loops(problems, gen, ver, cfg, 4)
    assert len(traces) == 1000
    for t in traces:
        assert t.check() == []
        assert t.generator_calls <= R + 1
        assert t.verifier_calls <= R
        accepts = [i for i, rr in enumerate(t.rounds)
                   if rr.verifier_output is not None and rr.verifier_output.verdict == Verdict.ACCEPT]
        if t.termination == Termination.ACCEPTED:
            assert accepts == [len(t.rounds) - 1]
            assert t.generator_calls == t.verifier_calls
        else:
            assert accepts == []
            assert t.generator_calls == t.verifier_calls + 1

    by_key = {t.key: t for t in traces}
    for p in problems[::10]:
        for j in range(4):
            again = run_vr_loop(p, gen, ver, cfg, loop_id=j)
            assert again.model_dump_json() == by_key[again.key].model_dump_json()


def test_ground_truth_loops_never_lose_a_correct_solution():
    R = 5
    cfg = LoopConfig(max_rounds=R, seed=12, verdict_mode=VerdictMode.GROUND_TRUTH)
    traces = _loops(_problems(250), sim_generator(0.2, uplift=0.1), sim_verifier(0.8, 0.2), cfg, 4)
    for t in traces:
        assert t.check() == []
        series = round_series(t)
        assert all(a <= b for a, b in zip(series, series[1:]))
        assert (t.termination == Termination.ACCEPTED) == bool(t.final_attempt.correct)


def test_score_drift_rises_while_accuracy_stays_flat():
    R = 20
    ver = sim_verifier(0.0, 0.0, score_if_correct=0.0, score_if_incorrect=0.0, score_drift=0.05)
    traces = _loops(_problems(50), sim_generator(0.3), ver, LoopConfig(max_rounds=R, seed=13), 4)
    assert len(traces) == 200
    points = score_accuracy_series(traces)
    assert [p.round for p in points] == list(range(R))
    scores = [p.mean_score for p in points]
    assert all(a < b for a, b in zip(scores, scores[1:]))
    assert scores[-1] == 1.0

    pass1 = round_pass1_series(traces)
    early, late = np.mean(pass1[1:11]), np.mean(pass1[11:21])
    assert abs(late - early) < 0.05


def test_trained_verifier_dominates_the_frontier():
    R = 10
    problems = _problems(250)
    gen = sim_generator(0.1, uplift=0.1)
    cfg = LoopConfig(max_rounds=R, seed=14)
    trained = precision_coverage(_loops(problems, gen, sim_verifier(0.9, 0.05), cfg, 4))
    untrained = precision_coverage(_loops(problems, gen, sim_verifier(0.6, 0.5), cfg, 4))

    precisions = [p.precision for p in trained if p.precision is not None]
    assert all(b >= a - 0.01 for a, b in zip(precisions, precisions[1:]))
    coverages = [p.coverage for p in trained]
    assert all(a <= b for a, b in zip(coverages, coverages[1:]))

    # untrained acceptances already cover about half the loops after one round
    matched = untrained[0].coverage
    assert abs(matched - 0.5) <= 0.05
    p_trained = precision_at_coverage(trained, matched)
    assert p_trained is not None
    assert p_trained >= 3.0 * untrained[0].precision


def _matched_rows(uplift: float):
    R = 10
    problems = _problems(125)
    gen, ver = sim_generator(0.1, uplift=uplift), sim_verifier(0.9, 0.05)
    seed = 15
    traces = _loops(problems, gen, ver, LoopConfig(max_rounds=R, seed=seed), 4)
    runs = [run_bon(p, gen, ver, R + 1, seed, loop_id=j) for p in problems for j in range(4)]
    return matched_compute_compare(traces, runs, list(range(5, R + 1)))


def test_refinement_beats_best_of_n_at_matched_compute():
    for row in _matched_rows(0.1):
        assert row.loops == 500
        assert row.bon_generator_calls == row.vr_generator_budget
        se = math.hypot(_se(row.vr_pass1, row.loops), _se(row.bon_pass1, row.loops))
        assert row.vr_pass1 - row.bon_pass1 > 2.0 * se


def test_without_uplift_refinement_matches_best_of_n():
    for row in _matched_rows(0.0):
        assert row.bon_generator_calls == row.vr_generator_budget
        se = math.hypot(_se(row.vr_pass1, row.loops), _se(row.bon_pass1, row.loops))
        assert abs(row.vr_pass1 - row.bon_pass1) <= 2.0 * se


def test_episodes_are_clean_and_rewarded_by_final_correctness():
    problems = _problems(50, reference_solution="Add the terms pairwise and simplify the result.")
    gen, ver = sim_generator(0.1, uplift=0.2), sim_verifier(0.9, 0.1, frozen=True)
    cfg = LoopConfig(max_rounds=6, seed=16)
    count = 0
    for p in problems:
        for j in range(4):
            ep = collect_vil_episode(p, gen, ver, cfg, loop_id=j)
            assert scan_episode_leaks(ep, p) == []
            trace = run_vr_loop(p, gen, ver, cfg, loop_id=j)
            assert ep.final_reward == int(bool(trace.final_attempt.correct))
            count += 1
    assert count == 200


def test_informative_refinement_adds_its_uplift():
    problem = make_problem()
    gen = sim_generator(0.1, uplift=0.3)
    prev = gen.generate_initial(problem, seed=0)
    feedback = f"{SIM_HINT_MARKER} 3: the sum is off by one."
    hits = sum(bool(check_attempt(problem, gen.refine(problem, prev, feedback, seed=s)).correct)
               for s in range(10_000))
    assert abs(hits / 10_000 - 0.4) <= 0.02
