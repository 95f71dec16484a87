#
# Copyright (c) 2025 Commonwealth Scientific and Industrial Research Organisation (CSIRO). All rights reserved.
# Use of this source code is governed by a BSD-style license that can be
# found in the LICENSE file. See the AUTHORS file for names of contributors.
#
import pytest

from vrloop.bon import Selection, bon_correct, run_bon, select_best_of_n
from vrloop.core import LoopConfig
from vrloop.errors import TransportError
from vrloop.loop import run_vr_loop

from conftest import sim_generator, sim_verifier


def test_bon_shares_round_zero_with_the_loop(problem):
    gen, ver = sim_generator(0.4), sim_verifier(0.7, 0.3)
    for loop_id in range(5):
        trace = run_vr_loop(problem, gen, ver, LoopConfig(max_rounds=3, seed=2), loop_id=loop_id)
        run = run_bon(problem, gen, ver, 4, 2, loop_id=loop_id)
        assert run.samples[0].attempt.text == trace.rounds[0].attempt.text
        assert run.samples[0].verifier_output.verdict == trace.rounds[0].verifier_output.verdict


def test_selection_prefers_accepted(problem):
    run = run_bon(problem, sim_generator(0.5), sim_verifier(1.0, 0.0), 8, 0)
    idx, how = select_best_of_n(run, 8)
    if any(s.attempt.correct for s in run.samples):
        assert how == Selection.ACCEPTED
        assert run.samples[idx].attempt.correct
    assert run.selected_index is not None


def test_fallback_when_nothing_is_accepted(problem):
    run = run_bon(problem, sim_generator(0.0), sim_verifier(1.0, 0.0), 3, 0)
    assert run.selection == Selection.FALLBACK
    assert not bon_correct(run, 3)


def test_prefix_selection_is_deterministic(problem):
    run = run_bon(problem, sim_generator(0.5), sim_verifier(0.5, 0.5), 6, 4)
    for n in range(1, 7):
        assert select_best_of_n(run, n) == select_best_of_n(run, n)
        idx, _ = select_best_of_n(run, n)
        assert idx < n
    with pytest.raises(ValueError):
        select_best_of_n(run, 7)


class FlakyVerifier:
    frozen = False

    def __init__(self):
        self.calls = 0

    def verify(self, problem, attempt, mode=None, *, seed):
        self.calls += 1
        if self.calls == 2:
            raise TransportError("timeout")
        return sim_verifier().verify(problem, attempt, seed=seed)


def test_failed_samples_degrade_the_run(problem):
    run = run_bon(problem, sim_generator(0.0), FlakyVerifier(), 3, 0)
    assert run.degraded
    assert not run.samples[1].ok
    assert "timeout" in run.samples[1].error
    idx, _ = select_best_of_n(run, 3)
    assert idx in (0, 2)
