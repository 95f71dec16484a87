#
# Copyright (c) 2025 Commonwealth Scientific and Industrial Research Organisation (CSIRO). All rights reserved.
# Use of this source code is governed by a BSD-style license that can be
# found in the LICENSE file. See the AUTHORS file for names of contributors.
#
import os
from typing import List, Optional

import pytest

from vrloop.agents import SimGenerator, SimGeneratorParams, SimVerifier, SimVerifierParams
from vrloop.core import Attempt, CallUsage, Problem, RoundRecord, Termination, VerifierOutput, Verdict, VRTrace

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


def make_problem(pid: str = "p1", gold: str = "1234", **kw) -> Problem:
    return Problem(id=pid, statement=f"Compute the value asked for in problem {pid}.", gold_answer=gold, **kw)


def sim_generator(p: float = 0.0, uplift: float = 0.0, generic: float = 0.0) -> SimGenerator:
    return SimGenerator(SimGeneratorParams(solve_prob={}, default_solve_prob=p,
                                           uplift_informative=uplift, uplift_generic=generic))


def sim_verifier(tpr: float = 1.0, fpr: float = 0.0, frozen: bool = False, **kw) -> SimVerifier:
    return SimVerifier(SimVerifierParams(tpr=tpr, fpr=fpr, **kw), frozen=frozen)


class ScriptedGenerator:
    """Emits the answers in `answers`, one per round, ignoring seeds."""

    def __init__(self, answers: List[str]):
        self.answers = answers
        self.calls = []

    def _attempt(self, round_index: int) -> Attempt:
        answer = self.answers[min(round_index, len(self.answers) - 1)]
        return Attempt(round_index=round_index, text=f"Attempt {round_index}. The final answer is \\boxed{{{answer}}}.",
                       extracted_answer=answer)

    def generate_initial(self, problem, *, seed):
        self.calls.append(("initial", None))
        return self._attempt(0)

    def refine(self, problem, prev, feedback, *, seed):
        self.calls.append(("refine", feedback))
        return self._attempt(prev.round_index + 1)


class ScriptedVerifier:
    """Returns the verdicts in `verdicts`, one per call."""
    frozen = False

    def __init__(self, verdicts: List[Verdict], scores: Optional[List[float]] = None):
        self.verdicts = verdicts
        self.scores = scores
        self.calls = 0

    def verify(self, problem, attempt, mode=None, *, seed):
        i = self.calls
        self.calls += 1
        score = self.scores[i] if self.scores else None
        return VerifierOutput(verdict=self.verdicts[i], feedback=f"{'fine' if self.verdicts[i] == Verdict.ACCEPT else 'step 3 is wrong'}",
                              score=score)


@pytest.fixture
def problem() -> Problem:
    return make_problem()


@pytest.fixture
def problems() -> List[Problem]:
    return [make_problem(f"p{i}", str(1000 + 17 * i)) for i in range(1, 5)]


def make_trace(pid: str, loop_id: int, correct: List[bool], accepted: bool, max_rounds: int,
               scores: Optional[List[float]] = None) -> VRTrace:
    """A trace with one attempt per entry of `correct`; the last is accepted or left unverified."""
    rounds = []
    usage = []
    for i, c in enumerate(correct):
        usage.append(CallUsage(role="generator", round_index=i))
        attempt = Attempt(round_index=i, text=f"attempt {i}", extracted_answer="1" if c else "0", correct=c)
        last = i == len(correct) - 1
        out = None
        if not last or accepted:
            verdict = Verdict.ACCEPT if last and accepted else Verdict.REJECT
            out = VerifierOutput(verdict=verdict, score=scores[i] if scores else None)
            usage.append(CallUsage(role="verifier", round_index=i + 1))
        rounds.append(RoundRecord(attempt=attempt, verifier_output=out))
    return VRTrace(problem_id=pid, loop_id=loop_id, seed=0, max_rounds=max_rounds, rounds=rounds,
                   termination=Termination.ACCEPTED if accepted else Termination.MAX_ROUNDS, usage=usage)
