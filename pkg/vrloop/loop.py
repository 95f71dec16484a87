#
# Copyright (c) 2025 Commonwealth Scientific and Industrial Research Organisation (CSIRO). All rights reserved.
# Use of this source code is governed by a BSD-style license that can be
# found in the LICENSE file. See the AUTHORS file for names of contributors.
#
"""The verification-refinement loop.

    y_0 ~ G(.|x)
    for r = 1..R:
        (v_r, f_r) ~ V(.|x, y_{r-1});  stop on accept
        y_r ~ G(.|x, y_{r-1}, f_r)

After the R-th rejection the refined y_R is still produced, so every trace
has a solution for every round up to R.
"""
from typing import List, Optional

from ivcap_service import getLogger

from .agents.base import GeneratorAgent, VerifierAgent
from .core import (
    Attempt, CallUsage, FeedbackMode, LoopConfig, Problem, RoundRecord, Termination, Verdict,
    VerdictMode, VerifierOutput, VRTrace, derive_seed,
)
from .errors import CapabilityError, TransportError
from .protocol import answers_equivalent

logger = getLogger("loop")


def loop_seed(base_seed: int, problem_id: str, loop_id: int) -> int:
    return derive_seed(base_seed, problem_id, loop_id)


def call_seed(seed: int, round_index: int, role: str) -> int:
    """Seed for the `role` call of round `round_index` of one loop."""
    return derive_seed(seed, round_index, role)


def check_attempt(problem: Problem, attempt: Attempt) -> Attempt:
    """Record the correctness of `attempt`; unextractable answers count as incorrect."""
    return attempt.model_copy(update={"correct": answers_equivalent(attempt.extracted_answer, problem.gold_answer)})


def run_vr_loop(
    problem: Problem,
    generator: GeneratorAgent,
    verifier: VerifierAgent,
    config: LoopConfig,
    seed: Optional[int] = None,
    *,
    loop_id: int = 0,
) -> VRTrace:
    """Run one V-R loop and return its trace.

    `seed` defaults to `config.seed`. Endpoint failures end the trace with
    termination `error`; everything recorded up to that point is kept.
    """
    base = config.seed if seed is None else seed
    lseed = loop_seed(base, problem.id, loop_id)
    rounds: List[RoundRecord] = []
    usage: List[CallUsage] = []
    termination = Termination.MAX_ROUNDS
    error = None
    pending: Optional[Attempt] = None

    def track(u: Optional[CallUsage]):
        if u is not None:
            usage.append(u)

    try:
        pending = check_attempt(problem, generator.generate_initial(problem, seed=call_seed(lseed, 0, "generator")))
        track(pending.usage)
        for r in range(1, config.max_rounds + 1):
            out = _verify(problem, pending, verifier, config, call_seed(lseed, r, "verifier"))
            track(out.usage)
            rounds.append(RoundRecord(attempt=pending, verifier_output=out))
            prev, pending = pending, None
            if out.accepted:
                termination = Termination.ACCEPTED
                break
            feedback = None if config.feedback_mode == FeedbackMode.NONE else out.feedback
            pending = check_attempt(problem, generator.refine(problem, prev, feedback,
                                                              seed=call_seed(lseed, r, "generator")))
            track(pending.usage)
        if pending is not None:
            rounds.append(RoundRecord(attempt=pending))
    except (TransportError, CapabilityError) as ex:
        termination = Termination.ERROR
        error = f"{type(ex).__name__}: {ex}"
        if pending is not None:
            rounds.append(RoundRecord(attempt=pending))
        logger.warning(f"loop {problem.id}/{loop_id} failed after {len(rounds)} attempt(s) - {error}")

    trace = VRTrace(
        problem_id=problem.id,
        loop_id=loop_id,
        seed=base,
        max_rounds=config.max_rounds,
        verdict_mode=config.verdict_mode,
        feedback_mode=config.feedback_mode,
        rounds=rounds,
        termination=termination,
        error=error,
        usage=usage,
    )
    logger.debug(f"loop {trace.key} {termination.value} after {len(rounds)} attempt(s)")
    return trace


def _verify(problem: Problem, attempt: Attempt, verifier: VerifierAgent, config: LoopConfig,
            seed: int) -> VerifierOutput:
    if config.verdict_mode == VerdictMode.GROUND_TRUTH:
        verdict = Verdict.ACCEPT if attempt.correct else Verdict.REJECT
        if verdict == Verdict.ACCEPT or config.feedback_mode != FeedbackMode.MODEL:
            # the oracle decides and no model feedback is needed
            out = VerifierOutput(verdict=verdict, mode=VerdictMode.GROUND_TRUTH)
        else:
            out = verifier.verify(problem, attempt, seed=seed)
            out = out.model_copy(update={"verdict": verdict, "mode": VerdictMode.GROUND_TRUTH})
    else:
        out = verifier.verify(problem, attempt, seed=seed)

    if out.accepted:
        return out
    if config.feedback_mode == FeedbackMode.GENERIC:
        return out.model_copy(update={"feedback": config.generic_feedback_text})
    if config.feedback_mode == FeedbackMode.NONE:
        return out.model_copy(update={"feedback": ""})
    return out


def round_series(trace: VRTrace, max_rounds: Optional[int] = None) -> List[bool]:
    """Correctness of the current solution after r = 0..R verification rounds.

    After acceptance, or once the trace ends, the last solution is carried
    forward to round R.
    """
    R = trace.max_rounds if max_rounds is None else max_rounds
    if not trace.rounds:
        return [False] * (R + 1)
    series = []
    for r in range(R + 1):
        idx = min(r, len(trace.rounds) - 1)
        series.append(bool(trace.rounds[idx].attempt.correct))
    return series
