#
# Copyright (c) 2025 Commonwealth Scientific and Industrial Research Organisation (CSIRO). All rights reserved.
# Use of this source code is governed by a BSD-style license that can be
# found in the LICENSE file. See the AUTHORS file for names of contributors.
#
"""Multi-turn generator episodes collected against a frozen verifier."""
import re
import traceback
from typing import Dict, List, Literal, Optional, Sequence

from pydantic import BaseModel, Field, model_validator
from ivcap_service import ExecutionError, getLogger

from .agents.base import GeneratorAgent, VerifierAgent
from .core import CallUsage, FeedbackMode, LoopConfig, Message, Problem, Termination, Verdict, VerdictMode, VRTrace
from .errors import ConfigError, DataError
from .loop import run_vr_loop
from .protocol import answers_equivalent
from .store import read_export, write_export

logger = getLogger("vil")

EPISODE_SCHEMA = "urn:vrloop:schema.episode.1"

# Heading the reference-conditioned verifier prompt puts above the reference.
REFERENCE_MARKER = "Reference solution (for your eyes only)"


class VilTurn(BaseModel):
    role: Literal["generator", "verifier"]
    round_index: int
    messages: List[Message] = Field(default_factory=list, description="context the generator acted on")
    content: str = Field(description="solution text, or the feedback delivered to the generator")
    verdict: Optional[Verdict] = None
    usage: Optional[CallUsage] = None


class VilEpisode(BaseModel):
    jschema: str = Field(EPISODE_SCHEMA, alias="$schema")
    problem_id: str
    loop_id: int
    seed: int
    verifier: str = Field(description="identity tag of the frozen verifier")
    verifier_frozen: bool = True
    feedback_mode: FeedbackMode
    termination: Termination
    turns: List[VilTurn]
    final_reward: int = Field(ge=0, le=1, description="correctness of the last solution, the only reward")

    model_config = {"populate_by_name": True}

    @model_validator(mode="after")
    def _check(self):
        if not self.verifier_frozen:
            raise ValueError(f"episode {self.problem_id}/{self.loop_id}: verifier is not frozen")
        for i, t in enumerate(self.turns):
            expected = "generator" if i % 2 == 0 else "verifier"
            if t.role != expected:
                raise ValueError(f"episode {self.problem_id}/{self.loop_id}: turn {i} is {t.role}, "
                                 f"expected {expected}")
        if not self.turns or (self.turns[-1].role != "generator" and self.turns[-1].verdict != Verdict.ACCEPT):
            raise ValueError(f"episode {self.problem_id}/{self.loop_id}: must end with a solution or an accept")
        return self

    @property
    def generator_turns(self) -> List[VilTurn]:
        return [t for t in self.turns if t.role == "generator"]


def episode_from_trace(trace: VRTrace, problem: Problem, verifier_tag: str) -> VilEpisode:
    """Turn a completed trace into an episode; the contexts are the ones stored on each attempt."""
    if trace.termination == Termination.ERROR:
        raise DataError(f"trace {trace.key} ended with an error - {trace.error}")
    turns = []
    for rr in trace.rounds:
        a = rr.attempt
        turns.append(VilTurn(role="generator", round_index=a.round_index, messages=a.messages,
                             content=a.text, usage=a.usage))
        out = rr.verifier_output
        if out is not None:
            turns.append(VilTurn(role="verifier", round_index=a.round_index + 1, content=out.feedback,
                                 verdict=out.verdict, usage=out.usage))
    final = trace.final_attempt
    reward = int(answers_equivalent(final.extracted_answer, problem.gold_answer))
    return VilEpisode(problem_id=trace.problem_id, loop_id=trace.loop_id, seed=trace.seed, verifier=verifier_tag,
                      feedback_mode=trace.feedback_mode, termination=trace.termination, turns=turns,
                      final_reward=reward)


def collect_vil_episode(
    problem: Problem,
    generator: GeneratorAgent,
    verifier: VerifierAgent,
    config: LoopConfig,
    seed: Optional[int] = None,
    *,
    loop_id: int = 0,
    verifier_tag: str = "verifier",
    failures: Optional[List[ExecutionError]] = None,
) -> Optional[VilEpisode]:
    """Roll out one V-R loop against a frozen verifier.

    Returns None when the loop fails; the failure is added to `failures`.
    """
    if not getattr(verifier, "frozen", False):
        raise ConfigError(f"verifier '{verifier_tag}' must be frozen to collect episodes")
    if config.verdict_mode != VerdictMode.MODEL:
        raise ConfigError("episodes require model verdicts; ground-truth verdicts expose the gold answer")
    trace = run_vr_loop(problem, generator, verifier, config, seed, loop_id=loop_id)
    if trace.termination == Termination.ERROR:
        logger.warning(f"discarding episode {trace.key} - {trace.error}")
        if failures is not None:
            failures.append(ExecutionError(error=f"{trace.key}: {trace.error}", type="LoopError",
                                           traceback=traceback.format_exc()))
        return None
    return episode_from_trace(trace, problem, verifier_tag)


def scan_episode_leaks(episode: VilEpisode, problem: Problem) -> List[str]:
    """Places where generator-visible context reveals the gold answer or the reference.

    The problem statement and the generator's own previous solution are
    removed before looking for the gold answer.
    """
    gold = re.compile(r"(?<![\w.])" + re.escape(problem.gold_answer.strip()) + r"(?![\w])")
    findings = []
    prior = None
    for t in episode.generator_turns:
        for m in t.messages:
            text = m.content.replace(problem.statement, "")
            if prior:
                text = text.replace(prior, "")
            where = f"{episode.problem_id}/{episode.loop_id} round {t.round_index} {m.role}"
            if REFERENCE_MARKER in text:
                findings.append(f"{where}: reference-conditioned prompt")
            if problem.reference_solution and problem.reference_solution.strip() in text:
                findings.append(f"{where}: reference solution")
            if gold.search(text):
                findings.append(f"{where}: gold answer")
        prior = t.content
    return findings


def reward_histogram(episodes: Sequence[VilEpisode]) -> Dict[int, int]:
    hist = {0: 0, 1: 0}
    for e in episodes:
        hist[e.final_reward] += 1
    return hist


def export_episodes(episodes: Sequence[VilEpisode], path: str) -> int:
    return write_export(path, EPISODE_SCHEMA, episodes)


def load_episodes(path: str) -> List[VilEpisode]:
    return read_export(path, VilEpisode, EPISODE_SCHEMA)
