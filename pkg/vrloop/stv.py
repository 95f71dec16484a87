#
# Copyright (c) 2025 Commonwealth Scientific and Industrial Research Organisation (CSIRO). All rights reserved.
# Use of this source code is governed by a BSD-style license that can be
# found in the LICENSE file. See the AUTHORS file for names of contributors.
#
"""Training signal for self-trained verification.

Three record kinds are built for an external trainer:

* OPD records: student-sampled verifier responses with the student's and
  the reference-conditioned teacher's next-token distributions at every
  position, and the per-position divergence between them.
* Verdict records: student verdicts labelled with the verdict reward.
* SFT records: teacher-sampled responses for the plain verifier prompt.

No gradients are computed here; `stv_loss_report` only monitors the value
of the combined objective.
"""
import traceback
from typing import Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field, model_validator
from ivcap_service import ExecutionError, getLogger

from .agents.base import GeneratorAgent, LogprobModel, TokenDist, VerifierAgent, verifier_messages
from .core import Attempt, Message, Problem, VRTrace, Verdict, VerifyMode, derive_seed
from .divergence import DivergenceKind, align_distributions, divergence
from .errors import CapabilityError, DataError, TransportError
from .loop import check_attempt
from .protocol import PromptSet, default_prompts
from .store import read_export, write_export

logger = getLogger("stv")

OPD_SCHEMA = "urn:vrloop:schema.opd.1"
VERDICT_SCHEMA = "urn:vrloop:schema.verdict.1"
SFT_SCHEMA = "urn:vrloop:schema.sft.1"

MEAN_TOLERANCE = 1e-12


class StvConfig(BaseModel):
    alpha: float = Field(0.5, gt=0.0, lt=1.0, description="order of the alpha-family divergence")
    divergence_kind: DivergenceKind = DivergenceKind.JENSEN_SHANNON
    lam: float = Field(1.0, ge=0.0, alias="lambda", description="weight of the verdict-reward term")
    samples_per_pair: int = Field(1, ge=1, description="student responses sampled per (problem, solution) pair")
    max_tokens: Optional[int] = Field(None, ge=1, description="cap on student response length")

    model_config = {"populate_by_name": True}


class VerifyPair(BaseModel):
    """A problem and one generator solution to be verified."""
    problem: Problem
    attempt: Attempt
    source: str = Field(description="where the solution came from, e.g. trace:p1/3:r2")

    @property
    def attempt_ref(self) -> str:
        return f"{self.problem.id}:{self.source}"


def pairs_from_traces(traces: Sequence[VRTrace], problems: Dict[str, Problem], *,
                      max_per_problem: Optional[int] = None) -> List[VerifyPair]:
    """Every generator solution recorded in `traces`, in trace order."""
    pairs = []
    counts: Dict[str, int] = {}
    for t in traces:
        problem = problems.get(t.problem_id)
        if problem is None:
            raise DataError(f"trace {t.key} refers to unknown problem '{t.problem_id}'")
        for rr in t.rounds:
            if max_per_problem is not None and counts.get(problem.id, 0) >= max_per_problem:
                break
            pairs.append(VerifyPair(problem=problem, attempt=rr.attempt,
                                    source=f"trace:{t.key}:r{rr.attempt.round_index}"))
            counts[problem.id] = counts.get(problem.id, 0) + 1
    return pairs


def sample_rollout_pairs(problems: Sequence[Problem], generator: GeneratorAgent, n_per_problem: int,
                         seed: int, failures: Optional[List[ExecutionError]] = None) -> List[VerifyPair]:
    """Fresh round-0 generator samples, answer-checked.

    Samples that fail on transport are skipped and reported in `failures`.
    """
    pairs = []
    for p in problems:
        for i in range(n_per_problem):
            s = derive_seed(seed, p.id, "pair", i)
            try:
                attempt = check_attempt(p, generator.generate_initial(p, seed=s))
            except TransportError as ex:
                logger.warning(f"skipping rollout pair {p.id}:rollout:{i} - {ex}")
                _report(failures, f"{p.id}:rollout:{i}", ex)
                continue
            pairs.append(VerifyPair(problem=p, attempt=attempt, source=f"rollout:{i}"))
    return pairs


def _report(failures: Optional[List[ExecutionError]], ref: str, ex: Exception):
    if failures is not None:
        failures.append(ExecutionError(error=f"{ref}: {ex}", type=type(ex).__name__,
                                       traceback=traceback.format_exc()))


# ---- on-policy distillation ----

class PositionRecord(BaseModel):
    position: int
    token: str
    student: TokenDist
    teacher: TokenDist
    support: List[str] = Field(description="aligned support; the last atom is the shared tail")
    student_probs: List[float]
    teacher_probs: List[float]
    divergence: float = Field(ge=0.0)


class OPDRecord(BaseModel):
    jschema: str = Field(OPD_SCHEMA, alias="$schema")
    problem_id: str
    attempt_ref: str
    sample_index: int = 0
    seed: int
    sampled_by: str = Field("student", description="who produced the scored tokens")
    scoring_mechanism: str = ""
    divergence_kind: DivergenceKind
    alpha: float
    student_prompt: List[Message]
    teacher_prompt: List[Message]
    student_tokens: List[str]
    positions: List[PositionRecord]
    mean_divergence: float = Field(ge=0.0)

    model_config = {"populate_by_name": True}

    @model_validator(mode="after")
    def _check(self):
        if self.sampled_by != "student":
            raise ValueError(f"record {self.attempt_ref}: tokens must be student-sampled, not {self.sampled_by}")
        if len(self.positions) != len(self.student_tokens):
            raise ValueError(f"record {self.attempt_ref}: {len(self.positions)} positions "
                             f"for {len(self.student_tokens)} tokens")
        for i, (pos, tok) in enumerate(zip(self.positions, self.student_tokens)):
            if pos.position != i or pos.token != tok:
                raise ValueError(f"record {self.attempt_ref}: position {i} is not aligned with the student tokens")
        if self.positions:
            mean = float(np.mean([p.divergence for p in self.positions]))
            if abs(mean - self.mean_divergence) > MEAN_TOLERANCE:
                raise ValueError(f"record {self.attempt_ref}: mean {self.mean_divergence} != {mean}")
        return self


def build_opd_records(
    student: LogprobModel,
    teacher: LogprobModel,
    pairs: Sequence[VerifyPair],
    config: StvConfig = None,
    *,
    seed: int = 0,
    prompts: PromptSet = None,
    failures: Optional[List[ExecutionError]] = None,
) -> List[OPDRecord]:
    """Sample verifier responses from `student` and score them under `teacher`.

    The teacher sees the reference solution; both score the same prefixes.
    Records that fail on transport are skipped and reported in `failures`.
    """
    config = config or StvConfig()
    prompts = prompts or default_prompts()
    records = []
    for pair in pairs:
        for i in range(config.samples_per_pair):
            s = derive_seed(seed, pair.attempt_ref, "opd", i)
            try:
                records.append(_opd_record(student, teacher, pair, i, s, config, prompts))
            except TransportError as ex:
                logger.warning(f"skipping opd record {pair.attempt_ref}#{i} - {ex}")
                _report(failures, f"{pair.attempt_ref}#{i}", ex)
    logger.info(f"built {len(records)} opd record(s) from {len(pairs)} pair(s)")
    return records


def _opd_record(student: LogprobModel, teacher: LogprobModel, pair: VerifyPair, index: int, seed: int,
                config: StvConfig, prompts: PromptSet) -> OPDRecord:
    student_prompt = verifier_messages(prompts, pair.problem, pair.attempt, VerifyMode.PLAIN)
    teacher_prompt = verifier_messages(prompts, pair.problem, pair.attempt, VerifyMode.REFERENCE_CONDITIONED)
    _, sdists = student.complete_with_logprobs(student_prompt, seed=seed, max_tokens=config.max_tokens)
    tokens = [d.chosen_token for d in sdists]
    tdists = teacher.score_tokens(teacher_prompt, tokens) if tokens else []
    if len(tdists) != len(tokens):
        raise CapabilityError(f"teacher scored {len(tdists)} of {len(tokens)} student tokens")
    positions = []
    for i, (sd, td) in enumerate(zip(sdists, tdists)):
        a = align_distributions(sd, td)
        positions.append(PositionRecord(
            position=i,
            token=tokens[i],
            student=sd,
            teacher=td,
            support=a.support,
            student_probs=a.p.tolist(),
            teacher_probs=a.q.tolist(),
            divergence=divergence(a.p, a.q, config.divergence_kind, config.alpha),
        ))
    mean = float(np.mean([p.divergence for p in positions])) if positions else 0.0
    return OPDRecord(
        problem_id=pair.problem.id,
        attempt_ref=pair.attempt_ref,
        sample_index=index,
        seed=seed,
        scoring_mechanism=getattr(teacher, "scoring_mechanism", ""),
        divergence_kind=config.divergence_kind,
        alpha=config.alpha,
        student_prompt=student_prompt,
        teacher_prompt=teacher_prompt,
        student_tokens=tokens,
        positions=positions,
        mean_divergence=mean,
    )


# ---- verdict reward ----

def verdict_reward(verdict: Verdict, attempt_correct: bool) -> int:
    """1 when the verdict agrees with the true correctness of the solution."""
    return int((verdict == Verdict.ACCEPT) == bool(attempt_correct))


class VerdictRecord(BaseModel):
    jschema: str = Field(VERDICT_SCHEMA, alias="$schema")
    problem_id: str
    attempt_ref: str
    sample_index: int = 0
    seed: int
    prompt: List[Message]
    raw: str
    verdict: Verdict
    attempt_correct: bool
    reward: int = Field(ge=0, le=1)

    model_config = {"populate_by_name": True}

    @model_validator(mode="after")
    def _check_reward(self):
        if self.reward != verdict_reward(self.verdict, self.attempt_correct):
            raise ValueError(f"record {self.attempt_ref}: reward {self.reward} does not match its verdict")
        return self


def build_verdict_records(verifier: VerifierAgent, pairs: Sequence[VerifyPair], *, seed: int = 0,
                          samples_per_pair: int = 1, prompts: PromptSet = None,
                          failures: Optional[List[ExecutionError]] = None) -> List[VerdictRecord]:
    prompts = prompts or default_prompts()
    records = []
    for pair in pairs:
        attempt = pair.attempt if pair.attempt.correct is not None else check_attempt(pair.problem, pair.attempt)
        prompt = verifier_messages(prompts, pair.problem, attempt, VerifyMode.PLAIN)
        for i in range(samples_per_pair):
            s = derive_seed(seed, pair.attempt_ref, "verdict", i)
            try:
                out = verifier.verify(pair.problem, attempt, VerifyMode.PLAIN, seed=s)
            except TransportError as ex:
                logger.warning(f"skipping verdict record {pair.attempt_ref}#{i} - {ex}")
                _report(failures, f"{pair.attempt_ref}#{i}", ex)
                continue
            records.append(VerdictRecord(
                problem_id=pair.problem.id, attempt_ref=pair.attempt_ref, sample_index=i, seed=s,
                prompt=prompt, raw=out.raw, verdict=out.verdict, attempt_correct=bool(attempt.correct),
                reward=verdict_reward(out.verdict, bool(attempt.correct)),
            ))
    return records


# ---- off-policy baseline ----

class SFTRecord(BaseModel):
    """A teacher response paired with the plain prompt the student will see."""
    jschema: str = Field(SFT_SCHEMA, alias="$schema")
    problem_id: str
    attempt_ref: str
    sample_index: int = 0
    seed: int
    prompt: List[Message]
    completion: str
    verdict: Verdict
    attempt_correct: bool

    model_config = {"populate_by_name": True}


def build_sft_records(teacher: VerifierAgent, pairs: Sequence[VerifyPair], *, seed: int = 0,
                      samples_per_pair: int = 1, prompts: PromptSet = None,
                      failures: Optional[List[ExecutionError]] = None) -> List[SFTRecord]:
    prompts = prompts or default_prompts()
    records = []
    for pair in pairs:
        attempt = pair.attempt if pair.attempt.correct is not None else check_attempt(pair.problem, pair.attempt)
        prompt = verifier_messages(prompts, pair.problem, attempt, VerifyMode.PLAIN)
        for i in range(samples_per_pair):
            s = derive_seed(seed, pair.attempt_ref, "sft", i)
            try:
                out = teacher.verify(pair.problem, attempt, VerifyMode.REFERENCE_CONDITIONED, seed=s)
            except TransportError as ex:
                logger.warning(f"skipping sft record {pair.attempt_ref}#{i} - {ex}")
                _report(failures, f"{pair.attempt_ref}#{i}", ex)
                continue
            records.append(SFTRecord(problem_id=pair.problem.id, attempt_ref=pair.attempt_ref, sample_index=i,
                                     seed=s, prompt=prompt, completion=out.raw, verdict=out.verdict,
                                     attempt_correct=bool(attempt.correct)))
    return records


# ---- objective monitoring ----

class StvLossReport(BaseModel):
    """L_STV = L_OPD + lambda * L_RL, with L_RL = -(mean verdict reward)."""
    opd_loss: float
    rl_loss: float
    lam: float
    total: float
    opd_records: int
    verdict_records: int


def stv_loss_report(opd: Sequence[OPDRecord], verdicts: Sequence[VerdictRecord], lam: float = 1.0) -> StvLossReport:
    if not opd or not verdicts:
        raise DataError(f"loss report needs opd and verdict records, got {len(opd)} and {len(verdicts)}")
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    opd_loss = float(np.mean([r.mean_divergence for r in opd]))
    rl_loss = -float(np.mean([r.reward for r in verdicts]))
    return StvLossReport(opd_loss=opd_loss, rl_loss=rl_loss, lam=lam, total=opd_loss + lam * rl_loss,
                         opd_records=len(opd), verdict_records=len(verdicts))


# ---- export ----

def export_opd_dataset(records: Sequence[OPDRecord], path: str) -> int:
    return write_export(path, OPD_SCHEMA, records)


def load_opd_dataset(path: str) -> List[OPDRecord]:
    return read_export(path, OPDRecord, OPD_SCHEMA)


def export_verdict_dataset(records: Sequence[VerdictRecord], path: str) -> int:
    return write_export(path, VERDICT_SCHEMA, records)


def load_verdict_dataset(path: str) -> List[VerdictRecord]:
    return read_export(path, VerdictRecord, VERDICT_SCHEMA)


def export_sft_dataset(records: Sequence[SFTRecord], path: str) -> int:
    return write_export(path, SFT_SCHEMA, records)


def load_sft_dataset(path: str) -> List[SFTRecord]:
    return read_export(path, SFTRecord, SFT_SCHEMA)
