#
# Copyright (c) 2025 Commonwealth Scientific and Industrial Research Organisation (CSIRO). All rights reserved.
# Use of this source code is governed by a BSD-style license that can be
# found in the LICENSE file. See the AUTHORS file for names of contributors.
#
"""Domain types shared by the loop runner, the agents and the analysis code."""
import hashlib
from enum import Enum
from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

TRACE_SCHEMA = "urn:vrloop:schema.trace.1"

DEFAULT_GENERIC_FEEDBACK = "Your solution appears to be incorrect."


def derive_seed(*parts) -> int:
    """Derive a 63-bit seed from an ordered list of parts.

    The derivation only depends on the values of `parts`, so concurrent
    scheduling order can never change which seed a call receives.
    """
    h = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "big") >> 1


class Bin(str, Enum):
    HARDEST = "Hardest"
    HARD = "Hard"
    EXCLUDED = "Excluded"


class Verdict(str, Enum):
    ACCEPT = "accept"
    REJECT = "reject"


class VerdictMode(str, Enum):
    MODEL = "model"
    GROUND_TRUTH = "ground_truth"


class FeedbackMode(str, Enum):
    MODEL = "model"
    GENERIC = "generic"
    NONE = "none"


class VerifyMode(str, Enum):
    PLAIN = "plain"
    REFERENCE_CONDITIONED = "reference_conditioned"


class Termination(str, Enum):
    ACCEPTED = "accepted"
    MAX_ROUNDS = "max_rounds"
    ERROR = "error"


class Problem(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: str = Field(description="unique id within a dataset")
    statement: str = Field(description="problem statement")
    gold_answer: str = Field(description="ground-truth final answer")
    source: str = Field("", description="source tag")
    reference_solution: Optional[str] = Field(None, description="full reference solution, if available")
    bin: Optional[Bin] = Field(None, description="difficulty bin")
    pass1_estimate: Optional[float] = Field(None, ge=0.0, le=1.0, description="estimated pass@1")

    @model_validator(mode="after")
    def _check_bin(self):
        if self.bin == Bin.HARDEST and self.pass1_estimate not in (None, 0.0):
            raise ValueError(f"problem {self.id}: Hardest requires pass@1 = 0, got {self.pass1_estimate}")
        if self.bin == Bin.HARD and self.pass1_estimate is not None and not (0.0 < self.pass1_estimate < 0.2):
            raise ValueError(f"problem {self.id}: Hard requires 0 < pass@1 < 0.2, got {self.pass1_estimate}")
        return self

    @property
    def reference(self) -> str:
        return self.reference_solution or self.gold_answer


class CallUsage(BaseModel):
    model_config = ConfigDict(frozen=True)

    role: str = Field("", description="generator or verifier")
    round_index: int = Field(0, description="loop round the call belongs to")
    prompt_tokens: int = 0
    completion_tokens: int = 0
    wall_time: float = Field(0.0, description="seconds; zero for simulated agents")


class Message(BaseModel):
    model_config = ConfigDict(frozen=True)

    role: str
    content: str


class Attempt(BaseModel):
    model_config = ConfigDict(frozen=True)

    round_index: int = Field(ge=0, description="0 is the initial solution")
    text: str
    extracted_answer: Optional[str] = None
    correct: Optional[bool] = Field(None, description="set once checked against the gold answer")
    messages: List[Message] = Field(default_factory=list, description="exact context the generator was given")
    usage: Optional[CallUsage] = None


class VerifierOutput(BaseModel):
    model_config = ConfigDict(frozen=True)

    verdict: Verdict
    feedback: str = ""
    score: Optional[float] = Field(None, ge=0.0, le=1.0)
    raw: str = ""
    mode: VerdictMode = VerdictMode.MODEL
    verify_mode: VerifyMode = VerifyMode.PLAIN
    usage: Optional[CallUsage] = None

    @property
    def accepted(self) -> bool:
        return self.verdict == Verdict.ACCEPT


class LoopConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    max_rounds: int = Field(20, ge=1, description="R, the maximum number of verification rounds")
    verdict_mode: VerdictMode = VerdictMode.MODEL
    feedback_mode: FeedbackMode = FeedbackMode.MODEL
    generic_feedback_text: str = DEFAULT_GENERIC_FEEDBACK
    seed: int = Field(0, description="base seed for per-call seed derivation")


class RoundRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    attempt: Attempt
    verifier_output: Optional[VerifierOutput] = None


class VRTrace(BaseModel):
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    jschema: str = Field(TRACE_SCHEMA, alias="$schema")
    problem_id: str
    loop_id: int = 0
    seed: int
    max_rounds: int
    verdict_mode: VerdictMode = VerdictMode.MODEL
    feedback_mode: FeedbackMode = FeedbackMode.MODEL
    rounds: List[RoundRecord] = Field(default_factory=list)
    termination: Termination
    error: Optional[str] = None
    usage: List[CallUsage] = Field(default_factory=list)

    @property
    def key(self) -> str:
        return f"{self.problem_id}/{self.loop_id}"

    @property
    def generator_calls(self) -> int:
        return sum(1 for u in self.usage if u.role == "generator")

    @property
    def verifier_calls(self) -> int:
        return sum(1 for u in self.usage if u.role == "verifier")

    @property
    def accepted_round(self) -> Optional[int]:
        """The verification round (1-based) that accepted, if any."""
        for i, rr in enumerate(self.rounds):
            if rr.verifier_output is not None and rr.verifier_output.accepted:
                return i + 1
        return None

    @property
    def final_attempt(self) -> Optional[Attempt]:
        return self.rounds[-1].attempt if self.rounds else None

    def check(self) -> List[str]:
        """Return the list of protocol invariants this trace violates."""
        problems = []
        if self.rounds and self.rounds[0].attempt.round_index != 0:
            problems.append("first attempt is not round 0")
        for i, rr in enumerate(self.rounds):
            if rr.attempt.round_index != i:
                problems.append(f"attempt {i} has round_index {rr.attempt.round_index}")
        accepts = [i for i, rr in enumerate(self.rounds)
                   if rr.verifier_output is not None and rr.verifier_output.accepted]
        if len(accepts) > 1:
            problems.append("more than one accepting verdict")
        if accepts and accepts[0] != len(self.rounds) - 1:
            problems.append("attempts exist after an accepting verdict")
        if self.termination == Termination.ACCEPTED and not accepts:
            problems.append("terminated as accepted without an accepting verdict")
        verifications = sum(1 for rr in self.rounds if rr.verifier_output is not None)
        if verifications > self.max_rounds:
            problems.append(f"{verifications} verifications exceed R={self.max_rounds}")
        if len(self.rounds) > self.max_rounds + 1:
            problems.append(f"{len(self.rounds)} attempts exceed R+1")
        return problems


def by_problem(traces: List[VRTrace]) -> Dict[str, List[VRTrace]]:
    """Group traces by problem id, each group ordered by loop id."""
    groups: Dict[str, List[VRTrace]] = {}
    for t in traces:
        groups.setdefault(t.problem_id, []).append(t)
    for g in groups.values():
        g.sort(key=lambda t: t.loop_id)
    return groups
