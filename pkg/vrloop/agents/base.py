#
# Copyright (c) 2025 Commonwealth Scientific and Industrial Research Organisation (CSIRO). All rights reserved.
# Use of this source code is governed by a BSD-style license that can be
# found in the LICENSE file. See the AUTHORS file for names of contributors.
#
import math
from typing import Any, Dict, List, Literal, Optional, Protocol, Tuple, runtime_checkable

from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..core import Attempt, Message, Problem, VerifierOutput, VerifyMode
from ..errors import ConfigError
from ..protocol import PromptSet, TemplateId

MASS_TOLERANCE = 1e-9
EPSILON = 1e-12


class EndpointConfig(BaseModel):
    base_url: str = Field("http://localhost:8000/v1", description="OpenAI-compatible API root")
    model: str = Field("default", description="model name sent with every request")
    temperature: float = Field(1.0, ge=0.0)
    top_p: float = Field(1.0, gt=0.0, le=1.0)
    max_tokens: int = Field(4096, ge=1)
    top_logprobs: int = Field(5, ge=1, le=20, description="K, number of alternatives per position")
    timeout: float = Field(120.0, gt=0, description="request timeout in seconds")
    max_retries: int = Field(4, ge=0)
    backoff_base: float = Field(1.0, ge=0, description="first retry delay in seconds, doubled per retry")
    backoff_max: float = Field(30.0, ge=0)
    max_in_flight: int = Field(16, ge=1, description="max concurrent requests to this endpoint")
    api_key_env: str = Field("VRLOOP_API_KEY", description="environment variable holding the API key")
    scoring: Literal["prompt_logprobs", "per_position"] = Field(
        "per_position", description="how teacher probabilities of forced tokens are obtained")
    extra_body: Dict[str, Any] = Field(default_factory=dict, description="additional request fields")


class TokenDist(BaseModel):
    """Truncated next-token distribution at one generated position.

    The listed tokens are the alternatives plus the chosen token; everything
    else is lumped into `tail_mass`.
    """
    model_config = ConfigDict(frozen=True)

    position: int = Field(ge=0)
    chosen_token: str
    chosen_logprob: float = Field(le=0.0)
    alternatives: List[Tuple[str, float]] = Field(default_factory=list)
    tail_mass: float = Field(ge=0.0, le=1.0)

    @model_validator(mode="after")
    def _check_mass(self):
        for _, lp in self.alternatives:
            if lp > 0.0:
                raise ValueError(f"position {self.position}: positive logprob {lp}")
        total = sum(self.listed().values()) + self.tail_mass
        if abs(total - 1.0) > MASS_TOLERANCE:
            raise ValueError(f"position {self.position}: mass {total} != 1")
        return self

    def listed(self) -> Dict[str, float]:
        probs = {tok: math.exp(lp) for tok, lp in self.alternatives}
        probs.setdefault(self.chosen_token, math.exp(self.chosen_logprob))
        return probs

    @classmethod
    def from_logprobs(cls, position: int, chosen_token: str, chosen_logprob: Optional[float],
                      alternatives: List[Tuple[str, float]], k: Optional[int] = None) -> "TokenDist":
        """Build a distribution from endpoint logprobs, repairing rounding drift.

        A chosen token missing from the alternatives with unknown logprob gets
        half of the residual mass.
        """
        alts = sorted(((t, min(0.0, float(lp))) for t, lp in alternatives), key=lambda a: -a[1])
        if k is not None:
            alts = alts[:k]
        lookup = dict(alts)
        if chosen_logprob is None:
            chosen_logprob = lookup.get(chosen_token)
        if chosen_logprob is None:
            residual = max(0.0, 1.0 - sum(math.exp(lp) for _, lp in alts))
            chosen_logprob = math.log(max(residual / 2.0, EPSILON))
        chosen_logprob = min(0.0, float(chosen_logprob))
        probs = {t: math.exp(lp) for t, lp in alts}
        probs.setdefault(chosen_token, math.exp(chosen_logprob))
        total = sum(probs.values())
        if total > 1.0:
            shift = math.log(total)
            alts = [(t, lp - shift) for t, lp in alts]
            chosen_logprob -= shift
            total = 1.0
        return cls(position=position, chosen_token=chosen_token, chosen_logprob=chosen_logprob,
                   alternatives=alts, tail_mass=max(0.0, 1.0 - total))

    def force(self, token: str) -> "TokenDist":
        """The same distribution with `token` as the chosen token."""
        if token == self.chosen_token:
            return self
        lookup = self.listed()
        if token in lookup:
            return TokenDist.from_logprobs(self.position, token, math.log(lookup[token]),
                                           self._listed_as_alternatives())
        return TokenDist.from_logprobs(self.position, token, None, self._listed_as_alternatives())

    def _listed_as_alternatives(self) -> List[Tuple[str, float]]:
        return [(t, math.log(p)) for t, p in self.listed().items()]


@runtime_checkable
class GeneratorAgent(Protocol):
    def generate_initial(self, problem: Problem, *, seed: int) -> Attempt:
        ...

    def refine(self, problem: Problem, prev: Attempt, feedback: Optional[str], *, seed: int) -> Attempt:
        ...


@runtime_checkable
class VerifierAgent(Protocol):
    frozen: bool

    def verify(self, problem: Problem, attempt: Attempt, mode: VerifyMode = VerifyMode.PLAIN, *,
               seed: int) -> VerifierOutput:
        ...


@runtime_checkable
class LogprobModel(Protocol):
    """A model that exposes per-token distributions."""
    scoring_mechanism: str

    def complete_with_logprobs(self, messages: List[Message], *, seed: int,
                               max_tokens: Optional[int] = None) -> Tuple[str, List[TokenDist]]:
        ...

    def score_tokens(self, messages: List[Message], tokens: List[str]) -> List[TokenDist]:
        ...


def generator_messages(prompts: PromptSet, problem: Problem, prev: Optional[Attempt] = None,
                       feedback: Optional[str] = None) -> List[Message]:
    if prev is None:
        return prompts.render(TemplateId.GENERATOR_INITIAL, {"statement": problem.statement})
    if feedback is None:
        return prompts.render(TemplateId.GENERATOR_RETRY,
                              {"statement": problem.statement, "prior_solution": prev.text})
    return prompts.render(TemplateId.GENERATOR_REFINE,
                          {"statement": problem.statement, "prior_solution": prev.text, "feedback": feedback})


def verifier_messages(prompts: PromptSet, problem: Problem, attempt: Attempt,
                      mode: VerifyMode = VerifyMode.PLAIN) -> List[Message]:
    if mode == VerifyMode.REFERENCE_CONDITIONED:
        if not problem.gold_answer:
            raise ConfigError(f"problem {problem.id}: reference-conditioned verification needs a gold answer")
        return prompts.render(TemplateId.VERIFIER_TEACHER, {
            "statement": problem.statement,
            "prior_solution": attempt.text,
            "reference_solution": problem.reference,
        })
    return prompts.render(TemplateId.VERIFIER_PLAIN,
                          {"statement": problem.statement, "prior_solution": attempt.text})


def word_count(messages: List[Message]) -> int:
    return sum(len(m.content.split()) for m in messages)
