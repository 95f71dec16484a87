#
# Copyright (c) 2025 Commonwealth Scientific and Industrial Research Organisation (CSIRO). All rights reserved.
# Use of this source code is governed by a BSD-style license that can be
# found in the LICENSE file. See the AUTHORS file for names of contributors.
#
"""Seeded simulated agents.

Every method is a pure function of the agent parameters, the seed and the
inputs, so runs against simulated agents replay byte for byte.
"""
import math
import re
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.special import softmax
from pydantic import BaseModel, Field

from ..core import (
    DEFAULT_GENERIC_FEEDBACK, Attempt, CallUsage, Message, Problem, VerifierOutput, VerifyMode, derive_seed,
)
from ..protocol import PromptSet, answers_equivalent, default_prompts, extract_answer, parse_verdict
from .base import TokenDist, generator_messages, verifier_messages, word_count

# Informative simulated feedback always starts with this phrase.
SIM_HINT_MARKER = "The first error is in step"

_PROGRESS_RE = re.compile(r"Refinements applied: informative=(\d+) generic=(\d+)")


def _clamp(p: float) -> float:
    return min(1.0, max(0.0, p))


class SimGeneratorParams(BaseModel):
    solve_prob: Dict[str, float] = Field(
        default_factory=lambda: {"Hardest": 0.0, "Hard": 0.1, "Excluded": 0.5},
        description="probability that an initial attempt is correct, per difficulty bin")
    default_solve_prob: float = Field(0.1, ge=0.0, le=1.0, description="used for problems without a bin")
    uplift_informative: float = Field(0.0, ge=-1.0, le=1.0,
                                      description="gain per refinement on informative feedback")
    uplift_generic: float = Field(0.0, ge=-1.0, le=1.0,
                                  description="gain per refinement on generic feedback")


class SimVerifierParams(BaseModel):
    tpr: float = Field(0.9, ge=0.0, le=1.0, description="P(accept | correct)")
    fpr: float = Field(0.05, ge=0.0, le=1.0, description="P(accept | incorrect)")
    informative_feedback_prob: float = Field(1.0, ge=0.0, le=1.0)
    score_if_correct: float = Field(0.5, ge=0.0, le=1.0)
    score_if_incorrect: float = Field(0.5, ge=0.0, le=1.0)
    score_drift: float = Field(0.0, description="additive score inflation per round")
    emit_score: bool = True
    teacher: Optional["SimVerifierParams"] = Field(
        None, description="parameters used in reference-conditioned mode")


SimVerifierParams.model_rebuild()


class SimGenerator:
    def __init__(self, params: SimGeneratorParams = None, *, prompts: PromptSet = None,
                 generic_feedback_text: str = DEFAULT_GENERIC_FEEDBACK):
        self.params = params or SimGeneratorParams()
        self.prompts = prompts or default_prompts()
        self.generic_feedback_text = generic_feedback_text

    def solve_prob(self, problem: Problem, informative: int = 0, generic: int = 0) -> float:
        p = self.params
        base = p.solve_prob.get(problem.bin.value, p.default_solve_prob) if problem.bin else p.default_solve_prob
        return _clamp(base + informative * p.uplift_informative + generic * p.uplift_generic)

    def generate_initial(self, problem: Problem, *, seed: int) -> Attempt:
        messages = generator_messages(self.prompts, problem)
        return self._attempt(problem, 0, 0, 0, seed, messages)

    def refine(self, problem: Problem, prev: Attempt, feedback: Optional[str], *, seed: int) -> Attempt:
        informative, generic = progress(prev.text)
        if feedback:
            if SIM_HINT_MARKER in feedback and feedback != self.generic_feedback_text:
                informative += 1
            else:
                generic += 1
        messages = generator_messages(self.prompts, problem, prev, feedback)
        return self._attempt(problem, prev.round_index + 1, informative, generic, seed, messages)

    def _attempt(self, problem: Problem, round_index: int, informative: int, generic: int,
                 seed: int, messages: List[Message]) -> Attempt:
        rng = np.random.default_rng(seed)
        correct = rng.random() < self.solve_prob(problem, informative, generic)
        answer = problem.gold_answer if correct else wrong_answer(problem.gold_answer, rng)
        text = (
            f"Simulated solution to problem {problem.id} (round {round_index}).\n"
            f"Refinements applied: informative={informative} generic={generic}.\n"
            f"Working through the problem step by step leads to the result below.\n"
            f"The final answer is \\boxed{{{answer}}}."
        )
        usage = CallUsage(role="generator", round_index=round_index,
                          prompt_tokens=word_count(messages), completion_tokens=len(text.split()))
        return Attempt(round_index=round_index, text=text, extracted_answer=extract_answer(text),
                       messages=messages, usage=usage)


def progress(text: str) -> Tuple[int, int]:
    m = _PROGRESS_RE.search(text or "")
    return (int(m.group(1)), int(m.group(2))) if m else (0, 0)


def wrong_answer(gold: str, rng: np.random.Generator) -> str:
    while True:
        candidate = str(int(rng.integers(0, 100000)))
        if not answers_equivalent(candidate, gold):
            return candidate


class SimVerifier:
    def __init__(self, params: SimVerifierParams = None, *, prompts: PromptSet = None, frozen: bool = False):
        self.params = params or SimVerifierParams()
        self.prompts = prompts or default_prompts()
        self.frozen = frozen

    def verify(self, problem: Problem, attempt: Attempt, mode: VerifyMode = VerifyMode.PLAIN, *,
               seed: int) -> VerifierOutput:
        messages = verifier_messages(self.prompts, problem, attempt, mode)
        raw = self.respond(problem, attempt, mode, seed=seed)
        usage = CallUsage(role="verifier", round_index=attempt.round_index + 1,
                          prompt_tokens=word_count(messages), completion_tokens=len(raw.split()))
        return parse_verdict(raw).model_copy(update={"verify_mode": mode, "usage": usage})

    def respond(self, problem: Problem, attempt: Attempt, mode: VerifyMode, *, seed: int) -> str:
        """The raw response text, in the verdict format the prompts ask for."""
        p = self.params
        if mode == VerifyMode.REFERENCE_CONDITIONED and p.teacher is not None:
            p = p.teacher
        answer = attempt.extracted_answer if attempt.extracted_answer is not None else extract_answer(attempt.text)
        correct = answers_equivalent(answer, problem.gold_answer)
        rng = np.random.default_rng(seed)
        accept = rng.random() < (p.tpr if correct else p.fpr)
        if accept:
            feedback = "I checked each step and the reasoning holds."
        elif rng.random() < p.informative_feedback_prob:
            step = int(rng.integers(1, 10))
            feedback = f"{SIM_HINT_MARKER} {step}: the computation there does not follow from the previous line."
        else:
            feedback = "Something in the solution may be off; please double-check your work."
        lines = [feedback]
        if p.emit_score:
            base = p.score_if_correct if correct else p.score_if_incorrect
            lines.append(f"Score: {_clamp(base + p.score_drift * (attempt.round_index + 1)):.6f}")
        lines.append(f"Predicted verdict: {'CORRECT' if accept else 'INCORRECT'}")
        return "\n".join(lines)


# ---- token distributions ----

_VOCAB = [
    " the", " step", " error", " is", " in", " solution", " answer", " correct", " incorrect",
    " because", " sum", " product", " case", " count", " not", " and", " so", " we", " check",
    " value", " final", " wrong", " missing", " term", " sign", " factor", " equation", " root",
    " each", " line", ".", ",", " therefore", " assumes", " divisible", " by", " two", " three",
    " four", " total", " odd", " even", " limit", " triangle", " angle", " side", " verdict", "\n",
]


class SimLogprobParams(BaseModel):
    top_logprobs: int = Field(5, ge=1)
    response_tokens: int = Field(24, ge=1)
    temperature: float = Field(1.0, gt=0.0)
    context_weight: float = Field(1.0, ge=0.0, description="how strongly the prompt shifts each distribution")


class SimLogprobModel:
    """Synthetic language model over a small vocabulary.

    Each next-token distribution depends on the prefix and, scaled by
    `context_weight`, on the full prompt. A student and a teacher prompt for
    the same pair therefore produce related but different distributions.
    """
    scoring_mechanism = "simulated"

    def __init__(self, params: SimLogprobParams = None):
        self.params = params or SimLogprobParams()

    def _probs(self, context: str, prefix: List[str], extra: Optional[str] = None) -> Tuple[List[str], np.ndarray]:
        vocab = list(_VOCAB)
        if extra is not None and extra not in vocab:
            vocab.append(extra)
        prefix_key = "".join(prefix)
        base = np.random.default_rng(derive_seed("base", prefix_key)).normal(0.0, 2.0, len(_VOCAB))
        shift = np.random.default_rng(derive_seed("context", context, prefix_key)).normal(0.0, 1.0, len(_VOCAB))
        logits = base + self.params.context_weight * shift
        if len(vocab) > len(_VOCAB):
            logits = np.append(logits, logits.min() - 2.0)
        return vocab, softmax(logits / self.params.temperature)

    def _dist(self, position: int, vocab: List[str], probs: np.ndarray, chosen: int) -> TokenDist:
        top = np.argsort(-probs, kind="stable")[: self.params.top_logprobs]
        alts = [(vocab[i], float(math.log(probs[i]))) for i in top]
        return TokenDist.from_logprobs(position, vocab[chosen], float(math.log(probs[chosen])), alts)

    def complete_with_logprobs(self, messages: List[Message], *, seed: int,
                               max_tokens: Optional[int] = None) -> Tuple[str, List[TokenDist]]:
        context = _context(messages)
        rng = np.random.default_rng(seed)
        tokens: List[str] = []
        dists = []
        for i in range(max_tokens or self.params.response_tokens):
            vocab, probs = self._probs(context, tokens)
            chosen = int(rng.choice(len(vocab), p=probs))
            dists.append(self._dist(i, vocab, probs, chosen))
            tokens.append(vocab[chosen])
        return "".join(tokens), dists

    def score_tokens(self, messages: List[Message], tokens: List[str]) -> List[TokenDist]:
        context = _context(messages)
        dists = []
        for i, tok in enumerate(tokens):
            vocab, probs = self._probs(context, tokens[:i], extra=tok)
            dists.append(self._dist(i, vocab, probs, vocab.index(tok)))
        return dists

    def next_token(self, messages: List[Message], prefix: List[str]) -> TokenDist:
        """The distribution after `prefix`, with its most likely token chosen."""
        vocab, probs = self._probs(_context(messages), prefix)
        return self._dist(len(prefix), vocab, probs, int(np.argmax(probs)))


_ROUND_RE = re.compile(r"\(round (\d+)\)")


def round_of(text: str) -> int:
    """Round index a simulated solution was produced in, 0 if unknown."""
    m = _ROUND_RE.search(text or "")
    return int(m.group(1)) if m else 0


def _context(messages: List[Message]) -> str:
    return "\n".join(f"{m.role}:{m.content}" for m in messages)


class FixtureLogprobModel:
    """Returns the same hand-set distributions for every prompt."""
    scoring_mechanism = "fixture"

    def __init__(self, dists: List[TokenDist]):
        self.dists = list(dists)

    def complete_with_logprobs(self, messages: List[Message], *, seed: int,
                               max_tokens: Optional[int] = None) -> Tuple[str, List[TokenDist]]:
        dists = self.dists[: max_tokens or len(self.dists)]
        return "".join(d.chosen_token for d in dists), dists

    def score_tokens(self, messages: List[Message], tokens: List[str]) -> List[TokenDist]:
        return [d.force(tok) for d, tok in zip(self.dists, tokens)]
