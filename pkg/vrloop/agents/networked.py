#
# Copyright (c) 2025 Commonwealth Scientific and Industrial Research Organisation (CSIRO). All rights reserved.
# Use of this source code is governed by a BSD-style license that can be
# found in the LICENSE file. See the AUTHORS file for names of contributors.
#
from typing import Optional

from ..core import Attempt, Problem, VerifierOutput, VerifyMode
from ..protocol import DEFAULT_FINAL_ANSWER_PATTERN, PromptSet, extract_answer, parse_verdict
from .base import generator_messages, verifier_messages
from .client import ChatClient


class EndpointGenerator:
    """Generator backed by a chat-completion endpoint."""

    def __init__(self, client: ChatClient, prompts: PromptSet,
                 final_answer_pattern: str = DEFAULT_FINAL_ANSWER_PATTERN):
        self.client = client
        self.prompts = prompts
        self.final_answer_pattern = final_answer_pattern

    def generate_initial(self, problem: Problem, *, seed: int) -> Attempt:
        messages = generator_messages(self.prompts, problem)
        return self._complete(messages, 0, seed)

    def refine(self, problem: Problem, prev: Attempt, feedback: Optional[str], *, seed: int) -> Attempt:
        messages = generator_messages(self.prompts, problem, prev, feedback)
        return self._complete(messages, prev.round_index + 1, seed)

    def _complete(self, messages, round_index: int, seed: int) -> Attempt:
        result = self.client.chat(messages, seed=seed, role="generator", round_index=round_index)
        return Attempt(
            round_index=round_index,
            text=result.text,
            extracted_answer=extract_answer(result.text, self.final_answer_pattern),
            messages=messages,
            usage=result.usage,
        )


class EndpointVerifier:
    """Verifier backed by a chat-completion endpoint.

    `frozen` marks a verifier whose weights are not being trained; it only
    affects which collectors accept it.
    """

    def __init__(self, client: ChatClient, prompts: PromptSet, *, frozen: bool = False):
        self.client = client
        self.prompts = prompts
        self.frozen = frozen

    def verify(self, problem: Problem, attempt: Attempt, mode: VerifyMode = VerifyMode.PLAIN, *,
               seed: int) -> VerifierOutput:
        messages = verifier_messages(self.prompts, problem, attempt, mode)
        result = self.client.chat(messages, seed=seed, role="verifier", round_index=attempt.round_index + 1)
        out = parse_verdict(result.text)
        return out.model_copy(update={"verify_mode": mode, "usage": result.usage})
