#
# Copyright (c) 2025 Commonwealth Scientific and Industrial Research Organisation (CSIRO). All rights reserved.
# Use of this source code is governed by a BSD-style license that can be
# found in the LICENSE file. See the AUTHORS file for names of contributors.
#
"""Checks against a real OpenAI-compatible server.

Set VRLOOP_LIVE_BASE_URL (and VRLOOP_LIVE_MODEL) to run them.
"""
import os

import pytest

from vrloop.agents import ChatClient, EndpointConfig, EndpointGenerator, EndpointVerifier
from vrloop.core import LoopConfig, Problem, Termination
from vrloop.loop import run_vr_loop
from vrloop.protocol import default_prompts

BASE_URL = os.environ.get("VRLOOP_LIVE_BASE_URL")

pytestmark = [
    pytest.mark.live,
    pytest.mark.skipif(not BASE_URL, reason="VRLOOP_LIVE_BASE_URL not set"),
]


@pytest.fixture
def client():
    c = ChatClient(EndpointConfig(base_url=BASE_URL, model=os.environ.get("VRLOOP_LIVE_MODEL", "default"),
                                  max_tokens=512, max_retries=2))
    yield c
    c.close()


def test_probe_logprobs(client):
    client.probe(logprobs=True)


def test_short_loop(client):
    p = Problem(id="live-1", gold_answer="12", statement="What is 7 + 5? Put the final answer in \\boxed{}.")
    trace = run_vr_loop(p, EndpointGenerator(client, default_prompts()), EndpointVerifier(client, default_prompts()),
                        LoopConfig(max_rounds=2, seed=1))
    assert trace.termination != Termination.ERROR, trace.error
    assert trace.check() == []
    assert trace.rounds[0].attempt.usage.role == "generator"
