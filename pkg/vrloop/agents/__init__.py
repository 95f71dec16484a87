#
# Copyright (c) 2025 Commonwealth Scientific and Industrial Research Organisation (CSIRO). All rights reserved.
# Use of this source code is governed by a BSD-style license that can be
# found in the LICENSE file. See the AUTHORS file for names of contributors.
#
"""Generator and verifier behaviours behind one interface."""

from .base import (
    EndpointConfig, TokenDist, GeneratorAgent, VerifierAgent, LogprobModel,
    generator_messages, verifier_messages,
)
from .client import ChatClient, ChatResult
from .networked import EndpointGenerator, EndpointVerifier
from .simulated import (
    SIM_HINT_MARKER, SimGenerator, SimGeneratorParams, SimVerifier, SimVerifierParams,
    SimLogprobModel, SimLogprobParams, FixtureLogprobModel, round_of,
)
