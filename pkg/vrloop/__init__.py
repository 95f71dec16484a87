#
# Copyright (c) 2025 Commonwealth Scientific and Industrial Research Organisation (CSIRO). All rights reserved.
# Use of this source code is governed by a BSD-style license that can be
# found in the LICENSE file. See the AUTHORS file for names of contributors.
#
""" Verification-refinement loops for LLM problem solving, with the tooling to measure and train them """

from .version import __version__

from .core import (
    Bin, Verdict, VerdictMode, FeedbackMode, VerifyMode, Termination,
    Problem, Attempt, VerifierOutput, LoopConfig, RoundRecord, VRTrace, derive_seed,
)
from .errors import VRLoopError, ConfigError, PromptError, TransportError, CapabilityError, DataError
from .loop import run_vr_loop, round_series
from .bon import run_bon, select_best_of_n
from .dataset import load_problems, estimate_pass1, bin_problems, dedup_test_set
from .divergence import DivergenceKind, divergence, token_divergence
from .stv import StvConfig, build_opd_records, build_verdict_records, build_sft_records, stv_loss_report
from .vil import collect_vil_episode, scan_episode_leaks
from .config import RunConfig, load_config, build_agents
from .logger import logging_init
