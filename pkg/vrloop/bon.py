#
# Copyright (c) 2025 Commonwealth Scientific and Industrial Research Organisation (CSIRO). All rights reserved.
# Use of this source code is governed by a BSD-style license that can be
# found in the LICENSE file. See the AUTHORS file for names of contributors.
#
"""Best-of-N: independent initial samples, each judged once by the verifier.

Sample i uses the generator seed of round i and the verifier seed of round
i+1 of the V-R loop with the same (seed, problem, loop), so sample 0 is
exactly the loop's y_0 and its first verdict.
"""
from enum import Enum
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, Field
from ivcap_service import getLogger

from .agents.base import GeneratorAgent, VerifierAgent
from .core import Attempt, Problem, VerifierOutput, derive_seed
from .errors import CapabilityError, TransportError
from .loop import call_seed, check_attempt, loop_seed

logger = getLogger("bon")

BON_SCHEMA = "urn:vrloop:schema.bon.1"


class Selection(str, Enum):
    ACCEPTED = "accepted"
    FALLBACK = "fallback"
    NONE = "none"


class BonSample(BaseModel):
    index: int
    attempt: Optional[Attempt] = None
    verifier_output: Optional[VerifierOutput] = None
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.attempt is not None and self.verifier_output is not None


class BonRun(BaseModel):
    jschema: str = Field(BON_SCHEMA, alias="$schema")
    problem_id: str
    loop_id: int = 0
    seed: int
    n: int = Field(ge=1)
    samples: List[BonSample]
    selected_index: Optional[int] = None
    selection: Selection = Selection.NONE
    degraded: bool = Field(False, description="fewer than n samples completed")

    model_config = {"populate_by_name": True}

    @property
    def key(self) -> str:
        return f"{self.problem_id}/{self.loop_id}"

    @property
    def selected(self) -> Optional[Attempt]:
        return None if self.selected_index is None else self.samples[self.selected_index].attempt


def run_bon(problem: Problem, generator: GeneratorAgent, verifier: VerifierAgent, n: int, seed: int, *,
            loop_id: int = 0) -> BonRun:
    if n < 1:
        raise ValueError("n must be >= 1")
    lseed = loop_seed(seed, problem.id, loop_id)
    samples = []
    for i in range(n):
        attempt = None
        try:
            attempt = check_attempt(problem, generator.generate_initial(problem, seed=call_seed(lseed, i, "generator")))
            out = verifier.verify(problem, attempt, seed=call_seed(lseed, i + 1, "verifier"))
            samples.append(BonSample(index=i, attempt=attempt, verifier_output=out))
        except (TransportError, CapabilityError) as ex:
            logger.warning(f"bon {problem.id}/{loop_id} sample {i} failed - {ex}")
            samples.append(BonSample(index=i, attempt=attempt, error=f"{type(ex).__name__}: {ex}"))
    run = BonRun(problem_id=problem.id, loop_id=loop_id, seed=seed, n=n, samples=samples,
                 degraded=any(not s.ok for s in samples))
    idx, how = select_best_of_n(run, n)
    return run.model_copy(update={"selected_index": idx, "selection": how})


def select_best_of_n(run: BonRun, n: int):
    """Select among the first `n` samples of `run`.

    Uniformly random among accepted samples, else uniformly random among
    all completed ones. Returns (sample index or None, Selection).
    """
    if not 1 <= n <= run.n:
        raise ValueError(f"n={n} outside 1..{run.n}")
    pool = [s for s in run.samples[:n] if s.ok]
    if not pool:
        return None, Selection.NONE
    accepted = [s for s in pool if s.verifier_output.accepted]
    rng = np.random.default_rng(derive_seed(run.seed, run.problem_id, run.loop_id, "bon-select", n))
    if accepted:
        return accepted[int(rng.integers(len(accepted)))].index, Selection.ACCEPTED
    return pool[int(rng.integers(len(pool)))].index, Selection.FALLBACK


def bon_correct(run: BonRun, n: int) -> bool:
    idx, _ = select_best_of_n(run, n)
    return idx is not None and bool(run.samples[idx].attempt.correct)
