#
# Copyright (c) 2025 Commonwealth Scientific and Industrial Research Organisation (CSIRO). All rights reserved.
# Use of this source code is governed by a BSD-style license that can be
# found in the LICENSE file. See the AUTHORS file for names of contributors.
#
"""Difficulty binning by estimated pass@1 and embedding-based test-set decontamination."""
import json
from fractions import Fraction
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, Field, ValidationError
from ivcap_service import getLogger

from .agents.base import GeneratorAgent
from .core import Attempt, Bin, Problem, derive_seed
from .errors import DataError, MissingEmbeddingError, TransportError
from .loop import check_attempt

logger = getLogger("dataset")

ROLLOUT_SCHEMA = "urn:vrloop:schema.rollout.1"

HARD_UPPER = Fraction(1, 5)
DEDUP_THRESHOLD = 0.8


def load_problems(path: str) -> List[Problem]:
    """Read problems from JSONL with at least `id`, `statement`, `gold_answer`."""
    problems = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                p = Problem.model_validate(json.loads(line))
            except (json.JSONDecodeError, ValidationError) as ex:
                raise DataError(f"{path}:{lineno}: invalid problem - {ex}")
            if p.id in seen:
                raise DataError(f"{path}:{lineno}: duplicate problem id '{p.id}'")
            seen.add(p.id)
            problems.append(p)
    return problems


def save_problems(problems: Iterable[Problem], path: str):
    with open(path, "w", encoding="utf-8") as fh:
        for p in problems:
            fh.write(p.model_dump_json(exclude_none=True) + "\n")


# ---- pass@1 estimation ----

class RolloutRecord(BaseModel):
    jschema: str = Field(ROLLOUT_SCHEMA, alias="$schema")
    problem_id: str
    index: int
    seed: int
    attempt: Optional[Attempt] = None
    error: Optional[str] = None

    model_config = {"populate_by_name": True}


class Pass1Estimate(BaseModel):
    problem_id: str
    n: int
    correct: int = 0
    completed: int = 0
    incomplete: bool = False
    rollouts: List[RolloutRecord] = Field(default_factory=list)

    @property
    def value(self) -> Fraction:
        return Fraction(self.correct, self.n)


def estimate_pass1(problem: Problem, generator: GeneratorAgent, n: int = 32, seed: int = 0, *,
                   max_extra: Optional[int] = None) -> Pass1Estimate:
    """Estimate pass@1 from `n` independent round-0 generations.

    Failed rollouts are replaced by extra ones (at most `max_extra`, default
    `n`); if fewer than `n` complete the estimate is marked incomplete and
    computed over the completed ones.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    budget = n + (n if max_extra is None else max_extra)
    rollouts = []
    correct = completed = 0
    index = 0
    while completed < n and index < budget:
        rseed = derive_seed(seed, problem.id, "rollout", index)
        try:
            attempt = check_attempt(problem, generator.generate_initial(problem, seed=rseed))
            rollouts.append(RolloutRecord(problem_id=problem.id, index=index, seed=rseed, attempt=attempt))
            completed += 1
            correct += int(bool(attempt.correct))
        except TransportError as ex:
            logger.warning(f"rollout {problem.id}/{index} failed - {ex}")
            rollouts.append(RolloutRecord(problem_id=problem.id, index=index, seed=rseed, error=str(ex)))
        index += 1
    incomplete = completed < n
    return Pass1Estimate(problem_id=problem.id, n=n if not incomplete else max(completed, 1),
                         correct=correct, completed=completed, incomplete=incomplete, rollouts=rollouts)


def bin_for(estimate: Union[Fraction, float]) -> Bin:
    if estimate == 0:
        return Bin.HARDEST
    if 0 < estimate < HARD_UPPER:
        return Bin.HARD
    return Bin.EXCLUDED


def bin_problems(estimates: Mapping[str, Union[Fraction, float]]) -> Dict[str, Bin]:
    """0 -> Hardest, (0, 0.2) -> Hard, >= 0.2 -> Excluded."""
    return {pid: bin_for(Fraction(e) if isinstance(e, float) else e) for pid, e in estimates.items()}


def apply_bins(problems: Sequence[Problem], estimates: Mapping[str, Union[Fraction, float]]) -> List[Problem]:
    """Attach estimates and bins; Excluded problems are kept, not dropped."""
    bins = bin_problems(estimates)
    out = []
    for p in problems:
        if p.id not in estimates:
            raise DataError(f"no pass@1 estimate for problem '{p.id}'")
        out.append(p.model_copy(update={"bin": bins[p.id], "pass1_estimate": float(estimates[p.id])}))
    return out


# ---- decontamination ----

def cosine_similarity(u: Sequence[float], v: Sequence[float]) -> float:
    a = np.asarray(u, dtype=float)
    b = np.asarray(v, dtype=float)
    if a.shape != b.shape:
        raise DataError(f"dimension mismatch {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise DataError("cosine similarity of a zero-norm vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


class RemovedProblem(BaseModel):
    problem_id: str
    nearest_train_id: str
    similarity: float


class DedupResult(BaseModel):
    threshold: float
    kept: List[Problem]
    removed: List[RemovedProblem]


def dedup_test_set(test: Sequence[Problem], train: Sequence[Problem], embeddings: Mapping[str, Sequence[float]],
                   threshold: float = DEDUP_THRESHOLD) -> DedupResult:
    """Remove test problems whose cosine similarity to any train problem exceeds `threshold`."""
    missing = [p.id for p in list(test) + list(train) if p.id not in embeddings]
    if missing:
        raise MissingEmbeddingError(missing)
    if not train:
        return DedupResult(threshold=threshold, kept=list(test), removed=[])

    T = _matrix([embeddings[p.id] for p in test]) if test else np.zeros((0, 1))
    Tr = _matrix([embeddings[p.id] for p in train])
    if test and T.shape[1] != Tr.shape[1]:
        raise DataError(f"embedding dimension mismatch {T.shape[1]} vs {Tr.shape[1]}")
    kept, removed = [], []
    if test:
        sims = (T @ Tr.T) / np.outer(np.linalg.norm(T, axis=1), np.linalg.norm(Tr, axis=1))
        nearest = sims.argmax(axis=1)
        for i, p in enumerate(test):
            j = int(nearest[i])
            s = float(np.clip(sims[i, j], -1.0, 1.0))
            if s > threshold:
                removed.append(RemovedProblem(problem_id=p.id, nearest_train_id=train[j].id, similarity=s))
            else:
                kept.append(p)
    logger.info(f"dedup at {threshold}: kept {len(kept)}, removed {len(removed)}")
    return DedupResult(threshold=threshold, kept=kept, removed=removed)


def _matrix(rows: List[Sequence[float]]) -> np.ndarray:
    m = np.asarray(rows, dtype=float)
    if m.ndim != 2:
        raise DataError("embeddings must share one dimension")
    if np.any(np.linalg.norm(m, axis=1) == 0):
        raise DataError("zero-norm embedding")
    return m
