#
# Copyright (c) 2025 Commonwealth Scientific and Industrial Research Organisation (CSIRO). All rights reserved.
# Use of this source code is governed by a BSD-style license that can be
# found in the LICENSE file. See the AUTHORS file for names of contributors.
#
import math

import numpy as np
import pytest
from pydantic import ValidationError

from vrloop.agents import FixtureLogprobModel, SimLogprobModel, TokenDist
from vrloop.core import LoopConfig, Verdict
from vrloop.divergence import DivergenceKind, jensen_shannon
from vrloop.errors import CapabilityError, DataError, TransportError
from vrloop.loop import run_vr_loop
from vrloop.stv import (
    StvConfig, build_opd_records, build_sft_records, build_verdict_records, export_opd_dataset, load_opd_dataset,
    pairs_from_traces, sample_rollout_pairs, stv_loss_report, verdict_reward,
)

from conftest import sim_generator, sim_verifier

REFERENCE_HEADING = "Reference solution"


def _dist(chosen, probs, position=0):
    return TokenDist.from_logprobs(position, chosen, math.log(probs[chosen]),
                                   [(t, math.log(p)) for t, p in probs.items()])


STUDENT = FixtureLogprobModel([_dist("a", {"a": 0.6, "b": 0.2}), _dist(" b", {" b": 0.9}, 1)])
TEACHER = FixtureLogprobModel([_dist("a", {"a": 0.5, "c": 0.3}), _dist(" b", {" b": 0.9}, 1)])


@pytest.fixture
def pairs(problem):
    return sample_rollout_pairs([problem], sim_generator(0.5), 2, seed=0)


def test_verdict_reward_truth_table():
    assert verdict_reward(Verdict.ACCEPT, True) == 1
    assert verdict_reward(Verdict.ACCEPT, False) == 0
    assert verdict_reward(Verdict.REJECT, True) == 0
    assert verdict_reward(Verdict.REJECT, False) == 1


def test_opd_record_divergences(pairs):
    records = build_opd_records(STUDENT, TEACHER, pairs[:1], StvConfig(), seed=1)
    assert len(records) == 1
    rec = records[0]
    assert rec.student_tokens == ["a", " b"]
    assert rec.sampled_by == "student"
    assert rec.scoring_mechanism == "fixture"
    first = rec.positions[0]
    assert first.support[:3] == ["a", "b", "c"]
    assert first.divergence == pytest.approx(jensen_shannon([0.6, 0.2, 0.1, 0.1], [0.5, 0.1, 0.3, 0.1]))
    assert rec.positions[1].divergence == pytest.approx(0.0, abs=1e-12)
    assert rec.mean_divergence == pytest.approx(first.divergence / 2)


def test_teacher_prompt_sees_the_reference_and_student_does_not(pairs):
    rec = build_opd_records(STUDENT, TEACHER, pairs[:1], seed=1)[0]
    assert REFERENCE_HEADING in rec.teacher_prompt[-1].content
    assert REFERENCE_HEADING not in rec.student_prompt[-1].content
    assert pairs[0].problem.gold_answer in rec.teacher_prompt[-1].content


def test_alpha_family_records(pairs):
    cfg = StvConfig(divergence_kind=DivergenceKind.ALPHA_FAMILY, alpha=0.5, samples_per_pair=2)
    records = build_opd_records(STUDENT, STUDENT, pairs, cfg, seed=1)
    assert len(records) == 4
    assert all(r.mean_divergence == pytest.approx(0.0, abs=1e-12) for r in records)
    assert len({r.seed for r in records}) == 4


def test_sim_teacher_differs_from_student(pairs):
    model = SimLogprobModel()
    rec = build_opd_records(model, model, pairs[:1], StvConfig(max_tokens=6), seed=3)[0]
    assert len(rec.positions) == 6
    assert rec.mean_divergence > 0.0


def test_tampered_records_are_rejected(pairs):
    rec = build_opd_records(STUDENT, TEACHER, pairs[:1], seed=1)[0]
    data = rec.model_dump(by_alias=True)
    with pytest.raises(ValidationError):
        type(rec).model_validate({**data, "sampled_by": "teacher"})
    with pytest.raises(ValidationError):
        type(rec).model_validate({**data, "mean_divergence": rec.mean_divergence + 0.1})
    with pytest.raises(ValidationError):
        type(rec).model_validate({**data, "student_tokens": ["a", " c"]})


class ShortTeacher(FixtureLogprobModel):
    def score_tokens(self, messages, tokens):
        return super().score_tokens(messages, tokens)[:1]


class DownStudent:
    scoring_mechanism = "none"

    def complete_with_logprobs(self, messages, *, seed, max_tokens=None):
        raise TransportError("student endpoint down")

    def score_tokens(self, messages, tokens):
        return []


class DownVerifier:
    frozen = False

    def verify(self, problem, attempt, mode=None, *, seed):
        raise TransportError("verifier endpoint down")


class FlakyGenerator:
    """Fails every other initial generation."""

    def __init__(self):
        self.inner = sim_generator(0.5)
        self.calls = 0

    def generate_initial(self, problem, *, seed):
        self.calls += 1
        if self.calls % 2 == 0:
            raise TransportError("generator endpoint down")
        return self.inner.generate_initial(problem, seed=seed)


def test_teacher_must_score_every_token(pairs):
    with pytest.raises(CapabilityError):
        build_opd_records(STUDENT, ShortTeacher(TEACHER.dists), pairs[:1])


def test_transport_failures_are_skipped_and_reported(pairs):
    failures = []
    assert build_opd_records(DownStudent(), TEACHER, pairs, failures=failures) == []
    assert len(failures) == len(pairs)
    assert "student endpoint down" in failures[0].error


def test_sft_transport_failures_are_skipped_and_reported(pairs):
    failures = []
    assert build_sft_records(DownVerifier(), pairs, seed=0, samples_per_pair=2, failures=failures) == []
    assert len(failures) == 2 * len(pairs)
    assert failures[0].type == "TransportError"
    assert "verifier endpoint down" in failures[0].error


def test_rollout_pairs_skip_failed_samples(problem):
    failures = []
    pairs = sample_rollout_pairs([problem], FlakyGenerator(), 4, seed=0, failures=failures)
    assert [p.source for p in pairs] == ["rollout:0", "rollout:2"]
    assert len(failures) == 2
    assert failures[0].error.startswith(f"{problem.id}:rollout:1")


def test_verdict_records(pairs):
    records = build_verdict_records(sim_verifier(1.0, 0.0), pairs, seed=0, samples_per_pair=2)
    assert len(records) == 4
    assert all(r.reward == 1 for r in records)
    assert all(REFERENCE_HEADING not in r.prompt[-1].content for r in records)
    fooled = build_verdict_records(sim_verifier(0.0, 1.0), pairs, seed=0)
    assert all(r.reward == 0 for r in fooled)


def test_sft_records_pair_teacher_output_with_plain_prompt(pairs):
    records = build_sft_records(sim_verifier(1.0, 0.0), pairs, seed=0)
    assert len(records) == len(pairs)
    for r in records:
        assert REFERENCE_HEADING not in r.prompt[-1].content
        assert "Predicted verdict" in r.completion


def test_pairs_from_traces(problems):
    gen, ver = sim_generator(0.0), sim_verifier()
    traces = [run_vr_loop(p, gen, ver, LoopConfig(max_rounds=3)) for p in problems[:2]]
    pairs = pairs_from_traces(traces, {p.id: p for p in problems}, max_per_problem=2)
    assert len(pairs) == 4
    assert pairs[1].source == f"trace:{problems[0].id}/0:r1"
    assert pairs[1].attempt_ref == f"{problems[0].id}:trace:{problems[0].id}/0:r1"
    with pytest.raises(DataError):
        pairs_from_traces(traces, {})


def test_loss_report(pairs):
    opd = build_opd_records(STUDENT, TEACHER, pairs, seed=1)
    verdicts = build_verdict_records(sim_verifier(1.0, 0.0), pairs, seed=0)
    report = stv_loss_report(opd, verdicts, lam=2.0)
    assert report.opd_loss == pytest.approx(float(np.mean([r.mean_divergence for r in opd])))
    assert report.rl_loss == pytest.approx(-1.0)
    assert report.total == pytest.approx(report.opd_loss - 2.0)
    with pytest.raises(DataError):
        stv_loss_report([], verdicts)


def test_export_and_load(tmp_path, pairs):
    path = str(tmp_path / "opd.jsonl")
    records = build_opd_records(STUDENT, TEACHER, pairs, seed=1)
    assert export_opd_dataset(records, path) == len(records)
    assert load_opd_dataset(path) == records
