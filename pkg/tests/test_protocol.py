#
# Copyright (c) 2025 Commonwealth Scientific and Industrial Research Organisation (CSIRO). All rights reserved.
# Use of this source code is governed by a BSD-style license that can be
# found in the LICENSE file. See the AUTHORS file for names of contributors.
#
import pytest

from vrloop.core import Verdict
from vrloop.errors import PromptError
from vrloop.protocol import (
    PromptSet, PromptTemplate, TemplateId, answers_equivalent, default_prompts, extract_answer, normalize_answer,
    parse_verdict, register_checker,
)


def test_verdict_last_match_wins():
    out = parse_verdict("At first the verdict is CORRECT.\nOn reflection, step 2 fails.\nPredicted verdict: INCORRECT")
    assert out.verdict == Verdict.REJECT
    assert "step 2 fails" in out.feedback
    assert "Predicted verdict" not in out.feedback


def test_verdict_correct_and_score():
    out = parse_verdict("Looks right.\nScore: 0.85\nPredicted verdict: CORRECT")
    assert out.verdict == Verdict.ACCEPT
    assert out.score == pytest.approx(0.85)
    assert out.feedback == "Looks right."


def test_verdict_unparseable_rejects_with_whole_text():
    raw = "I am not sure what to make of this."
    out = parse_verdict(raw)
    assert out.verdict == Verdict.REJECT
    assert out.feedback == raw
    assert out.score is None


def test_verdict_out_of_range_score_is_dropped():
    assert parse_verdict("Score: 7\nPredicted verdict: CORRECT").score is None


def test_extract_boxed_nested():
    assert extract_answer("so \\boxed{1} then \\boxed{\\frac{1}{2}}") == "\\frac{1}{2}"


def test_extract_final_answer_line():
    assert extract_answer("work\nThe final answer is 42.\n") == "42"
    assert extract_answer("no answer here") is None
    assert extract_answer("") is None


def test_answers_equivalent():
    assert answers_equivalent("$\\dfrac{1}{2}$", "0.5")
    assert answers_equivalent("007", "7")
    assert answers_equivalent("\\text{42}", "42.")
    assert not answers_equivalent("41", "42")
    assert not answers_equivalent(None, "42")
    assert normalize_answer(" { -0 } ") == "0"


def test_huge_numeric_answers_compare_exactly():
    assert not answers_equivalent("1e400", "2e400")
    assert answers_equivalent("1e400", "10e399")
    assert not answers_equivalent("9" * 400, "8" * 400)
    assert answers_equivalent("9" * 400, "9" * 400 + ".0")
    assert not answers_equivalent("1e99999999", "2e99999999")


def test_register_checker_only_consulted_on_mismatch():
    register_checker(lambda a, b: True if {a, b} == {"pi", "\\pi"} else None)
    assert answers_equivalent("pi", "\\pi")
    assert not answers_equivalent("e", "\\pi")


def test_render_and_match_round_trip():
    prompts = default_prompts()
    msgs = prompts.render(TemplateId.GENERATOR_REFINE,
                          {"statement": "S?", "prior_solution": "my go", "feedback": "step 2"})
    assert msgs[0].role == "system"
    tid, slots = prompts.match(msgs[-1].content)
    assert tid == TemplateId.GENERATOR_REFINE
    assert slots == {"statement": "S?", "prior_solution": "my go", "feedback": "step 2"}


def test_plain_verifier_prompt_never_contains_reference():
    prompts = default_prompts()
    assert "reference_solution" not in prompts[TemplateId.VERIFIER_PLAIN].slots
    assert "reference_solution" in prompts[TemplateId.VERIFIER_TEACHER].slots


def test_missing_slot_is_an_error():
    with pytest.raises(PromptError):
        default_prompts().render(TemplateId.GENERATOR_INITIAL, {})


def test_override_dir(tmp_path):
    (tmp_path / "generator_initial.txt").write_text("[user]\nSolve: {{statement}}\n")
    prompts = PromptSet.load(str(tmp_path))
    assert prompts.render(TemplateId.GENERATOR_INITIAL, {"statement": "x"})[-1].content == "Solve: x"
    assert prompts[TemplateId.VERIFIER_PLAIN].system


def test_teacher_template_requires_reference():
    t = PromptTemplate.parse(TemplateId.VERIFIER_TEACHER, "[user]\n{{statement}} {{prior_solution}}")
    with pytest.raises(PromptError):
        t.validate_slots()
