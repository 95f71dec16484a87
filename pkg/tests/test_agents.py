#
# Copyright (c) 2025 Commonwealth Scientific and Industrial Research Organisation (CSIRO). All rights reserved.
# Use of this source code is governed by a BSD-style license that can be
# found in the LICENSE file. See the AUTHORS file for names of contributors.
#
import math

import pytest

from vrloop.agents import (
    FixtureLogprobModel, GeneratorAgent, LogprobModel, SimLogprobModel, SimLogprobParams, SimVerifierParams,
    TokenDist, VerifierAgent, round_of,
)
from vrloop.agents.simulated import SIM_HINT_MARKER, progress
from vrloop.core import Message, Verdict, VerifyMode

from conftest import make_problem, sim_generator, sim_verifier


def test_token_dist_mass_is_checked():
    with pytest.raises(ValueError):
        TokenDist(position=0, chosen_token="a", chosen_logprob=math.log(0.5),
                  alternatives=[("b", math.log(0.4))], tail_mass=0.5)


def test_from_logprobs_repairs_drift_and_missing_chosen():
    d = TokenDist.from_logprobs(0, "a", None, [("b", math.log(0.6)), ("c", math.log(0.3))])
    assert d.listed()["a"] == pytest.approx(0.05)
    assert d.tail_mass == pytest.approx(0.05)

    over = TokenDist.from_logprobs(1, "a", math.log(0.7), [("a", math.log(0.7)), ("b", math.log(0.4))])
    assert sum(over.listed().values()) == pytest.approx(1.0)
    assert over.tail_mass == 0.0


def test_force_moves_the_chosen_token():
    d = TokenDist.from_logprobs(0, "a", math.log(0.5), [("a", math.log(0.5)), ("b", math.log(0.3))])
    f = d.force("b")
    assert f.chosen_token == "b"
    assert f.chosen_logprob == pytest.approx(math.log(0.3))
    assert f.listed() == pytest.approx(d.listed())


def test_sim_agents_satisfy_protocols():
    assert isinstance(sim_generator(), GeneratorAgent)
    assert isinstance(sim_verifier(), VerifierAgent)
    assert isinstance(SimLogprobModel(), LogprobModel)
    assert isinstance(FixtureLogprobModel([]), LogprobModel)


def test_sim_generator_is_seeded(problem):
    gen = sim_generator(0.5)
    a, b = gen.generate_initial(problem, seed=9), gen.generate_initial(problem, seed=9)
    assert a == b
    assert a.messages and a.usage.role == "generator"
    assert round_of(a.text) == 0


def test_sim_generator_counts_refinements(problem):
    gen = sim_generator(0.0)
    y0 = gen.generate_initial(problem, seed=1)
    y1 = gen.refine(problem, y0, f"{SIM_HINT_MARKER} 2: wrong.", seed=2)
    y2 = gen.refine(problem, y1, "try again", seed=3)
    y3 = gen.refine(problem, y2, None, seed=4)
    assert progress(y3.text) == (1, 1)
    assert round_of(y3.text) == 3


def test_sim_verifier_error_rates(problem):
    right = sim_generator(1.0).generate_initial(problem, seed=0)
    wrong = sim_generator(0.0).generate_initial(problem, seed=0)
    assert sim_verifier(tpr=1.0, fpr=0.0).verify(problem, right, seed=1).verdict == Verdict.ACCEPT
    assert sim_verifier(tpr=1.0, fpr=0.0).verify(problem, wrong, seed=1).verdict == Verdict.REJECT
    assert sim_verifier(tpr=0.0, fpr=1.0).verify(problem, right, seed=1).verdict == Verdict.REJECT
    assert sim_verifier(tpr=0.0, fpr=1.0).verify(problem, wrong, seed=1).verdict == Verdict.ACCEPT


def test_sim_verifier_teacher_parameters(problem):
    wrong = sim_generator(0.0).generate_initial(problem, seed=0)
    ver = sim_verifier(tpr=1.0, fpr=1.0, teacher=SimVerifierParams(tpr=1.0, fpr=0.0))
    assert ver.verify(problem, wrong, seed=1).accepted
    out = ver.verify(problem, wrong, VerifyMode.REFERENCE_CONDITIONED, seed=1)
    assert not out.accepted
    assert out.verify_mode == VerifyMode.REFERENCE_CONDITIONED


def test_sim_verifier_score_drift(problem):
    ver = sim_verifier(score_if_incorrect=0.2, score_drift=0.1)
    gen = sim_generator(0.0)
    y0 = gen.generate_initial(problem, seed=0)
    y1 = gen.refine(problem, y0, "again", seed=1)
    assert ver.verify(problem, y0, seed=2).score == pytest.approx(0.3)
    assert ver.verify(problem, y1, seed=2).score == pytest.approx(0.4)


def test_sim_logprob_model_is_consistent():
    model = SimLogprobModel(SimLogprobParams(top_logprobs=4, response_tokens=8))
    msgs = [Message(role="user", content="hello")]
    text, dists = model.complete_with_logprobs(msgs, seed=3)
    assert len(dists) == 8
    assert text == "".join(d.chosen_token for d in dists)
    assert (text, dists) == model.complete_with_logprobs(msgs, seed=3)
    scored = model.score_tokens(msgs, [d.chosen_token for d in dists])
    for a, b in zip(dists, scored):
        assert a.chosen_logprob == pytest.approx(b.chosen_logprob)


def test_sim_logprob_model_scores_unknown_tokens():
    model = SimLogprobModel()
    d = model.score_tokens([Message(role="user", content="x")], ["zebra"])[0]
    assert d.chosen_token == "zebra"
    assert d.chosen_logprob < 0


def test_context_changes_distributions():
    model = SimLogprobModel()
    a = model.next_token([Message(role="user", content="one")], [])
    b = model.next_token([Message(role="user", content="two")], [])
    assert a.listed() != b.listed()


def test_fixture_model_forces_tokens():
    d = TokenDist.from_logprobs(0, "a", math.log(0.6), [("a", math.log(0.6)), ("b", math.log(0.4))])
    model = FixtureLogprobModel([d])
    assert model.complete_with_logprobs([], seed=0) == ("a", [d])
    assert model.score_tokens([], ["b"])[0].chosen_token == "b"


def test_problem_helper_has_multi_digit_answer():
    assert len(make_problem().gold_answer) > 1
