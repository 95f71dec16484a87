#
# Copyright (c) 2025 Commonwealth Scientific and Industrial Research Organisation (CSIRO). All rights reserved.
# Use of this source code is governed by a BSD-style license that can be
# found in the LICENSE file. See the AUTHORS file for names of contributors.
#
import math

import numpy as np
import pytest

from vrloop.agents import TokenDist
from vrloop.divergence import (
    TAIL_TOKEN, DivergenceKind, align_distributions, alpha_divergence, divergence, jensen_shannon, token_divergence,
)


def _dist(chosen, probs, position=0):
    return TokenDist.from_logprobs(position, chosen, math.log(probs[chosen]),
                                   [(t, math.log(p)) for t, p in probs.items()])


def test_identical_distributions_have_zero_divergence():
    p = [0.5, 0.3, 0.2]
    assert jensen_shannon(p, p) == pytest.approx(0.0, abs=1e-15)
    assert alpha_divergence(p, p, 0.5) == pytest.approx(0.0, abs=1e-12)


def test_disjoint_distributions_hit_the_jsd_bound():
    assert jensen_shannon([1.0, 0.0], [0.0, 1.0]) == pytest.approx(math.log(2.0))


def test_alpha_half_is_symmetric_and_matches_hellinger_form():
    p, q = np.array([0.7, 0.2, 0.1]), np.array([0.1, 0.3, 0.6])
    d = alpha_divergence(p, q, 0.5)
    assert d == pytest.approx(alpha_divergence(q, p, 0.5))
    assert d == pytest.approx(4.0 * (1.0 - np.sum(np.sqrt(p * q))))


def test_alpha_family_is_asymmetric_elsewhere():
    p, q = [0.7, 0.2, 0.1], [0.1, 0.3, 0.6]
    assert alpha_divergence(p, q, 0.2) != pytest.approx(alpha_divergence(q, p, 0.2))
    assert alpha_divergence(p, q, 0.2) == pytest.approx(alpha_divergence(q, p, 0.8))


@pytest.mark.parametrize("alpha", [0.0, 1.0, -0.5, 1.5])
def test_alpha_outside_open_interval(alpha):
    with pytest.raises(ValueError):
        alpha_divergence([0.5, 0.5], [0.5, 0.5], alpha)


def test_divergences_are_non_negative_and_bounded():
    rng = np.random.default_rng(0)
    for _ in range(50):
        p, q = rng.dirichlet(np.ones(6)), rng.dirichlet(np.ones(6))
        js = divergence(p, q, DivergenceKind.JENSEN_SHANNON)
        assert 0.0 <= js <= math.log(2.0)
        assert js == pytest.approx(divergence(q, p, DivergenceKind.JENSEN_SHANNON))
        assert divergence(p, q, DivergenceKind.ALPHA_FAMILY, 0.3) >= 0.0


def test_shape_mismatch():
    with pytest.raises(ValueError):
        jensen_shannon([0.5, 0.5], [1.0])


def test_alignment_shares_tail_mass():
    p = _dist("a", {"a": 0.6, "b": 0.2})
    q = _dist("a", {"a": 0.5, "c": 0.3})
    aligned = align_distributions(p, q)
    assert aligned.support == ["a", "b", "c", TAIL_TOKEN]
    # p leaves 0.2 for {c, tail}; q leaves 0.2 for {b, tail}
    np.testing.assert_allclose(aligned.p, [0.6, 0.2, 0.1, 0.1])
    np.testing.assert_allclose(aligned.q, [0.5, 0.1, 0.3, 0.1])
    assert aligned.p.sum() == pytest.approx(1.0)


def test_alignment_floors_zero_tail():
    p = _dist("a", {"a": 0.7, "b": 0.3})
    q = _dist("c", {"c": 1.0})
    aligned = align_distributions(p, q)
    assert (aligned.p > 0).all() and (aligned.q > 0).all()
    assert token_divergence(p, q) == pytest.approx(math.log(2.0), rel=1e-6)


def test_token_divergence_of_same_distribution():
    p = _dist("a", {"a": 0.6, "b": 0.2})
    assert token_divergence(p, p) == pytest.approx(0.0, abs=1e-12)
    assert token_divergence(p, p, DivergenceKind.ALPHA_FAMILY, 0.5) == pytest.approx(0.0, abs=1e-12)
