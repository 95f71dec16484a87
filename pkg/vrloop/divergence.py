#
# Copyright (c) 2025 Commonwealth Scientific and Industrial Research Organisation (CSIRO). All rights reserved.
# Use of this source code is governed by a BSD-style license that can be
# found in the LICENSE file. See the AUTHORS file for names of contributors.
#
"""Divergences between truncated next-token distributions.

Endpoints only list the top-K tokens of each distribution. Two such
distributions are compared on the union of their listed tokens plus one
shared tail atom holding whatever mass is left.
"""
import math
from enum import Enum
from typing import List, NamedTuple, Sequence

import numpy as np
from scipy.special import rel_entr

from .agents.base import EPSILON, TokenDist

TAIL_TOKEN = "\x00<tail>"


class DivergenceKind(str, Enum):
    ALPHA_FAMILY = "alpha_family"
    JENSEN_SHANNON = "jensen_shannon"


class Aligned(NamedTuple):
    support: List[str]
    p: np.ndarray
    q: np.ndarray


def align_distributions(p: TokenDist, q: TokenDist) -> Aligned:
    """Express `p` and `q` over the union of their listed tokens plus the tail atom.

    A token listed by one side only receives an equal share of the other
    side's tail mass; the tail atom keeps the remaining share. Both vectors
    are floored at EPSILON and renormalised.
    """
    lp, lq = p.listed(), q.listed()
    support = list(lp)
    support.extend(t for t in lq if t not in lp)
    return Aligned(support + [TAIL_TOKEN], _side(lp, p.tail_mass, support), _side(lq, q.tail_mass, support))


def _side(listed, tail_mass: float, support: List[str]) -> np.ndarray:
    missing = sum(1 for t in support if t not in listed)
    share = tail_mass / (missing + 1)
    v = np.array([listed.get(t, share) for t in support] + [share], dtype=float)
    v = np.maximum(v, EPSILON)
    return v / v.sum()


def alpha_divergence(p: Sequence[float], q: Sequence[float], alpha: float = 0.5) -> float:
    """D_a(p||q) = (1 - sum p^a q^(1-a)) / (a(1-a)); 4(1 - sum sqrt(pq)) at a = 0.5."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    p, q = _pair(p, q)
    s = float(np.sum(np.power(p, alpha) * np.power(q, 1.0 - alpha)))
    return max(0.0, (1.0 - s) / (alpha * (1.0 - alpha)))


def jensen_shannon(p: Sequence[float], q: Sequence[float]) -> float:
    """JSD in nats, bounded by ln 2."""
    p, q = _pair(p, q)
    m = 0.5 * (p + q)
    d = 0.5 * float(np.sum(rel_entr(p, m))) + 0.5 * float(np.sum(rel_entr(q, m)))
    return min(max(0.0, d), math.log(2.0))


def divergence(p: Sequence[float], q: Sequence[float], kind: DivergenceKind = DivergenceKind.JENSEN_SHANNON,
               alpha: float = 0.5) -> float:
    if kind == DivergenceKind.JENSEN_SHANNON:
        return jensen_shannon(p, q)
    return alpha_divergence(p, q, alpha)


def token_divergence(student: TokenDist, teacher: TokenDist, kind: DivergenceKind = DivergenceKind.JENSEN_SHANNON,
                     alpha: float = 0.5) -> float:
    a = align_distributions(student, teacher)
    return divergence(a.p, a.q, kind, alpha)


def _pair(p, q):
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"distributions differ in shape {p.shape} vs {q.shape}")
    return p, q
