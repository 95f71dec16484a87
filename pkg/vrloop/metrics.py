#
# Copyright (c) 2025 Commonwealth Scientific and Industrial Research Organisation (CSIRO). All rights reserved.
# Use of this source code is governed by a BSD-style license that can be
# found in the LICENSE file. See the AUTHORS file for names of contributors.
#
"""Analysis over persisted traces and BoN runs. Everything here is a pure fold."""
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel
from ivcap_service import getLogger

from .bon import BonRun, bon_correct
from .core import Problem, VRTrace, by_problem
from .errors import DataError
from .loop import round_series

logger = getLogger("metrics")

FLOAT_FORMAT = "%.6f"


def pass_at_k(n: int, c: int, k: int) -> float:
    """Unbiased pass@k: 1 - C(n-c, k) / C(n, k), in product form."""
    if not (0 <= c <= n and 1 <= k <= n):
        raise ValueError(f"pass@k needs 0 <= c <= n and 1 <= k <= n, got n={n} c={c} k={k}")
    if n - c < k:
        return 1.0
    return float(1.0 - np.prod(1.0 - k / np.arange(n - c + 1, n + 1)))


def _max_rounds(traces: Sequence[VRTrace]) -> int:
    rs = {t.max_rounds for t in traces}
    if len(rs) != 1:
        raise DataError(f"traces disagree on max_rounds: {sorted(rs)}")
    return rs.pop()


def round_pass1(traces: Sequence[VRTrace], r: int) -> float:
    """Mean correctness of the current solution after `r` verification rounds."""
    if not traces:
        raise DataError("no traces")
    R = _max_rounds(traces)
    if not 0 <= r <= R:
        raise ValueError(f"round {r} outside 0..{R}")
    return float(np.mean([round_series(t)[r] for t in traces]))


def round_pass1_series(traces: Sequence[VRTrace]) -> List[float]:
    if not traces:
        raise DataError("no traces")
    m = np.array([round_series(t, _max_rounds(traces)) for t in traces], dtype=float)
    return m.mean(axis=0).tolist()


def round_pass1_by_bin(traces: Sequence[VRTrace], problems: Dict[str, Problem]) -> Dict[str, List[float]]:
    """Round series pooled over all traces ("all") and per difficulty bin."""
    groups: Dict[str, List[VRTrace]] = {"all": list(traces)}
    for t in traces:
        p = problems.get(t.problem_id)
        if p is not None and p.bin is not None:
            groups.setdefault(p.bin.value, []).append(t)
    return {name: round_pass1_series(ts) for name, ts in groups.items() if ts}


def _uniform_groups(traces: Sequence[VRTrace]) -> Dict[str, List[VRTrace]]:
    groups = by_problem(list(traces))
    sizes = {len(g) for g in groups.values()}
    if len(sizes) > 1:
        raise DataError(f"loops per problem are not uniform: {sorted(sizes)}")
    return groups


def pass_at_k_per_round(traces: Sequence[VRTrace], r: int, k: int) -> float:
    """Per problem, pass@k over its loops' round-r solutions; averaged over problems."""
    if not traces:
        raise DataError("no traces")
    groups = _uniform_groups(traces)
    R = _max_rounds(traces)
    values = []
    for g in groups.values():
        c = sum(1 for t in g if round_series(t, R)[r])
        values.append(pass_at_k(len(g), c, k))
    return float(np.mean(values))


class PassAtKPoint(BaseModel):
    round: int
    k: int
    pass_at_k: float


def pass_at_k_curve(traces: Sequence[VRTrace], rounds: Optional[Sequence[int]] = None,
                    ks: Optional[Sequence[int]] = None) -> List[PassAtKPoint]:
    """pass@k for every k in `ks` (default 1..n) at every round in `rounds` (default 0..R)."""
    groups = _uniform_groups(traces)
    n = len(next(iter(groups.values())))
    R = _max_rounds(traces)
    rounds = range(R + 1) if rounds is None else rounds
    ks = range(1, n + 1) if ks is None else ks
    return [PassAtKPoint(round=r, k=k, pass_at_k=pass_at_k_per_round(traces, r, k)) for r in rounds for k in ks]


# ---- calibration ----

class FrontierPoint(BaseModel):
    round: int
    coverage: float
    precision: Optional[float] = None
    accepted: int
    accepted_correct: int
    total: int


def precision_coverage(traces: Sequence[VRTrace], max_round: Optional[int] = None) -> List[FrontierPoint]:
    """Coverage and precision of acceptances made by round t, for t = 1..R."""
    if not traces:
        raise DataError("no traces")
    R = max_round if max_round is not None else _max_rounds(traces)
    accepted_at = []
    for t in traces:
        ar = t.accepted_round
        ok = ar is not None and bool(t.rounds[ar - 1].attempt.correct)
        accepted_at.append((ar, ok))
    points = []
    for r in range(1, R + 1):
        acc = [ok for ar, ok in accepted_at if ar is not None and ar <= r]
        good = sum(acc)
        points.append(FrontierPoint(
            round=r,
            coverage=len(acc) / len(traces),
            precision=good / len(acc) if acc else None,
            accepted=len(acc),
            accepted_correct=good,
            total=len(traces),
        ))
    return points


def precision_at_coverage(points: Sequence[FrontierPoint], coverage: float) -> Optional[float]:
    """Precision at `coverage`, interpolated linearly between frontier points."""
    pts = [(p.coverage, p.precision) for p in points if p.precision is not None]
    if not pts or coverage < pts[0][0] or coverage > pts[-1][0]:
        return None
    xs = np.array([c for c, _ in pts])
    ys = np.array([p for _, p in pts])
    # coverage repeats across rounds without new acceptances
    xs, idx = np.unique(xs, return_index=True)
    return float(np.interp(coverage, xs, ys[idx]))


class ScoreAccuracyPoint(BaseModel):
    round: int
    mean_score: Optional[float] = None
    pass1: float
    scored: int


def score_accuracy_series(traces: Sequence[VRTrace]) -> List[ScoreAccuracyPoint]:
    """Mean verifier score given to y_r next to round-r pass@1, for r = 0..R-1.

    Traces without any score are left out of both series.
    """
    scored = [t for t in traces
              if any(rr.verifier_output is not None and rr.verifier_output.score is not None for rr in t.rounds)]
    if not scored:
        raise DataError("no trace carries verifier scores")
    if len(scored) < len(traces):
        logger.info(f"score series: excluded {len(traces) - len(scored)} unscored trace(s)")
    R = _max_rounds(scored)
    pass1 = round_pass1_series(scored)
    points = []
    for r in range(R):
        scores = [t.rounds[r].verifier_output.score for t in scored
                  if r < len(t.rounds) and t.rounds[r].verifier_output is not None
                  and t.rounds[r].verifier_output.score is not None]
        points.append(ScoreAccuracyPoint(round=r, mean_score=float(np.mean(scores)) if scores else None,
                                         pass1=pass1[r], scored=len(scores)))
    return points


def delta_series(traces: Sequence[VRTrace], baseline: Sequence[VRTrace]) -> List[float]:
    """Per-round pass@1 of `traces` minus that of `baseline`."""
    a, b = round_pass1_series(traces), round_pass1_series(baseline)
    if len(a) != len(b):
        raise DataError(f"series lengths differ: {len(a)} vs {len(b)}")
    return [x - y for x, y in zip(a, b)]


# ---- matched compute ----

class MatchedComputeRow(BaseModel):
    budget: int
    n: int
    loops: int
    vr_pass1: float
    bon_pass1: float
    vr_generator_budget: int
    vr_generator_calls: int
    bon_generator_calls: int
    vr_verifier_calls: int
    bon_verifier_calls: int


def matched_compute_compare(traces: Sequence[VRTrace], runs: Sequence[BonRun],
                            budgets: Sequence[int]) -> List[MatchedComputeRow]:
    """Compare r rounds of refinement with Best-of-(r+1) on the same (problem, loop) keys.

    `vr_generator_budget` counts r+1 generator calls per loop, the number a
    loop makes when nothing is accepted before round r; `vr_generator_calls`
    is what the loops actually used.
    """
    if not traces or not runs:
        raise DataError("matched compute needs traces and BoN runs")
    tkeys = {t.key for t in traces}
    rkeys = {r.key for r in runs}
    if tkeys != rkeys:
        raise DataError(f"trace and BoN keys differ ({len(tkeys ^ rkeys)} unmatched)")
    R = _max_rounds(traces)
    n_max = min(r.n for r in runs)
    rows = []
    for b in budgets:
        if not 0 <= b <= R or b + 1 > n_max:
            raise DataError(f"budget {b} needs R >= {b} and N >= {b + 1} (have R={R}, N={n_max})")
        n = b + 1
        vr_gen = vr_ver = bon_gen = bon_ver = 0
        for t in traces:
            vr_gen += sum(1 for rr in t.rounds if rr.attempt.round_index <= b)
            vr_ver += sum(1 for rr in t.rounds[:b] if rr.verifier_output is not None)
        for run in runs:
            bon_gen += sum(1 for s in run.samples[:n] if s.attempt is not None)
            bon_ver += sum(1 for s in run.samples[:n] if s.verifier_output is not None)
        rows.append(MatchedComputeRow(
            budget=b,
            n=n,
            loops=len(traces),
            vr_pass1=round_pass1(traces, b),
            bon_pass1=float(np.mean([bon_correct(run, n) for run in runs])),
            vr_generator_budget=len(traces) * n,
            vr_generator_calls=vr_gen,
            bon_generator_calls=bon_gen,
            vr_verifier_calls=vr_ver,
            bon_verifier_calls=bon_ver,
        ))
    return rows


# ---- CSV ----

def _to_csv(rows: List[dict], columns: List[str], path: str):
    df = pd.DataFrame(rows, columns=columns)
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT, na_rep="", lineterminator="\n")
    logger.info(f"wrote {len(df)} row(s) to {path}")


def write_round_series_csv(series: Dict[str, List[float]], path: str):
    """One row per round, one column per named series."""
    names = list(series)
    length = max(len(s) for s in series.values())
    rows = [{"round": r, **{name: series[name][r] if r < len(series[name]) else None for name in names}}
            for r in range(length)]
    _to_csv(rows, ["round"] + names, path)


def write_pass_at_k_csv(points: Sequence[PassAtKPoint], path: str):
    _to_csv([p.model_dump() for p in points], ["round", "k", "pass_at_k"], path)


def write_frontier_csv(points: Sequence[FrontierPoint], path: str):
    _to_csv([p.model_dump() for p in points],
            ["round", "coverage", "precision", "accepted", "accepted_correct", "total"], path)


def write_score_accuracy_csv(points: Sequence[ScoreAccuracyPoint], path: str):
    _to_csv([p.model_dump() for p in points], ["round", "mean_score", "pass1", "scored"], path)


def write_matched_compute_csv(rows: Sequence[MatchedComputeRow], path: str):
    _to_csv([r.model_dump() for r in rows], list(MatchedComputeRow.model_fields), path)
