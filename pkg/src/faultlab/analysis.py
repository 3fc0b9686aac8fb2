"""Canary judgment: nonparametric comparison of baseline and canary series.

Each metric is compared with a two-sided Mann-Whitney rank test. For small
samples the p-value is exact: the full permutation distribution of the U
statistic is built by dynamic programming over tie groups, with ranks
scaled by two so everything stays in integer arithmetic. Larger samples
use the tie-corrected normal approximation with a continuity correction.

Metrics are classified Pass / High / Low / Inconclusive. Only KPI-class
metrics can fail the canary, and only when they shift in their harmful
direction; cluster-health metrics merely warn.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from enum import Enum
from math import comb
from typing import Optional, Sequence

EXACT_MAX_N = 20
MIN_SAMPLES = 5


class AnalysisError(ValueError):
    pass


class Classification(str, Enum):
    PASS = "pass"
    HIGH = "high"
    LOW = "low"
    INCONCLUSIVE = "inconclusive"


class Direction(str, Enum):
    HIGH_IS_BAD = "high_is_bad"
    LOW_IS_BAD = "low_is_bad"
    EITHER_IS_SUSPECT = "either_is_suspect"


class MetricClass(str, Enum):
    KPI = "kpi"
    HEALTH = "health"


@dataclass(frozen=True)
class MannWhitneyResult:
    u_baseline: float
    u_canary: float
    p_value: float
    method: str  # "exact" or "normal"


def _ranks_times_two(values: Sequence[float]) -> list[int]:
    """Fractional ranks scaled by 2, so tied midranks stay integral."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks2 = [0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        rank2 = (i + 1) + (j + 1)
        for k in range(i, j + 1):
            ranks2[order[k]] = rank2
        i = j + 1
    return ranks2


def _exact_two_sided_p(ranks2: list[int], n1: int, u2_obs: int) -> float:
    """P(|U - n1*n2/2| >= |observed|) over all C(N, n1) group assignments.

    dp[k] maps doubled rank-sums to exact big-integer counts of ways to
    pick k sample items; each tie block contributes a binomial choice.
    """
    n2 = len(ranks2) - n1
    mu2 = n1 * n2
    d_obs = abs(u2_obs - mu2)

    blocks = sorted(Counter(ranks2).items())
    dp: list[dict[int, int]] = [defaultdict(int) for _ in range(n1 + 1)]
    dp[0][0] = 1
    for rank2, size in blocks:
        ndp: list[dict[int, int]] = [defaultdict(int) for _ in range(n1 + 1)]
        for k in range(n1 + 1):
            if not dp[k]:
                continue
            for m in range(0, min(size, n1 - k) + 1):
                weight = comb(size, m)
                add = m * rank2
                target = ndp[k + m]
                for w2, count in dp[k].items():
                    target[w2 + add] += count * weight
        dp = ndp

    shift = n1 * (n1 + 1)
    extreme = 0
    total = comb(len(ranks2), n1)
    for w2, count in dp[n1].items():
        if abs((w2 - shift) - mu2) >= d_obs:
            extreme += count
    return extreme / total


def _normal_two_sided_p(ranks2: list[int], n1: int, u2_obs: int) -> float:
    n = len(ranks2)
    n2 = n - n1
    mu2 = n1 * n2
    ties = Counter(ranks2).values()
    tie_term = sum(t ** 3 - t for t in ties)
    # variance of U, written for the doubled statistic: var(2U) = 4 var(U)
    var2 = n1 * n2 / 3.0 * ((n + 1) - tie_term / (n * (n - 1)))
    if var2 <= 0:
        return 1.0
    # continuity correction of 0.5 on U is 1.0 on 2U
    z = max(abs(u2_obs - mu2) - 1.0, 0.0) / math.sqrt(var2)
    p = math.erfc(z / math.sqrt(2))
    return min(p, 1.0)


def mann_whitney(baseline: Sequence[float], canary: Sequence[float]) -> MannWhitneyResult:
    """Two-sided test. U counts pairs won, with ties worth a half."""
    n1, n2 = len(baseline), len(canary)
    if n1 == 0 or n2 == 0:
        raise AnalysisError("both samples must be non-empty")
    combined = list(baseline) + list(canary)
    ranks2 = _ranks_times_two(combined)
    w2_baseline = sum(ranks2[:n1])
    u2_baseline = w2_baseline - n1 * (n1 + 1)
    u2_canary = 2 * n1 * n2 - u2_baseline

    if n1 <= EXACT_MAX_N and n2 <= EXACT_MAX_N:
        p = _exact_two_sided_p(ranks2, n1, u2_baseline)
        method = "exact"
    else:
        p = _normal_two_sided_p(ranks2, n1, u2_baseline)
        method = "normal"
    return MannWhitneyResult(
        u_baseline=u2_baseline / 2.0,
        u_canary=u2_canary / 2.0,
        p_value=p,
        method=method,
    )


# --- metric comparison and verdicts ---------------------------------------

@dataclass(frozen=True)
class MetricInput:
    name: str
    metric_class: MetricClass
    direction: Direction
    baseline: tuple[float, ...]
    canary: tuple[float, ...]


@dataclass(frozen=True)
class MetricComparison:
    name: str
    metric_class: MetricClass
    direction: Direction
    classification: Classification
    p_value: Optional[float] = None
    u_canary: Optional[float] = None
    method: Optional[str] = None

    @property
    def harmful(self) -> bool:
        if self.metric_class is not MetricClass.KPI:
            return False
        if self.direction is Direction.HIGH_IS_BAD:
            return self.classification is Classification.HIGH
        if self.direction is Direction.LOW_IS_BAD:
            return self.classification is Classification.LOW
        return self.classification in (Classification.HIGH, Classification.LOW)


class Verdict(str, Enum):
    PASS = "Pass"
    FAIL = "Fail"
    INCONCLUSIVE = "Inconclusive"


@dataclass(frozen=True)
class CanaryVerdict:
    overall: Verdict
    score: int  # percent of compared metrics that passed
    comparisons: tuple[MetricComparison, ...] = ()
    alpha: float = 0.01

    @property
    def harmful_metrics(self) -> list[str]:
        return [c.name for c in self.comparisons if c.harmful]


def compare_metric(metric: MetricInput, alpha: float) -> MetricComparison:
    n1, n2 = len(metric.baseline), len(metric.canary)
    if n1 < MIN_SAMPLES or n2 < MIN_SAMPLES:
        return MetricComparison(metric.name, metric.metric_class, metric.direction,
                                Classification.INCONCLUSIVE)
    res = mann_whitney(metric.baseline, metric.canary)
    if res.p_value < alpha:
        # canary ranking above baseline means its values shifted high
        cls = Classification.HIGH if res.u_canary > res.u_baseline else Classification.LOW
    else:
        cls = Classification.PASS
    return MetricComparison(metric.name, metric.metric_class, metric.direction,
                            cls, res.p_value, res.u_canary, res.method)


def judge(metrics: Sequence[MetricInput], alpha: float = 0.01) -> CanaryVerdict:
    """Overall call: Fail iff a KPI metric moved in its harmful direction."""
    comparisons = tuple(compare_metric(m, alpha) for m in metrics)
    kpi = [c for c in comparisons if c.metric_class is MetricClass.KPI]

    if any(c.harmful for c in comparisons):
        overall = Verdict.FAIL
    elif not kpi or all(c.classification is Classification.INCONCLUSIVE for c in kpi):
        overall = Verdict.INCONCLUSIVE
    else:
        overall = Verdict.PASS

    if comparisons:
        passed = sum(1 for c in comparisons
                     if c.classification is Classification.PASS)
        score = round(100 * passed / len(comparisons))
    else:
        score = 0
    return CanaryVerdict(overall=overall, score=score,
                         comparisons=comparisons, alpha=alpha)
