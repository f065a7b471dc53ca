"""Prediction/label agreement criteria and pairwise significance testing.

SRCC is the Pearson correlation of average ranks, KRCC is the tie-corrected
Kendall tau-b, PLCC is the plain Pearson correlation, and RMSE the root mean
squared error. Model comparison uses a two-sided Welch t-test on per-split
SRCC samples with Welch-Satterthwaite degrees of freedom.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np


class TooShort(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


class ConstantInput(ValueError):
    pass


class AllTied(ValueError):
    pass


class TooFewSamples(ValueError):
    pass


def _pair(x, y, min_len):
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if len(x) != len(y):
        raise LengthMismatch(f"length {len(x)} vs {len(y)}")
    if len(x) < min_len:
        raise TooShort(f"need at least {min_len} samples, got {len(x)}")
    return x, y


def average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values receive the average of their rank range."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x), dtype=np.float64)
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def plcc(x, y) -> float:
    """Pearson linear correlation coefficient."""
    x, y = _pair(x, y, 2)
    dx = x - x.mean()
    dy = y - y.mean()
    sx = math.sqrt(float(dx @ dx))
    sy = math.sqrt(float(dy @ dy))
    if sx == 0.0 or sy == 0.0:
        raise ConstantInput("correlation is undefined for a constant input")
    return float(dx @ dy) / (sx * sy)


def srcc(x, y) -> float:
    """Spearman rank correlation: Pearson correlation of average ranks."""
    x, y = _pair(x, y, 2)
    return plcc(average_ranks(x), average_ranks(y))


def _tie_term(x: np.ndarray) -> float:
    _, counts = np.unique(x, return_counts=True)
    return float((counts * (counts - 1)).sum()) / 2.0


def krcc(x, y) -> float:
    """Kendall tau-b (tie-corrected), by direct pair counting."""
    x, y = _pair(x, y, 2)
    n = len(x)
    dx = np.sign(x[:, None] - x[None, :])
    dy = np.sign(y[:, None] - y[None, :])
    prod = dx * dy
    iu = np.triu_indices(n, k=1)
    concordant = int((prod[iu] > 0).sum())
    discordant = int((prod[iu] < 0).sum())
    n0 = n * (n - 1) / 2.0
    n1 = _tie_term(x)
    n2 = _tie_term(y)
    denom = math.sqrt((n0 - n1) * (n0 - n2))
    if denom == 0.0:
        raise AllTied("tau-b is undefined when either variable is fully tied")
    return (concordant - discordant) / denom


def rmse(x, y) -> float:
    """Root mean squared difference."""
    x, y = _pair(x, y, 1)
    diff = x - y
    return math.sqrt(float((diff * diff).mean()))


# --------------------------------------------------------------------------
# Welch t-test on SRCC samples
# --------------------------------------------------------------------------

class Verdict(Enum):
    ROW_BETTER = "better"
    ROW_WORSE = "worse"
    INDISTINGUISHABLE = "indistinguishable"


@dataclass(frozen=True)
class SignificanceVerdict:
    verdict: Verdict
    p_value: float


def _betacf(a: float, b: float, x: float) -> float:
    # continued fraction for the incomplete beta (modified Lentz)
    max_iter = 300
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 3e-16:
            break
    return h


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if not (a > 0 and b > 0):
        raise ValueError(f"shape parameters must be positive, got a={a}, b={b}")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_two_sided_p(t: float, df: float) -> float:
    """P(|T| >= |t|) for a Student-t variable with df degrees of freedom."""
    if df <= 0:
        raise ValueError(f"degrees of freedom must be positive, got {df}")
    if t == 0.0:
        return 1.0
    return regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t))


def ttest_srcc(samples_a, samples_b, alpha: float = 0.05) -> SignificanceVerdict:
    """Welch two-sample t-test between per-split SRCC samples.

    RowBetter/RowWorse when p < alpha with the corresponding mean ordering;
    Indistinguishable otherwise. Two degenerate zero-variance cases are
    resolved directly: equal means give p = 1, distinct means give p = 0.
    """
    a = np.asarray(samples_a, dtype=np.float64).reshape(-1)
    b = np.asarray(samples_b, dtype=np.float64).reshape(-1)
    if len(a) < 2 or len(b) < 2:
        raise TooFewSamples(
            f"need at least 2 samples per side, got {len(a)} and {len(b)}"
        )
    mean_a, mean_b = float(a.mean()), float(b.mean())
    var_a = float(a.var(ddof=1))
    var_b = float(b.var(ddof=1))
    se_sq = var_a / len(a) + var_b / len(b)
    if se_sq == 0.0:
        p = 1.0 if mean_a == mean_b else 0.0
    else:
        t = (mean_a - mean_b) / math.sqrt(se_sq)
        df = se_sq * se_sq / (
            (var_a / len(a)) ** 2 / (len(a) - 1) + (var_b / len(b)) ** 2 / (len(b) - 1)
        )
        p = student_t_two_sided_p(t, df)
    if p < alpha and mean_a > mean_b:
        verdict = Verdict.ROW_BETTER
    elif p < alpha and mean_a < mean_b:
        verdict = Verdict.ROW_WORSE
    else:
        verdict = Verdict.INDISTINGUISHABLE
    return SignificanceVerdict(verdict=verdict, p_value=p)


def significance_matrix(per_model_srcc: dict[str, list], alpha: float = 0.05):
    """Pairwise verdict matrix over models, diagonal Indistinguishable.

    Returns (model_names, matrix) with matrix[i][j] comparing row model i
    against column model j.
    """
    names = list(per_model_srcc)
    matrix: list[list[SignificanceVerdict]] = []
    for i, row_name in enumerate(names):
        row = []
        for j, col_name in enumerate(names):
            if i == j:
                row.append(SignificanceVerdict(Verdict.INDISTINGUISHABLE, 1.0))
            else:
                row.append(
                    ttest_srcc(per_model_srcc[row_name], per_model_srcc[col_name], alpha)
                )
        matrix.append(row)
    return names, matrix
