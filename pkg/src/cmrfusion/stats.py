"""Agreement metrics between automatic and expert scores, and one-way ANOVA.

The F-distribution tail probability comes from the regularized incomplete
beta function evaluated with a Lentz continued fraction; an independent
quadrature oracle checks it in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from cmrfusion.mie import ScoreGrid


@dataclass(frozen=True)
class ConfusionTable:
    """5x5 counts: rows = visual score 0..4, columns = automatic score."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=int)
        if c.shape != (5, 5):
            raise ValueError("confusion table must be 5x5")
        if (c < 0).any():
            raise ValueError("counts must be nonnegative")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_json(self) -> dict:
        return {"rows_visual": [[int(v) for v in row] for row in self.counts],
                "total": self.total}


def agreement_counts(t: ConfusionTable, tolerance: int) -> tuple[int, int]:
    """(matching entries, total) with |visual - automatic| <= tolerance."""
    if t.total == 0:
        raise ValueError("empty confusion table")
    r, c = np.indices((5, 5))
    matched = int(t.counts[np.abs(r - c) <= tolerance].sum())
    return matched, t.total


def agreement(t: ConfusionTable, tolerance: int) -> float:
    matched, total = agreement_counts(t, tolerance)
    return matched / total


def agreement_exact(t: ConfusionTable, tolerance: int) -> Fraction:
    matched, total = agreement_counts(t, tolerance)
    return Fraction(matched, total)


def build_confusion(auto: ScoreGrid, expert: ScoreGrid,
                    excluded_slices=()) -> ConfusionTable:
    """Tally matched sub-segments; configured basal/apical slices skipped."""
    if auto.n_slices != expert.n_slices:
        raise ValueError("score grids have different slice counts")
    excluded = set(int(k) for k in excluded_slices)
    counts = np.zeros((5, 5), dtype=int)
    for k in range(auto.n_slices):
        if k in excluded:
            continue
        for a, e in zip(auto.slices[k], expert.slices[k]):
            counts[e, a] += 1
    return ConfusionTable(counts=counts)


# ---------------------------------------------------------------------------
# F distribution via the regularized incomplete beta function


def _betacf(a: float, b: float, x: float) -> float:
    """Lentz continued fraction for the incomplete beta."""
    max_iter = 300
    eps = 3e-14
    fpmin = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < fpmin:
        d = fpmin
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    return h


def betainc_reg(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def f_survival(f: float, d1: float, d2: float) -> float:
    """P(F_{d1,d2} > f), the upper tail of the F distribution."""
    if f <= 0:
        return 1.0
    x = d2 / (d2 + d1 * f)
    return betainc_reg(d2 / 2.0, d1 / 2.0, x)


@dataclass(frozen=True)
class AnovaResult:
    f: float
    df_between: int
    df_within: int
    p: float
    group_means: tuple
    group_counts: tuple
    degenerate: bool = False   # zero within-group variance with separation

    def to_json(self) -> dict:
        return {
            "F": self.f if math.isfinite(self.f) else None,
            "df_between": self.df_between,
            "df_within": self.df_within,
            "p": self.p,
            "group_means": list(self.group_means),
            "group_counts": list(self.group_counts),
            "degenerate": self.degenerate,
        }


def one_way_anova(groups) -> AnovaResult:
    """Classical F = MSB / MSW with the upper-tail p value.

    Zero variance everywhere gives F = 0, p = 1; zero within-group variance
    with real between-group separation is reported as p = 0 and flagged.
    """
    data = [np.asarray(g, dtype=float).ravel() for g in groups]
    if len(data) < 2:
        raise ValueError("need at least two groups")
    if any(len(g) < 1 for g in data):
        raise ValueError("every group needs at least one value")
    n_total = sum(len(g) for g in data)
    df_b = len(data) - 1
    df_w = n_total - len(data)
    if df_w < 1:
        raise ValueError("need at least two total within degrees of freedom")
    grand = float(np.concatenate(data).mean())
    means = [float(g.mean()) for g in data]
    ssb = sum(len(g) * (m - grand) ** 2 for g, m in zip(data, means))
    ssw = sum(float(((g - m) ** 2).sum()) for g, m in zip(data, means))
    counts = tuple(len(g) for g in data)
    if ssw <= 0.0:
        if ssb <= 0.0:
            return AnovaResult(0.0, df_b, df_w, 1.0, tuple(means), counts)
        return AnovaResult(math.inf, df_b, df_w, 0.0, tuple(means), counts,
                           degenerate=True)
    f = (ssb / df_b) / (ssw / df_w)
    return AnovaResult(f, df_b, df_w, f_survival(f, df_b, df_w),
                       tuple(means), counts)


def group_by_contraction(values, labels) -> dict:
    """Pairwise ANOVA of the adjacent wall-motion classes.

    values: per-segment scalars (e.g. ATR); labels: matching N / H / AD
    strings.  Runs AD vs H and H vs N; a pair with an empty class is
    skipped with a notice.
    """
    values = np.asarray(values, dtype=float)
    labels = np.asarray(labels)
    if values.shape != labels.shape:
        raise ValueError("values and labels must align")
    keep = np.isfinite(values)
    values, labels = values[keep], labels[keep]
    out = {}
    for name, (la, lb) in {"AD_vs_H": ("AD", "H"), "H_vs_N": ("H", "N")}.items():
        ga = values[labels == la]
        gb = values[labels == lb]
        if len(ga) == 0 or len(gb) == 0:
            out[name] = {"skipped": f"empty class in {name}"}
            continue
        out[name] = one_way_anova([ga, gb]).to_json()
    return out
