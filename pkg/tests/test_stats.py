import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cmrfusion.mie import ScoreGrid
from cmrfusion.stats import (
    AnovaResult,
    ConfusionTable,
    agreement,
    agreement_counts,
    agreement_exact,
    betainc_reg,
    build_confusion,
    f_survival,
    group_by_contraction,
    one_way_anova,
)

# Published concordance counts: rows = visual scores 0..4, columns =
# automatic scores 0..4, 1044 matched sub-segments after refined registration.
TABLE_I = np.array([
    [761, 26, 12, 2, 4],
    [39, 6, 5, 1, 3],
    [27, 5, 25, 1, 7],
    [5, 3, 14, 1, 19],
    [7, 3, 20, 2, 46],
])


def f_survival_oracle(f: float, d1: int, d2: int) -> float:
    """Quadrature of the F density on [0, f] via Simpson (independent of
    the incomplete-beta route).  Substituting x = t^2 removes the origin
    singularity of the density when d1 = 1."""
    if f <= 0:
        return 1.0
    ln_norm = (math.lgamma((d1 + d2) / 2) - math.lgamma(d1 / 2) - math.lgamma(d2 / 2)
               + (d1 / 2) * math.log(d1 / d2))

    def integrand(t):
        # pdf(t^2) * 2t = 2 t^(d1-1) * norm * (1 + d1 t^2 / d2)^{-(d1+d2)/2}
        if t <= 0:
            return 0.0 if d1 > 1 else 2.0 * math.exp(ln_norm)
        return 2.0 * math.exp(ln_norm + (d1 - 1) * math.log(t)
                              - ((d1 + d2) / 2) * math.log1p(d1 * t * t / d2))

    n = 20001
    ts = np.linspace(0.0, math.sqrt(f), n)
    ys = np.array([integrand(t) for t in ts])
    h = ts[1] - ts[0]
    cdf = h / 3 * (ys[0] + ys[-1] + 4 * ys[1:-1:2].sum() + 2 * ys[2:-2:2].sum())
    return 1.0 - cdf


def test_table_total():
    assert TABLE_I.sum() == 1044


def test_agreement_absolute_and_one_grade():
    t = ConfusionTable(counts=TABLE_I)
    num0, den0 = agreement_counts(t, 0)
    assert (num0, den0) == (839, 1044)
    assert agreement_exact(t, 0) == Fraction(839, 1044)
    num1, den1 = agreement_counts(t, 1)
    assert (num1, den1) == (950, 1044)
    assert round(agreement(t, 0) * 100, 1) == 80.4
    assert round(agreement(t, 1) * 100, 1) == 91.0


def test_agreement_identity_table():
    t = ConfusionTable(counts=np.diag([10, 5, 3, 2, 1]))
    assert agreement(t, 0) == 1.0


def test_agreement_monotone_in_tolerance():
    t = ConfusionTable(counts=TABLE_I)
    vals = [agreement(t, tol) for tol in range(5)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    assert vals[4] == 1.0


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_agreement_monotone_random_tables(seed):
    rng = np.random.default_rng(seed)
    t = ConfusionTable(counts=rng.integers(0, 30, size=(5, 5)))
    if t.total == 0:
        return
    assert agreement(t, 1) >= agreement(t, 0)
    assert agreement(t, 4) == 1.0


def test_empty_table_raises():
    with pytest.raises(ValueError):
        agreement(ConfusionTable(counts=np.zeros((5, 5), dtype=int)), 0)


def test_build_confusion_diagonal_and_cell():
    g = ScoreGrid(slices=((0, 1, 2, 3, 4) + (0,) * 13,))
    t = build_confusion(g, g)
    assert agreement(t, 0) == 1.0
    auto = ScoreGrid(slices=((2,) + (0,) * 17,))
    expert = ScoreGrid(slices=((4,) + (0,) * 17,))
    t2 = build_confusion(auto, expert)
    assert t2.counts[4, 2] == 1


def test_build_confusion_excluded_slices():
    a = ScoreGrid(slices=((1,) * 18, (2,) * 18))
    e = ScoreGrid(slices=((1,) * 18, (0,) * 18))
    t = build_confusion(a, e, excluded_slices=[1])
    assert t.total == 18
    assert agreement(t, 0) == 1.0


# ---------------------------------------------------------------------------
# ANOVA


def test_anova_hand_computed_example():
    res = one_way_anova([[1, 2, 3], [2, 3, 4]])
    assert res.f == pytest.approx(1.5, abs=1e-12)
    assert (res.df_between, res.df_within) == (1, 4)
    assert res.p == pytest.approx(0.288, abs=1e-3)


def test_anova_identical_groups():
    res = one_way_anova([[2, 2, 2], [2, 2, 2]])
    assert res.f == 0.0
    assert res.p == 1.0


def test_anova_zero_within_nonzero_between():
    res = one_way_anova([[1, 1, 1], [2, 2, 2]])
    assert res.p == 0.0
    assert res.degenerate
    assert math.isinf(res.f)


def test_anova_shift_and_scale_invariance():
    a = [[1.0, 2.5, 3.0], [2.0, 4.0, 5.0], [0.5, 1.5, 2.5]]
    base = one_way_anova(a)
    shifted = one_way_anova([[v + 7.25 for v in g] for g in a])
    scaled = one_way_anova([[v * 3.5 for v in g] for g in a])
    assert shifted.f == pytest.approx(base.f, rel=1e-12)
    assert scaled.f == pytest.approx(base.f, rel=1e-12)


@pytest.mark.parametrize("f,d1,d2", [
    (0.5, 1, 4), (1.5, 1, 4), (2.5, 2, 10), (4.0, 3, 20), (0.1, 5, 5),
    (10.0, 1, 30), (3.3, 4, 8), (1.0, 2, 2), (7.7, 6, 12), (0.01, 1, 1),
    (2.0, 10, 40), (5.5, 2, 6), (0.75, 3, 3), (12.0, 1, 10), (1.9, 7, 21),
    (0.33, 2, 14), (6.1, 5, 25), (2.2, 8, 16), (3.9, 1, 2), (0.66, 9, 9),
])
def test_f_survival_matches_quadrature_oracle(f, d1, d2):
    assert f_survival(f, d1, d2) == pytest.approx(f_survival_oracle(f, d1, d2), abs=1e-6)


def test_betainc_bounds():
    assert betainc_reg(2.0, 3.0, 0.0) == 0.0
    assert betainc_reg(2.0, 3.0, 1.0) == 1.0
    with pytest.raises(ValueError):
        betainc_reg(2.0, 3.0, 1.5)


def test_group_by_contraction_pairs():
    rng = np.random.default_rng(0)
    values = np.concatenate([rng.normal(3.0, 0.2, 25),
                             rng.normal(2.0, 0.2, 25),
                             rng.normal(1.0, 0.2, 25)])
    labels = np.array(["N"] * 25 + ["H"] * 25 + ["AD"] * 25)
    out = group_by_contraction(values, labels)
    assert out["AD_vs_H"]["p"] < 0.05
    assert out["H_vs_N"]["p"] < 0.05


def test_group_by_contraction_skips_empty_class():
    values = np.array([1.0, 2.0, 3.0])
    labels = np.array(["N", "N", "H"])
    out = group_by_contraction(values, labels)
    assert "skipped" in out["AD_vs_H"]
    assert "p" in out["H_vs_N"]


def test_group_by_contraction_identical_tiers():
    rng = np.random.default_rng(1)
    base = rng.normal(2.0, 0.3, 20)
    values = np.concatenate([base, base])
    labels = np.array(["H"] * 20 + ["N"] * 20)
    out = group_by_contraction(values, labels)
    assert out["H_vs_N"]["p"] > 0.9
