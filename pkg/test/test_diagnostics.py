"""
Тесты диагностики игнорируемости области: регрессия, t-тест, TOST, панель
"""

import numpy as np
import pytest
from scipy import stats

from core.data_model import CovariateSchema, SurveyDataset
from core.diagnostics import (
    area_ignorability_regression,
    conventional_test,
    equivalence_test,
    ignorability_panel,
)
from core.errors import ConfigError, NoDataError, ValidationError

from helpers import make_survey, survey_rows


def synthetic_survey(rng, n_per_area, n_areas=4, shift=None, noise=0.3):
    """Y = 0.2 + 0.3·[sex=f] + 0.1·[pid=r] + шум; shift = (номер области, сдвиг)"""
    schema = CovariateSchema.from_levels({"sex": ["m", "f"]}, {"pid": ["d", "r"]})
    n = n_per_area * n_areas
    area_code = np.repeat(np.arange(n_areas), n_per_area)
    sex = rng.integers(0, 2, n)
    pid = rng.integers(0, 2, n)
    y = 0.2 + 0.3 * sex + 0.1 * pid + rng.normal(0.0, noise, n)
    if shift is not None:
        y = y + shift[1] * (area_code == shift[0])
    return SurveyDataset(schema, y, (area_code + 1).astype(str), {"sex": sex, "pid": pid})


def test_tost_worked_example():
    verdict = equivalence_test(0.01, 0.02, 1000, epsilon=0.05, alpha=0.05)
    assert verdict.t_lower == pytest.approx(3.0)
    assert verdict.t_upper == pytest.approx(2.0)
    assert verdict.p_value == pytest.approx(stats.t.sf(2.0, 1000))
    assert verdict.p_value == max(verdict.p_lower, verdict.p_upper)
    assert verdict.reject
    assert verdict.interval_level == pytest.approx(0.9)


def test_tost_at_margin_never_rejects():
    for se in (0.001, 0.01, 0.1, 1.0):
        verdict = equivalence_test(0.05, se, 200, epsilon=0.05)
        assert verdict.p_value >= 0.5
        assert not verdict.reject


def test_tost_with_vanishing_se():
    assert equivalence_test(0.0, 1e-12, 50, epsilon=0.05).reject
    assert equivalence_test(0.0, 0.0, 50, epsilon=0.05).reject
    assert not equivalence_test(0.1, 0.0, 50, epsilon=0.05).reject


def test_tost_monotone_in_epsilon():
    p = [equivalence_test(0.02, 0.03, 300, epsilon=eps).p_value for eps in np.linspace(0.01, 0.2, 20)]
    assert np.all(np.diff(p) <= 0)


def test_tost_rejects_iff_interval_inside_margin():
    for delta in np.linspace(-0.08, 0.08, 17):
        for se in (0.005, 0.02, 0.04):
            verdict = equivalence_test(delta, se, 150, epsilon=0.05, alpha=0.05)
            inside = -0.05 < verdict.lower and verdict.upper < 0.05
            assert verdict.reject == inside


def test_tost_invalid_parameters():
    with pytest.raises(ConfigError):
        equivalence_test(0.0, 0.1, 10, epsilon=0.0)
    with pytest.raises(ConfigError):
        equivalence_test(0.0, 0.1, 10, epsilon=0.1, alpha=0.5)


def test_conventional_test_values():
    assert conventional_test(0.0, 0.1, 100).p_value == 1.0
    assert conventional_test(0.5, 0.1, 100).reject
    verdict = conventional_test(0.1, 0.1, 100)
    assert verdict.p_value == pytest.approx(0.32, abs=0.005)
    assert not verdict.reject


def test_regression_recovers_pure_area_effect():
    rng = np.random.default_rng(1)
    survey = synthetic_survey(rng, 50, n_areas=2)
    survey = survey.with_outcome((survey.area == "1").astype(float))
    reg = area_ignorability_regression(survey, "1")
    assert reg.delta_hat == pytest.approx(1.0, abs=1e-10)
    assert reg.se < 1e-10


def test_regression_without_area_effect():
    rng = np.random.default_rng(2)
    survey = synthetic_survey(rng, 2500)
    reg = area_ignorability_regression(survey, "2")
    assert abs(reg.delta_hat) < 3 * reg.se
    assert reg.df == survey.n - 4


def test_duplicated_rows_shrink_se():
    rng = np.random.default_rng(3)
    survey = synthetic_survey(rng, 100)
    doubled = survey.subset(np.concatenate([np.arange(survey.n), np.arange(survey.n)]))
    one = area_ignorability_regression(survey, "1")
    two = area_ignorability_regression(doubled, "1")
    assert two.delta_hat == pytest.approx(one.delta_hat, abs=1e-12)
    n, p = survey.n, 4
    factor = np.sqrt((2 * n / (2 * n - p)) / (n / (n - p)) / 2.0)
    assert two.se / one.se == pytest.approx(factor, rel=1e-9)
    assert two.se / one.se == pytest.approx(1.0 / np.sqrt(2.0), abs=0.01)


def test_classical_and_robust_se_differ():
    rng = np.random.default_rng(4)
    survey = synthetic_survey(rng, 100)
    robust = area_ignorability_regression(survey, "1", robust=True)
    classical = area_ignorability_regression(survey, "1", robust=False)
    assert robust.delta_hat == classical.delta_hat
    assert robust.se != classical.se


def test_constant_indicator_rejected(schema):
    survey = make_survey(schema, survey_rows(["A", "A", "A"], ["m", "f", "m"], ["d", "r", "r"], [1, 0, 1]))
    with pytest.raises(ValidationError):
        area_ignorability_regression(survey, "A")
    with pytest.raises(NoDataError):
        area_ignorability_regression(survey, "B")


def test_collinear_covariate_dropped(schema):
    areas = ["A"] * 4 + ["B"] * 4
    pid = ["r"] * 4 + ["d"] * 4
    survey = make_survey(schema, survey_rows(areas, ["m", "f"] * 4, pid, [1, 0, 1, 1, 0, 0, 1, 0]))
    reg = area_ignorability_regression(survey, "A")
    assert reg.dropped == ("pid=r",)
    assert np.isfinite(reg.se)


def test_panel_flags_shifted_area():
    rng = np.random.default_rng(5)
    survey = synthetic_survey(rng, 500, shift=(2, 0.3))
    panel = ignorability_panel(survey, epsilon=0.05)
    assert [r.area for r in panel.results] == ["1", "2", "3", "4"]
    assert "3" in [r.area for r in panel.flagged]
    shifted = panel.results[2]
    assert shifted.delta_hat > 0.2
    assert shifted.equivalence is not None and not shifted.equivalence.reject


def test_panel_without_epsilon_skips_tost():
    rng = np.random.default_rng(6)
    panel = ignorability_panel(synthetic_survey(rng, 50), threads=2)
    assert all(r.equivalence is None for r in panel.results)
    assert 0.0 <= panel.flag_rate() <= 1.0


def test_panel_needs_two_areas(schema):
    survey = make_survey(schema, survey_rows(["A", "A"], ["m", "f"], ["d", "r"], [1, 0]))
    with pytest.raises(ValidationError):
        ignorability_panel(survey)
    with pytest.raises(ConfigError):
        ignorability_panel(synthetic_survey(np.random.default_rng(0), 20), epsilon=-1.0)


@pytest.mark.slow
def test_conventional_flag_rate_under_null():
    flags = []
    for r in range(1000):
        survey = synthetic_survey(np.random.default_rng(1000 + r), 100)
        reg = area_ignorability_regression(survey, "1")
        flags.append(conventional_test(reg.delta_hat, reg.se, reg.df, 0.05).reject)
    rate = np.mean(flags)
    mc_se = np.sqrt(0.05 * 0.95 / 1000)
    assert abs(rate - 0.05) <= 3 * mc_se


@pytest.mark.slow
def test_detection_rate_with_shift():
    detected = 0
    for r in range(200):
        survey = synthetic_survey(np.random.default_rng(5000 + r), 500, shift=(0, 0.3))
        first = ignorability_panel(survey).results[0]
        detected += int(first.flag and first.delta_hat > 0)
    assert detected / 200 > 0.95


def test_regression_matches_sandwich_by_hand():
    rng = np.random.default_rng(11)
    survey = synthetic_survey(rng, 80)
    X = np.column_stack([
        np.ones(survey.n),
        (survey.area == "2").astype(float),
        survey.codes["sex"].astype(float),
        survey.codes["pid"].astype(float),
    ])
    y = survey.outcome
    beta = np.linalg.solve(X.T @ X, X.T @ y)
    resid = y - X @ beta
    n, p = X.shape
    bread = np.linalg.inv(X.T @ X)
    hc1 = bread @ (X.T @ (X * resid[:, None] ** 2)) @ bread * n / (n - p)
    classical = bread * (resid @ resid) / (n - p)

    robust = area_ignorability_regression(survey, "2")
    plain = area_ignorability_regression(survey, "2", robust=False)
    assert robust.delta_hat == pytest.approx(beta[1], rel=1e-10)
    assert robust.se == pytest.approx(np.sqrt(hc1[1, 1]), rel=1e-10)
    assert plain.se == pytest.approx(np.sqrt(classical[1, 1]), rel=1e-10)
    assert robust.df == plain.df == n - p


def test_tost_p_values_are_one_sided_t_tails():
    verdict = equivalence_test(-0.02, 0.015, 40, epsilon=0.06, alpha=0.05)
    assert verdict.p_lower == pytest.approx(stats.t.sf((-0.02 + 0.06) / 0.015, 40), rel=1e-12)
    assert verdict.p_upper == pytest.approx(stats.t.sf((0.06 + 0.02) / 0.015, 40), rel=1e-12)
    assert verdict.p_value == max(verdict.p_lower, verdict.p_upper)
    assert verdict.t_upper > verdict.t_lower > 0
