"""
Диагностика игнорируемости области
Регрессия исхода на индикатор области и ковариаты, обычный t-тест
и тест эквивалентности (TOST), панель по всем областям
"""

from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import statsmodels.api as sm
from scipy import stats
from statsmodels.stats.weightstats import _tstat_generic

from core.data_model import SurveyDataset
from core.errors import ConfigError, NoDataError, SAEError, ValidationError
from core.glm import build_design, independent_columns
from services.log_service import LogService
from services.worker_service import WorkerService

DEFAULT_ALPHA = 0.05

CONVENTIONAL_CAVEAT = (
    "Отсутствие отклонения гипотезы δ = 0 не доказывает игнорируемость области; "
    "свидетельством служит только отклонение нулевой гипотезы теста эквивалентности |δ| ≥ ε"
)


class AreaRegression(NamedTuple):
    delta_hat: float
    se: float
    df: float
    dropped: Tuple[str, ...] = ()


@dataclass(frozen=True)
class ConventionalVerdict:
    t_stat: float
    p_value: float
    alpha: float
    reject: bool


@dataclass(frozen=True)
class EquivalenceVerdict:
    epsilon: float
    alpha: float
    t_lower: float
    t_upper: float
    p_lower: float
    p_upper: float
    p_value: float
    lower: float
    upper: float
    reject: bool

    @property
    def interval_level(self) -> float:
        return 1.0 - 2.0 * self.alpha


@dataclass(frozen=True)
class IgnorabilityResult:
    area: str
    delta_hat: float
    se: float
    df: float
    n_area: int
    conventional: ConventionalVerdict
    lower: float
    upper: float
    equivalence: Optional[EquivalenceVerdict] = None
    dropped: Tuple[str, ...] = ()

    @property
    def flag(self) -> bool:
        """Интервал (1 − α) для δ не содержит нуль"""
        return bool(self.lower > 0.0 or self.upper < 0.0)


@dataclass
class IgnorabilityPanel:
    results: List[IgnorabilityResult]
    errors: Dict[str, SAEError] = field(default_factory=dict)

    @property
    def flagged(self) -> List[IgnorabilityResult]:
        return [r for r in self.results if r.flag]

    def flag_rate(self) -> float:
        return len(self.flagged) / len(self.results) if self.results else float("nan")


def _check_alpha(alpha: float):
    if not 0.0 < alpha < 0.5:
        raise ConfigError(f"α должен быть в (0, 0.5): {alpha}")


def _t_test(delta_hat: float, se: float, df: float, alternative: str, diff: float = 0.0) -> Tuple[float, float]:
    """t-статистика и p-значение по сводным величинам; при se = 0 статистика бесконечна"""
    with np.errstate(divide="ignore", invalid="ignore"):
        t_stat, p_value = _tstat_generic(np.float64(delta_hat), 0.0, np.float64(se), df, alternative, diff=diff)
    if np.isnan(t_stat):
        # оценка ровно на границе при нулевой ошибке
        return 0.0, (1.0 if alternative == "two-sided" else 0.5)
    return float(t_stat), float(p_value)


def area_ignorability_regression(
    survey: SurveyDataset,
    j: str,
    xp_vars: Optional[Sequence[str]] = None,
    xs_vars: Optional[Sequence[str]] = None,
    robust: bool = True,
) -> AreaRegression:
    """
    МНК: Y ~ 1 + 1{A=j} + дамми X^P + дамми X^S.
    Возвращает коэффициент при индикаторе области и его ошибку (HC1 или классическую)
    """
    j = str(j)
    xp_vars = survey.schema.population_names if xp_vars is None else tuple(xp_vars)
    xs_vars = survey.schema.survey_names if xs_vars is None else tuple(xs_vars)
    indicator = (survey.area == j).astype(float)
    if indicator.sum() == 0:
        raise NoDataError(f"В области '{j}' нет респондентов", {"area": j})
    if indicator.sum() == survey.n:
        raise ValidationError(f"Все респонденты из области '{j}': индикатор постоянен", {"area": j})

    design = build_design(survey, tuple(xp_vars) + tuple(xs_vars)).insert(1, f"area={j}", indicator)
    keep = independent_columns(design.values)
    if not keep[1]:
        raise ValidationError(f"Индикатор области '{j}' линейно зависим от ковариат: δ не идентифицируем", {"area": j})
    dropped = tuple(label for label, k in zip(design.labels, keep) if not k)
    if dropped:
        LogService.log("WARNING", f"Область '{j}': исключены вырожденные столбцы {list(dropped)}", source="Diagnostics")
        design = design.select(keep)

    n, p = design.values.shape
    if n - p <= 0:
        raise ValidationError(f"Недостаточно наблюдений для регрессии: n={n}, p={p}", {"area": j})
    fit = sm.OLS(survey.outcome, design.values).fit(cov_type="HC1" if robust else "nonrobust")
    return AreaRegression(float(fit.params[1]), float(fit.bse[1]), float(fit.df_resid), dropped)


def conventional_test(delta_hat: float, se: float, df: float, alpha: float = DEFAULT_ALPHA) -> ConventionalVerdict:
    """Двусторонний t-тест δ = 0"""
    t_stat, p_value = _t_test(delta_hat, se, df, "two-sided")
    p_value = min(p_value, 1.0)
    return ConventionalVerdict(t_stat, p_value, alpha, p_value < alpha)


def equivalence_test(delta_hat: float, se: float, df: float, epsilon: float, alpha: float = DEFAULT_ALPHA) -> EquivalenceVerdict:
    """
    Два односторонних теста: H0 δ ≤ −ε и H0 δ ≥ ε.
    Эквивалентность принимается, если отклонены обе гипотезы
    """
    if not epsilon > 0:
        raise ConfigError(f"Граница эквивалентности ε должна быть положительной: {epsilon}")
    _check_alpha(alpha)
    t_lower, p_lower = _t_test(delta_hat, se, df, "larger", diff=-epsilon)
    t_upper, p_upper = _t_test(delta_hat, se, df, "smaller", diff=epsilon)
    t_upper = -t_upper
    p_value = float(np.maximum(p_lower, p_upper))
    half = stats.t.ppf(1.0 - alpha, df) * se
    return EquivalenceVerdict(
        epsilon=float(epsilon),
        alpha=float(alpha),
        t_lower=t_lower,
        t_upper=t_upper,
        p_lower=p_lower,
        p_upper=p_upper,
        p_value=p_value,
        lower=float(delta_hat - half),
        upper=float(delta_hat + half),
        reject=p_value < alpha,
    )


def _area_result(survey, area, xp_vars, xs_vars, epsilon, alpha, robust) -> IgnorabilityResult:
    reg = area_ignorability_regression(survey, area, xp_vars, xs_vars, robust)
    conventional = conventional_test(reg.delta_hat, reg.se, reg.df, alpha)
    half = stats.t.ppf(1.0 - alpha / 2.0, reg.df) * reg.se
    equivalence = None
    if epsilon is not None:
        equivalence = equivalence_test(reg.delta_hat, reg.se, reg.df, epsilon, alpha)
    return IgnorabilityResult(
        area=area,
        delta_hat=reg.delta_hat,
        se=reg.se,
        df=reg.df,
        n_area=int(np.sum(survey.area == area)),
        conventional=conventional,
        lower=float(reg.delta_hat - half),
        upper=float(reg.delta_hat + half),
        equivalence=equivalence,
        dropped=reg.dropped,
    )


def ignorability_panel(
    survey: SurveyDataset,
    xp_vars: Optional[Sequence[str]] = None,
    xs_vars: Optional[Sequence[str]] = None,
    epsilon: Optional[float] = None,
    alpha: float = DEFAULT_ALPHA,
    robust: bool = True,
    threads: Optional[int] = 1,
) -> IgnorabilityPanel:
    """Проверка игнорируемости для каждой области опроса; ε = None отключает тест эквивалентности"""
    _check_alpha(alpha)
    if epsilon is not None and not epsilon > 0:
        raise ConfigError(f"Граница эквивалентности ε должна быть положительной: {epsilon}")
    areas = survey.observed_areas()
    if len(areas) < 2:
        raise ValidationError("Для панели нужны хотя бы две области", {"areas": areas})
    if epsilon is None:
        LogService.log("WARNING", "ε не задан: тест эквивалентности пропущен", source="Diagnostics")

    worker = WorkerService(threads, source="Diagnostics")
    outcomes = worker.run_tasks(
        [(area, lambda area=area: _area_result(survey, area, xp_vars, xs_vars, epsilon, alpha, robust)) for area in areas]
    )
    panel = IgnorabilityPanel(results=[])
    for outcome in outcomes:
        if outcome.ok:
            panel.results.append(outcome.value)
        elif isinstance(outcome.error, SAEError):
            panel.errors[outcome.key] = outcome.error
            LogService.log("ERROR", f"Область '{outcome.key}': {outcome.error}", source="Diagnostics", stack="")
        else:
            raise outcome.error
    LogService.log(
        "INFO",
        f"Панель игнорируемости: {len(panel.results)} областей, отмечено {len(panel.flagged)}",
        source="Diagnostics",
    )
    return panel
