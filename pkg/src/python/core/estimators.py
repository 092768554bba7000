"""
Оценки малых областей
Прямая оценка (IPW внутри области), синтетические веса областей,
разложение на прямую и косвенную части, стандартные ошибки
"""

import threading
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from core.data_model import PopulationTable, SurveyDataset, check_compatible, population_area_shares
from core.errors import (
    ConfigError,
    DegenerateAreaError,
    NoDataError,
    NumericalError,
    OverlapError,
    SAEError,
    ValidationError,
)
from core.glm import (
    DEFAULT_LAMBDA,
    build_design,
    encode_design,
    fit_ridge_logistic,
    fit_ridge_multinomial,
    predict_prob,
)
from services.log_service import LogService
from services.worker_service import WorkerService
from utils.seeding import derive_rng

DEFAULT_LEVEL = 0.9
DEFAULT_REPLICATES = 500
PROB_CLIP = 1e-12
MEMBERSHIP_KINDS = ("ovr", "multinomial")
PROPENSITY_METHODS = ("cell", "logistic")


class Method(Enum):
    DIRECT = "direct"
    SYNTHETIC = "synthetic"
    DECOMPOSED = "synthetic-decomposed"
    UNWEIGHTED = "unweighted"


SYNTHETIC_METHODS = (Method.SYNTHETIC, Method.DECOMPOSED)


@dataclass(frozen=True)
class EstimatorConfig:
    """Настройки оценивания; xp_vars/xs_vars = None означает все переменные схемы"""

    xp_vars: Optional[Tuple[str, ...]] = None
    xs_vars: Optional[Tuple[str, ...]] = None
    interactions: Tuple[Tuple[str, ...], ...] = ()
    lam: float = DEFAULT_LAMBDA
    membership: str = "ovr"
    trim_quantile: Optional[float] = None
    bootstrap: int = 0
    level: float = DEFAULT_LEVEL
    seed: int = 0
    propensity: str = "cell"
    decompose: bool = False
    include_direct: bool = True
    include_unweighted: bool = False
    threads: Optional[int] = 1

    def __post_init__(self):
        if self.membership not in MEMBERSHIP_KINDS:
            raise ConfigError(f"membership должен быть одним из {MEMBERSHIP_KINDS}: {self.membership}")
        if self.propensity not in PROPENSITY_METHODS:
            raise ConfigError(f"propensity должен быть одним из {PROPENSITY_METHODS}: {self.propensity}")
        if not 0.0 < self.level < 1.0:
            raise ConfigError(f"Уровень интервала должен быть в (0, 1): {self.level}")
        if self.bootstrap < 0:
            raise ConfigError(f"Число бутстреп-повторов не может быть отрицательным: {self.bootstrap}")
        if self.trim_quantile is not None and not 0.0 < self.trim_quantile <= 1.0:
            raise ConfigError(f"Квантиль обрезки весов должен быть в (0, 1]: {self.trim_quantile}")
        if not self.lam > 0:
            raise ConfigError(f"Сила штрафа должна быть положительной: {self.lam}")
        object.__setattr__(self, "interactions", tuple(tuple(t) for t in self.interactions))
        if self.xp_vars is not None:
            object.__setattr__(self, "xp_vars", tuple(self.xp_vars))
        if self.xs_vars is not None:
            object.__setattr__(self, "xs_vars", tuple(self.xs_vars))


@dataclass(frozen=True)
class AreaWeights:
    """Синтетические веса области с сохранёнными множителями ζ, p, 1/π"""

    area: str
    zeta: np.ndarray
    p_pop: np.ndarray
    inv_prop: np.ndarray
    weight: np.ndarray
    respondent_id: np.ndarray
    raw_total: float
    trim_cap: Optional[float] = None
    trimmed: int = 0

    @property
    def ess(self) -> float:
        return float(1.0 / np.dot(self.weight, self.weight))

    @property
    def max_share(self) -> float:
        return float(self.weight.max())


@dataclass(frozen=True)
class EstimateResult:
    area: str
    method: Method
    estimate: float
    se: float
    level: float
    lower: float
    upper: float
    n_area: int
    ess: float
    direct_part: Optional[float] = None
    indirect_part: Optional[float] = None
    se_method: str = "linearization"
    clipped: int = 0
    warnings: Tuple[str, ...] = field(default=())


@dataclass
class AreaEstimates:
    """Результаты по всем областям в порядке таблицы населения"""

    results: List[EstimateResult]
    weights: Dict[str, AreaWeights]
    errors: Dict[str, SAEError]
    warnings: List[str]

    def by_method(self, method: Method) -> Dict[str, EstimateResult]:
        return {r.area: r for r in self.results if r.method is method}


def weighted_mean_se(weights: np.ndarray, y: np.ndarray) -> float:
    """
    Линеаризационная ошибка взвешенного среднего при фиксированных весах:
    se² = Σ w²(y − τ)², без поправки n/(n−1)
    """
    weights = np.asarray(weights, dtype=float)
    y = np.asarray(y, dtype=float)
    if weights.shape != y.shape:
        raise ValidationError(f"Длины весов {weights.shape} и исходов {y.shape} различаются")
    if weights.size < 2:
        raise ValidationError("Стандартная ошибка не определена при n = 1")
    if abs(weights.sum() - 1.0) > 1e-9:
        raise ValidationError(f"Веса не нормированы: сумма {weights.sum()}")
    tau = np.dot(weights, y)
    return float(np.sqrt(np.sum(weights ** 2 * (y - tau) ** 2)))


def normal_interval(estimate: float, se: float, level: float, binary: bool = False) -> Tuple[float, float]:
    z = stats.norm.ppf(0.5 + level / 2.0)
    lower, upper = estimate - z * se, estimate + z * se
    if binary:
        lower, upper = max(lower, 0.0), min(upper, 1.0)
    return float(lower), float(upper)


def _ess(weights: np.ndarray) -> float:
    return float(1.0 / np.dot(weights, weights))


def _require_profiles(survey: SurveyDataset, p_all: np.ndarray):
    missing = np.flatnonzero(np.isnan(p_all[:, 0]))
    if missing.size:
        i = int(missing[0])
        profile = survey.profile_of(i)
        raise ValidationError(
            f"Профиль X^P {profile} респондента {survey.respondent_id[i]} отсутствует в населении "
            f"({missing.size} респондентов)",
            {"respondent_id": str(survey.respondent_id[i]), "profile": list(profile)},
        )


def estimate_sampling_propensity(
    survey: SurveyDataset,
    table: PopulationTable,
    method: str = "cell",
    lam: float = DEFAULT_LAMBDA,
    xp_vars: Optional[Sequence[str]] = None,
) -> np.ndarray:
    """
    Шаг 1: обратные вероятности попадания в выборку 1/π̂_i.
    cell: отношение доли ячейки X^P в населении к её доле в опросе;
    logistic: обратные шансы гребневой логистической модели «опрос против населения»
    """
    check_compatible(survey, table)
    shares = population_area_shares(table)
    index = survey.population_index()
    _require_profiles(survey, shares.lookup(index))

    if method == "cell":
        pop_share = table.counts.sum(axis=1) / table.total
        survey_share = np.bincount(index, minlength=len(table.profiles)) / survey.n
        inv = pop_share[index] / survey_share[index]
    elif method == "logistic":
        xp_vars = tuple(xp_vars) if xp_vars is not None else survey.schema.population_names
        totals = table.counts.sum(axis=1)
        cells = np.flatnonzero(totals > 0)
        dims = survey.schema.population_dims
        cell_codes = np.unravel_index(cells, dims) if dims else ()
        codes = {
            name: np.concatenate([survey.codes[name], cell_codes[k]])
            for k, name in enumerate(survey.schema.population_names)
        }
        design = encode_design(survey.schema, codes, survey.n + len(cells), xp_vars)
        y = np.concatenate([np.ones(survey.n), np.zeros(len(cells))])
        w = np.concatenate([np.ones(survey.n), totals[cells] * survey.n / table.total])
        fit = fit_ridge_logistic(design, y, case_weights=w, lam=lam)
        prob = predict_prob(fit, design.rows(np.arange(survey.n)))
        inv = (1.0 - prob) / prob
    else:
        raise ConfigError(f"Неизвестный метод оценки склонности: {method}")

    if not np.all(np.isfinite(inv) & (inv > 0)):
        raise NumericalError("Обратные вероятности попадания в выборку должны быть положительными")
    LogService.log("INFO", f"Шаг 1 ({method}): 1/π̂ от {inv.min():.4g} до {inv.max():.4g}", source="Estimators")
    return inv


def resolve_inverse_propensity(survey: SurveyDataset, table: PopulationTable, config: EstimatorConfig) -> np.ndarray:
    """Национальные веса, если они есть; иначе оценка шага 1"""
    if survey.has_national_weight:
        LogService.log("INFO", "Используются национальные веса опроса, шаг 1 пропущен", source="Estimators")
        return np.asarray(survey.national_weight, dtype=float)
    return estimate_sampling_propensity(survey, table, config.propensity, config.lam, config.xp_vars)


def direct_estimate(survey: SurveyDataset, j: str, inv_prop: np.ndarray, level: float = DEFAULT_LEVEL) -> EstimateResult:
    """Прямая оценка: IPW только по респондентам области j, остальные получают вес 0"""
    j = str(j)
    inv_prop = np.asarray(inv_prop, dtype=float)
    if inv_prop.shape != (survey.n,):
        raise ValidationError("Длина вектора 1/π не совпадает с числом респондентов")
    mask = survey.area == j
    n_area = int(mask.sum())
    if n_area == 0:
        raise NoDataError(f"В области '{j}' нет респондентов: прямая оценка не определена", {"area": j})
    raw = np.where(mask, inv_prop, 0.0)
    weights = raw / raw.sum()
    estimate = float(np.dot(weights, survey.outcome))
    se = weighted_mean_se(weights, survey.outcome) if survey.n > 1 else 0.0
    warnings = ()
    if n_area == 1:
        warnings = (f"Область '{j}': прямая оценка по одному респонденту",)
    lower, upper = normal_interval(estimate, se, level, survey.is_binary())
    return EstimateResult(j, Method.DIRECT, estimate, se, level, lower, upper, n_area, _ess(weights), warnings=warnings)


def unweighted_estimate(survey: SurveyDataset, j: str, level: float = DEFAULT_LEVEL) -> EstimateResult:
    """Простое среднее исхода по респондентам области, без поправки на отбор"""
    return replace(direct_estimate(survey, j, np.ones(survey.n), level), method=Method.UNWEIGHTED)


def _resolve_vars(survey: SurveyDataset, config: EstimatorConfig) -> Tuple[Tuple[str, ...], Tuple[str, ...]]:
    schema = survey.schema
    xp = config.xp_vars if config.xp_vars is not None else schema.population_names
    xs = config.xs_vars if config.xs_vars is not None else schema.survey_names
    for name in xp:
        if schema.role(name) != "P":
            raise ConfigError(f"Переменная '{name}' не является переменной населения", {"variable": name})
    for name in xs:
        if schema.role(name) != "S":
            raise ConfigError(f"Переменная '{name}' не является переменной опроса", {"variable": name})
    allowed = set(xp) | set(xs)
    for term in config.interactions:
        if not set(term) <= allowed:
            raise ConfigError(f"Взаимодействие {list(term)} использует невыбранные переменные", {"term": list(term)})
    return tuple(xp), tuple(xs)


class MembershipModel:
    """
    Модели принадлежности к области в выборке:
    числитель Pr(A=j | X^P, X^S, S=1) и знаменатель Pr(A=j | X^P, S=1).
    Подгонка ленивая, результат по области запоминается
    """

    def __init__(
        self,
        survey: SurveyDataset,
        xp_vars: Sequence[str],
        xs_vars: Sequence[str],
        interactions: Sequence[Sequence[str]] = (),
        lam: float = DEFAULT_LAMBDA,
        kind: str = "ovr",
    ):
        if kind not in MEMBERSHIP_KINDS:
            raise ConfigError(f"membership должен быть одним из {MEMBERSHIP_KINDS}: {kind}")
        self.survey = survey
        self.xs_vars = tuple(xs_vars)
        self.lam = lam
        self.kind = kind
        xp_set = set(xp_vars)
        self.denominator_design = build_design(survey, xp_vars, [t for t in interactions if set(t) <= xp_set])
        if self.xs_vars:
            self.numerator_design = build_design(survey, tuple(xp_vars) + self.xs_vars, interactions)
        else:
            self.numerator_design = self.denominator_design
        self.areas = survey.observed_areas()
        self._cache: Dict[str, Tuple[np.ndarray, np.ndarray]] = {}
        self._lock = threading.Lock()

    @property
    def has_survey_vars(self) -> bool:
        return bool(self.xs_vars)

    def _fit_ovr(self, area: str) -> Tuple[np.ndarray, np.ndarray]:
        y = (self.survey.area == area).astype(float)
        den = predict_prob(fit_ridge_logistic(self.denominator_design, y, lam=self.lam), self.denominator_design)
        if not self.has_survey_vars:
            return den, den
        num = predict_prob(fit_ridge_logistic(self.numerator_design, y, lam=self.lam), self.numerator_design)
        return num, den

    def _fit_multinomial(self):
        den_fit = fit_ridge_multinomial(self.denominator_design, self.survey.area, lam=self.lam, classes=self.areas)
        den = predict_prob(den_fit, self.denominator_design)
        num = den
        if self.has_survey_vars:
            num_fit = fit_ridge_multinomial(self.numerator_design, self.survey.area, lam=self.lam, classes=self.areas)
            num = predict_prob(num_fit, self.numerator_design)
        for k, area in enumerate(self.areas):
            self._cache[area] = (num[:, k], den[:, k])

    def probabilities(self, area: str) -> Tuple[np.ndarray, np.ndarray]:
        """(числитель, знаменатель) по всем респондентам, без обрезки"""
        area = str(area)
        if area not in self.areas:
            raise NoDataError(f"Область '{area}' отсутствует в опросе: модель принадлежности не строится", {"area": area})
        if len(self.areas) == 1:
            ones = np.ones(self.survey.n)
            return ones, ones
        with self._lock:
            if area in self._cache:
                return self._cache[area]
            if self.kind == "multinomial":
                self._fit_multinomial()
                return self._cache[area]
        result = self._fit_ovr(area)
        with self._lock:
            self._cache.setdefault(area, result)
            return self._cache[area]

    def zeta(self, area: str) -> np.ndarray:
        if not self.has_survey_vars:
            if str(area) not in self.areas:
                raise NoDataError(f"Область '{area}' отсутствует в опросе", {"area": str(area)})
            return np.ones(self.survey.n)
        num, den = self.probabilities(area)
        return np.maximum(num, PROB_CLIP) / np.maximum(den, PROB_CLIP)


def estimate_zeta(
    survey: SurveyDataset,
    j: str,
    xp_vars: Sequence[str],
    xs_vars: Sequence[str],
    interactions: Sequence[Sequence[str]] = (),
    lam: float = DEFAULT_LAMBDA,
    membership: str = "ovr",
) -> np.ndarray:
    """Шаг 2: ζ̂_ij = P̂(A=j | X^P, X^S, S=1) / P̂(A=j | X^P, S=1)"""
    return MembershipModel(survey, xp_vars, xs_vars, interactions, lam, membership).zeta(j)


def _trim(raw: np.ndarray, trim_quantile: Optional[float]) -> Tuple[np.ndarray, Optional[float], int]:
    if trim_quantile is None or trim_quantile >= 1.0:
        return raw, None, 0
    positive = raw[raw > 0]
    if positive.size == 0:
        return raw, None, 0
    cap = float(np.quantile(positive, trim_quantile))
    trimmed = int(np.sum(raw > cap))
    return np.minimum(raw, cap), cap, trimmed


def _area_weights(area, zeta, p, inv_prop, respondent_id, trim_quantile) -> AreaWeights:
    raw, cap, trimmed = _trim(zeta * p * inv_prop, trim_quantile)
    total = float(raw.sum())
    if not total > 0:
        raise DegenerateAreaError(
            f"Сумма синтетических весов области '{area}' равна нулю: нет респондентов с p_ij > 0",
            {"area": area},
        )
    return AreaWeights(area, zeta, p, inv_prop, raw / total, respondent_id, total, cap, trimmed)


def synthetic_weights(
    survey: SurveyDataset,
    table: PopulationTable,
    j: str,
    zeta: np.ndarray,
    inv_prop: np.ndarray,
    trim_quantile: Optional[float] = None,
) -> AreaWeights:
    """Шаг 3: w_ij ∝ ζ̂_ij · p_ij · 1/π̂_i, нормировка на сумму 1"""
    j = str(j)
    shares = population_area_shares(table)
    p_all = shares.lookup(survey.population_index())
    _require_profiles(survey, p_all)
    p = p_all[:, table.area_index(j)]
    zeta = np.asarray(zeta, dtype=float)
    inv_prop = np.asarray(inv_prop, dtype=float)
    if zeta.shape != (survey.n,) or inv_prop.shape != (survey.n,):
        raise ValidationError("Векторы ζ и 1/π не выровнены с респондентами")
    return _area_weights(j, zeta, p, inv_prop, survey.respondent_id, trim_quantile)


class SyntheticAreaEstimator:
    """
    Синтетическая оценка для всех областей таблицы населения.
    Доли p_ij, обратные вероятности и модели принадлежности считаются один раз
    """

    def __init__(self, survey: SurveyDataset, table: PopulationTable, config: Optional[EstimatorConfig] = None):
        check_compatible(survey, table)
        self.survey = survey
        self.table = table
        self.config = config or EstimatorConfig()
        self.xp_vars, self.xs_vars = _resolve_vars(survey, self.config)
        shares = population_area_shares(table)
        self.p_pop = shares.lookup(survey.population_index())
        _require_profiles(survey, self.p_pop)
        self.inv_prop = resolve_inverse_propensity(survey, table, self.config)
        self.membership = self._membership(survey)
        self.binary = survey.is_binary()

    def _membership(self, survey: SurveyDataset) -> MembershipModel:
        return MembershipModel(survey, self.xp_vars, self.xs_vars, self.config.interactions, self.config.lam, self.config.membership)

    def _zeta(self, area: str, warnings: List[str]) -> np.ndarray:
        try:
            return self.membership.zeta(area)
        except NoDataError:
            msg = f"Область '{area}' отсутствует в опросе: ζ = 1, только синтетическая оценка"
            LogService.log("WARNING", msg, source="Estimators")
            warnings.append(msg)
            return np.ones(self.survey.n)

    def weights(self, area: str, warnings: Optional[List[str]] = None) -> AreaWeights:
        area = str(area)
        warnings = [] if warnings is None else warnings
        zeta = self._zeta(area, warnings)
        p = self.p_pop[:, self.table.area_index(area)]
        result = _area_weights(area, zeta, p, self.inv_prop, self.survey.respondent_id, self.config.trim_quantile)
        if result.trimmed:
            msg = f"Область '{area}': обрезано {result.trimmed} весов до {result.trim_cap:.4g}"
            LogService.log("WARNING", msg, source="Estimators")
            warnings.append(msg)
        return result

    def direct(self, area: str) -> EstimateResult:
        return direct_estimate(self.survey, area, self.inv_prop, self.config.level)

    def synthetic(self, area: str) -> Tuple[EstimateResult, AreaWeights]:
        area = str(area)
        warnings: List[str] = []
        w = self.weights(area, warnings)
        y = self.survey.outcome
        estimate = float(np.dot(w.weight, y))
        se_method = "linearization"
        se = weighted_mean_se(w.weight, y) if self.survey.n > 1 else 0.0
        if self.config.bootstrap > 0:
            boot = self.bootstrap_se(area)
            if boot is None:
                msg = f"Область '{area}': бутстреп не дал двух повторов, используется линеаризация"
                LogService.log("WARNING", msg, source="Estimators")
                warnings.append(msg)
            else:
                se, se_method = boot, "bootstrap"
        lower, upper = normal_interval(estimate, se, self.config.level, self.binary)
        n_area = int(np.sum(self.survey.area == area))
        result = EstimateResult(
            area, Method.SYNTHETIC, estimate, se, self.config.level, lower, upper, n_area, w.ess,
            se_method=se_method, warnings=tuple(warnings),
        )
        return result, w

    def decomposed(self, area: str) -> Tuple[EstimateResult, AreaWeights]:
        """Синтетическая оценка с разложением на прямую и косвенную (частично объединённую) части"""
        area = str(area)
        result, w = self.synthetic(area)
        warnings = list(result.warnings)
        in_area = self.survey.area == area
        y = self.survey.outcome

        if not in_area.any():
            return replace(result, method=Method.DECOMPOSED, direct_part=0.0, indirect_part=result.estimate), w

        num, den = self.membership.probabilities(area)
        overflow = np.flatnonzero(~in_area & (num >= 1.0))
        if overflow.size:
            i = int(overflow[0])
            profile = self.survey.profile_of(i)
            raise OverlapError(
                f"P̂(A≠{area}|X) = 0 для респондента {self.survey.respondent_id[i]} (ячейка {profile}): "
                "нарушено условие перекрытия",
                {"area": area, "respondent_id": str(self.survey.respondent_id[i]), "profile": list(profile)},
            )
        clipped = int(np.sum(num < PROB_CLIP) + np.sum(~in_area & (num > 1.0 - PROB_CLIP)))
        if clipped:
            msg = f"Область '{area}': {clipped} вероятностей обрезаны до [{PROB_CLIP}, 1 − {PROB_CLIP}]"
            LogService.log("WARNING", msg, source="Estimators")
            warnings.append(msg)
        num_c = np.clip(num, PROB_CLIP, 1.0 - PROB_CLIP)
        # 1/π_j(X) = p_ij · (1/π_i) / P̂(A=j | X^P, S=1)
        inv_pi_j = w.p_pop * w.inv_prop / np.maximum(den, PROB_CLIP)
        odds = num_c / (1.0 - num_c)
        direct_raw = np.where(in_area, np.maximum(num, PROB_CLIP) * inv_pi_j, 0.0)
        indirect_raw = np.where(in_area, 0.0, odds * (1.0 - num_c) * inv_pi_j)
        if w.trim_cap is not None:
            direct_raw = np.minimum(direct_raw, w.trim_cap)
            indirect_raw = np.minimum(indirect_raw, w.trim_cap)
        direct_part = float(np.dot(direct_raw, y) / w.raw_total)
        indirect_part = float(np.dot(indirect_raw, y) / w.raw_total)
        return replace(
            result,
            method=Method.DECOMPOSED,
            direct_part=direct_part,
            indirect_part=indirect_part,
            clipped=clipped,
            warnings=tuple(warnings),
        ), w

    def bootstrap_se(self, area: str) -> Optional[float]:
        """Бутстреп по респондентам; ζ переоценивается в каждом повторе, 1/π фиксированы"""
        a = self.table.area_index(area)
        replicates = []
        for b in range(self.config.bootstrap):
            rng = derive_rng(self.config.seed, "bootstrap", area, b)
            idx = rng.integers(0, self.survey.n, size=self.survey.n)
            sub = self.survey.subset(idx)
            try:
                try:
                    zeta = self._membership(sub).zeta(area)
                except NoDataError:
                    zeta = np.ones(sub.n)
                w = _area_weights(area, zeta, self.p_pop[idx, a], self.inv_prop[idx], sub.respondent_id, self.config.trim_quantile)
            except (NumericalError, DegenerateAreaError):
                continue
            replicates.append(float(np.dot(w.weight, sub.outcome)))
        if len(replicates) < 2:
            return None
        return float(np.std(replicates, ddof=1))

    def estimate_area(self, area: str, emit_weights: bool = False):
        rows: List[EstimateResult] = []
        if self.config.include_direct and np.any(self.survey.area == area):
            rows.append(self.direct(area))
        if self.config.include_unweighted and np.any(self.survey.area == area):
            rows.append(unweighted_estimate(self.survey, area, self.config.level))
        result, w = self.decomposed(area) if self.config.decompose else self.synthetic(area)
        rows.append(result)
        return rows, (w if emit_weights else None)


def synthetic_estimate(survey: SurveyDataset, table: PopulationTable, j: str, config: Optional[EstimatorConfig] = None) -> EstimateResult:
    """τ̂^SA_j = Σ_i w_ij · Y_i"""
    return SyntheticAreaEstimator(survey, table, config).synthetic(j)[0]


def decompose_estimate(survey: SurveyDataset, table: PopulationTable, j: str, config: Optional[EstimatorConfig] = None) -> EstimateResult:
    return SyntheticAreaEstimator(survey, table, config).decomposed(j)[0]


def estimate_all_areas(
    survey: SurveyDataset,
    table: PopulationTable,
    config: Optional[EstimatorConfig] = None,
    emit_weights: bool = False,
) -> AreaEstimates:
    """Оценки для каждой области таблицы населения; ошибки одной области не прерывают остальные"""
    config = config or EstimatorConfig()
    estimator = SyntheticAreaEstimator(survey, table, config)
    worker = WorkerService(config.threads, source="Estimators")
    outcomes = worker.run_tasks([(area, lambda area=area: estimator.estimate_area(area, emit_weights)) for area in table.areas])

    results: List[EstimateResult] = []
    weights: Dict[str, AreaWeights] = {}
    errors: Dict[str, SAEError] = {}
    warnings: List[str] = []
    for outcome in outcomes:
        if not outcome.ok:
            if not isinstance(outcome.error, SAEError):
                raise outcome.error
            errors[outcome.key] = outcome.error
            LogService.log("ERROR", f"Область '{outcome.key}': {outcome.error}", source="Estimators", stack="")
            continue
        rows, w = outcome.value
        results.extend(rows)
        for row in rows:
            warnings.extend(row.warnings)
        if w is not None:
            weights[outcome.key] = w
    LogService.log("INFO", f"Оценено областей: {len(table.areas) - len(errors)} из {len(table.areas)}", source="Estimators")
    return AreaEstimates(results, weights, errors, warnings)
