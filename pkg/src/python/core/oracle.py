"""
Оракул: перечислимые дискретные популяции
Генерация популяций с выполненными условиями игнорируемости, точные средние областей,
точная проверка идентификации и разложения, выборки и метрики качества
"""

import itertools
from dataclasses import dataclass, field, replace
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from core.data_model import CovariateSchema, PopulationTable, SurveyDataset, Variable
from core.errors import ConfigError, OverlapError, SAEError, ValidationError
from core.estimators import EstimatorConfig, Method, estimate_all_areas
from services.log_service import LogService
from services.worker_service import WorkerService
from utils.seeding import derive_rng

MAX_CELLS = 10 ** 6
GAUSSIAN_SIGMA = 0.25
OUTCOME_MODES = ("binary", "gaussian")


@dataclass(frozen=True)
class PopulationSpec:
    """Размеры и законы популяции; уровни переменных заданы числом категорий"""

    xp_levels: Tuple[int, ...] = (2, 2)
    xs_levels: Tuple[int, ...] = (2,)
    n_areas: int = 2
    count_range: Tuple[float, float] = (50.0, 500.0)
    outcome_range: Tuple[float, float] = (0.1, 0.9)
    sampling_range: Tuple[float, float] = (0.05, 1.0)
    gamma_shift: float = 0.0
    shift_areas: Tuple[int, ...] = (0,)
    outcome: str = "binary"

    def __post_init__(self):
        object.__setattr__(self, "xp_levels", tuple(int(k) for k in self.xp_levels))
        object.__setattr__(self, "xs_levels", tuple(int(k) for k in self.xs_levels))
        object.__setattr__(self, "shift_areas", tuple(int(a) for a in self.shift_areas))
        if self.n_areas < 1:
            raise ConfigError(f"Число областей должно быть положительным: {self.n_areas}")
        if any(k < 1 for k in self.xp_levels + self.xs_levels):
            raise ConfigError("У каждой переменной должен быть хотя бы один уровень")
        if self.n_cells > MAX_CELLS:
            raise ConfigError(f"Популяция слишком велика для перечисления: {self.n_cells} ячеек > {MAX_CELLS}")
        lo, hi = self.count_range
        if lo < 0 or hi < lo or hi <= 0:
            raise ConfigError(f"Некорректный диапазон численности: {self.count_range}")
        lo, hi = self.sampling_range
        if not 0 < lo <= hi <= 1:
            raise ConfigError(f"Вероятности отбора должны лежать в (0, 1]: {self.sampling_range}")
        if self.outcome not in OUTCOME_MODES:
            raise ConfigError(f"Режим исхода должен быть одним из {OUTCOME_MODES}: {self.outcome}")
        lo, hi = self.outcome_range
        if self.outcome == "binary" and not 0 <= lo <= hi <= 1:
            raise ConfigError(f"Средние бинарного исхода должны лежать в [0, 1]: {self.outcome_range}")
        if any(not 0 <= a < self.n_areas for a in self.shift_areas):
            raise ConfigError(f"Номера сдвигаемых областей вне диапазона: {self.shift_areas}")

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.xp_levels or (1,)) * np.prod(self.xs_levels or (1,)) * self.n_areas)


def _schema(spec: PopulationSpec) -> CovariateSchema:
    return CovariateSchema(
        population_vars=tuple(Variable(f"xp{k + 1}", tuple(str(l) for l in range(n))) for k, n in enumerate(spec.xp_levels)),
        survey_vars=tuple(Variable(f"xs{k + 1}", tuple(str(l) for l in range(n))) for k, n in enumerate(spec.xs_levels)),
    )


@dataclass(frozen=True)
class DiscretePopulation:
    """
    counts[p, s, a]: численность ячейки (профиль X^P, профиль X^S, область);
    base_mu[p, s]: среднее исхода без аргумента области; mu[p, s, a]: с учётом сдвига;
    pi[p, a]: вероятность отбора, не зависящая от X^S
    """

    spec: PopulationSpec
    seed: int
    schema: CovariateSchema
    areas: Tuple[str, ...]
    counts: np.ndarray
    base_mu: np.ndarray
    mu: np.ndarray
    pi: np.ndarray

    @property
    def n_xp(self) -> int:
        return self.counts.shape[0]

    @property
    def n_xs(self) -> int:
        return self.counts.shape[1]

    @property
    def n_areas(self) -> int:
        return self.counts.shape[2]

    def with_gamma_shift(self, gamma_shift: float) -> "DiscretePopulation":
        """Та же популяция с другим сдвигом исхода в выбранных областях"""
        return _with_mu(self, replace(self.spec, gamma_shift=gamma_shift))

    def population_table(self) -> PopulationTable:
        return PopulationTable(self.schema, self.areas, self.counts.sum(axis=1))


def _with_mu(pop: DiscretePopulation, spec: PopulationSpec) -> DiscretePopulation:
    mu = np.repeat(pop.base_mu[:, :, None], spec.n_areas, axis=2)
    if spec.gamma_shift:
        mu[:, :, list(spec.shift_areas)] += spec.gamma_shift
        if spec.outcome == "binary":
            mu = np.clip(mu, 0.0, 1.0)
    mu.setflags(write=False)
    return replace(pop, spec=spec, mu=mu)


def generate_population(spec: PopulationSpec, seed: int) -> DiscretePopulation:
    """Детерминированная по seed популяция; игнорируемость выполнена при gamma_shift = 0"""
    rng = derive_rng(seed, "population")
    n_xp = int(np.prod(spec.xp_levels or (1,)))
    n_xs = int(np.prod(spec.xs_levels or (1,)))
    counts = rng.uniform(*spec.count_range, size=(n_xp, n_xs, spec.n_areas))
    base_mu = rng.uniform(*spec.outcome_range, size=(n_xp, n_xs))
    pi = rng.uniform(*spec.sampling_range, size=(n_xp, spec.n_areas))
    for arr in (counts, base_mu, pi):
        arr.setflags(write=False)
    if counts.sum(axis=(0, 1)).min() <= 0:
        raise ValidationError("В сгенерированной популяции есть пустая область")
    pop = DiscretePopulation(
        spec=spec,
        seed=int(seed),
        schema=_schema(spec),
        areas=tuple(str(a + 1) for a in range(spec.n_areas)),
        counts=counts,
        base_mu=base_mu,
        mu=base_mu,
        pi=pi,
    )
    pop = _with_mu(pop, spec)
    LogService.log(
        "DEBUG",
        f"Популяция: {n_xp}×{n_xs}×{spec.n_areas} ячеек, сдвиг {spec.gamma_shift}, seed {seed}",
        source="Oracle",
    )
    return pop


def true_area_means(pop: DiscretePopulation) -> np.ndarray:
    """τ_j = Σ count·μ / Σ count по ячейкам области j"""
    totals = pop.counts.sum(axis=(0, 1))
    empty = [pop.areas[a] for a in np.flatnonzero(totals <= 0)]
    if empty:
        raise ValidationError(f"Пустые области: {empty}", {"areas": empty})
    return (pop.counts * pop.mu).sum(axis=(0, 1)) / totals


class _SampledLaw(NamedTuple):
    sampled: np.ndarray       # f(p, s, a)·π(p, a)
    membership: np.ndarray    # P(A=a | p, s, S=1)
    membership_xp: np.ndarray  # P(A=a | p, S=1)
    share: np.ndarray         # Pr(A=a | X^P=p)
    inclusion: np.ndarray     # Pr(S=1 | X^P=p)
    outcome_mass: np.ndarray  # Σ_a f·π·μ_a


def _sampled_law(pop: DiscretePopulation) -> _SampledLaw:
    f = pop.counts / pop.counts.sum()
    fp = f * pop.pi[:, None, :]
    g = fp.sum(axis=2)
    f_xp = f.sum(axis=(1, 2))
    fp_xp = fp.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        membership = fp / g[:, :, None]
        membership_xp = fp_xp / fp_xp.sum(axis=1, keepdims=True)
        share = f.sum(axis=1) / f_xp[:, None]
        inclusion = fp_xp.sum(axis=1) / f_xp
    return _SampledLaw(fp, membership, membership_xp, share, inclusion, (fp * pop.mu).sum(axis=2))


def _check_overlap(pop: DiscretePopulation, law: _SampledLaw, a: int):
    mass = pop.counts[:, :, a] > 0
    bad = mass & ~((law.sampled.sum(axis=2) > 0) & (law.membership_xp[:, a] > 0)[:, None])
    if bad.any():
        p, s = (int(v[0]) for v in np.nonzero(bad))
        raise OverlapError(
            f"Нарушено перекрытие в ячейке X^P={p}, X^S={s}, область {pop.areas[a]}",
            {"xp_cell": p, "xs_cell": s, "area": pop.areas[a]},
        )


def _area_weight(law: _SampledLaw, a: int) -> np.ndarray:
    """ζ_j(p, s) · Pr(A=j | p) / Pr(S=1 | p); нуль вне носителя"""
    with np.errstate(divide="ignore", invalid="ignore"):
        zeta = law.membership[:, :, a] / law.membership_xp[:, a][:, None]
        w = zeta * (law.share[:, a] / law.inclusion)[:, None]
    return np.where(np.isfinite(w), w, 0.0)


def _area_probability(pop: DiscretePopulation, a: int) -> float:
    return float(pop.counts[:, :, a].sum() / pop.counts.sum())


def evaluate_identification(pop: DiscretePopulation) -> np.ndarray:
    """Σ Pr(x, a, S=1) · μ · w / Pr(A=j) для каждой области; веса не нормируются по выборке"""
    law = _sampled_law(pop)
    values = np.empty(pop.n_areas)
    for a in range(pop.n_areas):
        _check_overlap(pop, law, a)
        w = _area_weight(law, a)
        values[a] = np.sum(law.outcome_mass * w) / _area_probability(pop, a)
    return values


def evaluate_decomposition(pop: DiscretePopulation) -> np.ndarray:
    """Матрица (J, 2): прямая часть (выборка области j) и косвенная (остальные области через шансы)"""
    law = _sampled_law(pop)
    out = np.empty((pop.n_areas, 2))
    for a in range(pop.n_areas):
        _check_overlap(pop, law, a)
        w = _area_weight(law, a)
        normalizer = _area_probability(pop, a)
        own = law.sampled[:, :, a] * pop.mu[:, :, a]
        rest = law.outcome_mass - own
        q = law.membership[:, :, a]
        with np.errstate(divide="ignore", invalid="ignore"):
            odds = q / (1.0 - q)
            indirect_w = odds * (1.0 - q) / law.membership_xp[:, a][:, None] * (law.share[:, a] / law.inclusion)[:, None]
        indirect_w = np.where(rest > 0, indirect_w, 0.0)
        out[a, 0] = np.sum(own * w) / normalizer
        out[a, 1] = np.sum(rest * indirect_w) / normalizer
    return out


@dataclass(frozen=True)
class FiniteDistribution:
    """Совместный закон (X, Y, Z, D) на сетке: pmf[x, y, z, d]"""

    pmf: np.ndarray
    x_values: np.ndarray
    y_values: np.ndarray


def random_finite_distribution(
    seed: int,
    sizes: Tuple[int, int, int] = (3, 3, 3),
    independent: bool = False,
    always_observed: bool = False,
) -> FiniteDistribution:
    rng = derive_rng(seed, "lemma")
    nx, ny, nz = sizes
    x_values = rng.uniform(-1.0, 1.0, nx)
    y_values = rng.uniform(-1.0, 1.0, ny)
    if independent:
        px, py, pz = (rng.dirichlet(np.ones(k)) for k in sizes)
        base = px[:, None, None] * py[None, :, None] * pz[None, None, :]
    else:
        base = rng.dirichlet(np.ones(nx * ny * nz)).reshape(sizes)
    if always_observed:
        pd1 = np.ones(sizes)
    else:
        pd1 = rng.uniform(0.05, 0.95, sizes)
    pmf = np.stack([base * (1.0 - pd1), base * pd1], axis=3)
    return FiniteDistribution(pmf, x_values, y_values)


class LemmaCheck(NamedTuple):
    passed: bool
    tower_error: float
    weighting_error: float


def lemma_property_check(distribution: Optional[FiniteDistribution] = None, seed: int = 0, tol: float = 1e-12) -> LemmaCheck:
    """
    Перебором проверяет два тождества:
    E[E(X|Z)·Y] = E[X·E(Y|Z)] и E[Y | X, D=1] = E[D·Y / Pr(D=1|X) | X]
    """
    dist = distribution if distribution is not None else random_finite_distribution(seed)
    f = dist.pmf
    x = dist.x_values[:, None, None, None]
    y = dist.y_values[None, :, None, None]
    f_z = f.sum(axis=(0, 1, 3))
    if np.any(f_z <= 0):
        raise ValidationError("Нулевая вероятность условия Z")
    ex_z = (f * x).sum(axis=(0, 1, 3)) / f_z
    ey_z = (f * y).sum(axis=(0, 1, 3)) / f_z
    lhs = np.sum(f * ex_z[None, None, :, None] * y)
    rhs = np.sum(f * x * ey_z[None, None, :, None])
    tower_error = float(abs(lhs - rhs))

    f_x = f.sum(axis=(1, 2, 3))
    f_xd1 = f[..., 1].sum(axis=(1, 2))
    if np.any(f_x <= 0) or np.any(f_xd1 <= 0):
        raise ValidationError("Нулевая вероятность условия X или D=1 | X")
    pd1_x = f_xd1 / f_x
    cond = (f[..., 1] * dist.y_values[None, :, None]).sum(axis=(1, 2)) / f_xd1
    d = np.array([0.0, 1.0])[None, None, None, :]
    ipw = (f * d * y / pd1_x[:, None, None, None]).sum(axis=(1, 2, 3)) / f_x
    weighting_error = float(np.max(np.abs(cond - ipw)))
    return LemmaCheck(tower_error <= tol and weighting_error <= tol, tower_error, weighting_error)


def draw_sample(
    pop: DiscretePopulation,
    n: int,
    seed: int,
    key: Sequence = ("sample",),
    with_national_weight: bool = True,
) -> SurveyDataset:
    """
    Выборка с возвращением с вероятностями ∝ count·π; n может превышать численность.
    Национальный вес респондента = 1 / Pr(S=1 | X^P)
    """
    if n < 1:
        raise ConfigError(f"Объём выборки должен быть положительным: {n}")
    rng = derive_rng(seed, *key)
    mass = (pop.counts * pop.pi[:, None, :]).ravel()
    cells = rng.choice(mass.size, size=n, p=mass / mass.sum())
    p, s, a = np.unravel_index(cells, pop.counts.shape)
    mean = pop.mu[p, s, a]
    if pop.spec.outcome == "binary":
        outcome = (rng.random(n) < mean).astype(float)
    else:
        outcome = rng.normal(mean, GAUSSIAN_SIGMA)
    codes = {}
    if pop.spec.xp_levels:
        for name, col in zip(pop.schema.population_names, np.unravel_index(p, pop.spec.xp_levels)):
            codes[name] = col
    if pop.spec.xs_levels:
        for name, col in zip(pop.schema.survey_names, np.unravel_index(s, pop.spec.xs_levels)):
            codes[name] = col
    weight = None
    if with_national_weight:
        weight = 1.0 / _sampled_law(pop).inclusion[p]
    areas = np.asarray(pop.areas)[a]
    return SurveyDataset(pop.schema, outcome, areas, codes, weight, np.arange(1, n + 1).astype(str))


@dataclass(frozen=True)
class MetricReport:
    rmse: float
    mae: float
    mean_error: float
    correlation: float

    def as_dict(self) -> Dict[str, float]:
        return {"rmse": self.rmse, "mae": self.mae, "mean_error": self.mean_error, "correlation": self.correlation}


def _pearson(a: np.ndarray, b: np.ndarray, what: str) -> float:
    da, db = a - a.mean(), b - b.mean()
    denom = np.sqrt(np.dot(da, da) * np.dot(db, db))
    if denom == 0:
        raise ValidationError(f"Корреляция не определена: нулевая дисперсия ({what})")
    return float(np.clip(np.dot(da, db) / denom, -1.0, 1.0))


def fit_metrics(estimates: Sequence[float], truth: Sequence[float], strict: bool = True) -> MetricReport:
    """RMSE, MAE, средняя ошибка и корреляция Пирсона; strict=False даёт NaN вместо ошибки"""
    e = np.asarray(estimates, dtype=float)
    t = np.asarray(truth, dtype=float)
    if e.shape != t.shape or e.ndim != 1:
        raise ValidationError(f"Длины оценок {e.shape} и истинных значений {t.shape} различаются")
    if e.size < 2:
        raise ValidationError("Для метрик нужно хотя бы два значения")
    err = e - t
    try:
        corr = _pearson(e, t, "оценки/истина")
    except ValidationError:
        if strict:
            raise
        corr = float("nan")
    return MetricReport(
        rmse=float(np.sqrt(np.mean(err ** 2))),
        mae=float(np.mean(np.abs(err))),
        mean_error=float(np.mean(err)),
        correlation=corr,
    )


def error_correlation(est_a: Sequence[float], est_b: Sequence[float], truth: Sequence[float]) -> float:
    """Корреляция ошибок двух наборов оценок"""
    a, b, t = (np.asarray(v, dtype=float) for v in (est_a, est_b, truth))
    if not (a.shape == b.shape == t.shape) or a.ndim != 1:
        raise ValidationError("Длины наборов оценок и истинных значений различаются")
    if a.size < 3:
        raise ValidationError("Для корреляции ошибок нужно хотя бы три области")
    return _pearson(a - t, b - t, "ошибки")


def saturated_interactions(names: Sequence[str]) -> Tuple[Tuple[str, ...], ...]:
    """Все пары и тройки переменных: насыщенная модель для трёх и менее переменных"""
    names = tuple(names)
    terms = []
    for size in (2, 3):
        terms.extend(itertools.combinations(names, size))
    return tuple(terms)


@dataclass
class MonteCarloResult:
    rows: List[Dict[str, float]]
    estimates: Dict[int, np.ndarray]
    truth: np.ndarray
    errors: List[str] = field(default_factory=list)

    def median(self, n: int, column: str) -> float:
        return float(np.nanmedian([r[column] for r in self.rows if r["n"] == n]))

    def median_abs_bias(self, n: int) -> float:
        return float(np.median(np.abs(np.nanmean(self.estimates[n], axis=0) - self.truth)))


def _subset_rmse(by_area, areas, truth) -> float:
    """RMSE по областям, где оценка есть; NaN, если таких меньше двух"""
    keep = [k for k, a in enumerate(areas) if a in by_area]
    if len(keep) < 2:
        return float("nan")
    values = np.array([by_area[areas[k]].estimate for k in keep])
    return fit_metrics(values, truth[keep], strict=False).rmse


def _mc_replicate(pop, truth, n, r, config, seed):
    survey = draw_sample(pop, n, seed, key=("mc", n, r))
    table = pop.population_table()
    est = estimate_all_areas(survey, table, replace(config, threads=1, include_direct=True, include_unweighted=True, decompose=False))
    synthetic = est.by_method(Method.SYNTHETIC)
    direct = est.by_method(Method.DIRECT)
    unweighted = est.by_method(Method.UNWEIGHTED)
    values = np.array([synthetic[a].estimate if a in synthetic else np.nan for a in pop.areas])
    ok = np.isfinite(values)
    metrics = fit_metrics(values[ok], truth[ok], strict=False)
    row = {
        "n": n,
        "replicate": r,
        **metrics.as_dict(),
        "median_synthetic_se": float(np.median([x.se for x in synthetic.values()])) if synthetic else float("nan"),
        "median_direct_se": float(np.median([x.se for x in direct.values()])) if direct else float("nan"),
        "unweighted_rmse": _subset_rmse(unweighted, pop.areas, truth),
    }
    return row, values


def run_monte_carlo(
    pop: DiscretePopulation,
    n_values: Sequence[int],
    replicates: int,
    config: Optional[EstimatorConfig] = None,
    seed: int = 0,
    threads: Optional[int] = None,
) -> MonteCarloResult:
    """Повторные выборки и оценки; по умолчанию насыщенные модели принадлежности"""
    if replicates < 1:
        raise ConfigError(f"Число повторов должно быть положительным: {replicates}")
    if config is None:
        names = pop.schema.population_names + pop.schema.survey_names
        config = EstimatorConfig(interactions=saturated_interactions(names), seed=seed)
    truth = true_area_means(pop)
    tasks = [((n, r), lambda n=n, r=r: _mc_replicate(pop, truth, n, r, config, seed)) for n in n_values for r in range(replicates)]
    outcomes = WorkerService(threads, source="MonteCarlo").run_tasks(tasks)

    rows: List[Dict[str, float]] = []
    estimates = {n: np.full((replicates, pop.n_areas), np.nan) for n in n_values}
    errors: List[str] = []
    for outcome in outcomes:
        n, r = outcome.key
        if not outcome.ok:
            if not isinstance(outcome.error, SAEError):
                raise outcome.error
            errors.append(f"n={n}, r={r}: {outcome.error}")
            continue
        row, values = outcome.value
        rows.append(row)
        estimates[n][r] = values
    for n in n_values:
        LogService.log(
            "INFO",
            f"Монте-Карло n={n}: медиана RMSE {np.nanmedian([r['rmse'] for r in rows if r['n'] == n]):.4f}",
            source="MonteCarlo",
        )
    return MonteCarloResult(rows, estimates, truth, errors)
