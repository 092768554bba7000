"""
Регрессии с гребневым штрафом
Логистическая и мультиномиальная модели (демпфированный метод Ньютона),
линейная модель для диагностики и кодирование матрицы плана
"""

import itertools
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg
from scipy.special import expit, log_softmax, softmax

from core.data_model import CovariateSchema, SurveyDataset
from core.errors import ConfigError, ConvergenceError, EmptyClassError, SchemaError, ValidationError
from services.log_service import LogService

INTERCEPT = "(Intercept)"
DEFAULT_PRIOR_SCALE = 2.5
DEFAULT_LAMBDA = 1.0 / DEFAULT_PRIOR_SCALE ** 2
TOLERANCE = 1e-8
MAX_ITER = 100
MAX_HALVINGS = 40
CONSTANT_SD = 1e-12

Interaction = Tuple[str, ...]


class Family(Enum):
    LOGISTIC = "logistic"
    MULTINOMIAL = "multinomial"


@dataclass(frozen=True)
class DesignMatrix:
    """Матрица плана: свободный член, дамми главных эффектов, взаимодействия"""

    values: np.ndarray
    labels: Tuple[str, ...]
    variables: Tuple[str, ...] = ()
    interactions: Tuple[Interaction, ...] = ()

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2:
            raise ValidationError("Матрица плана должна быть двумерной")
        labels = tuple(self.labels)
        if len(labels) != values.shape[1]:
            raise ValidationError(f"Меток столбцов {len(labels)}, столбцов {values.shape[1]}")
        if len(set(labels)) != len(labels):
            raise ValidationError("Метки столбцов повторяются", {"labels": list(labels)})
        if values.shape[1] == 0 or (values.shape[0] and not np.all(values[:, 0] == 1.0)):
            raise ValidationError("Первый столбец плана должен быть свободным членом")
        if not np.all(np.isfinite(values)):
            raise ValidationError("Матрица плана содержит нечисловые значения")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def select(self, mask: np.ndarray) -> "DesignMatrix":
        mask = np.asarray(mask, dtype=bool)
        return DesignMatrix(self.values[:, mask], tuple(l for l, keep in zip(self.labels, mask) if keep), self.variables, self.interactions)

    def insert(self, position: int, label: str, column: np.ndarray) -> "DesignMatrix":
        values = np.insert(self.values, position, np.asarray(column, dtype=float), axis=1)
        labels = self.labels[:position] + (label,) + self.labels[position:]
        return DesignMatrix(values, labels, self.variables, self.interactions)

    def rows(self, index: np.ndarray) -> "DesignMatrix":
        return DesignMatrix(self.values[np.asarray(index)], self.labels, self.variables, self.interactions)


def _dummies(schema: CovariateSchema, codes: Mapping[str, np.ndarray], name: str):
    var = schema.variable(name)
    if name not in codes:
        raise SchemaError(f"Нет значений переменной '{name}'", {"variable": name})
    col = np.asarray(codes[name])
    return [(f"{name}={level}", (col == k).astype(float)) for k, level in enumerate(var.levels) if k > 0]


def encode_design(
    schema: CovariateSchema,
    codes: Mapping[str, np.ndarray],
    n: int,
    variables: Sequence[str],
    interactions: Sequence[Sequence[str]] = (),
) -> DesignMatrix:
    """План по словарю кодов (опрос или ячейки населения)"""
    variables = tuple(variables)
    interactions = tuple(tuple(term) for term in interactions)
    if len(set(variables)) != len(variables):
        raise SchemaError(f"Переменные плана повторяются: {list(variables)}")
    for term in interactions:
        if len(term) not in (2, 3) or len(set(term)) != len(term):
            raise ConfigError(f"Взаимодействие должно быть парой или тройкой разных переменных: {list(term)}")

    columns = [(INTERCEPT, np.ones(n))]
    for name in variables:
        columns.extend(_dummies(schema, codes, name))
    for term in interactions:
        parts = [_dummies(schema, codes, name) for name in term]
        for combo in itertools.product(*parts):
            label = ":".join(label for label, _ in combo)
            columns.append((label, np.prod([col for _, col in combo], axis=0)))

    labels = tuple(label for label, _ in columns)
    if len(set(labels)) != len(labels):
        raise SchemaError("Повторяющиеся столбцы плана (взаимодействие объявлено дважды?)")
    return DesignMatrix(np.column_stack([col for _, col in columns]), labels, variables, interactions)


def build_design(data: SurveyDataset, variables: Sequence[str], interactions: Sequence[Sequence[str]] = ()) -> DesignMatrix:
    return encode_design(data.schema, data.codes, data.n, variables, interactions)


@dataclass(frozen=True)
class GlmFit:
    """Результат подгонки: коэффициенты в исходной шкале и служебные данные"""

    family: Family
    coefficients: np.ndarray
    labels: Tuple[str, ...]
    lam: float
    center: np.ndarray
    scale: np.ndarray
    active: np.ndarray
    standardized: np.ndarray
    n_iter: int
    grad_norm: float
    converged: bool
    case_weights: Optional[np.ndarray] = None
    classes: Optional[Tuple] = None
    objective_path: Tuple[float, ...] = field(default=())

    @property
    def penalty(self) -> np.ndarray:
        pen = np.full(len(self.labels), self.lam)
        pen[0] = 0.0
        return pen

    @property
    def dropped(self) -> Tuple[str, ...]:
        return tuple(l for l, a in zip(self.labels, self.active) if not a)

    def standardize(self, X: Union[DesignMatrix, np.ndarray]) -> np.ndarray:
        """Рабочие (стандартизованные) столбцы, на которых решалась задача"""
        values = X.values if isinstance(X, DesignMatrix) else np.asarray(X, dtype=float)
        return (values[:, self.active] - self.center[self.active]) / self.scale[self.active]


def _as_values(X) -> np.ndarray:
    values = X.values if isinstance(X, DesignMatrix) else np.asarray(X, dtype=float)
    if values.ndim != 2:
        raise ValidationError("Матрица плана должна быть двумерной")
    return values


def _case_weights(case_weights, n: int) -> np.ndarray:
    if case_weights is None:
        return np.ones(n)
    w = np.asarray(case_weights, dtype=float)
    if w.shape != (n,):
        raise ValidationError(f"Длина весов {w.shape} не совпадает с числом строк {n}")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValidationError("Веса наблюдений должны быть конечными и неотрицательными")
    if w.sum() <= 0:
        raise ValidationError("Все веса наблюдений равны нулю")
    return w


def _check_lambda(lam: float):
    if not np.isfinite(lam) or lam <= 0:
        raise ConfigError(f"Сила штрафа должна быть положительной: {lam}")


def _standardization(values: np.ndarray, w: np.ndarray):
    p = values.shape[1]
    center = np.zeros(p)
    scale = np.ones(p)
    active = np.ones(p, dtype=bool)
    if p > 1:
        total = w.sum()
        mean = w @ values[:, 1:] / total
        sd = np.sqrt(w @ (values[:, 1:] - mean) ** 2 / total)
        constant = sd <= CONSTANT_SD
        center[1:] = np.where(constant, 0.0, mean)
        scale[1:] = np.where(constant, 1.0, sd)
        active[1:] = ~constant
    return center, scale, active


def _penalty_mask(p: int) -> np.ndarray:
    pen = np.ones(p)
    pen[0] = 0.0
    return pen


def _solve(H: np.ndarray, g: np.ndarray) -> np.ndarray:
    try:
        return linalg.solve(H, g, assume_a="pos")
    except (linalg.LinAlgError, ValueError):
        return linalg.lstsq(H, g)[0]


def _newton(
    objective: Callable[[np.ndarray], float],
    gradient: Callable[[np.ndarray], np.ndarray],
    hessian: Callable[[np.ndarray], np.ndarray],
    theta: np.ndarray,
    max_iter: int,
    tol: float,
):
    """Демпфированный Ньютон с делением шага пополам; целевая функция не растёт"""
    obj = objective(theta)
    path = [obj]
    g = gradient(theta)
    n_iter = 0
    while np.max(np.abs(g)) >= tol and n_iter < max_iter:
        step = _solve(hessian(theta), g)
        t = 1.0
        accepted = False
        for _ in range(MAX_HALVINGS):
            candidate = theta - t * step
            cand_obj = objective(candidate)
            if np.isfinite(cand_obj) and cand_obj <= obj + 1e-13 * max(1.0, abs(obj)):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        theta, obj = candidate, cand_obj
        path.append(obj)
        g = gradient(theta)
        n_iter += 1
    return theta, g, n_iter, tuple(path)


def _to_original(theta: np.ndarray, center: np.ndarray, scale: np.ndarray, active: np.ndarray) -> np.ndarray:
    idx = np.flatnonzero(active)
    beta = np.zeros((len(active),) + theta.shape[1:])
    slopes = theta[1:] / (scale[idx[1:]][:, None] if theta.ndim == 2 else scale[idx[1:]])
    beta[idx[1:]] = slopes
    shift = center[idx[1:]] @ slopes if len(idx) > 1 else 0.0
    beta[0] = theta[0] - shift
    return beta


# Целевая функция и градиент в рабочей параметризации

def _logistic_objective(theta, Z, y, w, lam):
    eta = Z @ theta
    return float(w @ (np.logaddexp(0.0, eta) - y * eta) + 0.5 * lam * np.sum(_penalty_mask(len(theta)) * theta ** 2))


def _logistic_gradient(theta, Z, y, w, lam):
    return Z.T @ (w * (expit(Z @ theta) - y)) + lam * _penalty_mask(len(theta)) * theta


def _logistic_hessian(theta, Z, w, lam):
    p = expit(Z @ theta)
    return Z.T @ (Z * (w * p * (1.0 - p))[:, None]) + np.diag(lam * _penalty_mask(len(theta)))


def _one_hot(codes: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros((len(codes), k))
    out[np.arange(len(codes)), codes] = 1.0
    return out


def _multinomial_eta(theta, Z):
    eta = Z @ theta
    return np.column_stack([eta, np.zeros(len(Z))])


def _multinomial_objective(theta, Z, Y, w, lam):
    logp = log_softmax(_multinomial_eta(theta, Z), axis=1)
    pen = _penalty_mask(theta.shape[0])[:, None]
    return float(-(w @ np.sum(Y * logp, axis=1)) + 0.5 * lam * np.sum(pen * theta ** 2))


def _multinomial_gradient(theta, Z, Y, w, lam):
    P = softmax(_multinomial_eta(theta, Z), axis=1)
    pen = _penalty_mask(theta.shape[0])[:, None]
    return Z.T @ (w[:, None] * (P - Y)[:, :-1]) + lam * pen * theta


def _multinomial_hessian(theta, Z, w, lam):
    p, m = theta.shape
    P = softmax(_multinomial_eta(theta, Z), axis=1)[:, :-1]
    H = np.zeros((p * m, p * m))
    pen = np.diag(lam * _penalty_mask(p))
    for k in range(m):
        for l in range(k, m):
            d = w * P[:, k] * ((1.0 if k == l else 0.0) - P[:, l])
            block = Z.T @ (Z * d[:, None])
            if k == l:
                block = block + pen
            H[k * p:(k + 1) * p, l * p:(l + 1) * p] = block
            H[l * p:(l + 1) * p, k * p:(k + 1) * p] = block.T
    return H


def _classes_and_codes(y: np.ndarray, classes: Optional[Sequence]):
    y = np.asarray(y)
    if classes is None:
        classes = tuple(np.unique(y).tolist())
    classes = tuple(classes)
    index = {c: k for k, c in enumerate(classes)}
    try:
        codes = np.array([index[v] for v in y.tolist()], dtype=np.int64)
    except KeyError as e:
        raise ValidationError(f"Класс {e.args[0]!r} не входит в список классов")
    return classes, codes


def _parse_family(family) -> Family:
    try:
        return family if isinstance(family, Family) else Family(family)
    except ValueError:
        raise ConfigError(f"Неизвестное семейство модели: {family}")


def penalized_objective(params, X, y, case_weights=None, lam: float = DEFAULT_LAMBDA, family=Family.LOGISTIC) -> float:
    """Штрафованная целевая функция на столбцах X как они есть (первый столбец не штрафуется)"""
    family = _parse_family(family)
    values = _as_values(X)
    w = _case_weights(case_weights, values.shape[0])
    params = np.asarray(params, dtype=float)
    y = np.asarray(y)
    if family is Family.LOGISTIC:
        return _logistic_objective(params, values, y.astype(float), w, lam)
    if family is Family.MULTINOMIAL:
        return _multinomial_objective(params, values, _one_hot(y.astype(np.int64), params.shape[1] + 1), w, lam)
    resid = y.astype(float) - values @ params
    return float(0.5 * (w @ resid ** 2) + 0.5 * lam * np.sum(_penalty_mask(len(params)) * params ** 2))


def penalized_gradient(params, X, y, case_weights=None, lam: float = DEFAULT_LAMBDA, family=Family.LOGISTIC) -> np.ndarray:
    """
    Аналитический градиент штрафованной целевой функции.
    Для мультиномиальной модели params имеет форму (p, K-1), y: номера классов 0..K-1
    """
    family = _parse_family(family)
    values = _as_values(X)
    w = _case_weights(case_weights, values.shape[0])
    params = np.asarray(params, dtype=float)
    y = np.asarray(y)
    if params.shape[0] != values.shape[1] or y.shape[0] != values.shape[0]:
        raise ValidationError(
            f"Несовпадение размеров: параметры {params.shape}, план {values.shape}, отклик {y.shape}"
        )
    if family is Family.LOGISTIC:
        return _logistic_gradient(params, values, y.astype(float), w, lam)
    if family is Family.MULTINOMIAL:
        return _multinomial_gradient(params, values, _one_hot(y.astype(np.int64), params.shape[1] + 1), w, lam)
    return -(values.T @ (w * (y.astype(float) - values @ params))) + lam * _penalty_mask(len(params)) * params


def _finish(family, theta, g, n_iter, path, X, lam, center, scale, active, w, case_weights, classes, tol):
    if not np.all(np.isfinite(theta)):
        raise ConvergenceError(f"Коэффициенты модели ({family.value}) не конечны")
    grad_norm = float(np.max(np.abs(g))) if g.size else 0.0
    converged = grad_norm < tol
    labels = X.labels if isinstance(X, DesignMatrix) else tuple(f"x{k}" for k in range(len(active)))
    if not converged:
        LogService.log(
            "WARNING",
            f"Модель {family.value} не сошлась за {n_iter} итераций: |g|={grad_norm:.3g}",
            source="GLM",
        )
    else:
        LogService.log("DEBUG", f"Модель {family.value}: {n_iter} итераций, |g|={grad_norm:.3g}", source="GLM")
    return GlmFit(
        family=family,
        coefficients=_to_original(theta, center, scale, active),
        labels=labels,
        lam=float(lam),
        center=center,
        scale=scale,
        active=active,
        standardized=theta,
        n_iter=n_iter,
        grad_norm=grad_norm,
        converged=converged,
        case_weights=None if case_weights is None else w,
        classes=classes,
        objective_path=path,
    )


def fit_ridge_logistic(
    X: DesignMatrix,
    y: np.ndarray,
    case_weights: Optional[np.ndarray] = None,
    lam: float = DEFAULT_LAMBDA,
    max_iter: int = MAX_ITER,
    tol: float = TOLERANCE,
) -> GlmFit:
    """
    Логистическая регрессия с гребневым штрафом.
    Минимизирует Σ w·NLL + (λ/2)·‖β без свободного члена‖² на стандартизованных столбцах
    """
    _check_lambda(lam)
    values = _as_values(X)
    y = np.asarray(y, dtype=float)
    if y.shape != (values.shape[0],):
        raise ValidationError(f"Длина отклика {y.shape} не совпадает с числом строк {values.shape[0]}")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValidationError("Отклик логистической модели должен быть 0/1")
    w = _case_weights(case_weights, values.shape[0])
    center, scale, active = _standardization(values, w)
    Z = (values[:, active] - center[active]) / scale[active]

    theta, g, n_iter, path = _newton(
        lambda t: _logistic_objective(t, Z, y, w, lam),
        lambda t: _logistic_gradient(t, Z, y, w, lam),
        lambda t: _logistic_hessian(t, Z, w, lam),
        np.zeros(Z.shape[1]),
        max_iter,
        tol,
    )
    return _finish(Family.LOGISTIC, theta, g, n_iter, path, X, lam, center, scale, active, w, case_weights, None, tol)


def fit_ridge_multinomial(
    X: DesignMatrix,
    y: np.ndarray,
    lam: float = DEFAULT_LAMBDA,
    case_weights: Optional[np.ndarray] = None,
    classes: Optional[Sequence] = None,
    max_iter: int = MAX_ITER,
    tol: float = TOLERANCE,
) -> GlmFit:
    """Мультиномиальная логит-модель; коэффициенты последнего класса закреплены нулём"""
    _check_lambda(lam)
    values = _as_values(X)
    classes, codes = _classes_and_codes(y, classes)
    if len(codes) != values.shape[0]:
        raise ValidationError(f"Длина отклика {len(codes)} не совпадает с числом строк {values.shape[0]}")
    k = len(classes)
    if k < 2:
        raise ValidationError("Мультиномиальной модели нужно не меньше двух классов")
    w = _case_weights(case_weights, values.shape[0])
    mass = np.bincount(codes, weights=w, minlength=k)
    empty = [classes[c] for c in np.flatnonzero(mass <= 0)]
    if empty:
        raise EmptyClassError(
            f"Классы без наблюдений: {empty}. Используйте membership=ovr (одна модель на область)",
            {"classes": [str(c) for c in empty]},
        )
    center, scale, active = _standardization(values, w)
    Z = (values[:, active] - center[active]) / scale[active]
    Y = _one_hot(codes, k)
    shape = (Z.shape[1], k - 1)

    def unflat(t):
        return t.reshape(shape, order="F")

    theta, g, n_iter, path = _newton(
        lambda t: _multinomial_objective(unflat(t), Z, Y, w, lam),
        lambda t: _multinomial_gradient(unflat(t), Z, Y, w, lam).ravel(order="F"),
        lambda t: _multinomial_hessian(unflat(t), Z, w, lam),
        np.zeros(shape[0] * shape[1]),
        max_iter,
        tol,
    )
    return _finish(Family.MULTINOMIAL, unflat(theta), unflat(g), n_iter, path, X, lam, center, scale, active, w, case_weights, classes, tol)


def independent_columns(values: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Маска линейно независимых столбцов (в порядке следования)"""
    values = np.asarray(values, dtype=float)
    keep = np.zeros(values.shape[1], dtype=bool)
    basis = np.zeros((values.shape[0], 0))
    for k in range(values.shape[1]):
        col = values[:, k]
        norm = np.linalg.norm(col)
        if norm == 0.0:
            continue
        resid = col - basis @ (basis.T @ col)
        resid = resid - basis @ (basis.T @ resid)
        r = np.linalg.norm(resid)
        if r > tol * norm:
            keep[k] = True
            basis = np.column_stack([basis, resid / r])
    return keep


def predict_prob(fit: GlmFit, X: DesignMatrix) -> np.ndarray:
    """
    Вероятности по подогнанной модели.
    Логистическая: вектор Pr(y=1); мультиномиальная: матрица (n, K)
    """
    labels = X.labels if isinstance(X, DesignMatrix) else None
    values = _as_values(X)
    if (labels is not None and labels != fit.labels) or values.shape[1] != len(fit.labels):
        raise ValidationError(
            "Столбцы плана не совпадают со столбцами модели",
            {"expected": list(fit.labels), "got": list(labels) if labels else values.shape[1]},
        )
    eta = values @ fit.coefficients
    if fit.family is Family.LOGISTIC:
        return expit(eta)
    return softmax(np.column_stack([eta, np.zeros(values.shape[0])]), axis=1)
