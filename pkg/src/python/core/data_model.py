"""
Модель данных
Схема ковариат, микроданные опроса, таблица численности населения,
доли областей по ячейкам и проверка перекрытия
"""

import itertools
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from core.errors import ParseError, SchemaError, ValidationError
from services.log_service import LogService

Profile = Tuple[str, ...]

RESPONDENT_ID_COLUMN = "respondent_id"
COUNT_COLUMN = "count"


def _readonly(values: np.ndarray) -> np.ndarray:
    values = np.array(values, copy=True)
    values.setflags(write=False)
    return values


def natural_key(label: str):
    """Ключ сортировки меток областей: "2" < "10", "CD-2" < "CD-10" """
    return [int(part) if part.isdigit() else part for part in re.split(r"(\d+)", str(label))]


@dataclass(frozen=True)
class Variable:
    """Категориальная переменная с упорядоченным списком уровней"""

    name: str
    levels: Tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(str(level) for level in self.levels))
        if not self.levels:
            raise SchemaError(f"У переменной '{self.name}' нет уровней", {"variable": self.name})
        if len(set(self.levels)) != len(self.levels):
            raise SchemaError(f"Уровни переменной '{self.name}' повторяются", {"variable": self.name})

    @property
    def reference(self) -> str:
        return self.levels[0]

    def code_of(self, level: str) -> int:
        return self.levels.index(level)


@dataclass(frozen=True)
class CovariateSchema:
    """Схема: переменные населения X^P и переменные только опроса X^S"""

    population_vars: Tuple[Variable, ...]
    survey_vars: Tuple[Variable, ...] = ()
    outcome_name: str = "outcome"
    area_name: str = "area"
    weight_name: str = "weight"

    def __post_init__(self):
        object.__setattr__(self, "population_vars", tuple(self.population_vars))
        object.__setattr__(self, "survey_vars", tuple(self.survey_vars))
        names = [v.name for v in self.all_vars]
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise SchemaError(f"Переменные X^P и X^S пересекаются или повторяются: {dup}", {"variables": dup})
        reserved = {self.outcome_name, self.area_name, self.weight_name, RESPONDENT_ID_COLUMN, COUNT_COLUMN}
        clash = sorted(reserved.intersection(names))
        if clash:
            raise SchemaError(f"Имена переменных совпадают со служебными столбцами: {clash}", {"variables": clash})

    @classmethod
    def from_levels(cls, population: Mapping[str, Sequence[str]], survey: Optional[Mapping[str, Sequence[str]]] = None, **names) -> "CovariateSchema":
        return cls(
            population_vars=tuple(Variable(k, tuple(v)) for k, v in population.items()),
            survey_vars=tuple(Variable(k, tuple(v)) for k, v in (survey or {}).items()),
            **names,
        )

    @property
    def all_vars(self) -> Tuple[Variable, ...]:
        return self.population_vars + self.survey_vars

    @property
    def population_names(self) -> Tuple[str, ...]:
        return tuple(v.name for v in self.population_vars)

    @property
    def survey_names(self) -> Tuple[str, ...]:
        return tuple(v.name for v in self.survey_vars)

    @property
    def population_dims(self) -> Tuple[int, ...]:
        return tuple(len(v.levels) for v in self.population_vars)

    def variable(self, name: str) -> Variable:
        for var in self.all_vars:
            if var.name == name:
                return var
        raise SchemaError(f"Неизвестная переменная '{name}'", {"variable": name})

    def role(self, name: str) -> str:
        if name in self.population_names:
            return "P"
        if name in self.survey_names:
            return "S"
        raise SchemaError(f"Неизвестная переменная '{name}'", {"variable": name})

    def population_profiles(self) -> List[Profile]:
        """Все профили X^P в порядке itertools.product (первая переменная: старшая)"""
        return [tuple(p) for p in itertools.product(*(v.levels for v in self.population_vars))]


def _clean(values: pd.Series) -> pd.Series:
    return values.fillna("").astype(str).str.strip()


def _parse_float(values: pd.Series, column: str, error_cls) -> np.ndarray:
    cleaned = _clean(values)
    missing = np.flatnonzero((cleaned == "").to_numpy())
    if missing.size:
        row = int(missing[0]) + 1
        raise error_cls(f"Пропущено значение в столбце '{column}', строка {row}", {"row": row, "column": column})
    parsed = pd.to_numeric(cleaned, errors="coerce").to_numpy(dtype=float)
    bad = np.flatnonzero(~np.isfinite(parsed))
    if bad.size:
        row = int(bad[0]) + 1
        raise ParseError(
            f"Не число в столбце '{column}', строка {row}: '{cleaned.iloc[bad[0]]}'",
            {"row": row, "column": column},
        )
    return parsed


def _encode_levels(values: pd.Series, var: Variable) -> np.ndarray:
    cleaned = _clean(values)
    index = {level: code for code, level in enumerate(var.levels)}
    codes = cleaned.map(index)
    bad = np.flatnonzero(codes.isna().to_numpy())
    if bad.size:
        row = int(bad[0]) + 1
        value = cleaned.iloc[bad[0]]
        if value == "":
            msg = f"Пропущено значение ковариаты '{var.name}', строка {row}"
        else:
            msg = f"Неизвестный уровень '{value}' переменной '{var.name}', строка {row}"
        raise SchemaError(msg, {"row": row, "column": var.name, "value": value})
    return codes.to_numpy(dtype=np.int64)


@dataclass(frozen=True)
class SurveyDataset:
    """Микроданные опроса: исход Y, область A, коды X^P и X^S, национальный вес"""

    schema: CovariateSchema
    outcome: np.ndarray
    area: np.ndarray
    codes: Mapping[str, np.ndarray]
    national_weight: Optional[np.ndarray] = None
    respondent_id: Optional[np.ndarray] = None

    def __post_init__(self):
        outcome = np.asarray(self.outcome, dtype=float)
        n = outcome.shape[0]
        if outcome.ndim != 1 or n < 1:
            raise ValidationError("Опрос должен содержать хотя бы одного респондента")
        if not np.all(np.isfinite(outcome)):
            raise ParseError("Исход содержит нечисловые значения")
        area = np.asarray(self.area).astype(str)
        if area.shape != (n,):
            raise ValidationError("Длина столбца области не совпадает с числом респондентов")
        codes = {}
        for var in self.schema.all_vars:
            if var.name not in self.codes:
                raise SchemaError(f"Нет значений переменной '{var.name}'", {"column": var.name})
            col = np.asarray(self.codes[var.name], dtype=np.int64)
            if col.shape != (n,) or col.min() < 0 or col.max() >= len(var.levels):
                raise SchemaError(f"Коды переменной '{var.name}' вне схемы", {"column": var.name})
            codes[var.name] = _readonly(col)
        weight = None
        if self.national_weight is not None:
            weight = np.asarray(self.national_weight, dtype=float)
            if weight.shape != (n,):
                raise ValidationError("Длина столбца весов не совпадает с числом респондентов")
            bad = np.flatnonzero(~(np.isfinite(weight) & (weight > 0)))
            if bad.size:
                row = int(bad[0]) + 1
                raise ValidationError(
                    f"Национальный вес должен быть положительным, строка {row}: {weight[bad[0]]}",
                    {"row": row, "column": self.schema.weight_name},
                )
            weight = _readonly(weight)
        ids = np.arange(1, n + 1).astype(str) if self.respondent_id is None else np.asarray(self.respondent_id).astype(str)
        object.__setattr__(self, "outcome", _readonly(outcome))
        object.__setattr__(self, "area", _readonly(area))
        object.__setattr__(self, "codes", codes)
        object.__setattr__(self, "national_weight", weight)
        object.__setattr__(self, "respondent_id", _readonly(ids))

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, schema: CovariateSchema) -> "SurveyDataset":
        """Проверка и кодирование таблицы опроса (все значения: строки)"""
        columns = list(frame.columns)
        for required in (schema.area_name, schema.outcome_name):
            if required not in columns:
                raise ParseError(f"Нет обязательного столбца '{required}'", {"column": required})
        missing = [name for name in schema.population_names + schema.survey_names if name not in columns]
        if missing:
            raise SchemaError(f"Нет столбцов ковариат: {missing}", {"columns": missing})
        allowed = {schema.area_name, schema.outcome_name, schema.weight_name, RESPONDENT_ID_COLUMN}
        allowed.update(v.name for v in schema.all_vars)
        extra = [c for c in columns if c not in allowed]
        if extra:
            raise ParseError(f"Столбцы не описаны схемой: {extra}", {"columns": extra})
        if len(frame) == 0:
            raise ValidationError("Опрос должен содержать хотя бы одного респондента")

        area = _clean(frame[schema.area_name])
        empty_area = np.flatnonzero((area == "").to_numpy())
        if empty_area.size:
            row = int(empty_area[0]) + 1
            raise ParseError(f"Пропущена область, строка {row}", {"row": row, "column": schema.area_name})
        outcome = _parse_float(frame[schema.outcome_name], schema.outcome_name, ParseError)
        codes = {var.name: _encode_levels(frame[var.name], var) for var in schema.all_vars}
        weight = None
        if schema.weight_name in columns:
            weight = _parse_float(frame[schema.weight_name], schema.weight_name, ValidationError)
        ids = _clean(frame[RESPONDENT_ID_COLUMN]).to_numpy() if RESPONDENT_ID_COLUMN in columns else None
        return cls(schema, outcome, area.to_numpy(), codes, weight, ids)

    @property
    def n(self) -> int:
        return int(self.outcome.shape[0])

    @property
    def has_national_weight(self) -> bool:
        return self.national_weight is not None

    def observed_areas(self) -> List[str]:
        return sorted(set(self.area.tolist()), key=natural_key)

    def area_counts(self) -> Dict[str, int]:
        labels, counts = np.unique(self.area, return_counts=True)
        return {str(l): int(c) for l, c in zip(labels, counts)}

    def levels_of(self, name: str) -> np.ndarray:
        var = self.schema.variable(name)
        return np.asarray(var.levels, dtype=object)[self.codes[name]]

    def population_index(self) -> np.ndarray:
        """Номер профиля X^P каждого респондента в порядке CovariateSchema.population_profiles"""
        if not self.schema.population_vars:
            return np.zeros(self.n, dtype=np.int64)
        return np.ravel_multi_index(
            tuple(self.codes[name] for name in self.schema.population_names),
            self.schema.population_dims,
        )

    def profile_of(self, i: int) -> Profile:
        return tuple(self.schema.population_vars[k].levels[self.codes[name][i]] for k, name in enumerate(self.schema.population_names))

    def subset(self, index: Union[np.ndarray, Sequence[int]]) -> "SurveyDataset":
        """Подвыборка (с повторами) по индексам строк"""
        index = np.asarray(index, dtype=np.int64)
        return SurveyDataset(
            self.schema,
            self.outcome[index],
            self.area[index],
            {name: col[index] for name, col in self.codes.items()},
            None if self.national_weight is None else self.national_weight[index],
            self.respondent_id[index],
        )

    def with_outcome(self, outcome: np.ndarray) -> "SurveyDataset":
        return SurveyDataset(self.schema, outcome, self.area, self.codes, self.national_weight, self.respondent_id)

    def with_national_weight(self, weight: Optional[np.ndarray]) -> "SurveyDataset":
        return SurveyDataset(self.schema, self.outcome, self.area, self.codes, weight, self.respondent_id)

    def is_binary(self) -> bool:
        return bool(np.all((self.outcome == 0.0) | (self.outcome == 1.0)))

    def to_frame(self) -> pd.DataFrame:
        data = {RESPONDENT_ID_COLUMN: self.respondent_id, self.schema.area_name: self.area, self.schema.outcome_name: self.outcome}
        if self.national_weight is not None:
            data[self.schema.weight_name] = self.national_weight
        for var in self.schema.all_vars:
            data[var.name] = self.levels_of(var.name)
        return pd.DataFrame(data)


@dataclass(frozen=True)
class PopulationTable:
    """Численность населения по ячейкам (профиль X^P, область)"""

    schema: CovariateSchema
    areas: Tuple[str, ...]
    counts: np.ndarray
    profiles: Tuple[Profile, ...] = field(default=())

    def __post_init__(self):
        profiles = tuple(self.schema.population_profiles())
        counts = np.asarray(self.counts, dtype=float)
        areas = tuple(str(a) for a in self.areas)
        if len(set(areas)) != len(areas) or not areas:
            raise ValidationError("Метки областей пусты или повторяются")
        if counts.shape != (len(profiles), len(areas)):
            raise ValidationError(
                f"Размер таблицы {counts.shape} не совпадает с ({len(profiles)} профилей, {len(areas)} областей)"
            )
        if not np.all(np.isfinite(counts)) or np.any(counts < 0):
            raise ValidationError("Численность ячеек должна быть неотрицательной")
        if counts.sum() <= 0:
            raise ValidationError("Общая численность населения равна нулю")
        area_totals = counts.sum(axis=0)
        empty = [a for a, t in zip(areas, area_totals) if t <= 0]
        if empty:
            raise ValidationError(f"Области с нулевой численностью: {empty}", {"areas": empty})
        object.__setattr__(self, "areas", areas)
        object.__setattr__(self, "counts", _readonly(counts))
        object.__setattr__(self, "profiles", profiles)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, schema: CovariateSchema) -> "PopulationTable":
        """Длинный формат: одна строка на (профиль, область); дубликаты суммируются"""
        if schema.area_name not in frame.columns:
            raise ParseError(f"Нет столбца области '{schema.area_name}'", {"column": schema.area_name})
        if COUNT_COLUMN not in frame.columns:
            raise ParseError(f"Нет столбца '{COUNT_COLUMN}'", {"column": COUNT_COLUMN})
        missing = [name for name in schema.population_names if name not in frame.columns]
        if missing:
            raise SchemaError(f"Нет столбцов ковариат населения: {missing}", {"columns": missing})
        if len(frame) == 0:
            raise ValidationError("Общая численность населения равна нулю")
        area = _clean(frame[schema.area_name])
        empty_area = np.flatnonzero((area == "").to_numpy())
        if empty_area.size:
            row = int(empty_area[0]) + 1
            raise ParseError(f"Пропущена область, строка {row}", {"row": row, "column": schema.area_name})
        count = _parse_float(frame[COUNT_COLUMN], COUNT_COLUMN, ParseError)
        negative = np.flatnonzero(count < 0)
        if negative.size:
            row = int(negative[0]) + 1
            raise ValidationError(f"Отрицательная численность, строка {row}", {"row": row, "column": COUNT_COLUMN})
        areas = tuple(sorted(set(area.tolist()), key=natural_key))
        area_index = {a: k for k, a in enumerate(areas)}
        if schema.population_vars:
            codes = tuple(_encode_levels(frame[var.name], var) for var in schema.population_vars)
            profile_index = np.ravel_multi_index(codes, schema.population_dims)
        else:
            profile_index = np.zeros(len(frame), dtype=np.int64)
        n_profiles = int(np.prod(schema.population_dims)) if schema.population_vars else 1
        counts = np.zeros((n_profiles, len(areas)))
        np.add.at(counts, (profile_index, area.map(area_index).to_numpy(dtype=np.int64)), count)
        return cls(schema, areas, counts)

    @property
    def n_areas(self) -> int:
        return len(self.areas)

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    def area_totals(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    def area_index(self, area: str) -> int:
        try:
            return self.areas.index(str(area))
        except ValueError:
            raise ValidationError(f"Область '{area}' отсутствует в таблице населения", {"area": str(area)})

    def cell_count(self, profile: Profile, area: str) -> float:
        try:
            row = self.profiles.index(tuple(profile))
        except ValueError:
            raise SchemaError(f"Неизвестный профиль {profile}", {"profile": list(profile)})
        return float(self.counts[row, self.area_index(area)])

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for p, profile in enumerate(self.profiles):
            for a, area in enumerate(self.areas):
                rows.append((area, self.counts[p, a]) + tuple(profile))
        return pd.DataFrame(rows, columns=[self.schema.area_name, COUNT_COLUMN] + list(self.schema.population_names))


@dataclass(frozen=True)
class AreaShares:
    """p(профиль → область) = Pr(A=j | X^P) и маргинальные Pr(A=j)"""

    areas: Tuple[str, ...]
    profiles: Tuple[Profile, ...]
    shares: np.ndarray
    marginal: np.ndarray
    zero_profiles: Tuple[Profile, ...]
    profile_rows: Mapping[int, int]

    def share_for(self, profile: Profile) -> Optional[np.ndarray]:
        try:
            return self.shares[self.profiles.index(tuple(profile))]
        except ValueError:
            return None

    def lookup(self, profile_index: np.ndarray) -> np.ndarray:
        """Матрица (n, J) долей по номерам профилей; NaN для профилей с нулевой численностью"""
        out = np.full((len(profile_index), len(self.areas)), np.nan)
        for k, idx in enumerate(profile_index):
            row = self.profile_rows.get(int(idx))
            if row is not None:
                out[k] = self.shares[row]
        return out


def population_area_shares(table: PopulationTable) -> AreaShares:
    """Доли областей для каждого профиля X^P с положительной численностью"""
    totals = table.counts.sum(axis=1)
    positive = np.flatnonzero(totals > 0)
    shares = table.counts[positive] / totals[positive, None]
    marginal = table.area_totals() / table.total
    zero_profiles = tuple(table.profiles[i] for i in np.flatnonzero(totals <= 0))
    if zero_profiles:
        LogService.log("DEBUG", f"Профилей с нулевой численностью: {len(zero_profiles)}", source="DataModel")
    return AreaShares(
        areas=table.areas,
        profiles=tuple(table.profiles[i] for i in positive),
        shares=_readonly(shares),
        marginal=_readonly(marginal),
        zero_profiles=zero_profiles,
        profile_rows={int(i): k for k, i in enumerate(positive)},
    )


def check_compatible(survey: SurveyDataset, table: PopulationTable) -> None:
    """Общая схема X^P и области опроса ⊆ области населения"""
    if survey.schema.population_vars != table.schema.population_vars:
        raise SchemaError("Схемы X^P опроса и таблицы населения различаются")
    unknown = sorted(set(survey.observed_areas()) - set(table.areas), key=natural_key)
    if unknown:
        raise ValidationError(f"Области опроса отсутствуют в таблице населения: {unknown}", {"areas": unknown})


@dataclass(frozen=True)
class OverlapReport:
    """Диагностика перекрытия"""

    missing_cells: Dict[str, List[Profile]]
    partial_profiles: Dict[Profile, List[str]]
    unsupported_profiles: List[Profile]

    @property
    def sampling_overlap_concern(self) -> bool:
        """Профили с населением, но без респондентов в области"""
        return any(self.missing_cells.values()) or bool(self.unsupported_profiles)

    @property
    def area_overlap_concern(self) -> bool:
        """Профили, которые наблюдаются в опросе не во всех областях"""
        return any(self.partial_profiles.values())

    @property
    def is_empty(self) -> bool:
        return not (self.sampling_overlap_concern or self.area_overlap_concern)


def check_overlap(survey: SurveyDataset, table: PopulationTable) -> OverlapReport:
    check_compatible(survey, table)
    n_profiles = len(table.profiles)
    survey_counts = np.zeros((n_profiles, table.n_areas))
    area_idx = np.array([table.areas.index(a) for a in survey.area], dtype=np.int64)
    np.add.at(survey_counts, (survey.population_index(), area_idx), 1.0)

    missing_cells: Dict[str, List[Profile]] = {}
    for a, area in enumerate(table.areas):
        cells = [table.profiles[p] for p in range(n_profiles) if table.counts[p, a] > 0 and survey_counts[p, a] == 0]
        if cells:
            missing_cells[area] = cells

    partial_profiles: Dict[Profile, List[str]] = {}
    pop_totals = table.counts.sum(axis=1)
    for p in range(n_profiles):
        if pop_totals[p] <= 0 and survey_counts[p].sum() == 0:
            continue
        absent = [table.areas[a] for a in range(table.n_areas) if survey_counts[p, a] == 0]
        if absent:
            partial_profiles[table.profiles[p]] = absent

    unsupported = [table.profiles[p] for p in range(n_profiles) if pop_totals[p] <= 0 and survey_counts[p].sum() > 0]
    report = OverlapReport(missing_cells, partial_profiles, unsupported)
    if not report.is_empty:
        LogService.log(
            "WARNING",
            f"Перекрытие: {sum(len(v) for v in missing_cells.values())} пустых ячеек, "
            f"{len(partial_profiles)} профилей не во всех областях",
            source="DataModel",
        )
    return report


def _read_csv(path: Union[str, Path]) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise ParseError(f"Файл не найден: {path}", {"path": str(path)})
    try:
        return pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8-sig", skipinitialspace=True)
    except pd.errors.EmptyDataError:
        return pd.DataFrame()
    except (pd.errors.ParserError, UnicodeDecodeError) as e:
        raise ParseError(f"Не удалось разобрать {path}: {e}", {"path": str(path)})


def load_survey(path: Union[str, Path], schema: CovariateSchema) -> SurveyDataset:
    frame = _read_csv(path)
    if frame.empty and len(frame.columns) == 0:
        raise ParseError(f"Пустой файл опроса: {path}", {"path": str(path)})
    dataset = SurveyDataset.from_frame(frame, schema)
    LogService.log("INFO", f"Опрос загружен: {dataset.n} респондентов, {len(dataset.observed_areas())} областей", source="DataModel")
    return dataset


def load_population(path: Union[str, Path], schema: CovariateSchema) -> PopulationTable:
    frame = _read_csv(path)
    if len(frame.columns) == 0:
        raise ValidationError(f"Пустой файл населения: {path}", {"path": str(path)})
    table = PopulationTable.from_frame(frame, schema)
    LogService.log("INFO", f"Население загружено: {len(table.profiles)} профилей, {table.n_areas} областей", source="DataModel")
    return table


def save_population(table: PopulationTable, path: Union[str, Path]) -> None:
    table.to_frame().to_csv(path, index=False, float_format="%.17g")
