"""
Построители тестовых данных и переборный оптимизатор
"""

from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from core.data_model import CovariateSchema, PopulationTable, SurveyDataset


def make_schema(population: Optional[Mapping] = None, survey: Optional[Mapping] = None) -> CovariateSchema:
    population = {"sex": ["m", "f"]} if population is None else population
    survey = {"pid": ["d", "r"]} if survey is None else survey
    return CovariateSchema.from_levels(population, survey)


def make_survey(schema: CovariateSchema, rows: Sequence[Mapping[str, str]], weights: Optional[Sequence[float]] = None) -> SurveyDataset:
    frame = pd.DataFrame([{k: str(v) for k, v in row.items()} for row in rows])
    if weights is not None:
        frame[schema.weight_name] = [repr(float(w)) for w in weights]
    return SurveyDataset.from_frame(frame, schema)


def make_population(schema: CovariateSchema, cells: Mapping[Tuple[str, ...], float]) -> PopulationTable:
    """cells: (уровни X^P..., область) -> численность"""
    rows = []
    for key, count in cells.items():
        *profile, area = key
        row = {schema.area_name: area, "count": str(count)}
        row.update({name: level for name, level in zip(schema.population_names, profile)})
        rows.append(row)
    return PopulationTable.from_frame(pd.DataFrame(rows), schema)


def survey_rows(areas: Sequence[str], sex: Sequence[str], pid: Sequence[str], outcome: Sequence[float]) -> List[Dict[str, str]]:
    return [
        {"area": a, "outcome": repr(float(y)), "sex": s, "pid": p}
        for a, s, p, y in zip(areas, sex, pid, outcome)
    ]


def grid_minimize(objective: Callable[[np.ndarray], np.ndarray], dim: int, radius: float = 6.0, points: int = 41, rounds: int = 40) -> np.ndarray:
    """
    Переборная минимизация с сужением сетки.
    objective принимает массив (m, dim) точек и возвращает (m,) значений
    """
    center = np.zeros(dim)
    for _ in range(rounds):
        axes = [np.linspace(c - radius, c + radius, points) for c in center]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
        center = grid[np.argmin(objective(grid))]
        radius *= 0.5
    return center
