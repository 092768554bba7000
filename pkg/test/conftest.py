"""
Общие фикстуры тестов SAWT
"""

import sys
from pathlib import Path

import pytest

# Добавляем путь к модулям
ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src" / "python"))
sys.path.insert(0, str(Path(__file__).resolve().parent))

from services.log_service import LogService  # noqa: E402

from helpers import make_population, make_schema, make_survey  # noqa: E402


@pytest.fixture(autouse=True)
def clean_log_service():
    """Каждый тест начинается с пустого журнала без sinks"""
    LogService.reset()
    yield
    LogService.reset()


@pytest.fixture
def schema():
    return make_schema()


@pytest.fixture
def two_area_data(schema):
    """Опрос из двух областей с перекосом X^S по областям"""
    rows = []
    mixes = (
        ("A", {("m", "r"): 6, ("m", "d"): 2, ("f", "r"): 3, ("f", "d"): 3}),
        ("B", {("m", "r"): 2, ("m", "d"): 6, ("f", "r"): 3, ("f", "d"): 3}),
    )
    for area, mix in mixes:
        for (sex, pid), count in mix.items():
            for k in range(count):
                outcome = int(k % 3 != 0) if pid == "r" else int(k % 3 == 0)
                rows.append({"area": area, "outcome": str(outcome), "sex": sex, "pid": pid})
    survey = make_survey(schema, rows)
    table = make_population(schema, {("m", "A"): 40, ("f", "A"): 60, ("m", "B"): 70, ("f", "B"): 30})
    return survey, table
