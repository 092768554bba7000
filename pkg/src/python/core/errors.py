"""
Исключения SAWT
Иерархия ошибок с кодами выхода для CLI
"""

from typing import Any, Dict, Optional


class SAEError(Exception):
    """Базовая ошибка оценивания малых областей"""

    exit_code = 1

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = dict(details or {})

    def to_dict(self) -> Dict[str, Any]:
        """Машиночитаемое представление ошибки"""
        return {
            "error": type(self).__name__,
            "message": self.message,
            "exit_code": self.exit_code,
            "details": self.details,
        }


class ConfigError(SAEError):
    """Ошибка конфигурации"""

    exit_code = 2


class DataError(SAEError):
    """Ошибка входных данных"""

    exit_code = 3


class SchemaError(DataError):
    """Значение не соответствует схеме ковариат"""


class ParseError(DataError):
    """Файл не удалось разобрать"""


class ValidationError(DataError):
    """Нарушен инвариант данных"""


class NoDataError(DataError):
    """В области нет респондентов"""


class EmptyClassError(DataError):
    """Класс мультиномиальной модели без наблюдений"""


class DegenerateAreaError(DataError):
    """Сумма синтетических весов равна нулю"""


class NumericalError(SAEError):
    """Численная ошибка"""

    exit_code = 4


class OverlapError(NumericalError):
    """Нарушено условие перекрытия (нулевая условная вероятность)"""


class ConvergenceError(NumericalError):
    """Оптимизатор не дал конечного решения"""
