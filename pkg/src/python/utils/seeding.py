"""
Детерминированное выведение генераторов случайных чисел

Вся случайность прогона выводится из одного seed конфигурации:
    derive_rng(seed, "bootstrap", area, b)   повтор бутстрепа b для области area
    derive_rng(seed, "mc", n, r)             повтор Монте-Карло r при объёме выборки n
    derive_rng(seed, "sample")               выборка в команде simulate
Результат не зависит от числа потоков и порядка завершения задач.
"""

import zlib
from typing import Union

import numpy as np

Key = Union[str, int]


def _key_to_int(key: Key) -> int:
    if isinstance(key, (int, np.integer)) and key >= 0:
        return int(key)
    return zlib.crc32(str(key).encode("utf-8"))


def derive_seed_sequence(seed: int, *keys: Key) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed)] + [_key_to_int(k) for k in keys])


def derive_rng(seed: int, *keys: Key) -> np.random.Generator:
    """Генератор для задачи, однозначно заданной seed и ключами"""
    return np.random.default_rng(derive_seed_sequence(seed, *keys))
