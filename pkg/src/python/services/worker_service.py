"""
WorkerService — выполнение независимых задач в пуле потоков
"""
import os
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from typing import Any, Callable, Dict, Hashable, List, Optional, Sequence, Tuple

from services.log_service import LogService


@dataclass
class TaskOutcome:
    key: Hashable
    value: Any = None
    error: Optional[BaseException] = None
    duration: float = 0.0

    @property
    def ok(self) -> bool:
        return self.error is None


class WorkerService:
    """
    Пул потоков для расчётов по областям и повторам Монте-Карло.
    Результаты возвращаются в порядке постановки задач, а не завершения
    """

    def __init__(self, threads: Optional[int] = None, source: str = "WorkerService"):
        self.max_workers = resolve_threads(threads)
        self.source = source

    def run_tasks(
        self,
        tasks: Sequence[Tuple[Hashable, Callable[[], Any]]],
        progress_callback: Optional[Callable[[int, int, Hashable], None]] = None,
    ) -> List[TaskOutcome]:
        """
        Args:
            tasks: Список пар (ключ, функция без аргументов)
            progress_callback: Callback(завершено, всего, ключ)
        """
        if not tasks:
            return []
        total = len(tasks)
        outcomes: Dict[int, TaskOutcome] = {}

        def run_single(position: int, key: Hashable, fn: Callable[[], Any]) -> Tuple[int, TaskOutcome]:
            start_time = time.time()
            try:
                value = fn()
                return position, TaskOutcome(key, value=value, duration=time.time() - start_time)
            except Exception as e:
                return position, TaskOutcome(key, error=e, duration=time.time() - start_time)

        def record(done: int, position: int, outcome: TaskOutcome):
            outcomes[position] = outcome
            if outcome.ok:
                LogService.log("DEBUG", f"Задача {done}/{total} [{outcome.key}] за {outcome.duration:.2f} сек.", source=self.source)
            else:
                LogService.log("WARNING", f"Задача {done}/{total} [{outcome.key}] завершилась ошибкой: {outcome.error}", source=self.source)
            if progress_callback:
                progress_callback(done, total, outcome.key)

        if self.max_workers == 1 or total == 1:
            for i, (key, fn) in enumerate(tasks):
                record(i + 1, *run_single(i, key, fn))
        else:
            with ThreadPoolExecutor(max_workers=self.max_workers) as executor:
                futures = [executor.submit(run_single, i, key, fn) for i, (key, fn) in enumerate(tasks)]
                for done, future in enumerate(as_completed(futures), start=1):
                    record(done, *future.result())

        failed = sum(1 for o in outcomes.values() if not o.ok)
        LogService.log("INFO", f"Задачи завершены: {total - failed} успешно, {failed} ошибок", source=self.source)
        return [outcomes[i] for i in range(total)]


def resolve_threads(threads: Optional[int]) -> int:
    if threads is None or threads <= 0:
        return os.cpu_count() or 1
    return int(threads)
