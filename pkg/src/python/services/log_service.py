"""
LogService — сервис логирования расчётов и подписки на записи журнала
"""
import datetime
import inspect
import sys
import traceback
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

from loguru import logger


class LogService:
    _instance = None
    _subscribers: List[Callable[[Dict[str, Any]], None]] = []
    _recent_logs: List[Dict[str, Any]] = []
    _max_recent = 500
    _level = "INFO"
    _levels = ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]
    _sink_ids: List[int] = []

    def __new__(cls, *args, **kwargs):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    @classmethod
    def _level_no(cls, level: str) -> int:
        try:
            return cls._levels.index(level.upper())
        except ValueError:
            return cls._levels.index("INFO")

    @classmethod
    def log(cls, level: str, message: str, source: Optional[str] = None, stack: Optional[str] = None):
        level = level.upper()
        if cls._level_no(level) < cls._level_no(cls._level):
            return
        now = datetime.datetime.now()
        if source is None:
            # Источник вызова (файл:строка)
            frame = inspect.currentframe()
            outer = inspect.getouterframes(frame, 2)
            if len(outer) > 1:
                src = outer[1]
                source = f"{Path(src.filename).name}:{src.lineno}"
            else:
                source = ""
        if stack is None and level in ("ERROR", "CRITICAL"):
            stack = traceback.format_exc()
            if stack == "NoneType: None\n":
                stack = None
        log_entry = {
            "date": now.strftime("%d-%m-%Y"),
            "time": now.strftime("%H:%M:%S"),
            "level": level,
            "source": source or "",
            "message": message,
            "stack": stack,
        }
        cls._recent_logs.append(log_entry)
        if len(cls._recent_logs) > cls._max_recent:
            cls._recent_logs.pop(0)
        for cb in list(cls._subscribers):
            try:
                cb(log_entry)
            except Exception:
                pass

    @classmethod
    def subscribe(cls, callback: Callable[[Dict[str, Any]], None]):
        cls._subscribers.append(callback)

    @classmethod
    def unsubscribe(cls, callback: Callable[[Dict[str, Any]], None]):
        if callback in cls._subscribers:
            cls._subscribers.remove(callback)

    @classmethod
    def get_recent(cls, n: int = 100, level: Optional[str] = None) -> List[Dict[str, Any]]:
        entries = cls._recent_logs
        if level is not None:
            entries = [e for e in entries if e["level"] == level.upper()]
        return entries[-n:]

    @classmethod
    def set_level(cls, level: str):
        if level.upper() in cls._levels:
            cls._level = level.upper()

    @classmethod
    def reset(cls):
        """Снимает подписчиков и sinks loguru, очищает буфер"""
        cls._subscribers.clear()
        cls._recent_logs.clear()
        for sink_id in cls._sink_ids:
            try:
                logger.remove(sink_id)
            except ValueError:
                pass
        cls._sink_ids.clear()
        cls._level = "INFO"

    @classmethod
    def format_log(cls, log_entry: Dict[str, Any]) -> str:
        stack_part = f"\n{log_entry['stack']}" if log_entry.get("stack") else ""
        return f"[{log_entry['date']} {log_entry['time']}] [{log_entry['level']}] [{log_entry['source']}] {log_entry['message']}{stack_part}"

    @classmethod
    def setup_file_logging(cls, log_dir=None, log_filename="sawt.log", run: str = ""):
        """Подписчик, который пишет журнал в файлы через loguru; run помечает записи командой прогона"""
        if log_dir is None:
            log_dir = Path.home() / ".sawt" / "logs"
        else:
            log_dir = Path(log_dir)
        log_dir.mkdir(parents=True, exist_ok=True)
        logger.remove()
        logger.configure(extra={"run": ""})
        bound = logger.bind(run=run)
        cls._sink_ids.append(logger.add(
            log_dir / log_filename,
            rotation="10 MB",
            retention="30 days",
            compression="zip",
            format="{time:YYYY-MM-DD HH:mm:ss} | {level} | {extra[run]} | {message}",
            level="DEBUG",
        ))
        # JSONL для последующего разбора прогонов
        jsonl_file = log_dir / f"run_{datetime.datetime.now().strftime('%Y%m%d_%H%M%S')}.jsonl"
        cls._sink_ids.append(logger.add(jsonl_file, level="DEBUG", serialize=True, encoding="utf-8"))
        # Ошибки отдельно
        cls._sink_ids.append(logger.add(
            log_dir.joinpath("errors_{time:YYYY-MM-DD}.log"),
            rotation="1 day",
            retention="90 days",
            compression="zip",
            format="{time:YYYY-MM-DD HH:mm:ss} | {level} | {message}",
            level="ERROR",
        ))

        def file_log_subscriber(log_entry):
            msg = f"[{log_entry['source']}] {log_entry['message']}"
            if log_entry.get("stack"):
                msg += f"\n{log_entry['stack']}"
            bound.log(log_entry["level"], msg)

        cls.subscribe(file_log_subscriber)

    @classmethod
    def setup_console_logging(cls, min_level="INFO"):
        """Подписчик, который выводит журнал в stderr (stdout занят результатами команд)"""
        min_level_num = cls._level_no(min_level)

        def console_log_subscriber(log_entry):
            if cls._level_no(log_entry["level"]) < min_level_num:
                return
            print(cls.format_log(log_entry), file=sys.stderr)

        cls.subscribe(console_log_subscriber)
