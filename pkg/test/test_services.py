"""
Тесты сервисов: журнал, пул потоков, запись файлов, зёрна генераторов
"""

import json
import threading
import time

import numpy as np
import pytest

from services.log_service import LogService
from services.output_service import OutputService
from services.worker_service import WorkerService, resolve_threads
from utils.seeding import derive_rng


def test_log_level_filter_and_recent():
    received = []
    LogService.subscribe(received.append)
    LogService.set_level("WARNING")
    LogService.log("INFO", "пропущено", source="Test")
    LogService.log("WARNING", "область без респондентов", source="Test")
    assert [e["message"] for e in received] == ["область без респондентов"]
    assert LogService.get_recent(10, level="WARNING")[-1]["source"] == "Test"
    assert "[WARNING] [Test]" in LogService.format_log(received[0])


def test_error_entry_captures_traceback():
    received = []
    LogService.subscribe(received.append)
    try:
        raise RuntimeError("сбой")
    except RuntimeError:
        LogService.log("ERROR", "ошибка расчёта", source="Test")
    assert "RuntimeError" in received[0]["stack"]


def test_failing_subscriber_does_not_break_logging():
    received = []

    def broken(entry):
        raise ValueError("подписчик упал")

    LogService.subscribe(broken)
    LogService.subscribe(received.append)
    LogService.log("INFO", "дальше", source="Test")
    assert len(received) == 1


def test_file_logging_marks_run(tmp_path):
    LogService.setup_file_logging(log_dir=tmp_path, log_filename="sawt.log", run="estimate")
    LogService.log("INFO", "запись в файл", source="Test")
    LogService.reset()
    text = (tmp_path / "sawt.log").read_text(encoding="utf-8")
    assert "| estimate | [Test] запись в файл" in text
    assert list(tmp_path.glob("run_*.jsonl"))


def test_console_logging_goes_to_stderr(capsys):
    LogService.setup_console_logging(min_level="INFO")
    LogService.log("DEBUG", "тихо", source="Test")
    LogService.log("INFO", "громко", source="Test")
    captured = capsys.readouterr()
    assert captured.out == ""
    assert "громко" in captured.err and "тихо" not in captured.err


def test_worker_keeps_submission_order():
    def task(k):
        def run():
            time.sleep(0.01 * (5 - k))
            return k * k
        return run

    outcomes = WorkerService(threads=4).run_tasks([(k, task(k)) for k in range(5)])
    assert [o.key for o in outcomes] == list(range(5))
    assert [o.value for o in outcomes] == [0, 1, 4, 9, 16]


def test_worker_captures_errors_per_task():
    def fail():
        raise ValueError("плохая область")

    outcomes = WorkerService(threads=2).run_tasks([("A", lambda: 1), ("B", fail), ("C", lambda: 3)])
    assert [o.ok for o in outcomes] == [True, False, True]
    assert isinstance(outcomes[1].error, ValueError)
    assert outcomes[2].value == 3


def test_worker_single_thread_runs_inline():
    seen = []
    WorkerService(threads=1).run_tasks([(k, lambda: seen.append(threading.get_ident())) for k in range(3)])
    assert set(seen) == {threading.get_ident()}
    assert WorkerService(threads=2).run_tasks([]) == []
    assert resolve_threads(None) >= 1
    assert resolve_threads(3) == 3


def test_worker_progress_callback():
    calls = []
    WorkerService(threads=2).run_tasks([(k, lambda: None) for k in range(4)], progress_callback=lambda d, t, k: calls.append((d, t)))
    assert sorted(calls) == [(1, 4), (2, 4), (3, 4), (4, 4)]


def test_csv_exact_floats_and_missing(tmp_path):
    out = OutputService(tmp_path)
    out.write_csv("t.csv", [{"a": 0.1, "b": None}, {"a": 1 / 3, "b": 2.0}], ["a", "b"])
    lines = (tmp_path / "t.csv").read_bytes().decode("utf-8").split("\n")
    assert lines[0] == "a,b"
    assert float(lines[1].split(",")[0]) == 0.1
    assert lines[1].split(",")[1] == ""
    assert float(lines[2].split(",")[0]) == 1 / 3
    assert out.written == ["t.csv"]


def test_json_is_sorted_and_finite(tmp_path):
    out = OutputService(tmp_path)
    out.write_json("s.json", {"b": np.float64(np.nan), "a": np.arange(2), "c": (tmp_path / "x")})
    payload = json.loads((tmp_path / "s.json").read_text(encoding="utf-8"))
    assert list(payload) == ["a", "b", "c"]
    assert payload["a"] == [0, 1] and payload["b"] is None


def test_svg_is_deterministic(tmp_path):
    for name in ("one.svg", "two.svg"):
        OutputService(tmp_path).write_scatter_svg(name, [0.1, 0.5, 0.9], [0.2, 0.4, 0.8], "x", "y")
    assert (tmp_path / "one.svg").read_bytes() == (tmp_path / "two.svg").read_bytes()


def test_error_file_written_and_cleared(tmp_path):
    out = OutputService(tmp_path / "out")
    out.write_error({"error": "DataError", "exit_code": 3})
    assert (tmp_path / "out" / "error.json").exists()
    out.clear_error()
    assert not (tmp_path / "out" / "error.json").exists()
    out.clear_error()


def test_derived_streams():
    a = derive_rng(7, "bootstrap", "A", 0).random(5)
    assert np.array_equal(a, derive_rng(7, "bootstrap", "A", 0).random(5))
    assert not np.array_equal(a, derive_rng(7, "bootstrap", "A", 1).random(5))
    assert not np.array_equal(a, derive_rng(7, "bootstrap", "B", 0).random(5))
    assert not np.array_equal(a, derive_rng(8, "bootstrap", "A", 0).random(5))


@pytest.mark.parametrize("level", ["DEBUG", "INFO", "ERROR"])
def test_set_level_accepts_known_levels(level):
    LogService.set_level(level.lower())
    assert LogService._level == level
    LogService.set_level("LOUD")
    assert LogService._level == level
