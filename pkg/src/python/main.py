#!/usr/bin/env python3
"""
SAWT — Small-Area Weighting Toolkit
Командная строка: estimate, diagnose, simulate, validate
"""

import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional

# Добавляем путь к модулям проекта
sys.path.append(str(Path(__file__).parent))

from core.config_manager import ConfigManager  # noqa: E402
from core.errors import SAEError  # noqa: E402
from core.run_manager import RunManager  # noqa: E402
from services.log_service import LogService  # noqa: E402
from services.output_service import OutputService  # noqa: E402

COMMANDS = ("estimate", "diagnose", "simulate", "validate")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON-файл конфигурации")
    common.add_argument("--out", help="Папка результатов")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("--svg", action="store_true", default=None, help="Записать SVG-диаграмму")
    common.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"])

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--survey", help="CSV с микроданными опроса")
    data.add_argument("--population", help="CSV с численностью населения по ячейкам")

    estimator = argparse.ArgumentParser(add_help=False)
    estimator.add_argument("--lambda", dest="lam", type=float, help="Сила гребневого штрафа")
    estimator.add_argument("--bootstrap", type=int, help="Число бутстреп-повторов, 0 выключает")
    estimator.add_argument("--trim-quantile", type=float)
    estimator.add_argument("--emit-weights", action="store_true", default=None)

    diagnostics = argparse.ArgumentParser(add_help=False)
    diagnostics.add_argument("--epsilon", type=float, help="Граница эквивалентности ε")
    diagnostics.add_argument("--alpha", type=float)

    parser = argparse.ArgumentParser(prog="sawt", description="Оценки малых областей синтетическими весами")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("estimate", parents=[common, data, estimator], help="Оценки по всем областям")
    sub.add_parser("diagnose", parents=[common, data, diagnostics], help="Проверка игнорируемости области")
    sub.add_parser("simulate", parents=[common, estimator], help="Популяция-оракул и Монте-Карло")
    validate = sub.add_parser("validate", parents=[common], help="Сравнение оценок с истинными значениями")
    validate.add_argument("--estimates", nargs="+", help="CSV с оценками (area, estimate[, method])")
    validate.add_argument("--truth", help="CSV с истинными значениями (area, truth)")
    return parser


def cli_overrides(args: argparse.Namespace) -> dict:
    """Флаги командной строки в виде ключей конфигурации"""
    get = lambda name: getattr(args, name, None)  # noqa: E731
    overrides = {
        "paths.out": get("out"),
        "paths.survey": get("survey"),
        "paths.population": get("population"),
        "paths.estimates": get("estimates"),
        "paths.truth": get("truth"),
        "seed": get("seed"),
        "threads": get("threads"),
        "output.svg": get("svg"),
        "logging.level": get("log_level"),
        "estimator.lambda": get("lam"),
        "estimator.trim_quantile": get("trim_quantile"),
        "estimator.emit_weights": get("emit_weights"),
        "diagnostics.epsilon": get("epsilon"),
        "diagnostics.alpha": get("alpha"),
    }
    bootstrap = get("bootstrap")
    if bootstrap is not None:
        overrides["estimator.bootstrap.enabled"] = bootstrap > 0
        overrides["estimator.bootstrap.replicates"] = bootstrap
    return overrides


def setup_logging(log_dir: Path, level: str, command: str = ""):
    LogService.reset()
    LogService.set_level(level)
    LogService.setup_file_logging(log_dir=log_dir, log_filename="sawt.log", run=command)
    LogService.setup_console_logging(min_level=level)


def report_error(error: SAEError, out_dir: Optional[Path]):
    payload = error.to_dict()
    print(json.dumps(payload, ensure_ascii=False, sort_keys=True), file=sys.stderr)
    if out_dir is not None:
        OutputService(out_dir).write_error(payload)


def main(argv: Optional[List[str]] = None) -> int:
    """Точка входа; возвращает код выхода"""
    args = build_parser().parse_args(argv)
    out_dir = Path(args.out) if args.out else None
    try:
        manager = ConfigManager(args.config)
        manager.apply_overrides(cli_overrides(args))
        out_dir = Path(manager.get("paths.out"))
        config = manager.to_run_config()
        setup_logging(config.log_dir, config.log_level, args.command)
        LogService.log("INFO", f"Команда {args.command} запущена", source="Main")
        summary = RunManager(config).run(args.command)
        print(json.dumps(summary, ensure_ascii=False, sort_keys=True))
        LogService.log("INFO", f"Команда {args.command} завершена", source="Main")
        return 0
    except SAEError as e:
        LogService.log("ERROR", f"{type(e).__name__}: {e.message}", source="Main")
        report_error(e, out_dir)
        return e.exit_code
    except Exception as e:
        LogService.log("CRITICAL", f"Непредвиденная ошибка: {e}", source="Main")
        report_error(SAEError(f"Непредвиденная ошибка: {e}", {"type": type(e).__name__}), out_dir)
        return 1


if __name__ == "__main__":
    sys.exit(main())
