"""
Менеджер конфигурации прогона
Значения по умолчанию < JSON-файл < переменные окружения (.env) < флаги командной строки
"""

import copy
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

from dotenv import find_dotenv, load_dotenv

from core.data_model import CovariateSchema, Variable
from core.errors import ConfigError, SAEError
from core.estimators import EstimatorConfig
from core.glm import DEFAULT_LAMBDA
from core.oracle import PopulationSpec

ENV_PREFIX = "SAWT_"

DEFAULT_CONFIG: Dict[str, Any] = {
    "paths": {
        "survey": None,
        "population": None,
        "out": "out",
        "estimates": [],
        "truth": None,
    },
    "schema": {
        "outcome": "outcome",
        "area": "area",
        "weight": "weight",
        "variables": [],  # [{"name": ..., "levels": [...], "role": "P" | "S"}]
    },
    "estimator": {
        "lambda": DEFAULT_LAMBDA,
        "membership": "ovr",
        "propensity": "cell",
        "trim_quantile": None,
        "bootstrap": {"enabled": False, "replicates": 500},
        "level": 0.9,
        "xp_vars": None,
        "xs_vars": None,
        "interactions": [],
        "decompose": False,
        "include_direct": True,
        "include_unweighted": False,
        "emit_weights": False,
    },
    "diagnostics": {
        "epsilon": None,
        "alpha": 0.05,
        "robust": True,
    },
    "simulation": {
        "xp_levels": [2, 2],
        "xs_levels": [2],
        "areas": 4,
        "count_range": [50.0, 500.0],
        "outcome_range": [0.1, 0.9],
        "sampling_range": [0.05, 1.0],
        "gamma_shift": 0.0,
        "shift_areas": [0],
        "outcome": "binary",
        "n": [2000],
        "replicates": 0,
        "population_seed": 1,
        "saturated": True,
    },
    "output": {
        "svg": False,
    },
    "seed": 0,
    "threads": None,
    "logging": {
        "level": "INFO",
        "dir": "logs",
    },
}


def _deep_merge(base: Dict[str, Any], update: Mapping[str, Any], path: str = "") -> Dict[str, Any]:
    for key, value in update.items():
        full = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"Неизвестный ключ конфигурации: {full}", {"key": full})
        if isinstance(base[key], dict):
            if not isinstance(value, Mapping):
                raise ConfigError(f"Раздел {full} должен быть объектом", {"key": full})
            _deep_merge(base[key], value, full + ".")
        else:
            base[key] = copy.deepcopy(value)
    return base


@dataclass(frozen=True)
class PathsConfig:
    survey: Optional[Path]
    population: Optional[Path]
    out: Path
    estimates: Tuple[Path, ...]
    truth: Optional[Path]


@dataclass(frozen=True)
class DiagnosticsConfig:
    epsilon: Optional[float]
    alpha: float
    robust: bool


@dataclass(frozen=True)
class SimulationConfig:
    spec: PopulationSpec
    n_values: Tuple[int, ...]
    replicates: int
    population_seed: int
    saturated: bool


@dataclass(frozen=True)
class RunConfig:
    """Проверенная неизменяемая конфигурация прогона"""

    paths: PathsConfig
    schema: Optional[CovariateSchema]
    estimator: EstimatorConfig
    emit_weights: bool
    diagnostics: DiagnosticsConfig
    simulation: SimulationConfig
    seed: int
    threads: Optional[int]
    svg: bool
    log_level: str
    log_dir: Path

    def require_schema(self) -> CovariateSchema:
        if self.schema is None:
            raise ConfigError("В конфигурации не описаны переменные (schema.variables)")
        return self.schema


class ConfigManager:
    """Загрузка, слияние и проверка конфигурации прогона"""

    def __init__(self, config_file: Optional[Path] = None, env_file: Optional[Path] = None, use_env: bool = True):
        self.config_file = Path(config_file) if config_file else None
        self.config = copy.deepcopy(DEFAULT_CONFIG)
        if self.config_file is not None:
            _deep_merge(self.config, self._load_file(self.config_file))
        if use_env:
            self._apply_env(env_file)

    @staticmethod
    def _load_file(path: Path) -> Dict[str, Any]:
        if not path.exists():
            raise ConfigError(f"Файл конфигурации не найден: {path}", {"path": str(path)})
        try:
            with open(path, "r", encoding="utf-8") as f:
                loaded = json.load(f)
        except (json.JSONDecodeError, UnicodeDecodeError) as e:
            raise ConfigError(f"Не удалось разобрать конфигурацию {path}: {e}", {"path": str(path)})
        if not isinstance(loaded, dict):
            raise ConfigError("Конфигурация должна быть JSON-объектом", {"path": str(path)})
        return loaded

    def _apply_env(self, env_file: Optional[Path]):
        if env_file is not None:
            load_dotenv(env_file, override=False)
        else:
            load_dotenv(find_dotenv(usecwd=True), override=False)
        env = {
            "seed": ("SEED", int),
            "threads": ("THREADS", int),
            "logging.level": ("LOG_LEVEL", str),
            "logging.dir": ("LOG_DIR", str),
        }
        for key, (suffix, cast) in env.items():
            raw = os.environ.get(ENV_PREFIX + suffix)
            if raw is None or raw == "":
                continue
            try:
                self.set(key, cast(raw))
            except ValueError:
                raise ConfigError(f"Некорректное значение {ENV_PREFIX}{suffix}: {raw}", {"env": ENV_PREFIX + suffix})

    def get(self, key: str, default: Any = None) -> Any:
        """Значение по пути через точку: get("estimator.lambda")"""
        node: Any = self.config
        for part in key.split("."):
            if not isinstance(node, dict) or part not in node:
                return default
            node = node[part]
        return node

    def set(self, key: str, value: Any):
        parts = key.split(".")
        node = self.config
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                raise ConfigError(f"Неизвестный ключ конфигурации: {key}", {"key": key})
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(f"Неизвестный ключ конфигурации: {key}", {"key": key})
        node[parts[-1]] = value

    def apply_overrides(self, overrides: Mapping[str, Any]):
        """Флаги командной строки; None означает «не задано»"""
        for key, value in overrides.items():
            if value is not None:
                self.set(key, value)

    def save_config(self, path: Path):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.config, f, indent=2, ensure_ascii=False, sort_keys=True)

    def _schema(self) -> Optional[CovariateSchema]:
        section = self.get("schema")
        variables = section.get("variables") or []
        if not variables:
            return None
        population, survey, seen = [], [], set()
        for entry in variables:
            if not isinstance(entry, Mapping) or set(entry) - {"name", "levels", "role"}:
                raise ConfigError(f"Описание переменной должно содержать name, levels, role: {entry}")
            name, levels, role = entry.get("name"), entry.get("levels"), str(entry.get("role", "")).upper()
            if not name or not levels:
                raise ConfigError(f"У переменной нет имени или уровней: {entry}")
            if name in seen:
                raise ConfigError(f"Переменная '{name}' объявлена дважды", {"variable": name})
            seen.add(name)
            if role not in ("P", "S"):
                raise ConfigError(f"Роль переменной '{name}' должна быть P или S: {role}", {"variable": name})
            try:
                variable = Variable(str(name), tuple(str(l) for l in levels))
            except SAEError as e:
                raise ConfigError(e.message, e.details)
            (population if role == "P" else survey).append(variable)
        try:
            return CovariateSchema(
                tuple(population), tuple(survey),
                outcome_name=section["outcome"], area_name=section["area"], weight_name=section["weight"],
            )
        except SAEError as e:
            raise ConfigError(e.message, e.details)

    def _estimator(self, schema: Optional[CovariateSchema]) -> EstimatorConfig:
        est = self.get("estimator")
        boot = est["bootstrap"]
        replicates = int(boot.get("replicates", 0)) if boot.get("enabled") else 0
        xp, xs = est["xp_vars"], est["xs_vars"]
        interactions = tuple(tuple(t) for t in est["interactions"])
        if schema is not None:
            for names, role in ((xp or (), "P"), (xs or (), "S")):
                for name in names:
                    if name not in (schema.population_names if role == "P" else schema.survey_names):
                        raise ConfigError(f"Переменная '{name}' не объявлена с ролью {role}", {"variable": name})
            known = set(schema.population_names + schema.survey_names)
            for term in interactions:
                if not set(term) <= known:
                    raise ConfigError(f"Взаимодействие использует необъявленные переменные: {list(term)}")
        return EstimatorConfig(
            xp_vars=None if xp is None else tuple(xp),
            xs_vars=None if xs is None else tuple(xs),
            interactions=interactions,
            lam=float(est["lambda"]),
            membership=est["membership"],
            trim_quantile=est["trim_quantile"],
            bootstrap=replicates,
            level=float(est["level"]),
            seed=int(self.get("seed")),
            propensity=est["propensity"],
            decompose=bool(est["decompose"]),
            include_direct=bool(est["include_direct"]),
            include_unweighted=bool(est["include_unweighted"]),
            threads=self.get("threads"),
        )

    def _simulation(self) -> SimulationConfig:
        sim = self.get("simulation")
        spec = PopulationSpec(
            xp_levels=tuple(sim["xp_levels"]),
            xs_levels=tuple(sim["xs_levels"]),
            n_areas=int(sim["areas"]),
            count_range=tuple(sim["count_range"]),
            outcome_range=tuple(sim["outcome_range"]),
            sampling_range=tuple(sim["sampling_range"]),
            gamma_shift=float(sim["gamma_shift"]),
            shift_areas=tuple(sim["shift_areas"]),
            outcome=sim["outcome"],
        )
        n_values = tuple(int(n) for n in sim["n"])
        if not n_values or min(n_values) < 1:
            raise ConfigError(f"Объёмы выборки должны быть положительными: {sim['n']}")
        if int(sim["replicates"]) < 0:
            raise ConfigError(f"Число повторов не может быть отрицательным: {sim['replicates']}")
        return SimulationConfig(spec, n_values, int(sim["replicates"]), int(sim["population_seed"]), bool(sim["saturated"]))

    def to_run_config(self) -> RunConfig:
        try:
            return self._build()
        except (TypeError, ValueError, KeyError) as e:
            raise ConfigError(f"Некорректное значение в конфигурации: {e}")

    def _build(self) -> RunConfig:
        seed = self.get("seed")
        if not isinstance(seed, int) or seed < 0:
            raise ConfigError(f"seed должен быть неотрицательным целым: {seed}")
        threads = self.get("threads")
        if threads is not None and (not isinstance(threads, int) or threads < 1):
            raise ConfigError(f"threads должен быть положительным целым: {threads}")
        diag = self.get("diagnostics")
        alpha = float(diag["alpha"])
        if not 0.0 < alpha < 0.5:
            raise ConfigError(f"α должен быть в (0, 0.5): {alpha}")
        epsilon = diag["epsilon"]
        if epsilon is not None and not float(epsilon) > 0:
            raise ConfigError(f"ε должен быть положительным: {epsilon}")
        level = str(self.get("logging.level")).upper()
        if level not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ConfigError(f"Неизвестный уровень журнала: {level}")

        paths = self.get("paths")
        schema = self._schema()
        return RunConfig(
            paths=PathsConfig(
                survey=Path(paths["survey"]) if paths["survey"] else None,
                population=Path(paths["population"]) if paths["population"] else None,
                out=Path(paths["out"]),
                estimates=tuple(Path(p) for p in paths["estimates"]),
                truth=Path(paths["truth"]) if paths["truth"] else None,
            ),
            schema=schema,
            estimator=self._estimator(schema),
            emit_weights=bool(self.get("estimator.emit_weights")),
            diagnostics=DiagnosticsConfig(None if epsilon is None else float(epsilon), alpha, bool(diag["robust"])),
            simulation=self._simulation(),
            seed=seed,
            threads=threads,
            svg=bool(self.get("output.svg")),
            log_level=level,
            log_dir=Path(self.get("logging.dir")),
        )
