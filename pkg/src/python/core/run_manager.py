"""
Менеджер прогонов
Команды estimate, diagnose, simulate, validate: чтение входов, расчёт, запись результатов
"""

import threading
from dataclasses import replace
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import numpy as np
import pandas as pd

from core.config_manager import RunConfig
from core.data_model import check_overlap, load_population, load_survey, natural_key
from core.diagnostics import CONVENTIONAL_CAVEAT, ignorability_panel
from core.errors import ConfigError, ParseError, SAEError, ValidationError
from core.estimators import SYNTHETIC_METHODS, EstimatorConfig, Method, estimate_all_areas
from core.oracle import (
    draw_sample,
    error_correlation,
    evaluate_decomposition,
    evaluate_identification,
    fit_metrics,
    generate_population,
    run_monte_carlo,
    saturated_interactions,
    true_area_means,
)
from services.log_service import LogService
from services.output_service import OutputService

RESULT_COLUMNS = ["area", "n_area", "method", "estimate", "se", "ci_lower", "ci_upper", "ess", "direct_part", "indirect_part"]
WEIGHT_COLUMNS = ["area", "respondent_id", "zeta", "p_pop", "inv_prop", "weight"]
PANEL_COLUMNS = [
    "area", "delta", "se", "ci_lower", "ci_upper", "p_conventional", "p_tost", "flag",
    "df", "n_area", "tost_lower", "tost_upper", "equivalent",
]
METRIC_COLUMNS = ["set", "rmse", "mae", "mean_error", "correlation", "n_areas"]
MC_COLUMNS = ["n", "replicate", "rmse", "mae", "mean_error", "correlation", "median_synthetic_se", "median_direct_se", "unweighted_rmse"]


class RunStatus(Enum):
    """Статусы прогона"""
    PENDING = "pending"
    RUNNING = "running"
    DONE = "done"
    ERROR = "error"


def _optional(value):
    return "" if value is None else value


def result_rows(results) -> List[Dict[str, Any]]:
    return [
        {
            "area": r.area,
            "n_area": r.n_area,
            "method": r.method.value,
            "estimate": r.estimate,
            "se": r.se,
            "ci_lower": r.lower,
            "ci_upper": r.upper,
            "ess": r.ess,
            "direct_part": _optional(r.direct_part),
            "indirect_part": _optional(r.indirect_part),
        }
        for r in results
    ]


class RunManager:
    """Выполняет одну команду по проверенной конфигурации"""

    def __init__(self, config: RunConfig, progress_callback: Optional[Callable[[int, str], None]] = None):
        self.config = config
        self.output = OutputService(config.paths.out)
        self.progress_callback = progress_callback
        self.status = RunStatus.PENDING
        self._state_lock = threading.Lock()

    def _progress(self, percent: int, message: str):
        LogService.log("INFO", message, source="RunManager")
        if self.progress_callback:
            self.progress_callback(percent, message)

    def _set_status(self, status: RunStatus):
        with self._state_lock:
            self.status = status

    def run(self, command: str) -> Dict[str, Any]:
        commands = {
            "estimate": self.cmd_estimate,
            "diagnose": self.cmd_diagnose,
            "simulate": self.cmd_simulate,
            "validate": self.cmd_validate,
        }
        if command not in commands:
            raise ConfigError(f"Неизвестная команда: {command}")
        self._set_status(RunStatus.RUNNING)
        try:
            summary = commands[command]()
        except Exception:
            self._set_status(RunStatus.ERROR)
            raise
        self.output.clear_error()
        self._set_status(RunStatus.DONE)
        return {"command": command, "outputs": list(self.output.written), **summary}

    def _estimator_config(self, **changes) -> EstimatorConfig:
        return replace(self.config.estimator, seed=self.config.seed, threads=self.config.threads, **changes)

    def _require(self, path: Optional[Path], name: str) -> Path:
        if path is None:
            raise ConfigError(f"Не задан путь paths.{name}", {"key": f"paths.{name}"})
        return path

    # --- estimate ---

    def cmd_estimate(self) -> Dict[str, Any]:
        """Шаги 1–3 для всех областей: results.csv, weights.csv, overlap.json, summary.json"""
        schema = self.config.require_schema()
        self._progress(5, "Загрузка опроса и таблицы населения")
        survey = load_survey(self._require(self.config.paths.survey, "survey"), schema)
        table = load_population(self._require(self.config.paths.population, "population"), schema)
        overlap = check_overlap(survey, table)

        self._progress(20, f"Оценивание {table.n_areas} областей")
        est = estimate_all_areas(survey, table, self._estimator_config(), emit_weights=self.config.emit_weights)

        self._progress(90, "Запись результатов")
        self.output.write_csv("results.csv", result_rows(est.results), RESULT_COLUMNS)
        if self.config.emit_weights:
            rows = []
            for area in table.areas:
                w = est.weights.get(area)
                if w is None:
                    continue
                for k in range(len(w.weight)):
                    rows.append({
                        "area": area,
                        "respondent_id": w.respondent_id[k],
                        "zeta": w.zeta[k],
                        "p_pop": w.p_pop[k],
                        "inv_prop": w.inv_prop[k],
                        "weight": w.weight[k],
                    })
            self.output.write_csv("weights.csv", rows, WEIGHT_COLUMNS)
        self.output.write_json("overlap.json", {
            "sampling_overlap_concern": overlap.sampling_overlap_concern,
            "area_overlap_concern": overlap.area_overlap_concern,
            "missing_cells": {a: [list(p) for p in cells] for a, cells in overlap.missing_cells.items()},
            "partial_profiles": [{"profile": list(p), "areas": areas} for p, areas in overlap.partial_profiles.items()],
            "unsupported_profiles": [list(p) for p in overlap.unsupported_profiles],
        })
        self.output.write_json("summary.json", {
            "n": survey.n,
            "areas": list(table.areas),
            "errors": {a: e.to_dict() for a, e in est.errors.items()},
            "warnings": est.warnings,
        })
        if self.config.svg:
            direct = est.by_method(Method.DIRECT)
            synthetic = {r.area: r for r in est.results if r.method in SYNTHETIC_METHODS}
            common = [a for a in table.areas if a in direct and a in synthetic]
            self.output.write_scatter_svg(
                "direct_vs_synthetic.svg",
                [direct[a].estimate for a in common],
                [synthetic[a].estimate for a in common],
                "Прямая оценка",
                "Синтетическая оценка",
            )
        self._progress(100, "Оценивание завершено")
        return {"areas": len(table.areas), "failed_areas": sorted(est.errors, key=natural_key)}

    # --- diagnose ---

    def cmd_diagnose(self) -> Dict[str, Any]:
        """Панель проверки игнорируемости области: ignorability.csv"""
        schema = self.config.require_schema()
        survey = load_survey(self._require(self.config.paths.survey, "survey"), schema)
        diag = self.config.diagnostics
        est = self.config.estimator
        panel = ignorability_panel(survey, est.xp_vars, est.xs_vars, diag.epsilon, diag.alpha, diag.robust, self.config.threads)
        rows = []
        for r in panel.results:
            eq = r.equivalence
            rows.append({
                "area": r.area,
                "delta": r.delta_hat,
                "se": r.se,
                "ci_lower": r.lower,
                "ci_upper": r.upper,
                "p_conventional": r.conventional.p_value,
                "p_tost": "" if eq is None else eq.p_value,
                "flag": int(r.flag),
                "df": r.df,
                "n_area": r.n_area,
                "tost_lower": "" if eq is None else eq.lower,
                "tost_upper": "" if eq is None else eq.upper,
                "equivalent": "" if eq is None else int(eq.reject),
            })
        self.output.write_csv("ignorability.csv", rows, PANEL_COLUMNS)
        self.output.write_json("summary.json", {
            "alpha": diag.alpha,
            "epsilon": diag.epsilon,
            "robust": diag.robust,
            "flagged": [r.area for r in panel.flagged],
            "errors": {a: e.to_dict() for a, e in panel.errors.items()},
            "note": CONVENTIONAL_CAVEAT,
        })
        LogService.log("INFO", CONVENTIONAL_CAVEAT, source="RunManager")
        return {"areas": len(panel.results), "flagged": [r.area for r in panel.flagged]}

    # --- simulate ---

    def cmd_simulate(self) -> Dict[str, Any]:
        """Популяция-оракул, проверка идентификации, выборка, оценки, метрики, Монте-Карло"""
        sim = self.config.simulation
        pop = generate_population(sim.spec, sim.population_seed)
        truth = true_area_means(pop)
        identification = evaluate_identification(pop)
        decomposition = evaluate_decomposition(pop)
        spec = sim.spec
        self.output.write_json("population.json", {
            "xp_levels": list(spec.xp_levels),
            "xs_levels": list(spec.xs_levels),
            "areas": spec.n_areas,
            "count_range": list(spec.count_range),
            "outcome_range": list(spec.outcome_range),
            "sampling_range": list(spec.sampling_range),
            "gamma_shift": spec.gamma_shift,
            "shift_areas": list(spec.shift_areas),
            "outcome": spec.outcome,
            "population_seed": sim.population_seed,
            "seed": self.config.seed,
            "n": list(sim.n_values),
            "replicates": sim.replicates,
        })
        self.output.write_csv("truth.csv", [{"area": a, "truth": t} for a, t in zip(pop.areas, truth)], ["area", "truth"])
        self.output.write_csv(
            "identification.csv",
            [
                {
                    "area": a,
                    "truth": truth[k],
                    "identification": identification[k],
                    "residual": identification[k] - truth[k],
                    "direct_part": decomposition[k, 0],
                    "indirect_part": decomposition[k, 1],
                    "decomposition_residual": decomposition[k].sum() - identification[k],
                }
                for k, a in enumerate(pop.areas)
            ],
            ["area", "truth", "identification", "residual", "direct_part", "indirect_part", "decomposition_residual"],
        )

        changes = {}
        if sim.saturated and not self.config.estimator.interactions:
            names = pop.schema.population_names + pop.schema.survey_names
            changes["interactions"] = saturated_interactions(names)
        config = self._estimator_config(xp_vars=None, xs_vars=None, include_unweighted=True, **changes)

        survey = draw_sample(pop, sim.n_values[0], self.config.seed, key=("sample",))
        est = estimate_all_areas(survey, pop.population_table(), config)
        self.output.write_csv("estimates.csv", result_rows(est.results), RESULT_COLUMNS)
        index = {a: k for k, a in enumerate(pop.areas)}
        metric_rows = []
        for method in (Method.SYNTHETIC, Method.DECOMPOSED, Method.DIRECT, Method.UNWEIGHTED):
            by_area = est.by_method(method)
            if len(by_area) < 2:
                continue
            areas = [a for a in pop.areas if a in by_area]
            report = fit_metrics([by_area[a].estimate for a in areas], [truth[index[a]] for a in areas], strict=False)
            metric_rows.append({"set": method.value, **report.as_dict(), "n_areas": len(areas)})
        self.output.write_csv("metrics.csv", metric_rows, METRIC_COLUMNS)
        if self.config.svg:
            synthetic = {r.area: r.estimate for r in est.results if r.method in SYNTHETIC_METHODS}
            areas = [a for a in pop.areas if a in synthetic]
            self.output.write_scatter_svg(
                "estimate_vs_truth.svg",
                [truth[index[a]] for a in areas],
                [synthetic[a] for a in areas],
                "Истинное среднее",
                "Синтетическая оценка",
            )

        summary: Dict[str, Any] = {
            "max_identification_residual": float(np.max(np.abs(identification - truth))),
            "max_decomposition_residual": float(np.max(np.abs(decomposition.sum(axis=1) - identification))),
        }
        if sim.replicates > 0:
            self._progress(50, f"Монте-Карло: {sim.replicates} повторов для n = {list(sim.n_values)}")
            mc = run_monte_carlo(pop, sim.n_values, sim.replicates, config, self.config.seed, self.config.threads)
            self.output.write_csv("monte_carlo.csv", mc.rows, MC_COLUMNS)
            self.output.write_csv(
                "monte_carlo_summary.csv",
                [
                    {
                        "n": n,
                        "median_rmse": mc.median(n, "rmse"),
                        "median_abs_bias": mc.median_abs_bias(n),
                        "median_synthetic_se": mc.median(n, "median_synthetic_se"),
                        "median_direct_se": mc.median(n, "median_direct_se"),
                        "median_unweighted_rmse": mc.median(n, "unweighted_rmse"),
                    }
                    for n in sim.n_values
                ],
                ["n", "median_rmse", "median_abs_bias", "median_synthetic_se", "median_direct_se", "median_unweighted_rmse"],
            )
            summary["monte_carlo_errors"] = mc.errors
        return summary

    # --- validate ---

    @staticmethod
    def _read_table(path: Path, required: List[str]) -> pd.DataFrame:
        if not path.exists():
            raise ParseError(f"Файл не найден: {path}", {"path": str(path)})
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8-sig")
        missing = [c for c in required if c not in frame.columns]
        if missing:
            raise ParseError(f"В {path} нет столбцов {missing}", {"path": str(path), "columns": missing})
        return frame

    @staticmethod
    def _series(frame: pd.DataFrame, column: str, path: Path) -> Dict[str, float]:
        values = pd.to_numeric(frame[column], errors="coerce")
        bad = np.flatnonzero(values.isna().to_numpy())
        if bad.size:
            row = int(bad[0]) + 1
            raise ParseError(f"Не число в столбце '{column}' файла {path}, строка {row}", {"row": row, "column": column})
        areas = frame["area"].str.strip()
        if areas.duplicated().any():
            raise ValidationError(f"Области повторяются в {path}", {"path": str(path)})
        return dict(zip(areas, values.astype(float)))

    def cmd_validate(self) -> Dict[str, Any]:
        """Метрики каждого набора оценок и матрица корреляций ошибок"""
        truth_path = self._require(self.config.paths.truth, "truth")
        if not self.config.paths.estimates:
            raise ConfigError("Не заданы файлы оценок paths.estimates")
        truth = self._series(self._read_table(truth_path, ["area", "truth"]), "truth", truth_path)

        sets: Dict[str, Dict[str, float]] = {}
        for path in self.config.paths.estimates:
            frame = self._read_table(path, ["area", "estimate"])
            prefix = path.stem if len(self.config.paths.estimates) > 1 else ""
            if "method" in frame.columns:
                for method in sorted(frame["method"].unique()):
                    name = f"{prefix}:{method}" if prefix else method
                    sets[name] = self._series(frame[frame["method"] == method].reset_index(drop=True), "estimate", path)
            else:
                sets[prefix or path.stem] = self._series(frame, "estimate", path)

        areas = sorted(truth, key=natural_key)
        missing: Dict[str, List[str]] = {}
        for name, values in sets.items():
            unknown = sorted(set(values) - set(truth), key=natural_key)
            if unknown:
                raise ValidationError(f"В наборе '{name}' есть области без истинного значения: {unknown}", {"set": name, "areas": unknown})
            absent = [a for a in areas if a not in values]
            if absent:
                missing[name] = absent
                LogService.log("WARNING", f"Набор '{name}': нет оценок для областей {absent}", source="RunManager")
        t = np.array([truth[a] for a in areas])
        vectors = {name: np.array([values.get(a, np.nan) for a in areas]) for name, values in sets.items()}

        metric_rows = []
        for name, v in vectors.items():
            ok = np.isfinite(v)
            try:
                report = fit_metrics(v[ok], t[ok], strict=False).as_dict()
            except ValidationError as e:
                LogService.log("WARNING", f"Метрики набора '{name}' не определены: {e}", source="RunManager")
                report = dict.fromkeys(METRIC_COLUMNS[1:-1], float("nan"))
            metric_rows.append({"set": name, **report, "n_areas": int(ok.sum())})
        self.output.write_csv("metrics.csv", metric_rows, METRIC_COLUMNS)
        self.output.write_csv(
            "aligned.csv",
            [{"area": a, "truth": t[k], **{name: v[k] for name, v in vectors.items()}} for k, a in enumerate(areas)],
            ["area", "truth"] + list(vectors),
        )
        names = list(vectors)
        corr_rows = []
        for a in names:
            row: Dict[str, Any] = {"set": a}
            for b in names:
                common = np.isfinite(vectors[a]) & np.isfinite(vectors[b])
                try:
                    row[b] = error_correlation(vectors[a][common], vectors[b][common], t[common])
                except SAEError as e:
                    LogService.log("WARNING", f"Корреляция ошибок {a}/{b} не определена: {e}", source="RunManager")
                    row[b] = float("nan")
            corr_rows.append(row)
        self.output.write_csv("error_correlation.csv", corr_rows, ["set"] + names)
        if self.config.svg and names:
            ok = np.isfinite(vectors[names[0]])
            self.output.write_scatter_svg("estimate_vs_truth.svg", t[ok], vectors[names[0]][ok], "Истинное значение", names[0])
        return {"sets": names, "areas": len(areas), "missing_areas": missing}
