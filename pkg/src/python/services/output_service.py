"""
OutputService — запись результатов прогона (CSV, JSON, SVG)
Одинаковые входы дают побайтно одинаковые файлы
"""
import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from services.log_service import LogService  # noqa: E402

FLOAT_FORMAT = "%.17g"


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        return _jsonable(value.item())
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, float) and not np.isfinite(value):
        return None
    if isinstance(value, Path):
        return str(value)
    return value


class OutputService:
    def __init__(self, out_dir: Path):
        self.out_dir = Path(out_dir)
        self.written: List[str] = []

    def _path(self, name: str) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        return self.out_dir / name

    def write_csv(self, name: str, rows: Sequence[Dict[str, Any]], columns: Sequence[str]) -> Path:
        path = self._path(name)
        frame = pd.DataFrame(list(rows), columns=list(columns))
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n", na_rep="")
        self.written.append(name)
        LogService.log("INFO", f"Записан {path} ({len(frame)} строк)", source="OutputService")
        return path

    def write_json(self, name: str, payload: Any) -> Path:
        path = self._path(name)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            json.dump(_jsonable(payload), f, indent=2, ensure_ascii=False, sort_keys=True)
            f.write("\n")
        self.written.append(name)
        LogService.log("INFO", f"Записан {path}", source="OutputService")
        return path

    def write_scatter_svg(
        self,
        name: str,
        x: Sequence[float],
        y: Sequence[float],
        xlabel: str,
        ylabel: str,
        title: Optional[str] = None,
    ) -> Path:
        """Диаграмма рассеяния с линией y = x"""
        path = self._path(name)
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        plt.rcParams["svg.hashsalt"] = "sawt"
        fig, ax = plt.subplots(figsize=(5, 5))
        try:
            finite = np.concatenate([x[np.isfinite(x)], y[np.isfinite(y)]])
            lo, hi = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
            pad = 0.05 * (hi - lo or 1.0)
            ax.plot([lo - pad, hi + pad], [lo - pad, hi + pad], color="grey", linestyle="--", linewidth=1)
            ax.scatter(x, y, s=18, color="#2e7d32")
            ax.set_xlim(lo - pad, hi + pad)
            ax.set_ylim(lo - pad, hi + pad)
            ax.set_xlabel(xlabel)
            ax.set_ylabel(ylabel)
            if title:
                ax.set_title(title)
            fig.savefig(path, format="svg", metadata={"Date": None})
        finally:
            plt.close(fig)
        self.written.append(name)
        LogService.log("INFO", f"Записан {path}", source="OutputService")
        return path

    def write_error(self, payload: Dict[str, Any]) -> Optional[Path]:
        try:
            return self.write_json("error.json", payload)
        except OSError as e:
            LogService.log("ERROR", f"Не удалось записать error.json: {e}", source="OutputService")
            return None

    def clear_error(self):
        path = self.out_dir / "error.json"
        if path.exists():
            path.unlink()
