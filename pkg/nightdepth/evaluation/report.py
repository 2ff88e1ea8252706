"""Plain-text and CSV renderings of evaluation results."""

import csv
from pathlib import Path
from typing import Dict, List, Mapping, Sequence, Union

from .metrics import METRIC_NAMES, DepthMetrics

Row = Mapping[str, Union[float, int, str]]


def _row_dict(metrics: Union[DepthMetrics, Row]) -> Dict[str, Union[float, int, str]]:
    return metrics.as_dict() if isinstance(metrics, DepthMetrics) else dict(metrics)


def format_metrics_table(rows: Mapping[str, Union[DepthMetrics, Row]]) -> str:
    """
    Fixed-width table, one line per named run. The seven standard columns come
    first, followed by any extra numeric columns (region RMSE).
    """
    dicts = {name: _row_dict(m) for name, m in rows.items()}
    extra: List[str] = []
    for row in dicts.values():
        extra += [k for k in row if k not in METRIC_NAMES and k not in extra]
    columns = list(METRIC_NAMES) + extra
    name_width = max([len("run")] + [len(name) for name in dicts])
    header = f"{'run':<{name_width}}  " + "  ".join(f"{c:>10}" for c in columns)
    lines = [header, "-" * len(header)]
    for name, row in dicts.items():
        cells = []
        for column in columns:
            value = row.get(column, "")
            cells.append(f"{value:>10.4f}" if isinstance(value, float) else f"{str(value):>10}")
        lines.append(f"{name:<{name_width}}  " + "  ".join(cells))
    return "\n".join(lines)


def write_metrics_csv(path: Union[str, Path], rows: Sequence[Row]) -> Path:
    """Write rows (dicts) with the union of their keys as header; standard metrics first."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    keys: List[str] = []
    for row in rows:
        keys += [k for k in row if k not in keys]
    ordered = [k for k in keys if k not in METRIC_NAMES]
    ordered = [k for k in ordered if k in ("run", "preset", "seed", "step", "epoch")] + \
              [k for k in METRIC_NAMES if k in keys] + \
              [k for k in ordered if k not in ("run", "preset", "seed", "step", "epoch")]
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=ordered)
        writer.writeheader()
        for row in rows:
            writer.writerow(dict(row))
    return path


class CsvLog:
    """Append-only CSV log with a header fixed by the first row."""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.fieldnames: List[str] = []
        if self.path.is_file() and self.path.stat().st_size > 0:
            with open(self.path, newline="") as f:
                self.fieldnames = next(csv.reader(f), [])

    def append(self, row: Row) -> None:
        new_file = not self.fieldnames
        if new_file:
            self.fieldnames = list(row.keys())
        with open(self.path, "a", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=self.fieldnames, extrasaction="ignore")
            if new_file:
                writer.writeheader()
            writer.writerow(dict(row))

    def read(self) -> List[Dict[str, str]]:
        if not self.path.is_file():
            return []
        with open(self.path, newline="") as f:
            return list(csv.DictReader(f))
