"""ExperimentResult and the JSON/CSV writers for run artifacts."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

from config import VERSION
from modules.engine import EVENT_KINDS, Trajectory


@dataclass
class ExperimentResult:
    name: str
    params: dict
    seed: int | None = None
    replications: int = 0
    estimates: dict[str, Any] = field(default_factory=dict)
    stderr: dict[str, Any] = field(default_factory=dict)
    regime: str | None = None
    warnings: list[str] = field(default_factory=list)
    network: dict | None = None
    runtime: float = 0.0
    artifacts: list[str] = field(default_factory=list)
    tables: dict[str, tuple[list[str], list[list]]] = field(default_factory=dict, repr=False)
    config: dict | None = None
    threads: int = 1
    version: str = VERSION

    def add(self, key: str, value: Any, se: float | None = None) -> None:
        self.estimates[key] = value
        if se is not None:
            self.stderr[key] = se

    def warn(self, message: str) -> None:
        if message not in self.warnings:
            self.warnings.append(message)

    def table(self, name: str, header: list[str], rows: list[list]) -> None:
        """Attach a CSV table written next to result.json as <name>.csv."""
        self.tables[name] = (header, rows)

    def to_json(self) -> dict:
        doc = asdict(self)
        doc.pop("tables")
        doc["timing"] = {"runtime_seconds": doc.pop("runtime"), "threads": doc.pop("threads")}
        return _clean(doc)


def _clean(value: Any) -> Any:
    """JSON-safe copy: non-finite floats become strings, tuples become lists."""
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if hasattr(value, "item"):  # numpy scalar
        return _clean(value.item())
    return value


def _cell(value: Any) -> str:
    if isinstance(value, float) or hasattr(value, "item"):
        value = value.item() if hasattr(value, "item") else value
        if isinstance(value, float):
            return repr(value)
    return str(value)


def write_csv(
    path: Path, header: Sequence[str], rows: Iterable[Sequence], preamble: str | None = None
) -> Path:
    """Comma-separated table with one header line, after an optional `# ` comment line."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        if preamble is not None:
            f.write(f"# {preamble}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    return path


TRAJECTORY_HEADER = ["t", "q1", "q2", "q3", "q4", "kind", "flushed1", "flushed3"]


def trajectory_table(traj: Trajectory) -> list[list]:
    """One row per event after an `init` row; grid samples when thinned."""
    if traj.thinned:
        return [[float(t), *map(int, q), "grid", 0, 0] for t, q in zip(traj.grid, traj.grid_states)]
    rows = [[traj.t0, *traj.initial, "init", 0, 0]]
    for t, q, k, (f1, f3) in zip(traj.times, traj.states, traj.kinds, traj.flushed):
        rows.append([t, *q, EVENT_KINDS[k], f1, f3])
    return rows


def csv_preamble(result: ExperimentResult) -> str:
    """Version, experiment, seed and the run configuration on one line."""
    text = f"ksrs-lab {result.version} {result.name} seed={result.seed}"
    if result.config is not None:
        text += " config=" + json.dumps(_clean(result.config), sort_keys=True, separators=(",", ":"))
    return text


def write_result(result: ExperimentResult, output_dir: Path, run_name: str | None = None) -> Path:
    """Write <output_dir>/<run_name>/result.json plus one CSV per attached table."""
    run_dir = Path(output_dir) / (run_name or result.name)
    run_dir.mkdir(parents=True, exist_ok=True)
    preamble = csv_preamble(result)
    for name, (header, rows) in result.tables.items():
        path = write_csv(run_dir / f"{name}.csv", header, rows, preamble)
        if str(path) not in result.artifacts:
            result.artifacts.append(str(path))
    path = run_dir / "result.json"
    with open(path, "w", encoding="utf-8") as f:
        json.dump(result.to_json(), f, indent=2, sort_keys=True)
        f.write("\n")
    return path
