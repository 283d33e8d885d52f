import json
import math

from config import ATOM, STREAMS, VERSION
from modules.artifacts import TRAJECTORY_HEADER, ExperimentResult, trajectory_table, write_result
from modules.engine import init
from modules.netmodel import QState


def test_result_json_layout(tmp_path) -> None:
    result = ExperimentResult(name="demo", params={"delta": 0.2}, seed=1, replications=3, runtime=0.5, threads=4)
    result.add("p", 0.25, 0.01)
    result.add("bad", math.nan)
    result.add("big", math.inf)
    result.warn("careful")
    result.warn("careful")
    result.table("rows", ["a", "b"], [[1, 0.1], [2, 0.2]])
    path = write_result(result, tmp_path, "run1")

    doc = json.loads(path.read_text())
    assert doc["estimates"] == {"p": 0.25, "bad": "nan", "big": "inf"}
    assert doc["stderr"] == {"p": 0.01}
    assert doc["warnings"] == ["careful"]
    assert doc["timing"] == {"runtime_seconds": 0.5, "threads": 4}
    assert "tables" not in doc and "runtime" not in doc
    csv_text = (tmp_path / "run1" / "rows.csv").read_text()
    assert csv_text.splitlines() == [f"# ksrs-lab {VERSION} demo seed=1", "a,b", "1,0.1", "2,0.2"]
    assert str(tmp_path / "run1" / "rows.csv") in doc["artifacts"]


def test_trajectory_table_rows(spec, params) -> None:
    sim = init(spec, params, QState(*ATOM), 5, STREAMS["simulate"])
    traj = sim.run_until_time(10.0)
    rows = trajectory_table(traj)
    assert len(rows[0]) == len(TRAJECTORY_HEADER)
    assert rows[0][1:5] == list(ATOM)
    assert rows[-1][0] == traj.t_end
    assert {row[5] for row in rows[1:]} <= {"Arr1", "Arr3", "Svc2", "Svc4"}
