"""
Run Artifact Storage
JSON and CSV artifacts of one experiment run directory.

Layout:
    manifest.json
    <solver>_report.json
    comparison.csv
    trajectories/<solver>_iter<k>_points.csv      theta, agent, component, value
    trajectories/<solver>_iter<k>_velocities.csv  theta, agent, component, value
    trajectories/<solver>_iter<k>_path.csv        theta, agent, c, b
"""

import csv
import json
import logging
import os
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np

from app.core.exceptions import ArtifactNotFoundError
from app.core.models import (
    ParametricPath,
    RunReport,
    SolverKind,
    ThetaGrid,
    Trajectory,
    to_dict,
)

logger = logging.getLogger(__name__)

COMPARISON_COLUMNS = [
    "approach",
    "optimal_value",
    "constraint_violation",
    "elapsed_time_s",
    "linear_solves",
    "O_d",
    "Ohat_d",
]
LONG_COLUMNS = ["theta", "agent", "component", "value"]
PATH_COLUMNS = ["theta", "agent", "c", "b"]
MANIFEST = "manifest.json"
TRAJECTORY_DIR = "trajectories"


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def comparison_rows(reports: Iterable[RunReport]) -> List[Dict[str, str]]:
    """Table rows: one per baseline, one per OP-TVO iteration"""
    rows = []
    for report in reports:
        label = SolverKind(report.solver).label
        for record in report.records:
            approach = f"{label} iter {record.iteration}" if report.solver == SolverKind.OPTVO.value else label
            rows.append({
                "approach": approach,
                "optimal_value": _cell(record.optimal_value),
                "constraint_violation": _cell(record.constraint_violation),
                "elapsed_time_s": _cell(record.elapsed_time_s),
                "linear_solves": _cell(record.linear_solves),
                "O_d": _cell(record.od),
                "Ohat_d": _cell(record.ohat_d),
            })
    return rows


def write_csv(path: str, columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def write_comparison(path: str, reports: Iterable[RunReport]) -> None:
    rows = comparison_rows(reports)
    write_csv(path, COMPARISON_COLUMNS, ([r[c] for c in COMPARISON_COLUMNS] for r in rows))


def read_csv(path: str) -> List[Dict[str, str]]:
    if not os.path.exists(path):
        raise ArtifactNotFoundError(path)
    with open(path, "r", encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))


def _long_rows(thetas: np.ndarray, values: np.ndarray):
    for j, theta in enumerate(thetas):
        for m in range(values.shape[1]):
            for n in range(values.shape[2]):
                yield (float(theta), m + 1, n + 1, float(values[j, m, n]))


def _from_long(rows: List[Dict[str, str]]) -> np.ndarray:
    if not rows:
        return np.empty((0, 0, 0))
    agents = max(int(r["agent"]) for r in rows)
    components = max(int(r["component"]) for r in rows)
    values = np.array([float(r["value"]) for r in rows])
    return values.reshape(-1, agents, components)


class ArtifactStorage:
    """JSON- and CSV-backed storage for one run directory"""

    def __init__(self, directory: str, create: bool = True) -> None:
        self.directory = directory
        if create:
            self._ensure_dir_exists()
        elif not os.path.isdir(directory):
            raise ArtifactNotFoundError(directory)

    def _ensure_dir_exists(self) -> None:
        os.makedirs(os.path.join(self.directory, TRAJECTORY_DIR), exist_ok=True)

    def _path(self, *parts: str) -> str:
        return os.path.join(self.directory, *parts)

    def _read(self, name: str) -> Dict:
        path = self._path(name)
        if not os.path.exists(path):
            raise ArtifactNotFoundError(path)
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)

    def _write(self, name: str, data: Dict) -> str:
        path = self._path(name)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(data, f, ensure_ascii=False, indent=2)
            f.write("\n")
        return path

    # ==================== Reports ====================

    def save_report(self, report: RunReport) -> str:
        return self._write(f"{report.solver}_report.json", report.to_dict())

    def load_report(self, solver: str) -> RunReport:
        return RunReport.from_dict(self._read(f"{solver}_report.json"))

    def save_comparison(self, reports: Iterable[RunReport]) -> str:
        path = self._path("comparison.csv")
        write_comparison(path, reports)
        return path

    # ==================== Trajectories ====================

    @staticmethod
    def _stem(solver: str, iteration: int) -> str:
        return f"{solver}_iter{iteration}"

    def save_trajectory(self, solver: str, iteration: int, traj: Trajectory) -> Dict[str, str]:
        """Write points, velocities and the c/b path of one iteration"""
        stem = self._stem(solver, iteration)
        nodes = traj.grid.nodes
        files = {
            "points": os.path.join(TRAJECTORY_DIR, f"{stem}_points.csv"),
            "velocities": os.path.join(TRAJECTORY_DIR, f"{stem}_velocities.csv"),
            "path": os.path.join(TRAJECTORY_DIR, f"{stem}_path.csv"),
        }
        write_csv(self._path(files["points"]), LONG_COLUMNS, _long_rows(nodes, traj.points))
        write_csv(self._path(files["velocities"]), LONG_COLUMNS, _long_rows(nodes[:-1], traj.velocities))
        c_values = traj.path.values if traj.path is not None else np.zeros_like(traj.weights)
        write_csv(
            self._path(files["path"]),
            PATH_COLUMNS,
            (
                (float(theta), m + 1, float(c_values[j, m]), float(traj.weights[j, m]))
                for j, theta in enumerate(nodes)
                for m in range(traj.M)
            ),
        )
        return files

    def load_trajectory(self, solver: str, iteration: Optional[int] = None) -> Trajectory:
        """Rebuild a trajectory from its CSV dump (final iteration when omitted)"""
        manifest = self.load_manifest()
        entries = manifest.get("trajectories", {}).get(solver)
        if not entries:
            raise ArtifactNotFoundError(self._path(TRAJECTORY_DIR, f"{solver}_*"))
        key = str(iteration if iteration is not None else manifest["final_iteration"][solver])
        if key not in entries:
            raise ArtifactNotFoundError(self._path(TRAJECTORY_DIR, f"{self._stem(solver, int(key))}_points.csv"))
        entry = entries[key]
        grid = ThetaGrid(entry["tau"], entry["delta_theta"])
        points = _from_long(read_csv(self._path(entry["files"]["points"])))
        velocities = _from_long(read_csv(self._path(entry["files"]["velocities"])))
        path_rows = read_csv(self._path(entry["files"]["path"]))
        M = points.shape[1]
        c_values = np.array([float(r["c"]) for r in path_rows]).reshape(-1, M)
        weights = np.array([float(r["b"]) for r in path_rows]).reshape(-1, M)
        polished = entry.get("polished")
        return Trajectory(
            grid=grid,
            points=points,
            velocities=velocities,
            m_hat=velocities.reshape(grid.L, -1).mean(axis=0),
            weights=weights,
            problem_id=manifest["problem"],
            path=ParametricPath(c_values, grid),
            polished=np.array(polished) if polished is not None else None,
        )

    def dump_selection(
        self,
        out: str,
        solver: str = SolverKind.OPTVO.value,
        iteration: Optional[int] = None,
        agents: Sequence[int] = (1,),
        component: int = 1,
    ) -> str:
        """
        Wide CSV of one component of x_hat versus theta for the chosen agents.

        Args:
            out: Output CSV path
            solver: Solver whose dump is read
            iteration: Iteration number (final iteration when omitted)
            agents: 1-based agent indices; empty gives a header-only file
            component: 1-based component index

        Returns:
            Path of the written file
        """
        traj = self.load_trajectory(solver, iteration)
        if not 1 <= component <= traj.N:
            raise ValueError(f"component must be in 1..{traj.N}")
        for agent in agents:
            if not 1 <= agent <= traj.M:
                raise ValueError(f"agent {agent} is outside 1..{traj.M}")
        columns = ["theta"] + [f"agent_{a}" for a in agents]
        rows = []
        if agents:
            for j, theta in enumerate(traj.grid.nodes):
                rows.append([float(theta)] + [float(traj.points[j, a - 1, component - 1]) for a in agents])
        write_csv(out, columns, rows)
        return out

    # ==================== Manifest ====================

    def save_run(self, config, result, dump_trajectories: bool = True,
                 dump_baselines: bool = False) -> Dict[str, Any]:
        """Write every report, the comparison table, trajectory dumps and the manifest"""
        manifest: Dict[str, Any] = {
            "problem": result.problem.identity,
            "problem_parameters": result.problem.parameters(),
            "config": to_dict(config),
            "reports": {},
            "final_iteration": {},
            "trajectories": {},
        }
        reports = result.ordered()
        for report in reports:
            manifest["reports"][report.solver] = os.path.basename(self.save_report(report))
            final = [k for k, traj in enumerate(report.history, start=1) if traj is report.trajectory]
            manifest["final_iteration"][report.solver] = final[0] if final else None
            if not dump_trajectories:
                continue
            if report.solver != SolverKind.OPTVO.value and not dump_baselines:
                continue
            entries = {}
            for k, traj in enumerate(report.history, start=1):
                entries[str(k)] = {
                    "tau": traj.grid.tau,
                    "delta_theta": traj.grid.delta_theta,
                    "files": self.save_trajectory(report.solver, k, traj),
                    "polished": traj.polished.tolist() if traj.polished is not None else None,
                }
            if entries:
                manifest["trajectories"][report.solver] = entries
        manifest["comparison"] = os.path.basename(self.save_comparison(reports))
        self._write(MANIFEST, manifest)
        logger.info("Run artifacts written to %s", self.directory)
        return manifest

    def load_manifest(self) -> Dict[str, Any]:
        return self._read(MANIFEST)
