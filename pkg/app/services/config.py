"""
Experiment Configuration Loader
Reads one JSON experiment file, validates every section against its
dataclass and applies the output-directory override.
"""

import json
import logging
import os
from dataclasses import fields
from typing import Any, Dict, Iterable, Optional, Sequence

from dotenv import find_dotenv, load_dotenv

from app.core.exceptions import ConfigError
from app.core.models import (
    BenchmarkConfig,
    E1Params,
    ExperimentConfig,
    OutputConfig,
    PCMConfig,
    SolverConfig,
    SolverKind,
)
from app.core.problems import PROBLEM_REGISTRY, QUADRATIC_KEYS, build_problem

logger = logging.getLogger(__name__)

ENV_OUTPUT_DIR = "OPTVO_OUTPUT_DIR"

SECTIONS = {
    "solver": SolverConfig,
    "pcm": PCMConfig,
    "benchmark": BenchmarkConfig,
    "output": OutputConfig,
}
TOP_LEVEL_KEYS = {"problem", "seed", "solvers", *SECTIONS}
PROBLEM_KEYS = {"name", "params"}
PARAM_KEYS = {
    "e1": {f.name for f in fields(E1Params)},
    "quadratic": QUADRATIC_KEYS,
}


def _reject_unknown(data: Dict[str, Any], allowed: Iterable[str], prefix: str) -> None:
    for key in data:
        if key not in allowed:
            path = f"{prefix}.{key}" if prefix else key
            raise ConfigError(f"unknown key '{path}'", field=path)


def _section(cls, data: Any, prefix: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"section '{prefix}' must be an object", field=prefix)
    _reject_unknown(data, {f.name for f in fields(cls) if f.init}, prefix)
    try:
        return cls(**data)
    except ConfigError as err:
        path = f"{prefix}.{err.field}" if err.field else prefix
        raise ConfigError(f"{prefix}.{err.message}", field=path) from err
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{prefix}: {err}", field=prefix) from err


def parse_solvers(names: Sequence[str], field_name: str = "solvers") -> list:
    kinds = []
    for index, name in enumerate(names):
        try:
            kinds.append(SolverKind(str(name).strip()))
        except ValueError:
            known = [k.value for k in SolverKind]
            raise ConfigError(
                f"unknown solver '{name}' (known: {known})", field=f"{field_name}[{index}]"
            ) from None
    if not kinds:
        raise ConfigError("at least one solver must be selected", field=field_name)
    return kinds


def parse_experiment_config(data: Dict[str, Any]) -> ExperimentConfig:
    """
    Validate a decoded config document.

    Args:
        data: Decoded JSON object

    Returns:
        ExperimentConfig with every section validated
    """
    if not isinstance(data, dict):
        raise ConfigError("config root must be an object")
    _reject_unknown(data, TOP_LEVEL_KEYS, "")

    problem = data.get("problem", {})
    if not isinstance(problem, dict):
        raise ConfigError("section 'problem' must be an object", field="problem")
    _reject_unknown(problem, PROBLEM_KEYS, "problem")
    name = problem.get("name", "e1")
    if name not in PROBLEM_REGISTRY:
        raise ConfigError(f"unknown problem '{name}' (known: {sorted(PROBLEM_REGISTRY)})", field="problem.name")
    params = problem.get("params", {}) or {}
    if not isinstance(params, dict):
        raise ConfigError("problem.params must be an object", field="problem.params")
    _reject_unknown(params, PARAM_KEYS[name], "problem.params")

    seed = data.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError("seed must be an integer", field="seed")

    try:
        build_problem(name, params, seed)
    except ConfigError as err:
        if err.field and not err.field.startswith("problem"):
            path = f"problem.params.{err.field}"
            raise ConfigError(f"problem.params.{err.message}", field=path) from err
        raise

    config = ExperimentConfig(
        problem_name=name,
        problem_params=params,
        solver=_section(SolverConfig, data.get("solver"), "solver"),
        pcm=_section(PCMConfig, data.get("pcm"), "pcm"),
        benchmark=_section(BenchmarkConfig, data.get("benchmark"), "benchmark"),
        output=_section(OutputConfig, data.get("output"), "output"),
        seed=seed,
    )
    if "solvers" in data:
        if not isinstance(data["solvers"], list):
            raise ConfigError("solvers must be a list", field="solvers")
        config.solvers = parse_solvers(data["solvers"])
    # horizons of the baselines default to the OP-TVO horizon
    for section in ("solver", "pcm", "benchmark"):
        try:
            if section == "solver":
                config.solver.grid()
            else:
                getattr(config, section).grid(config.solver.tau)
        except ConfigError as err:
            raise ConfigError(f"{section}.{err.message}", field=f"{section}.{err.field}") from err
    return config


def load_experiment_config(
    path: str,
    out: Optional[str] = None,
    seed: Optional[int] = None,
    solvers: Optional[Sequence[str]] = None,
) -> ExperimentConfig:
    """
    Load and validate a JSON experiment file.

    The output directory comes from `out`, then OPTVO_OUTPUT_DIR (a .env file is
    loaded first when present), then the file itself.
    """
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"invalid JSON: {err.msg}", line=err.lineno, column=err.colno) from err

    config = parse_experiment_config(data)
    if seed is not None:
        config.seed = int(seed)
    if solvers is not None:
        config.solvers = parse_solvers(solvers, field_name="--solvers")

    load_dotenv(find_dotenv(usecwd=True), override=False)
    if out:
        config.output.directory = out
    elif os.environ.get(ENV_OUTPUT_DIR):
        config.output.directory = os.environ[ENV_OUTPUT_DIR]
    logger.debug("Loaded config %s (problem=%s, solvers=%s)", path, config.problem_name,
                 [s.value for s in config.solvers])
    return config
