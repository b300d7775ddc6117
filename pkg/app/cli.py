"""
Command-Line Interface
run, dump-trajectory, selftest and compare subcommands.
"""

import json
import logging
import sys
from typing import List, Optional

import click

from app.core.exceptions import ArtifactNotFoundError, ConfigError, OptvoError
from app.core.models import RunReport
from app.core.selftest import SUITES, run_suite
from app.services.config import load_experiment_config
from app.services.experiment import run_experiment
from app.services.storage import ArtifactStorage, write_comparison

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
EXIT_SOLVER_ERROR = 1
EXIT_CONFIG_ERROR = 2


def configure_logging(verbose: bool = False, quiet: bool = False) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)


def _fail(err: OptvoError) -> None:
    """Print the machine-readable error and exit nonzero"""
    click.echo(json.dumps(err.to_dict(), default=str), err=True)
    sys.exit(EXIT_CONFIG_ERROR if isinstance(err, ConfigError) else EXIT_SOLVER_ERROR)


def _agent_list(text: str) -> List[int]:
    text = text.strip()
    if not text:
        return []
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise click.BadParameter("agents must be comma-separated integers") from None


@click.group()
@click.option("--verbose", "-v", is_flag=True, help="Debug logging")
@click.option("--quiet", "-q", is_flag=True, help="Warnings only")
def cli(verbose: bool, quiet: bool) -> None:
    """Path-following solvers for weight-homotopy KKT trajectories."""
    configure_logging(verbose, quiet)


@cli.command("run")
@click.option("--config", "config_path", required=True, help="Experiment JSON file")
@click.option("--out", default=None, help="Output directory (beats OPTVO_OUTPUT_DIR and the file)")
@click.option("--seed", type=int, default=None, help="Override the config seed")
@click.option("--solvers", default=None, help="Comma-separated: benchmark,pcm,naive_newton,optvo")
def run_command(config_path: str, out: Optional[str], seed: Optional[int], solvers: Optional[str]) -> None:
    """Run the selected solvers and write reports, comparison table and dumps."""
    try:
        config = load_experiment_config(
            config_path,
            out=out,
            seed=seed,
            solvers=solvers.split(",") if solvers is not None else None,
        )
        result = run_experiment(config)
        storage = ArtifactStorage(config.output.directory)
        storage.save_run(
            config,
            result,
            dump_trajectories=config.output.dump_trajectories,
            dump_baselines=config.output.dump_baselines,
        )
    except OptvoError as err:
        _fail(err)
        return
    for report in result.ordered():
        final = report.final
        click.echo(
            f"{report.solver:<13} {report.status.value:<10} objective={final.optimal_value:.6e} "
            f"violation={final.constraint_violation:.3e} linear_solves={report.linear_solves}"
        )
    click.echo(f"Artifacts: {config.output.directory}")


@cli.command("dump-trajectory")
@click.argument("run_dir")
@click.option("--out", required=True, help="CSV file to write")
@click.option("--solver", default="optvo", show_default=True)
@click.option("--iteration", type=int, default=None, help="Iteration number (final when omitted)")
@click.option("--agents", default="1", show_default=True, help="Comma-separated 1-based agents; empty for none")
@click.option("--component", type=int, default=1, show_default=True)
def dump_trajectory_command(run_dir: str, out: str, solver: str, iteration: Optional[int],
                            agents: str, component: int) -> None:
    """Write x_hat component versus theta for selected agents of a stored run."""
    try:
        storage = ArtifactStorage(run_dir, create=False)
        storage.dump_selection(out, solver=solver, iteration=iteration,
                               agents=_agent_list(agents), component=component)
    except OptvoError as err:
        _fail(err)
        return
    except ValueError as err:
        raise click.BadParameter(str(err)) from None
    click.echo(out)


@cli.command("selftest")
@click.option("--suite", type=click.Choice(SUITES), default="fast", show_default=True)
def selftest_command(suite: str) -> None:
    """Run the invariant suite and print a pass/fail table."""
    results = run_suite(suite)
    width = max(len(r.name) for r in results)
    for result in results:
        status = "PASS" if result.passed else "FAIL"
        click.echo(f"{result.name:<{width}}  {status}  {result.seconds:7.2f}s  {result.detail}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        click.echo(f"{len(failed)} of {len(results)} checks failed", err=True)
        sys.exit(EXIT_SOLVER_ERROR)
    click.echo(f"all {len(results)} checks passed")


@cli.command("compare")
@click.argument("reports", nargs=-1, required=True)
@click.option("--out", required=True, help="Comparison CSV to write")
def compare_command(reports: List[str], out: str) -> None:
    """Merge RunReport JSON files into one comparison table."""
    loaded = []
    for path in reports:
        try:
            with open(path, "r", encoding="utf-8") as f:
                loaded.append(RunReport.from_dict(json.load(f)))
        except FileNotFoundError:
            _fail(ArtifactNotFoundError(path))
            return
        except (KeyError, TypeError, ValueError) as exc:
            _fail(ConfigError(f"not a run report: {path} ({exc})"))
            return
    write_comparison(out, loaded)
    click.echo(out)


def main() -> None:
    cli()
