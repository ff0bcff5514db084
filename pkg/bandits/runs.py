"""
Executes an ExperimentRun and records its results; shared by the REST API and
the ``--record`` flag of the management commands.
"""

import logging
from pathlib import Path

from django.conf import settings

from .benchmark import combine_reports, run_benchmark, run_replay, sweep_schedules, write_report
from .exceptions import ConfigurationError, NumericalError, UsageError

logger = logging.getLogger(__name__)

BANDIT_ERRORS = (ConfigurationError, NumericalError, UsageError)


def default_output_dir(run):
    return Path(settings.BANDITS["OUTPUT_DIR"]) / str(run.id)


def compute_report(kind, config, schedules=(), world=None):
    if kind == "replay":
        return run_replay(config)
    if kind == "sweep":
        reports, _ = sweep_schedules(config, schedules, world=world)
        return combine_reports(reports)
    return run_benchmark(config, world=world)


def execute_run(run, config, schedules=(), world=None, output_dir=None, compute=None):
    """
    Run ``config`` as ``run.kind`` (or through ``compute()``), write report files
    into ``output_dir`` and store PolicyResult rows. Failures mark the run
    failed and re-raise.
    """
    run.mark_running()
    try:
        if compute is None:
            report = compute_report(run.kind, config, schedules, world)
        else:
            report = compute()
        if output_dir is not None:
            write_report(report, output_dir, config, extra={"run": str(run.id)})
            run.output_dir = str(output_dir)
            run.save(update_fields=["output_dir", "updated_at"])
        run.record(report)
    except BANDIT_ERRORS as exc:
        logger.error(f"Run {run.id} failed: {exc}", exc_info=True)
        run.mark_failed(exc)
        raise
    logger.info(f"Run {run.id} completed with {run.results.count()} results")
    return report
