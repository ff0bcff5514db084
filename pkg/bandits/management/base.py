"""
Shared plumbing for the bandit management commands: the common flags, the
experiment document assembled from a JSON file plus flag overrides, and the
translation of engine errors into CommandError.
"""

import json
import logging
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from ..exceptions import error_message
from ..models import ExperimentRun
from ..runs import BANDIT_ERRORS, execute_run
from ..serializers import WorldParamsSerializer, flatten_errors, parse_experiment_config
from ..simulation import WorldParams, load_world

logger = logging.getLogger(__name__)


def comma_list(value):
    return [item.strip() for item in value.split(",") if item.strip()]


def int_list(value):
    try:
        return [int(item) for item in comma_list(value)]
    except ValueError:
        raise CommandError(f"Expected comma-separated integers, got '{value}'.")


class BanditCommand(BaseCommand):
    """Base class; subclasses implement ``run(**options)``."""

    run_kind = "benchmark"
    world_flags = True
    experiment_flags = True

    def add_arguments(self, parser):
        parser.add_argument("--config", help="JSON experiment document.")
        parser.add_argument("--seed", type=int, help="World seed.")
        parser.add_argument("--out", help="Output directory.")
        parser.add_argument("--verbose", action="store_true", help="Per-round policy diagnostics.")
        parser.add_argument("--workers", type=int, help="Worker processes for episodes.")
        parser.add_argument(
            "--record", action="store_true", help="Store the run and its results in the database."
        )
        if self.world_flags:
            parser.add_argument("--full-scale", action="store_true", help="Use the full-size world preset.")
            parser.add_argument("--dim", type=int)
            parser.add_argument("--arms", type=int)
            parser.add_argument("--keyterms", type=int)
            parser.add_argument("--users", type=int, help="Number of users in the world.")
            parser.add_argument("--hidden-dim", type=int)
        if self.experiment_flags:
            parser.add_argument("--policies", help="Comma-separated policy kinds.")
            parser.add_argument("--schedule", help="none, log:<Q> or linear:<Q>:<period>.")
            parser.add_argument("--horizon", type=int)
            parser.add_argument("--slate-size", type=int)
            parser.add_argument("--seeds", help="Comma-separated episode seeds.")
            parser.add_argument("--episode-users", type=int, help="Run only the first N users.")
            parser.add_argument("--binary", action="store_true", help="Bernoulli rewards.")
            parser.add_argument("--bound", action="store_true", help="Report the regret upper bound.")
        self.add_command_arguments(parser)

    def add_command_arguments(self, parser):
        pass

    def handle(self, *args, **options):
        if options.get("verbose"):
            logging.getLogger("bandits").setLevel(logging.DEBUG)
        try:
            return self.run(**options)
        except BANDIT_ERRORS as exc:
            raise CommandError(error_message(exc))

    def run(self, **options):
        raise NotImplementedError

    def experiment_document(self, options):
        data = {}
        if options.get("config"):
            path = Path(options["config"])
            try:
                data = json.loads(path.read_text())
            except (OSError, ValueError) as exc:
                raise CommandError(f"Cannot read config {path}: {exc}")
            if not isinstance(data, dict):
                raise CommandError(f"Config {path} must hold a JSON object.")

        world = dict(data.get("world") or {})
        for flag, key in (
            ("dim", "dim"),
            ("arms", "num_arms"),
            ("keyterms", "num_keyterms"),
            ("users", "num_users"),
            ("hidden_dim", "hidden_dim"),
        ):
            if options.get(flag) is not None:
                world[key] = options[flag]
        if world:
            data["world"] = world
        if options.get("full_scale"):
            data["preset"] = "full"
        if options.get("seed") is not None:
            data["world_seed"] = options["seed"]
        if options.get("workers") is not None:
            data["workers"] = options["workers"]
        if options.get("verbose"):
            data["verbose"] = True
        if options.get("policies"):
            data["policies"] = [{"kind": kind} for kind in comma_list(options["policies"])]
        if options.get("schedule"):
            data["schedule"] = options["schedule"]
        if options.get("seeds"):
            data["seeds"] = int_list(options["seeds"])
        for flag, key in (
            ("horizon", "horizon"),
            ("slate_size", "slate_size"),
            ("episode_users", "users"),
        ):
            if options.get(flag) is not None:
                data[key] = options[flag]
        for flag in ("binary", "bound"):
            if options.get(flag):
                data[flag] = True
        return data

    def load_config(self, options, **sections):
        data = self.experiment_document(options)
        data.update({k: v for k, v in sections.items() if v is not None})
        return parse_experiment_config(data)

    def world_params(self, options):
        """(WorldParams, seed) from the preset, the config file and the world flags."""
        data = self.experiment_document(options)
        serializer = WorldParamsSerializer(data=data.get("world") or {})
        if not serializer.is_valid():
            raise CommandError(flatten_errors(serializer.errors))
        preset = settings.BANDITS["FULL_SCALE" if data.get("preset") == "full" else "DESK_SCALE"]
        return WorldParams(**{**preset, **serializer.validated_data}), int(data.get("world_seed", 0))

    def load_world(self, options, config):
        """A saved world from ``--world`` (syncing config.world) or None."""
        path = options.get("world")
        if not path:
            return config, None
        world = load_world(path)
        return config.with_changes(world=world.params, world_seed=world.seed), world

    def output_dir(self, options, default_name):
        if options.get("out"):
            return Path(options["out"])
        return Path(settings.BANDITS["OUTPUT_DIR"]) / default_name

    def record_run(self, config, out, world=None, compute=None):
        """Run through an ExperimentRun row when ``--record`` is set."""
        run = ExperimentRun.objects.create(kind=self.run_kind, config=config.to_dict())
        report = execute_run(run, config, world=world, output_dir=out, compute=compute)
        self.stdout.write(f"Recorded run {run.id}")
        return report

    def write_summary(self, frame):
        if frame is None or frame.empty:
            return
        self.stdout.write(frame.to_string(index=False, float_format=lambda v: f"{v:.4f}"))
