from ...benchmark import reaggregate, write_report
from ...serializers import parse_experiment_config
from ..base import BanditCommand


class Command(BanditCommand):
    help = "Re-aggregate the stored episodes of a finished run directory."

    world_flags = False
    experiment_flags = False

    def add_command_arguments(self, parser):
        parser.add_argument("run_dir", help="Directory written by the run command.")

    def run(self, **options):
        report, manifest = reaggregate(options["run_dir"])
        if options.get("out"):
            config = parse_experiment_config(manifest.get("config") or {})
            write_report(report, options["out"], config, extra={"source": options["run_dir"]})
            self.stdout.write(self.style.SUCCESS(f"Report written to {options['out']}"))
        self.write_summary(report.summary_frame())
