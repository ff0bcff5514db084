from ...benchmark import run_benchmark, write_report
from ..base import BanditCommand


class Command(BanditCommand):
    help = "Run the synthetic benchmark and write regret / parameter-error / bound CSVs."

    def add_command_arguments(self, parser):
        parser.add_argument("--world", help="Directory or world.json written by generate.")

    def run(self, **options):
        config, world = self.load_world(options, self.load_config(options))
        out = self.output_dir(options, f"run-{config.world_seed}")
        if options.get("record"):
            report = self.record_run(config, out, world=world)
        else:
            report = run_benchmark(config, world=world)
            write_report(report, out, config)
        self.write_summary(report.summary_frame())
        self.stdout.write(self.style.SUCCESS(f"Report written to {out}"))
