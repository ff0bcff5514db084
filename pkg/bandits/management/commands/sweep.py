from django.core.management.base import CommandError

from ...benchmark import combine_reports, sweep_pool_sizes, sweep_schedules, write_report
from ..base import BanditCommand, comma_list, int_list


class Command(BanditCommand):
    help = "Run the benchmark once per conversation schedule or per slate size."

    run_kind = "sweep"

    def add_command_arguments(self, parser):
        parser.add_argument("--world", help="Directory or world.json written by generate.")
        group = parser.add_mutually_exclusive_group(required=True)
        group.add_argument("--schedules", help="Comma-separated schedules, e.g. log:1,log:5,log:10.")
        group.add_argument("--pool-sizes", help="Comma-separated slate sizes, e.g. 25,50,100.")

    def run(self, **options):
        config, world = self.load_world(options, self.load_config(options))
        out = self.output_dir(options, "sweep")
        if options.get("schedules"):
            variants = comma_list(options["schedules"])
            sweep = sweep_schedules
        else:
            variants = int_list(options["pool_sizes"])
            sweep = sweep_pool_sizes
        if not variants:
            raise CommandError("Give at least one schedule or pool size to sweep.")

        tables = []

        def compute():
            reports, table = sweep(config, variants, world=world)
            tables.append(table)
            return combine_reports(reports)

        if options.get("record"):
            self.record_run(config, out, compute=compute)
        else:
            write_report(compute(), out, config)
        table = tables[0]
        table.to_csv(out / "comparison.csv", index=False, float_format="%.10g")
        self.write_summary(table)
        self.stdout.write(self.style.SUCCESS(f"Comparison written to {out / 'comparison.csv'}"))
