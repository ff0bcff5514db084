from ...benchmark import run_replay, write_report
from ..base import BanditCommand


class Command(BanditCommand):
    help = "Replay policies on logged interactions and write per-window CTR CSVs."

    run_kind = "replay"
    world_flags = False

    def add_command_arguments(self, parser):
        parser.add_argument("--events", help="events file: user_id, timestamp, arm_id, reward.")
        parser.add_argument("--features", help="features file: arm_id, f1..fd.")
        parser.add_argument("--tags", help="tags file: arm_id, keyterm_id.")
        parser.add_argument("--pool-size", type=int)
        parser.add_argument("--window", type=int)
        parser.add_argument("--ridge", type=float)
        parser.add_argument("--binary-feedback", action="store_true")
        parser.add_argument("--normalize-by", help="Policy whose CTR normalizes the others.")

    def dataset_section(self, options, document):
        dataset = dict(document.get("dataset") or {})
        for flag in ("events", "features", "tags", "pool_size", "window", "ridge", "normalize_by"):
            if options.get(flag) is not None:
                dataset[flag] = options[flag]
        if options.get("binary_feedback"):
            dataset["binary_feedback"] = True
        return dataset

    def run(self, **options):
        document = self.experiment_document(options)
        config = self.load_config(options, dataset=self.dataset_section(options, document))
        out = self.output_dir(options, "replay")
        if options.get("record"):
            report = self.record_run(config, out)
        else:
            report = run_replay(config)
            write_report(report, out, config)
        for label, replay_report in report.replay.items():
            self.stdout.write(
                f"{label}: CTR {replay_report.overall_ctr:.4f} over "
                f"{int(replay_report.matches.sum())} matched events"
            )
        self.stdout.write(self.style.SUCCESS(f"Report written to {out}"))
